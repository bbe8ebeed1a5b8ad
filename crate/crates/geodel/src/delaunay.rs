//! Local geodesic Delaunay extraction and the coface audit built on it.
//!
//! Given a certified net, the extractor enumerates candidate vertex
//! quadruples near a chart region, locates their metric circumcentres with a
//! two-tier Newton solve, and keeps a tetrahedron only when an
//! adaptive-precision certificate confirms both the equidistance of its
//! vertices and the empty-ball property against the whole net. A coface
//! census over the result then tests the closed-manifold invariant: in a
//! triangulated 3-manifold without boundary, every triangle has exactly two
//! incident tetrahedra. A triangle that fails the census, paired with a
//! tetrahedron owning two distinct certified balls, is the defect this crate
//! exhibits.
//!
//! Everything the extractor reports is backed by a certificate. Candidate
//! pruning uses lower bounds that certify rejection; acceptance re-verifies
//! distances with the adaptive solver at tight tolerance; and the only
//! uncertified direction, a Newton run that ends without converging or
//! cleanly escaping, is recorded per candidate in
//! [`SimplicialComplex::seed_exhausted`] so a run that proves nothing cannot
//! masquerade as a run that proved absence.

use crate::chart::{
    canonicalize, flat_torus_distance, nearest_offset, nearest_straight_upper, tube_lower_bound,
    ChartPoint, MetricField,
};
use crate::counterexample::{Configuration, TIGHT_TOL};
use crate::geodesic::{geodesic_distance, GeodesicError};
use crate::roots::{
    polish_equidistance, solve_equidistance, AdaptivePolish, EquidistanceNewton, NewtonStatus,
};
use crate::sampling::{CellGrid, PointSet};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use thiserror::Error;

/// Region radius is capped at this multiple of the net spacing; beyond it
/// the candidate count grows cubically for no diagnostic gain.
const REGION_FACTOR_LIMIT: f64 = 4.0;

/// Equidistance deviation and empty-ball slack, as a fraction of epsilon.
const CERT_TOL: f64 = 1e-8;

/// Adaptive solver tolerance for empty-ball decisions the cheap bounds
/// cannot settle.
const SOLVE_TOL: f64 = 1e-9;

/// Adaptive solver tolerance for the independent certificate re-check.
const RECHECK_TOL: f64 = 1e-10;

/// Quadrature panels of the exploratory tier's chord lengths.
const TIER_A_PANELS: usize = 2;

/// Residual stop of the exploratory tier. Chord roots sit within the chord
/// bending gain (order 1e-5 here) of true roots anyway, so driving the
/// chord residual further buys nothing.
const TIER_A_STOP: f64 = 1e-9;

/// Residual stop for the adaptive polish; two quadratic steps from an
/// exploratory root land here.
const POLISH_STOP: f64 = 5e-12;

/// Screening margin, as a fraction of epsilon. A root is discarded when
/// some net point sits deeper than the margin inside its estimated ball;
/// the margin dominates the discretization error of the radius estimate by
/// two orders of magnitude, so no true Delaunay ball (which has no intruder
/// at all) is ever screened out.
const SCREEN_MARGIN: f64 = 1e-2;

/// Quadruples whose root-mean-square deviation from their least-squares
/// plane is below this fraction of epsilon are treated as near-coplanar and
/// seeded on both sides of the plane.
const THIN_RMS: f64 = 0.1;

/// Two converged points closer than this fraction of epsilon are the same
/// root; distinct circumcentres of one tetrahedron sit a fixed fraction of
/// epsilon apart, orders of magnitude above this.
const ROOT_CLUSTER: f64 = 1e-4;

/// Default tolerance for [`check_genericity`], as a fraction of epsilon.
pub const GENERICITY_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DelaunayError {
    #[error("simplex is invalid: {0}")]
    InvalidSimplex(String),
    #[error("region radius {radius} outside (0, {max}]")]
    InvalidRegion { radius: f64, max: f64 },
    #[error(
        "certified ball radius bound {bound} reaches a quarter period {quarter_period}; \
         patch lifts would be ambiguous, use a finer net"
    )]
    BallBoundTooCoarse { bound: f64, quarter_period: f64 },
    #[error("net carries no density/separation certificate; run verify_net first")]
    NetNotCertified,
    #[error("geodesic solve failed: {0}")]
    Solver(#[from] GeodesicError),
}

/// An abstract simplex over net indices: sorted, distinct, dimension 0 to 3.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Simplex {
    indices: Vec<u32>,
}

impl Simplex {
    pub fn new(mut indices: Vec<u32>) -> Result<Self, DelaunayError> {
        if indices.is_empty() || indices.len() > 4 {
            return Err(DelaunayError::InvalidSimplex(format!(
                "expected 1 to 4 vertices, got {}",
                indices.len()
            )));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(DelaunayError::InvalidSimplex(format!(
                "duplicate vertex in {indices:?}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn vertices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dimension(&self) -> usize {
        self.indices.len() - 1
    }

    pub fn contains(&self, v: u32) -> bool {
        self.indices.binary_search(&v).is_ok()
    }

    /// Codimension-one faces, each obtained by dropping one vertex. Empty
    /// for a vertex.
    pub fn facets(&self) -> Vec<Simplex> {
        if self.indices.len() == 1 {
            return Vec::new();
        }
        (0..self.indices.len())
            .map(|drop| {
                let mut rest = self.indices.clone();
                rest.remove(drop);
                Simplex { indices: rest }
            })
            .collect()
    }
}

impl std::fmt::Display for Simplex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.indices.iter().enumerate() {
            if k > 0 {
                write!(f, " ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Certified Voronoi data of one tetrahedron: every centre is geodesically
/// equidistant from the four vertices at the paired radius, and the open
/// ball around it contains no other net point. A tetrahedron with two
/// centres owns two distinct Delaunay balls.
#[derive(Debug, Clone)]
pub struct VoronoiCertificate {
    pub simplex: Simplex,
    pub centres: Vec<ChartPoint>,
    pub radii: Vec<f64>,
}

/// The extracted complex near a region: certified tetrahedra, their
/// downward closure, and the bookkeeping needed to interpret the census.
#[derive(Debug, Clone)]
pub struct SimplicialComplex {
    pub vertices: Vec<u32>,
    pub edges: Vec<Simplex>,
    pub triangles: Vec<Simplex>,
    pub tetrahedra: Vec<Simplex>,
    /// Parallel to `tetrahedra`.
    pub certificates: Vec<VoronoiCertificate>,
    pub region_centre: ChartPoint,
    pub region_radius: f64,
    /// Net indices within `region_radius` (flat metric) of the centre.
    pub in_region: Vec<u32>,
    /// Candidates on which some Newton run ended without converging or
    /// cleanly escaping. Empty on a trustworthy run.
    pub seed_exhausted: Vec<Simplex>,
}

impl SimplicialComplex {
    /// Triangle to indices (into `tetrahedra`) of its incident tetrahedra.
    pub fn cofaces(&self) -> BTreeMap<Simplex, Vec<usize>> {
        let mut map: BTreeMap<Simplex, Vec<usize>> = BTreeMap::new();
        for (t, tet) in self.tetrahedra.iter().enumerate() {
            for facet in tet.facets() {
                map.entry(facet).or_default().push(t);
            }
        }
        map
    }

    /// Serializes the complex, its certificates, and the interior coface
    /// census. Coordinates round-trip bitwise through 18 significant digits.
    pub fn to_json(&self, net: &PointSet) -> String {
        let census = coface_census(self);
        let mut s = String::new();
        s.push_str("{\n  \"version\": 1,\n");
        let _ = write!(
            s,
            "  \"net_ref\": {{ \"epsilon\": {:.17e}, \"seed\": {}, \"points\": {} }},\n",
            net.epsilon,
            net.seed,
            net.points.len()
        );
        s.push_str("  \"simplices\": {\n    \"d0\": [");
        for (k, v) in self.vertices.iter().enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{v}");
        }
        s.push_str("],\n");
        for (name, list) in [
            ("d1", &self.edges),
            ("d2", &self.triangles),
            ("d3", &self.tetrahedra),
        ] {
            let _ = write!(s, "    \"{name}\": [");
            for (k, sx) in list.iter().enumerate() {
                if k > 0 {
                    s.push_str(", ");
                }
                push_index_array(&mut s, sx.vertices());
            }
            s.push_str("]");
            s.push_str(if name == "d3" { "\n" } else { ",\n" });
        }
        s.push_str("  },\n  \"certificates\": [\n");
        for (k, cert) in self.certificates.iter().enumerate() {
            s.push_str("    { \"simplex\": ");
            push_index_array(&mut s, cert.simplex.vertices());
            s.push_str(", \"centres\": [");
            for (c, centre) in cert.centres.iter().enumerate() {
                if c > 0 {
                    s.push_str(", ");
                }
                let _ = write!(
                    s,
                    "[{:.17e}, {:.17e}, {:.17e}]",
                    centre.x, centre.y, centre.z
                );
            }
            s.push_str("], \"radii\": [");
            for (r, radius) in cert.radii.iter().enumerate() {
                if r > 0 {
                    s.push_str(", ");
                }
                let _ = write!(s, "{radius:.17e}");
            }
            s.push_str("] }");
            s.push_str(if k + 1 == self.certificates.len() {
                "\n"
            } else {
                ",\n"
            });
        }
        s.push_str("  ],\n  \"census\": [\n");
        let total = census.counts.len();
        for (k, (triangle, count)) in census.counts.iter().enumerate() {
            s.push_str("    { \"triangle\": ");
            push_index_array(&mut s, triangle.vertices());
            let _ = write!(s, ", \"count\": {count} }}");
            s.push_str(if k + 1 == total { "\n" } else { ",\n" });
        }
        s.push_str("  ]\n}\n");
        s
    }
}

fn push_index_array(s: &mut String, indices: &[u32]) {
    s.push('[');
    for (k, v) in indices.iter().enumerate() {
        if k > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{v}");
    }
    s.push(']');
}

/// Coface counts of the triangles whose counts the extraction certifies.
#[derive(Debug, Clone)]
pub struct CofaceCensus {
    /// Interior triangles with their number of incident tetrahedra. In a
    /// closed triangulated 3-manifold every entry is 2.
    pub counts: BTreeMap<Simplex, usize>,
    /// Triangles touching the region boundary; their counts could be
    /// truncated by the region cut, so no claim is made about them.
    pub indeterminate: BTreeSet<Simplex>,
}

/// Splits the triangles of the complex into interior (count certified) and
/// indeterminate (region boundary).
///
/// A triangle is interior when its three vertices and the apex of every
/// incident tetrahedron lie in the region. Candidate enumeration considers
/// every quadruple with at least one in-region vertex, so for a triangle
/// with in-region vertices every potential coface tetrahedron was examined
/// and the recorded count is complete; the apex condition additionally keeps
/// a triangle out of the census when its star leaks over the boundary.
pub fn coface_census(complex: &SimplicialComplex) -> CofaceCensus {
    let region: BTreeSet<u32> = complex.in_region.iter().copied().collect();
    let cofaces = complex.cofaces();
    let mut counts = BTreeMap::new();
    let mut indeterminate = BTreeSet::new();
    for triangle in &complex.triangles {
        let incident = cofaces.get(triangle).map_or(&[][..], Vec::as_slice);
        let mut interior = triangle.vertices().iter().all(|v| region.contains(v));
        for &t in incident {
            let apex = complex.tetrahedra[t]
                .vertices()
                .iter()
                .find(|v| !triangle.contains(**v));
            if apex.is_none_or(|v| !region.contains(v)) {
                interior = false;
            }
        }
        if interior {
            counts.insert(triangle.clone(), incident.len());
        } else {
            indeterminate.insert(triangle.clone());
        }
    }
    CofaceCensus {
        counts,
        indeterminate,
    }
}

/// A certified ball whose boundary sphere carries five or more net points
/// within the tolerance band. Such a configuration makes Delaunay ownership
/// ambiguous, so the census of a run that finds one is not meaningful.
#[derive(Debug, Clone)]
pub struct GenericityViolation {
    pub simplex: Simplex,
    pub centre: ChartPoint,
    pub radius: f64,
    /// Net indices within the band of the sphere, vertices included.
    pub near_sphere: Vec<u32>,
}

/// Upper bound on the radius of any Delaunay ball of a density-certified
/// net. The density certificate puts a net point within epsilon of every
/// probe of the epsilon/4 lattice; an arbitrary chart point reaches its
/// nearest probe along a straight segment of flat length at most the half
/// cell diagonal, stretched by at most the metric stretch factor.
pub fn ball_radius_cap(field: &MetricField, epsilon: f64) -> f64 {
    epsilon * (1.0 + field.stretch() * 3f64.sqrt() / 8.0)
}

struct ExtractParams {
    epsilon: f64,
    cap: f64,
    cert_slack: f64,
    cluster: f64,
}

/// Extracts the certified geodesic Delaunay tetrahedra with at least one
/// vertex within `region_radius` of `region_centre`, together with their
/// downward closure and per-tetrahedron Voronoi certificates.
///
/// Requires a density-certified net: the certificate bounds every Delaunay
/// ball radius by [`ball_radius_cap`], which drives both the candidate prune
/// and the patch lifts. The region radius is limited to four times epsilon.
pub fn local_delaunay(
    field: &MetricField,
    net: &PointSet,
    region_centre: ChartPoint,
    region_radius: f64,
) -> Result<SimplicialComplex, DelaunayError> {
    if !net.density_certified {
        return Err(DelaunayError::NetNotCertified);
    }
    let eps = net.epsilon;
    let max_region = REGION_FACTOR_LIMIT * eps;
    if !(region_radius > 0.0 && region_radius <= max_region) || !region_radius.is_finite() {
        return Err(DelaunayError::InvalidRegion {
            radius: region_radius,
            max: max_region,
        });
    }
    let chart = field.chart();
    let cap = ball_radius_cap(field, eps);
    let quarter = 0.25 * field.period();
    // All four vertices of a Delaunay tetrahedron lie in one ball of radius
    // at most cap. With cap below a quarter period the lift of the patch
    // nearest to any one vertex is unambiguous, so the owner-anchored lifts
    // below reproduce every true configuration exactly.
    if cap >= quarter {
        return Err(DelaunayError::BallBoundTooCoarse {
            bound: cap,
            quarter_period: quarter,
        });
    }
    // Candidate edge prune: covers both the ball diameter bound 2*cap and
    // the flat edge bound 2*stretch*epsilon.
    let prune = (2.0 * cap).max(2.0 * field.stretch() * eps);
    let params = ExtractParams {
        epsilon: eps,
        cap,
        cert_slack: CERT_TOL * eps,
        cluster: ROOT_CLUSTER * eps,
    };
    let centre = canonicalize(chart, region_centre);

    let mut grid = CellGrid::new(field.period(), prune);
    for (i, q) in net.points.iter().enumerate() {
        grid.insert(i as u32, q);
    }
    let mut region_mask = vec![false; net.points.len()];
    let mut in_region: Vec<u32> = Vec::new();
    for (i, q) in net.points.iter().enumerate() {
        if flat_torus_distance(chart, &centre, q) <= region_radius {
            region_mask[i] = true;
            in_region.push(i as u32);
        }
    }

    // Each tetrahedron is enumerated exactly once, owned by its smallest
    // in-region vertex: co-vertices are either outside the region or have a
    // larger index.
    let mut candidates: Vec<[u32; 4]> = Vec::new();
    for &a in &in_region {
        let pa = &net.points[a as usize];
        let members: Vec<u32> = grid
            .neighbours(pa)
            .into_iter()
            .filter(|&x| {
                x != a
                    && (!region_mask[x as usize] || x > a)
                    && flat_torus_distance(chart, pa, &net.points[x as usize]) <= prune
            })
            .collect();
        let m = members.len();
        let words = m.div_ceil(64);
        let mut adjacency = vec![0u64; m * words];
        for i in 0..m {
            for j in i + 1..m {
                let close = flat_torus_distance(
                    chart,
                    &net.points[members[i] as usize],
                    &net.points[members[j] as usize],
                ) <= prune;
                if close {
                    adjacency[i * words + j / 64] |= 1 << (j % 64);
                    adjacency[j * words + i / 64] |= 1 << (i % 64);
                }
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                if adjacency[i * words + j / 64] & (1 << (j % 64)) == 0 {
                    continue;
                }
                for w in j / 64..words {
                    let mut bits = adjacency[i * words + w] & adjacency[j * words + w];
                    if w == j / 64 {
                        let shift = (j % 64) + 1;
                        bits &= if shift == 64 { 0 } else { !0u64 << shift };
                    }
                    while bits != 0 {
                        let l = w * 64 + bits.trailing_zeros() as usize;
                        bits &= bits - 1;
                        candidates.push([a, members[i], members[j], members[l]]);
                    }
                }
            }
        }
    }

    let results: Vec<CandidateResult> = candidates
        .par_iter()
        .map(|quad| process_candidate(field, net, &grid, quad, &params))
        .collect();

    let mut paired: Vec<(Simplex, Vec<ChartPoint>)> = Vec::new();
    let mut exhausted: BTreeSet<Simplex> = BTreeSet::new();
    for (quad, result) in candidates.iter().zip(results) {
        let simplex =
            Simplex::new(quad.to_vec()).expect("enumeration yields distinct indices");
        if result.exhausted {
            exhausted.insert(simplex.clone());
        }
        if !result.centres.is_empty() {
            paired.push((simplex, result.centres));
        }
    }
    paired.sort_by(|a, b| a.0.cmp(&b.0));

    // Screened roots become certificates only here, through the adaptive
    // solver: vertex equidistance at tight tolerance and the empty-ball
    // inequality against the entire net. Centres rejected for a certified
    // geometric reason are clean negatives; a tolerance disagreement is
    // surfaced as an abandoned candidate rather than silently dropped.
    let finals: Vec<FinalizeOutcome> = paired
        .par_iter()
        .map(|(simplex, centres)| finalize_certificate(field, net, simplex, centres, &params))
        .collect::<Result<_, _>>()?;
    let mut tetrahedra = Vec::new();
    let mut certificates = Vec::new();
    for ((simplex, _), outcome) in paired.into_iter().zip(finals) {
        if outcome.suspicious {
            exhausted.insert(simplex.clone());
        }
        if let Some(cert) = outcome.certificate {
            tetrahedra.push(simplex);
            certificates.push(cert);
        }
    }

    let mut triangles: BTreeSet<Simplex> = BTreeSet::new();
    for tet in &tetrahedra {
        triangles.extend(tet.facets());
    }
    let mut edges: BTreeSet<Simplex> = BTreeSet::new();
    for tri in &triangles {
        edges.extend(tri.facets());
    }
    let mut vertices: BTreeSet<u32> = in_region.iter().copied().collect();
    for edge in &edges {
        vertices.extend(edge.vertices().iter().copied());
    }

    Ok(SimplicialComplex {
        vertices: vertices.into_iter().collect(),
        edges: edges.into_iter().collect(),
        triangles: triangles.into_iter().collect(),
        tetrahedra,
        certificates,
        region_centre: centre,
        region_radius,
        in_region,
        seed_exhausted: exhausted.into_iter().collect(),
    })
}

struct CandidateResult {
    /// Screened root locations; radii are established by the finalize pass.
    centres: Vec<ChartPoint>,
    exhausted: bool,
}

fn process_candidate(
    field: &MetricField,
    net: &PointSet,
    grid: &CellGrid,
    quad: &[u32; 4],
    params: &ExtractParams,
) -> CandidateResult {
    let mut out = CandidateResult {
        centres: Vec::new(),
        exhausted: false,
    };
    let chart = field.chart();
    let owner = &net.points[quad[0] as usize];
    let mut lifted = [owner.coords(); 4];
    for k in 1..4 {
        lifted[k] = owner.coords() + nearest_offset(chart, owner, &net.points[quad[k] as usize]);
    }
    // A Delaunay ball of radius r covers the quadruple, so its smallest
    // enclosing ball has radius at most r <= cap. The converse prune is
    // certified: a quadruple whose enclosing ball exceeds the cap fits in no
    // admissible ball.
    let (seb_centre, seb_radius) = smallest_enclosing_ball(&lifted);
    if seb_radius > params.cap * (1.0 + 1e-9) {
        return out;
    }
    let escape_radius = params.cap + seb_radius + 0.25 * params.epsilon;
    let tier_a = EquidistanceNewton {
        panels: TIER_A_PANELS,
        fd_step: 1e-5 * params.epsilon,
        stop_residual: TIER_A_STOP,
        max_iterations: 30,
        escape_centre: seb_centre,
        escape_radius,
    };
    let mut roots: Vec<Vector3<f64>> = Vec::new();
    for seed in build_seeds(&lifted, seb_centre, params) {
        let run = solve_equidistance(field, &lifted, seed, &tier_a);
        match run.status {
            NewtonStatus::Converged => {
                if roots.iter().all(|r| (r - run.point).norm() > params.cluster) {
                    roots.push(run.point);
                }
            }
            NewtonStatus::Escaped => {}
            NewtonStatus::Exhausted => out.exhausted = true,
        }
    }
    let polish = AdaptivePolish {
        distance_tol: TIGHT_TOL,
        fd_step: 1e-4 * params.epsilon,
        stop_residual: POLISH_STOP,
        max_iterations: 8,
    };
    for root in roots {
        // Screen the exploratory root, then polish the survivors on the
        // adaptive-distance residual so the finalize pass certifies the
        // exact system the polish converged on.
        if screen_root(field, net, grid, quad, root, params).is_none() {
            continue;
        }
        let run = polish_equidistance(field, &lifted, root, &polish);
        match run.status {
            NewtonStatus::Converged => {
                let centre = canonicalize(chart, ChartPoint::from(run.point));
                let fresh = out
                    .centres
                    .iter()
                    .all(|c| flat_torus_distance(chart, c, &centre) > params.cluster);
                if fresh {
                    out.centres.push(centre);
                }
            }
            NewtonStatus::Escaped => {}
            NewtonStatus::Exhausted => out.exhausted = true,
        }
    }
    out
}

/// Cheap, certified-direction screen of a Newton root. The radius estimate
/// is the mean chord vertex distance; a net point whose straight-segment
/// upper bound undercuts it by more than `margin * epsilon` proves the ball
/// is not empty, and an estimate beyond the density cap proves the ball is
/// not a Delaunay ball. Rejections are safe because true Delaunay balls
/// have no intruder at all and the margins dominate the bending gain of
/// the estimate; acceptances are provisional, the finalize pass re-derives
/// everything adaptively.
fn screen_root(
    field: &MetricField,
    net: &PointSet,
    grid: &CellGrid,
    quad: &[u32; 4],
    point: Vector3<f64>,
    params: &ExtractParams,
) -> Option<ChartPoint> {
    let chart = field.chart();
    let centre = canonicalize(chart, ChartPoint::new(point.x, point.y, point.z));
    let mut dists = [0.0f64; 4];
    for (slot, &idx) in dists.iter_mut().zip(quad) {
        *slot = nearest_straight_upper(field, &centre, &net.points[idx as usize]);
    }
    let radius = 0.25 * dists.iter().sum::<f64>();
    if radius > params.cap * 1.01 {
        return None;
    }
    let reject_below = radius - SCREEN_MARGIN * params.epsilon;
    for j in grid.neighbours(&centre) {
        if quad.contains(&j) {
            continue;
        }
        let other = &net.points[j as usize];
        if flat_torus_distance(chart, &centre, other) >= reject_below {
            continue;
        }
        if nearest_straight_upper(field, &centre, other) < reject_below {
            return None;
        }
    }
    Some(centre)
}

struct FinalizeOutcome {
    certificate: Option<VoronoiCertificate>,
    /// A centre was dropped for tolerance disagreement rather than a
    /// certified geometric reason; the caller surfaces the simplex instead
    /// of silently discarding it.
    suspicious: bool,
}

/// Adaptive-precision acceptance of one screened tetrahedron: for every
/// centre, the four vertex distances agree to the slack and no other net
/// point intrudes into the open ball. The scan covers the entire net with
/// the flat metric as the only prefilter; undecided points fall through the
/// straight-segment and tube bounds to the full solver. A centre whose ball
/// holds a certified intruder, or whose radius reaches the density cap no
/// true Delaunay ball attains, is a clean negative; a centre whose vertex
/// distances disagree beyond the slack is a tolerance failure and flagged.
fn finalize_certificate(
    field: &MetricField,
    net: &PointSet,
    simplex: &Simplex,
    centres: &[ChartPoint],
    params: &ExtractParams,
) -> Result<FinalizeOutcome, DelaunayError> {
    let chart = field.chart();
    let mut out_centres = Vec::with_capacity(centres.len());
    let mut out_radii = Vec::with_capacity(centres.len());
    let mut suspicious = false;
    'centres: for centre in centres {
        let mut dists = [0.0f64; 4];
        for (slot, &idx) in dists.iter_mut().zip(simplex.vertices()) {
            *slot =
                geodesic_distance(field, centre, &net.points[idx as usize], TIGHT_TOL)?.distance;
        }
        let radius = 0.25 * dists.iter().sum::<f64>();
        if dists.iter().any(|d| (d - radius).abs() > params.cert_slack) {
            suspicious = true;
            continue;
        }
        if radius >= params.cap {
            continue;
        }
        for (j, other) in net.points.iter().enumerate() {
            if simplex.contains(j as u32) {
                continue;
            }
            if flat_torus_distance(chart, centre, other) >= radius {
                continue;
            }
            let upper = nearest_straight_upper(field, centre, other);
            if tube_lower_bound(field, centre, other, upper) >= radius - params.cert_slack {
                continue;
            }
            if geodesic_distance(field, centre, other, SOLVE_TOL)?.distance
                < radius - params.cert_slack
            {
                continue 'centres;
            }
        }
        out_centres.push(*centre);
        out_radii.push(radius);
    }
    let certificate = if out_centres.is_empty() {
        None
    } else {
        Some(VoronoiCertificate {
            simplex: simplex.clone(),
            centres: out_centres,
            radii: out_radii,
        })
    };
    Ok(FinalizeOutcome {
        certificate,
        suspicious,
    })
}

/// Re-verifies one certificate against the entire net: vertex equidistance
/// at tight tolerance and the empty-ball inequality for every other point,
/// using the flat metric as the only prefilter.
pub fn verify_certificate(
    field: &MetricField,
    net: &PointSet,
    cert: &VoronoiCertificate,
) -> Result<bool, DelaunayError> {
    let chart = field.chart();
    let slack = CERT_TOL * net.epsilon;
    for (centre, &radius) in cert.centres.iter().zip(&cert.radii) {
        for &v in cert.simplex.vertices() {
            let d = geodesic_distance(field, centre, &net.points[v as usize], TIGHT_TOL)?.distance;
            if (d - radius).abs() > slack {
                return Ok(false);
            }
        }
        for (j, other) in net.points.iter().enumerate() {
            if cert.simplex.contains(j as u32) {
                continue;
            }
            if flat_torus_distance(chart, centre, other) >= radius {
                continue;
            }
            let upper = nearest_straight_upper(field, centre, other);
            if tube_lower_bound(field, centre, other, upper) >= radius - slack {
                continue;
            }
            if geodesic_distance(field, centre, other, RECHECK_TOL)?.distance < radius - slack {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Scans every certified ball for net points within `tol * epsilon` of its
/// boundary sphere. Returns whether the configuration is generic (no sphere
/// carries five or more such points) along with the violations found.
pub fn check_genericity(
    field: &MetricField,
    net: &PointSet,
    certificates: &[VoronoiCertificate],
    tol: f64,
) -> Result<(bool, Vec<GenericityViolation>), DelaunayError> {
    if certificates.is_empty() {
        return Ok((true, Vec::new()));
    }
    let chart = field.chart();
    let band = tol * net.epsilon;
    let max_radius = certificates
        .iter()
        .flat_map(|c| c.radii.iter())
        .fold(0.0f64, |a, &r| a.max(r));
    let mut grid = CellGrid::new(field.period(), max_radius + band);
    for (i, q) in net.points.iter().enumerate() {
        grid.insert(i as u32, q);
    }
    let nested: Vec<Vec<GenericityViolation>> = certificates
        .par_iter()
        .map(|cert| {
            let mut found = Vec::new();
            for (centre, &radius) in cert.centres.iter().zip(&cert.radii) {
                let mut near: Vec<u32> = Vec::new();
                // Certified roots pin their vertices within CERT_TOL of the
                // sphere, inside any wider band without re-solving.
                if tol > CERT_TOL {
                    near.extend_from_slice(cert.simplex.vertices());
                }
                for j in grid.neighbours(centre) {
                    if tol > CERT_TOL && cert.simplex.contains(j) {
                        continue;
                    }
                    let other = &net.points[j as usize];
                    if flat_torus_distance(chart, centre, other) > radius + band {
                        continue;
                    }
                    let upper = nearest_straight_upper(field, centre, other);
                    if upper < radius - band {
                        continue;
                    }
                    if tube_lower_bound(field, centre, other, upper) > radius + band {
                        continue;
                    }
                    let d = geodesic_distance(field, centre, other, TIGHT_TOL)
                        .map_err(DelaunayError::from)?
                        .distance;
                    if (d - radius).abs() < band {
                        near.push(j);
                    }
                }
                near.sort_unstable();
                if near.len() >= 5 {
                    found.push(GenericityViolation {
                        simplex: cert.simplex.clone(),
                        centre: *centre,
                        radius,
                        near_sphere: near,
                    });
                }
            }
            Ok(found)
        })
        .collect::<Result<_, DelaunayError>>()?;
    let violations: Vec<GenericityViolation> = nested.into_iter().flatten().collect();
    Ok((violations.is_empty(), violations))
}

/// Outcome of the manifoldness audit around the perturbed configuration.
#[derive(Debug, Clone)]
pub struct DefectReport {
    pub complex: SimplicialComplex,
    pub census: CofaceCensus,
    /// Interior triangles whose coface count differs from 2.
    pub bad_triangles: Vec<(Simplex, usize)>,
    /// A tetrahedron certified to own at least two distinct Delaunay balls,
    /// preferring the planted quadruple when present.
    pub witness: Option<VoronoiCertificate>,
    pub generic: bool,
    pub violations: Vec<GenericityViolation>,
}

impl DefectReport {
    /// True when the audit certifies a genuine triangulation defect: the
    /// census is trustworthy (generic, no abandoned candidates), some
    /// interior triangle breaks the two-coface invariant, and a two-ball
    /// tetrahedron witnesses the mechanism.
    pub fn established(&self) -> bool {
        self.generic
            && self.complex.seed_exhausted.is_empty()
            && !self.bad_triangles.is_empty()
            && self.witness.as_ref().is_some_and(|w| w.centres.len() >= 2)
    }
}

/// Runs the extraction in a three-epsilon region around the chart origin,
/// censuses the cofaces, and checks genericity at `genericity_tol` (a
/// fraction of epsilon; [`GENERICITY_TOL`] is the stock choice). The
/// configuration is only used to locate the planted quadruple among the net
/// points; the audit itself is independent of how the net was built.
pub fn detect_defect(
    field: &MetricField,
    net: &PointSet,
    conf: &Configuration,
    genericity_tol: f64,
) -> Result<DefectReport, DelaunayError> {
    if !net.density_certified || !net.separation_certified {
        return Err(DelaunayError::NetNotCertified);
    }
    let complex = local_delaunay(
        field,
        net,
        ChartPoint::new(0.0, 0.0, 0.0),
        3.0 * net.epsilon,
    )?;
    let census = coface_census(&complex);
    let (generic, violations) =
        check_genericity(field, net, &complex.certificates, genericity_tol)?;
    let bad_triangles: Vec<(Simplex, usize)> = census
        .counts
        .iter()
        .filter(|(_, &count)| count != 2)
        .map(|(t, &count)| (t.clone(), count))
        .collect();
    let planted = locate_planted(field, net, conf);
    let witness = choose_witness(&complex.certificates, planted.as_ref());
    Ok(DefectReport {
        complex,
        census,
        bad_triangles,
        witness,
        generic,
        violations,
    })
}

/// Finds the net indices of the configuration's quadruple by coordinate
/// match. Absent vertices yield `None`; the audit then reports whatever the
/// unplanted net exhibits.
fn locate_planted(field: &MetricField, net: &PointSet, conf: &Configuration) -> Option<Simplex> {
    let chart = field.chart();
    let mut indices = Vec::with_capacity(4);
    for vertex in conf.sigma() {
        let target = canonicalize(chart, vertex);
        let found = net
            .points
            .iter()
            .position(|p| flat_torus_distance(chart, p, &target) < 1e-9)?;
        indices.push(found as u32);
    }
    Simplex::new(indices).ok()
}

fn choose_witness(
    certificates: &[VoronoiCertificate],
    planted: Option<&Simplex>,
) -> Option<VoronoiCertificate> {
    if let Some(simplex) = planted {
        if let Some(cert) = certificates
            .iter()
            .find(|c| c.simplex == *simplex && c.centres.len() >= 2)
        {
            return Some(cert.clone());
        }
    }
    certificates.iter().find(|c| c.centres.len() >= 2).cloned()
}

fn build_seeds(
    lifted: &[Vector3<f64>; 4],
    seb_centre: Vector3<f64>,
    params: &ExtractParams,
) -> Vec<Vector3<f64>> {
    let mut raw = Vec::with_capacity(6);
    raw.push(seb_centre);
    if let Some(cc) = euclid_circumcentre(lifted) {
        if (cc - seb_centre).norm() <= params.cap + 0.5 * params.epsilon {
            raw.push(cc);
        }
    }
    // Only a near-coplanar quadruple can hold a root on either side of its
    // plane (a clearly non-flat one pins its circumcentre near the unique
    // Euclidean one); seed both sides along the least-squares normal.
    let (normal, rms) = plane_stats(lifted);
    if rms <= THIN_RMS * params.epsilon {
        for t in [0.45 * params.epsilon, 0.9 * params.epsilon] {
            raw.push(seb_centre + t * normal);
            raw.push(seb_centre - t * normal);
        }
    }
    let mut seeds: Vec<Vector3<f64>> = Vec::with_capacity(raw.len());
    for s in raw {
        if seeds.iter().all(|u| (u - s).norm() > 1e-3 * params.epsilon) {
            seeds.push(s);
        }
    }
    seeds
}

/// Exact smallest enclosing ball of four points: the optimum is supported
/// by two, three, or four of them, so trying every support set suffices.
fn smallest_enclosing_ball(pts: &[Vector3<f64>; 4]) -> (Vector3<f64>, f64) {
    let mut best: Option<(Vector3<f64>, f64)> = None;
    let mut consider = |centre: Vector3<f64>, radius: f64| {
        let slack = radius * 1e-12 + 1e-15;
        if pts.iter().all(|p| (p - centre).norm() <= radius + slack)
            && best.is_none_or(|(_, r)| radius < r)
        {
            best = Some((centre, radius));
        }
    };
    for i in 0..4 {
        for j in i + 1..4 {
            let centre = 0.5 * (pts[i] + pts[j]);
            consider(centre, (pts[i] - centre).norm());
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            for k in j + 1..4 {
                if let Some(centre) = circumcentre_triple(&pts[i], &pts[j], &pts[k]) {
                    consider(centre, (pts[i] - centre).norm());
                }
            }
        }
    }
    if let Some(centre) = euclid_circumcentre(pts) {
        consider(centre, (pts[0] - centre).norm());
    }
    best.expect("a support set always yields an enclosing ball")
}

fn circumcentre_triple(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let u = b - a;
    let v = c - a;
    let uu = u.norm_squared();
    let vv = v.norm_squared();
    let uv = u.dot(&v);
    let det = 4.0 * (uu * vv - uv * uv);
    if !(det > 1e-12 * uu * vv) {
        return None;
    }
    let alpha = 2.0 * (uu * vv - vv * uv) / det;
    let beta = 2.0 * (uu * vv - uu * uv) / det;
    let centre = a + alpha * u + beta * v;
    centre.iter().all(|x| x.is_finite()).then_some(centre)
}

fn euclid_circumcentre(pts: &[Vector3<f64>; 4]) -> Option<Vector3<f64>> {
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for k in 0..3 {
        let row = 2.0 * (pts[k] - pts[3]);
        for c in 0..3 {
            m[(k, c)] = row[c];
        }
        rhs[k] = pts[k].norm_squared() - pts[3].norm_squared();
    }
    let centre = m.lu().solve(&rhs)?;
    centre.iter().all(|x| x.is_finite()).then_some(centre)
}

/// Unit normal of the least-squares plane through the four points and the
/// root-mean-square deviation of the points from it.
fn plane_stats(pts: &[Vector3<f64>; 4]) -> (Vector3<f64>, f64) {
    let centroid = 0.25 * (pts[0] + pts[1] + pts[2] + pts[3]);
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eigen = SymmetricEigen::new(cov);
    let mut k = 0;
    for i in 1..3 {
        if eigen.eigenvalues[i] < eigen.eigenvalues[k] {
            k = i;
        }
    }
    let rms = (eigen.eigenvalues[k].max(0.0) / 4.0).sqrt();
    let normal = eigen.eigenvectors.column(k).into_owned();
    let norm = normal.norm();
    if norm > 1e-12 && normal.iter().all(|x| x.is_finite()) {
        (normal / norm, rms)
    } else {
        (Vector3::y(), 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexample::{
        build_configuration, scan_xi, solve_circumcentres, CounterexampleConfig,
    };
    use crate::sampling::{generate_net, generate_net_constrained, NetConstraints};

    fn flat_field() -> MetricField {
        MetricField::standard(2.0, 0.0).unwrap()
    }

    fn synthetic_net(points: Vec<ChartPoint>, epsilon: f64) -> PointSet {
        PointSet {
            points,
            epsilon,
            seed: 0,
            fixed_indices: Vec::new(),
            density_certified: true,
            separation_certified: true,
        }
    }

    /// Regular tetrahedron with edge 0.3; circumcentre at the centroid,
    /// circumradius 0.3 * sqrt(3/8).
    fn regular_tet() -> Vec<ChartPoint> {
        vec![
            ChartPoint::new(0.0, 0.0, 0.0),
            ChartPoint::new(0.3, 0.0, 0.0),
            ChartPoint::new(0.15, 0.2598076211353316, 0.0),
            ChartPoint::new(0.15, 0.08660254037844387, 0.24494897427831783),
        ]
    }

    const TET_CENTRE: [f64; 3] = [0.15, 0.08660254037844385, 0.061237243569579454];
    const TET_RADIUS: f64 = 0.18371173070873837;

    #[test]
    fn simplex_sorts_and_validates() {
        let s = Simplex::new(vec![7, 2, 5]).unwrap();
        assert_eq!(s.vertices(), &[2, 5, 7]);
        assert_eq!(s.dimension(), 2);
        assert!(s.contains(5));
        assert!(!s.contains(3));
        assert!(Simplex::new(vec![]).is_err());
        assert!(Simplex::new(vec![1, 2, 2]).is_err());
        assert!(Simplex::new(vec![0, 1, 2, 3, 4]).is_err());
        let tet = Simplex::new(vec![3, 1, 0, 2]).unwrap();
        let facets = tet.facets();
        assert_eq!(facets.len(), 4);
        assert!(facets.contains(&Simplex::new(vec![0, 1, 2]).unwrap()));
        assert!(facets.contains(&Simplex::new(vec![1, 2, 3]).unwrap()));
    }

    #[test]
    fn regular_tetrahedron_earns_one_certificate() {
        let field = flat_field();
        let net = synthetic_net(regular_tet(), 0.2);
        let complex = local_delaunay(
            &field,
            &net,
            ChartPoint::new(TET_CENTRE[0], TET_CENTRE[1], TET_CENTRE[2]),
            0.6,
        )
        .unwrap();
        assert_eq!(complex.in_region, vec![0, 1, 2, 3]);
        assert_eq!(complex.tetrahedra.len(), 1);
        assert_eq!(complex.triangles.len(), 4);
        assert_eq!(complex.edges.len(), 6);
        assert!(complex.seed_exhausted.is_empty());
        let cert = &complex.certificates[0];
        assert_eq!(cert.centres.len(), 1);
        let centre = cert.centres[0];
        assert!((centre.x - TET_CENTRE[0]).abs() < 1e-9);
        assert!((centre.y - TET_CENTRE[1]).abs() < 1e-9);
        assert!((centre.z - TET_CENTRE[2]).abs() < 1e-9);
        assert!((cert.radii[0] - TET_RADIUS).abs() < 1e-9);
        assert!(verify_certificate(&field, &net, cert).unwrap());

        // A lone tetrahedron fully inside the region is a certified census
        // failure: each triangle has one coface instead of two.
        let census = coface_census(&complex);
        assert!(census.indeterminate.is_empty());
        assert_eq!(census.counts.len(), 4);
        assert!(census.counts.values().all(|&c| c == 1));

        let (generic, violations) =
            check_genericity(&field, &net, &complex.certificates, GENERICITY_TOL).unwrap();
        assert!(generic);
        assert!(violations.is_empty());
    }

    #[test]
    fn boundary_tetrahedron_is_indeterminate() {
        let field = flat_field();
        let net = synthetic_net(regular_tet(), 0.2);
        let complex =
            local_delaunay(&field, &net, ChartPoint::new(0.0, 0.0, 0.0), 0.1).unwrap();
        assert_eq!(complex.in_region, vec![0]);
        assert_eq!(complex.tetrahedra.len(), 1);
        assert_eq!(complex.vertices, vec![0, 1, 2, 3]);
        let census = coface_census(&complex);
        assert!(census.counts.is_empty());
        assert_eq!(census.indeterminate.len(), 4);
    }

    #[test]
    fn empty_region_keeps_vertices_only() {
        let field = flat_field();
        let mut points = regular_tet();
        points.push(ChartPoint::new(-0.8, -0.8, -0.8));
        let net = synthetic_net(points, 0.2);
        let complex =
            local_delaunay(&field, &net, ChartPoint::new(-0.8, -0.8, -0.8), 0.2).unwrap();
        assert_eq!(complex.in_region, vec![4]);
        assert_eq!(complex.vertices, vec![4]);
        assert!(complex.edges.is_empty());
        assert!(complex.triangles.is_empty());
        assert!(complex.tetrahedra.is_empty());
    }

    #[test]
    fn planted_cosphere_defeats_genericity() {
        let field = flat_field();
        let mut points = regular_tet();
        // Antipode of the apex on the circumsphere: five cospherical points.
        points.push(ChartPoint::new(
            TET_CENTRE[0],
            TET_CENTRE[1],
            TET_CENTRE[2] - TET_RADIUS,
        ));
        let net = synthetic_net(points, 0.2);
        let complex = local_delaunay(
            &field,
            &net,
            ChartPoint::new(TET_CENTRE[0], TET_CENTRE[1], TET_CENTRE[2]),
            0.6,
        )
        .unwrap();
        assert!(complex.tetrahedra.len() >= 2);
        let (generic, violations) =
            check_genericity(&field, &net, &complex.certificates, GENERICITY_TOL).unwrap();
        assert!(!generic);
        assert!(!violations.is_empty());
        assert_eq!(violations[0].near_sphere, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn tampered_certificate_fails_verification() {
        let field = flat_field();
        let net = synthetic_net(regular_tet(), 0.2);
        let complex = local_delaunay(
            &field,
            &net,
            ChartPoint::new(TET_CENTRE[0], TET_CENTRE[1], TET_CENTRE[2]),
            0.6,
        )
        .unwrap();
        let mut cert = complex.certificates[0].clone();
        cert.radii[0] += 1e-3;
        assert!(!verify_certificate(&field, &net, &cert).unwrap());
    }

    #[test]
    fn coarse_ball_bound_is_rejected() {
        let field = flat_field();
        // cap = 0.45 * (1 + sqrt(3)/8) = 0.547 exceeds a quarter period.
        let net = synthetic_net(regular_tet(), 0.45);
        let err = local_delaunay(&field, &net, ChartPoint::new(0.0, 0.0, 0.0), 0.5);
        assert!(matches!(
            err,
            Err(DelaunayError::BallBoundTooCoarse { .. })
        ));
    }

    #[test]
    fn uncertified_net_is_rejected() {
        let field = flat_field();
        let mut net = synthetic_net(regular_tet(), 0.2);
        net.density_certified = false;
        let err = local_delaunay(&field, &net, ChartPoint::new(0.0, 0.0, 0.0), 0.5);
        assert!(matches!(err, Err(DelaunayError::NetNotCertified)));
    }

    /// Flat control: a generated net covers the whole torus, the region
    /// grabs most of it, and every interior triangle must have exactly two
    /// cofaces because the flat-torus Delaunay complex triangulates a
    /// closed manifold.
    #[test]
    fn flat_control_census_is_clean() {
        let field = flat_field();
        let net =
            generate_net_constrained(&field, 0.38, 11, &NetConstraints::none()).unwrap();
        let complex = local_delaunay(
            &field,
            &net,
            ChartPoint::new(0.0, 0.0, 0.0),
            4.0 * net.epsilon,
        )
        .unwrap();
        assert!(
            complex.seed_exhausted.is_empty(),
            "exhausted: {:?}",
            complex.seed_exhausted
        );
        assert!(complex.tetrahedra.len() > 20);
        assert!(complex
            .certificates
            .iter()
            .all(|c| c.centres.len() == 1));
        let census = coface_census(&complex);
        assert!(census.counts.len() > 20);
        assert!(census.counts.values().all(|&c| c == 2));
        let (generic, _) =
            check_genericity(&field, &net, &complex.certificates, GENERICITY_TOL).unwrap();
        assert!(generic);
    }

    /// Full-scale audit: the perturbed net is generated around the solved
    /// configuration and the census must convict exactly the two triangles
    /// sharing the configuration's two-ball tetrahedron.
    #[test]
    fn perturbed_net_audit_certifies_the_defect() {
        let field = MetricField::standard(2.0, 0.375).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        let scan = scan_xi(&cfg, &cfg.uniform_grid(8)).unwrap();
        let built = build_configuration(&cfg, &scan).unwrap();
        let conf = solve_circumcentres(&built, &cfg).unwrap();
        let net = generate_net(&field, &conf, 0.1, 42).unwrap();
        let report = detect_defect(&field, &net, &conf, GENERICITY_TOL).unwrap();

        assert!(report.generic, "violations: {:?}", report.violations);
        assert!(report.complex.seed_exhausted.is_empty());

        // The planted vertices are the first four net points in u, v, w, p
        // order; the defective triangles are u-w-p and v-w-p.
        assert_eq!(net.fixed_indices, vec![0, 1, 2, 3]);
        let expected: Vec<(Simplex, usize)> = vec![
            (Simplex::new(vec![0, 2, 3]).unwrap(), 1),
            (Simplex::new(vec![1, 2, 3]).unwrap(), 1),
        ];
        assert_eq!(report.bad_triangles, expected);

        let witness = report.witness.as_ref().expect("two-ball witness");
        assert_eq!(witness.simplex, Simplex::new(vec![0, 1, 2, 3]).unwrap());
        assert_eq!(witness.centres.len(), 2);
        let b = conf.b();
        for centre in &witness.centres {
            assert!(centre.x.abs() < 1e-6);
            assert!(centre.z.abs() < 1e-6);
            assert!((centre.y.abs() - b * 0.1).abs() < 1e-6);
        }
        assert!(witness.radii.iter().all(|&r| r < 0.1));
        assert!(report.established());

        // Round-trip spot check on the serialized complex.
        let json = report.complex.to_json(&net);
        assert!(json.contains("\"census\""));
        assert!(json.contains("\"d3\""));
    }
}
