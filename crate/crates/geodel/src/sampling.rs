//! Seeded generation and certification of epsilon-nets.
//!
//! Generation is greedy farthest-point insertion over a low-discrepancy
//! candidate pool, with the four configuration vertices (and two pole
//! anchors protecting the exclusion-zone caps) pre-inserted. A lazy max-heap
//! keyed by stale upper bounds keeps the greedy order cheap; every accepted
//! insertion is certified at distance >= epsilon from the net using the
//! flat lower bound, the tube lower bound, the straight-segment upper bound,
//! and the full solver only on the sliver the bounds cannot decide.
//!
//! Density is certified against a probe lattice of spacing epsilon / 4.
//! Probes the greedy pass leaves uncovered are patched into the net (they
//! are themselves >= epsilon from every point, so separation survives);
//! probes inside an exclusion zone are covered by walking outward along the
//! radial ray until an insertable cover point appears.

use crate::chart::{
    canonicalize, flat_torus_distance, nearest_offset, nearest_straight_upper, tube_lower_bound,
    ChartPoint, MetricField,
};
use crate::counterexample::Configuration;
use crate::geodesic::{geodesic_distance, GeodesicError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;
use thiserror::Error;

/// Candidate pool size: 64 (L/eps)^3 low-discrepancy points.
const POOL_FACTOR: f64 = 64.0;
/// Free candidates keep this clearance (times eps) beyond each zone radius.
/// Without it a net point could hug a ball boundary and fall into the ball
/// under an arbitrarily small perturbation of the configuration.
const ZONE_BUFFER: f64 = 0.1;
/// Tolerance of full distance solves during generation and verification.
const NET_TOL: f64 = 1e-9;
/// Slack (times eps) when re-checking zone emptiness: the configuration
/// vertices sit exactly on the ball boundaries.
const ZONE_SLACK: f64 = 1e-8;
const MAX_PATCH_ROUNDS: usize = 8;
const NET_JSON_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("epsilon {0} must be positive, finite, and small against the injectivity floor")]
    InvalidEpsilon(f64),
    #[error("exclusion zone radius {radius} must stay below epsilon {epsilon}")]
    ZoneRadiusExceedsEpsilon { radius: f64, epsilon: f64 },
    #[error("configuration vertices disagree with epsilon {0}")]
    ConfigMismatch(f64),
    #[error("pre-inserted points are closer than epsilon: {0}")]
    SeparationUnsatisfiable(String),
    #[error("probe at ({x}, {y}, {z}) cannot be covered without entering an exclusion zone")]
    CoverageImpossible { x: f64, y: f64, z: f64 },
    #[error("generated net failed its own certification: {0}")]
    CertificationFailed(String),
    #[error("verification grid spacing {spacing} exceeds epsilon/4 = {limit}")]
    GridTooCoarse { spacing: f64, limit: f64 },
    #[error("net serialization: {0}")]
    Serialization(String),
    #[error("geodesic solver failure: {0}")]
    Solver(#[from] GeodesicError),
}

/// Open geodesic ball that must stay free of net points.
#[derive(Debug, Clone, Copy)]
pub struct ExclusionZone {
    pub centre: ChartPoint,
    pub radius: f64,
}

/// Everything a net must respect besides density and separation.
#[derive(Debug, Clone, Default)]
pub struct NetConstraints {
    /// Pre-inserted points recorded as fixed in the output.
    pub fixed_points: Vec<ChartPoint>,
    /// Pre-inserted helper points (not recorded as fixed): pole anchors that
    /// cover the deep caps of the exclusion zones.
    pub anchors: Vec<ChartPoint>,
    pub zones: Vec<ExclusionZone>,
}

impl NetConstraints {
    /// No fixed points, no zones: a plain epsilon-net.
    pub fn none() -> Self {
        Self::default()
    }

    /// Fix the four configuration vertices; once the configuration is
    /// solved, exclude both circumballs and anchor their y-axis poles.
    pub fn for_configuration(
        conf: &Configuration,
        epsilon: f64,
    ) -> Result<Self, SamplingError> {
        let expected = FRAC_1_SQRT_2 * epsilon;
        if (conf.u.coords().norm() - expected).abs() > 1e-9 * epsilon {
            return Err(SamplingError::ConfigMismatch(epsilon));
        }
        let mut constraints = Self {
            fixed_points: conf.sigma().to_vec(),
            anchors: Vec::new(),
            zones: Vec::new(),
        };
        if let (Some((c_plus, c_minus)), Some(radius)) = (conf.centres(), conf.circumradius()) {
            if radius >= epsilon {
                return Err(SamplingError::ZoneRadiusExceedsEpsilon { radius, epsilon });
            }
            for centre in [c_plus, c_minus] {
                constraints.zones.push(ExclusionZone { centre, radius });
                // anchor on the outward y-axis, flush with the buffered zone:
                // it covers the pole cap that u, v, w, p cannot reach
                let offset = centre.y.signum() * (radius + ZONE_BUFFER * epsilon);
                constraints.anchors.push(ChartPoint::new(
                    centre.x,
                    centre.y + offset,
                    centre.z,
                ));
            }
        }
        Ok(constraints)
    }
}

/// A generated net with its certification state.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub points: Vec<ChartPoint>,
    pub epsilon: f64,
    pub seed: u64,
    /// Indices of the configuration vertices (u, v, w, p), if any.
    pub fixed_indices: Vec<usize>,
    pub density_certified: bool,
    pub separation_certified: bool,
}

/// Probe of the certification grid left uncovered, with the certified lower
/// bound on its distance to the net.
#[derive(Debug, Clone, Copy)]
pub struct ProbeWitness {
    pub probe: ChartPoint,
    pub lower_bound: f64,
}

/// Pair of net points violating separation.
#[derive(Debug, Clone, Copy)]
pub struct PairWitness {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
}

/// Outcome of `verify_net`.
#[derive(Debug, Clone)]
pub struct NetCertificate {
    pub density: bool,
    pub separation: bool,
    pub probe_witnesses: Vec<ProbeWitness>,
    pub pair_witnesses: Vec<PairWitness>,
    pub probes: usize,
    /// Pairs close enough that separation needed an actual check.
    pub checked_pairs: usize,
    /// Largest certified upper bound on probe-to-net distance: an empirical
    /// covering radius of the probe grid.
    pub max_probe_upper: f64,
    /// Fraction of probes within the strict Lipschitz margin that would
    /// certify continuum density outright. Diagnostic: a separated net
    /// cannot meet it everywhere, so the probe criterion is the normative
    /// one.
    pub strict_margin_fraction: f64,
}

/// Builds the constraint set from the configuration and delegates to
/// `generate_net_constrained`.
pub fn generate_net(
    field: &MetricField,
    conf: &Configuration,
    epsilon: f64,
    seed: u64,
) -> Result<PointSet, SamplingError> {
    if field.amplitude() != conf.field().amplitude() || field.period() != conf.field().period() {
        return Err(SamplingError::ConfigMismatch(epsilon));
    }
    let constraints = NetConstraints::for_configuration(conf, epsilon)?;
    generate_net_constrained(field, epsilon, seed, &constraints)
}

/// Greedy farthest-point net generation under explicit constraints.
///
/// Deterministic for fixed inputs: the candidate pool is a seeded
/// low-discrepancy sequence, the greedy order is data-dependent only, and
/// patching scans probes in lattice order.
pub fn generate_net_constrained(
    field: &MetricField,
    epsilon: f64,
    seed: u64,
    constraints: &NetConstraints,
) -> Result<PointSet, SamplingError> {
    if !epsilon.is_finite() || epsilon <= 0.0 || 1.2 * epsilon >= field.injectivity_floor() {
        return Err(SamplingError::InvalidEpsilon(epsilon));
    }
    for zone in &constraints.zones {
        if zone.radius >= epsilon {
            return Err(SamplingError::ZoneRadiusExceedsEpsilon {
                radius: zone.radius,
                epsilon,
            });
        }
    }
    let period = field.period();
    let buffer = ZONE_BUFFER * epsilon;

    let mut points: Vec<ChartPoint> = constraints
        .fixed_points
        .iter()
        .chain(constraints.anchors.iter())
        .map(|q| canonicalize(field.chart(), *q))
        .collect();
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if dist_below(field, &points[i], &points[j], epsilon)? {
                return Err(SamplingError::SeparationUnsatisfiable(format!(
                    "pre-inserted points {i} and {j}"
                )));
            }
        }
    }

    // seeded low-discrepancy pool with a random toroidal shift
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let pool_len = (POOL_FACTOR * (period / epsilon).powi(3)).round() as usize;
    let pool: Vec<ChartPoint> = (0..pool_len)
        .into_par_iter()
        .map(|i| {
            let h = [
                halton(i as u64 + 1, 2),
                halton(i as u64 + 1, 3),
                halton(i as u64 + 1, 5),
            ];
            let unit = |k: usize| (h[k] + shift[k]).fract();
            ChartPoint::new(
                unit(0) * period - 0.5 * period,
                unit(1) * period - 0.5 * period,
                unit(2) * period - 0.5 * period,
            )
        })
        .collect();
    let admissible: Vec<ChartPoint> = pool
        .into_par_iter()
        .map(|q| {
            for zone in &constraints.zones {
                if dist_below(field, &q, &zone.centre, zone.radius + buffer)? {
                    return Ok(None);
                }
            }
            Ok(Some(q))
        })
        .collect::<Result<Vec<_>, SamplingError>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut grid = CellGrid::new(period, epsilon);
    for (i, q) in points.iter().enumerate() {
        grid.insert(i as u32, q);
    }

    // lazy greedy: keys are stale upper bounds on distance-to-net, so the
    // popped maximum is genuine once its refreshed key still dominates
    let initial: Vec<f64> = admissible
        .par_iter()
        .map(|q| min_upper_over(field, q, &points))
        .collect();
    let mut heap: BinaryHeap<HeapEntry> = initial
        .into_iter()
        .enumerate()
        .map(|(idx, key)| HeapEntry {
            key,
            idx: idx as u32,
        })
        .collect();

    while let Some(entry) = heap.pop() {
        if entry.key < epsilon {
            break; // upper bounds only decay: everything left is covered
        }
        let q = &admissible[entry.idx as usize];
        let fresh = min_upper_to_net(field, q, &points, &grid);
        if fresh < epsilon {
            continue; // certified covered, drop for good
        }
        if let Some(next) = heap.peek() {
            if fresh < next.key {
                heap.push(HeapEntry {
                    key: fresh,
                    idx: entry.idx,
                });
                continue;
            }
        }
        if separated_from_net(field, q, &points, &grid, epsilon)? {
            grid.insert(points.len() as u32, q);
            points.push(*q);
        }
    }

    // cover whatever the pool missed, probing the certification lattice
    let spacing = 0.25 * epsilon;
    for round in 0..MAX_PATCH_ROUNDS {
        let failing = density_failures(field, &points, epsilon, spacing);
        if failing.is_empty() {
            break;
        }
        if round + 1 == MAX_PATCH_ROUNDS {
            let probe = failing[0].probe;
            return Err(SamplingError::CoverageImpossible {
                x: probe.x,
                y: probe.y,
                z: probe.z,
            });
        }
        for witness in failing {
            patch_probe(
                field,
                &mut points,
                &mut grid,
                &witness.probe,
                epsilon,
                constraints,
            )?;
        }
    }

    // re-verify the zones: nothing may sit inside either ball (the
    // configuration vertices lie exactly on the boundary, hence the slack)
    for (i, q) in points.iter().enumerate() {
        for zone in &constraints.zones {
            if dist_below(field, q, &zone.centre, zone.radius - ZONE_SLACK * epsilon)? {
                return Err(SamplingError::CertificationFailed(format!(
                    "point {i} lies inside an exclusion zone"
                )));
            }
        }
    }

    let mut net = PointSet {
        points,
        epsilon,
        seed,
        fixed_indices: (0..constraints.fixed_points.len()).collect(),
        density_certified: false,
        separation_certified: false,
    };
    let certificate = verify_net(field, &net, spacing)?;
    if !certificate.density || !certificate.separation {
        return Err(SamplingError::CertificationFailed(format!(
            "density {} separation {}",
            certificate.density, certificate.separation
        )));
    }
    net.density_certified = true;
    net.separation_certified = true;
    Ok(net)
}

/// Certifies density against a probe lattice and separation over all
/// near pairs. Every decision is made by certified bounds, with the full
/// solver only on pairs the bounds cannot split.
pub fn verify_net(
    field: &MetricField,
    net: &PointSet,
    grid_spacing: f64,
) -> Result<NetCertificate, SamplingError> {
    let eps = net.epsilon;
    let limit = 0.25 * eps;
    if !(grid_spacing > 0.0 && grid_spacing <= limit) {
        return Err(SamplingError::GridTooCoarse {
            spacing: grid_spacing,
            limit,
        });
    }
    let period = field.period();
    let mut grid = CellGrid::new(period, eps);
    for (i, q) in net.points.iter().enumerate() {
        grid.insert(i as u32, q);
    }

    // density over the probe lattice
    let m = (period / grid_spacing).ceil() as usize;
    let actual = period / m as f64;
    let strict_threshold =
        eps - (3.0_f64.sqrt() / 2.0) * actual * field.stretch();
    let probe_results: Vec<(usize, Option<f64>, f64, bool)> = (0..m * m * m)
        .into_par_iter()
        .map(|linear| {
            let probe = lattice_probe(linear, m, actual, period);
            let (covered, upper) = probe_cover(field, &probe, &net.points, &grid, eps);
            let lower = if covered.is_none() {
                probe_distance_floor(field, &probe, &net.points, &grid, eps)
            } else {
                0.0
            };
            (linear, covered, lower, upper < strict_threshold)
        })
        .collect();
    let mut probe_witnesses = Vec::new();
    let mut max_probe_upper = 0.0_f64;
    let mut strict = 0_usize;
    for (linear, covered, lower, is_strict) in &probe_results {
        match covered {
            Some(upper) => {
                max_probe_upper = max_probe_upper.max(*upper);
                if *is_strict {
                    strict += 1;
                }
            }
            None => probe_witnesses.push(ProbeWitness {
                probe: lattice_probe(*linear, m, actual, period),
                lower_bound: *lower,
            }),
        }
    }

    // separation over pairs the flat bound cannot dismiss
    let pair_data: Vec<(usize, Vec<PairWitness>)> = (0..net.points.len())
        .into_par_iter()
        .map(|i| {
            let mut checked = 0;
            let mut witnesses = Vec::new();
            let qi = &net.points[i];
            for j in grid.neighbours(qi) {
                let j = j as usize;
                if j <= i {
                    continue;
                }
                let qj = &net.points[j];
                if flat_torus_distance(field.chart(), qi, qj) >= eps {
                    continue;
                }
                checked += 1;
                match pair_separated(field, qi, qj, eps) {
                    Ok(None) => {}
                    Ok(Some(d)) => witnesses.push(PairWitness { i, j, distance: d }),
                    Err(_) => witnesses.push(PairWitness {
                        i,
                        j,
                        distance: f64::NAN,
                    }),
                }
            }
            (checked, witnesses)
        })
        .collect();
    let checked_pairs = pair_data.iter().map(|(c, _)| c).sum();
    let mut pair_witnesses: Vec<PairWitness> =
        pair_data.into_iter().flat_map(|(_, w)| w).collect();
    pair_witnesses.sort_by_key(|w| (w.i, w.j));

    Ok(NetCertificate {
        density: probe_witnesses.is_empty(),
        separation: pair_witnesses.is_empty(),
        probes: m * m * m,
        checked_pairs,
        max_probe_upper,
        strict_margin_fraction: strict as f64 / (m * m * m) as f64,
        probe_witnesses,
        pair_witnesses,
    })
}

/// Indices of net points lying strictly inside any of the zones (with the
/// boundary slack). Empty result certifies zone emptiness.
pub fn verify_zones(
    field: &MetricField,
    net: &PointSet,
    zones: &[ExclusionZone],
) -> Result<Vec<usize>, SamplingError> {
    let slack = ZONE_SLACK * net.epsilon;
    let mut violations = Vec::new();
    for (i, q) in net.points.iter().enumerate() {
        for zone in zones {
            if dist_below(field, q, &zone.centre, zone.radius - slack)? {
                violations.push(i);
                break;
            }
        }
    }
    Ok(violations)
}

impl PointSet {
    /// Serializes to the interchange JSON document. Coordinates keep 18
    /// significant digits and round-trip bitwise.
    pub fn to_json(&self, field: &MetricField) -> String {
        let mut s = String::with_capacity(self.points.len() * 80 + 256);
        s.push_str("{\n");
        let _ = writeln!(s, "  \"version\": {},", NET_JSON_VERSION);
        let _ = writeln!(s, "  \"L\": {:.17e},", field.period());
        let _ = writeln!(s, "  \"A\": {:.17e},", field.amplitude());
        let _ = writeln!(s, "  \"epsilon\": {:.17e},", self.epsilon);
        let _ = writeln!(s, "  \"seed\": {},", self.seed);
        let fixed: Vec<String> = self.fixed_indices.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "  \"fixed_indices\": [{}],", fixed.join(", "));
        s.push_str("  \"points\": [\n");
        for (i, q) in self.points.iter().enumerate() {
            let comma = if i + 1 == self.points.len() { "" } else { "," };
            let _ = writeln!(
                s,
                "    [{:.17e}, {:.17e}, {:.17e}]{comma}",
                q.x, q.y, q.z
            );
        }
        s.push_str("  ]\n}\n");
        s
    }

    /// Parses the interchange document back into a net and its field.
    /// Certification flags are cleared: a loaded net is unverified.
    pub fn from_json(text: &str) -> Result<(PointSet, MetricField), SamplingError> {
        let bad = |msg: &str| SamplingError::Serialization(msg.to_string());
        let value: Value =
            serde_json::from_str(text).map_err(|e| SamplingError::Serialization(e.to_string()))?;
        let version = value["version"].as_u64().ok_or_else(|| bad("version"))?;
        if version != NET_JSON_VERSION {
            return Err(bad("unsupported version"));
        }
        let period = value["L"].as_f64().ok_or_else(|| bad("L"))?;
        let amplitude = value["A"].as_f64().ok_or_else(|| bad("A"))?;
        let field = MetricField::standard(period, amplitude)
            .map_err(|e| SamplingError::Serialization(e.to_string()))?;
        let epsilon = value["epsilon"].as_f64().ok_or_else(|| bad("epsilon"))?;
        let seed = value["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        let fixed_indices: Vec<usize> = value["fixed_indices"]
            .as_array()
            .ok_or_else(|| bad("fixed_indices"))?
            .iter()
            .map(|v| v.as_u64().map(|u| u as usize).ok_or_else(|| bad("index")))
            .collect::<Result<_, _>>()?;
        let points: Vec<ChartPoint> = value["points"]
            .as_array()
            .ok_or_else(|| bad("points"))?
            .iter()
            .map(|row| {
                let triple = row.as_array().filter(|a| a.len() == 3);
                let triple = triple.ok_or_else(|| bad("point row"))?;
                let mut coords = [0.0; 3];
                for (k, v) in triple.iter().enumerate() {
                    coords[k] = v.as_f64().ok_or_else(|| bad("coordinate"))?;
                }
                Ok(canonicalize(field.chart(), ChartPoint::from(coords)))
            })
            .collect::<Result<_, SamplingError>>()?;
        if fixed_indices.iter().any(|&i| i >= points.len()) {
            return Err(bad("fixed index out of range"));
        }
        Ok((
            PointSet {
                points,
                epsilon,
                seed,
                fixed_indices,
                density_certified: false,
                separation_certified: false,
            },
            field,
        ))
    }
}

// ---- internal machinery ----

#[derive(Debug, Clone, Copy)]
struct HeapEntry {
    key: f64,
    idx: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.idx == other.idx
    }
}
impl Eq for HeapEntry {}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // max-heap on key; smaller index wins ties for determinism
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Toroidal bucket grid over the canonical domain; cell size >= the query
/// radius so 27 cells always cover it.
pub(crate) struct CellGrid {
    period: f64,
    dims: usize,
    cell: f64,
    buckets: Vec<Vec<u32>>,
}

impl CellGrid {
    pub(crate) fn new(period: f64, min_cell: f64) -> Self {
        let dims = ((period / min_cell).floor() as usize).max(1);
        Self {
            period,
            dims,
            cell: period / dims as f64,
            buckets: vec![Vec::new(); dims * dims * dims],
        }
    }

    fn axis_cell(&self, c: f64) -> usize {
        (((c + 0.5 * self.period) / self.cell) as usize).min(self.dims - 1)
    }

    fn bucket(&self, q: &ChartPoint) -> usize {
        let (x, y, z) = (self.axis_cell(q.x), self.axis_cell(q.y), self.axis_cell(q.z));
        (x * self.dims + y) * self.dims + z
    }

    pub(crate) fn insert(&mut self, idx: u32, q: &ChartPoint) {
        let b = self.bucket(q);
        self.buckets[b].push(idx);
    }

    /// Indices in the 27 wrapped cells around `q` (deduplicated when the
    /// grid is narrower than three cells).
    pub(crate) fn neighbours(&self, q: &ChartPoint) -> Vec<u32> {
        let centre = [self.axis_cell(q.x), self.axis_cell(q.y), self.axis_cell(q.z)];
        let mut cells = Vec::with_capacity(27);
        for dx in -1_i64..=1 {
            for dy in -1_i64..=1 {
                for dz in -1_i64..=1 {
                    let wrap = |c: usize, d: i64| {
                        ((c as i64 + d).rem_euclid(self.dims as i64)) as usize
                    };
                    cells.push(
                        (wrap(centre[0], dx) * self.dims + wrap(centre[1], dy)) * self.dims
                            + wrap(centre[2], dz),
                    );
                }
            }
        }
        cells.sort_unstable();
        cells.dedup();
        cells
            .into_iter()
            .flat_map(|c| self.buckets[c].iter().copied())
            .collect()
    }
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut factor = 1.0;
    let mut result = 0.0;
    while index > 0 {
        factor /= base as f64;
        result += factor * (index % base) as f64;
        index /= base;
    }
    result
}

fn lattice_probe(linear: usize, m: usize, spacing: f64, period: f64) -> ChartPoint {
    let x = linear / (m * m);
    let y = (linear / m) % m;
    let z = linear % m;
    let coord = |k: usize| -0.5 * period + (k as f64 + 0.5) * spacing;
    ChartPoint::new(coord(x), coord(y), coord(z))
}

/// Certified decision d(a, b) < threshold.
fn dist_below(
    field: &MetricField,
    a: &ChartPoint,
    b: &ChartPoint,
    threshold: f64,
) -> Result<bool, SamplingError> {
    if flat_torus_distance(field.chart(), a, b) >= threshold {
        return Ok(false);
    }
    let upper = nearest_straight_upper(field, a, b);
    if upper < threshold {
        return Ok(true);
    }
    if tube_lower_bound(field, a, b, upper) >= threshold {
        return Ok(false);
    }
    Ok(geodesic_distance(field, a, b, NET_TOL)?.distance < threshold)
}

/// None if the pair is separated (d >= eps), Some(distance) otherwise.
fn pair_separated(
    field: &MetricField,
    a: &ChartPoint,
    b: &ChartPoint,
    eps: f64,
) -> Result<Option<f64>, SamplingError> {
    let upper = nearest_straight_upper(field, a, b);
    if tube_lower_bound(field, a, b, upper) >= eps {
        return Ok(None);
    }
    let d = geodesic_distance(field, a, b, NET_TOL)?.distance;
    Ok(if d >= eps { None } else { Some(d) })
}

/// Upper bound on the distance from `q` to the listed points (straight
/// segments; infinity when the list is empty).
fn min_upper_over(field: &MetricField, q: &ChartPoint, points: &[ChartPoint]) -> f64 {
    points
        .iter()
        .map(|p| nearest_straight_upper(field, q, p))
        .fold(f64::INFINITY, f64::min)
}

/// Upper bound on the distance from `q` to the net, using the bucket grid.
fn min_upper_to_net(
    field: &MetricField,
    q: &ChartPoint,
    points: &[ChartPoint],
    grid: &CellGrid,
) -> f64 {
    let mut candidates: Vec<(f64, u32)> = grid
        .neighbours(q)
        .into_iter()
        .map(|i| {
            (
                flat_torus_distance(field.chart(), q, &points[i as usize]),
                i,
            )
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = f64::INFINITY;
    for (flat, i) in candidates {
        if flat >= best {
            break;
        }
        best = best.min(nearest_straight_upper(field, q, &points[i as usize]));
    }
    best
}

/// Certifies that `q` keeps distance >= eps to every net point.
fn separated_from_net(
    field: &MetricField,
    q: &ChartPoint,
    points: &[ChartPoint],
    grid: &CellGrid,
    eps: f64,
) -> Result<bool, SamplingError> {
    for i in grid.neighbours(q) {
        if dist_below(field, q, &points[i as usize], eps)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// (coverage upper bound if covered, cheapest upper bound seen): the probe
/// is covered when some net point is certifiably closer than eps.
fn probe_cover(
    field: &MetricField,
    probe: &ChartPoint,
    points: &[ChartPoint],
    grid: &CellGrid,
    eps: f64,
) -> (Option<f64>, f64) {
    let mut candidates: Vec<(f64, u32)> = grid
        .neighbours(probe)
        .into_iter()
        .map(|i| {
            (
                flat_torus_distance(field.chart(), probe, &points[i as usize]),
                i,
            )
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best_upper = f64::INFINITY;
    let mut undecided: Vec<(u32, f64)> = Vec::new();
    for (flat, i) in candidates {
        if flat >= eps.min(best_upper) {
            break;
        }
        let upper = nearest_straight_upper(field, probe, &points[i as usize]);
        best_upper = best_upper.min(upper);
        if upper < eps {
            return (Some(best_upper), best_upper);
        }
        undecided.push((i, upper));
    }
    for (i, upper) in undecided {
        let p = &points[i as usize];
        if tube_lower_bound(field, probe, p, upper) >= eps {
            continue;
        }
        if let Ok(result) = geodesic_distance(field, probe, p, NET_TOL) {
            if result.distance < eps {
                let certified = best_upper.min(result.upper_bound);
                return (Some(certified), certified);
            }
        }
    }
    (None, best_upper)
}

/// Certified lower bound on the distance from a failing probe to the net.
fn probe_distance_floor(
    field: &MetricField,
    probe: &ChartPoint,
    points: &[ChartPoint],
    grid: &CellGrid,
    eps: f64,
) -> f64 {
    let mut floor = eps; // nothing outside the neighbourhood is closer
    for i in grid.neighbours(probe) {
        let p = &points[i as usize];
        let upper = nearest_straight_upper(field, probe, p);
        let lower = flat_torus_distance(field.chart(), probe, p)
            .max(tube_lower_bound(field, probe, p, upper));
        floor = floor.min(lower);
    }
    floor
}

fn density_failures(
    field: &MetricField,
    points: &[ChartPoint],
    eps: f64,
    spacing: f64,
) -> Vec<ProbeWitness> {
    let period = field.period();
    let m = (period / spacing).ceil() as usize;
    let actual = period / m as f64;
    let mut grid = CellGrid::new(period, eps);
    for (i, q) in points.iter().enumerate() {
        grid.insert(i as u32, q);
    }
    let mut failing: Vec<(usize, ProbeWitness)> = (0..m * m * m)
        .into_par_iter()
        .filter_map(|linear| {
            let probe = lattice_probe(linear, m, actual, period);
            let (covered, _) = probe_cover(field, &probe, points, &grid, eps);
            if covered.is_some() {
                return None;
            }
            let lower = probe_distance_floor(field, &probe, points, &grid, eps);
            Some((
                linear,
                ProbeWitness {
                    probe,
                    lower_bound: lower,
                },
            ))
        })
        .collect();
    failing.sort_by_key(|(linear, _)| *linear);
    failing.into_iter().map(|(_, w)| w).collect()
}

/// Covers one failing probe: insert it directly when allowed, otherwise walk
/// outward from the offending zone until an insertable cover point appears.
fn patch_probe(
    field: &MetricField,
    points: &mut Vec<ChartPoint>,
    grid: &mut CellGrid,
    probe: &ChartPoint,
    eps: f64,
    constraints: &NetConstraints,
) -> Result<(), SamplingError> {
    if !separated_from_net(field, probe, points, grid, eps)? {
        return Ok(()); // covered by an earlier patch this round
    }
    let buffer = ZONE_BUFFER * eps;
    let mut blocking = None;
    for zone in &constraints.zones {
        if dist_below(field, probe, &zone.centre, zone.radius + buffer)? {
            blocking = Some(zone);
            break;
        }
    }
    let candidate = match blocking {
        None => *probe,
        Some(zone) => {
            let v = nearest_offset(field.chart(), &zone.centre, probe);
            let dir = if v.norm() == 0.0 {
                nalgebra::Vector3::new(0.0, 1.0, 0.0)
            } else {
                v.normalize()
            };
            let mut found = None;
            for k in 0..4 {
                let t = (zone.radius + buffer) * (1.0 + 1e-9) + 0.25 * k as f64 * eps;
                let walked = canonicalize(field.chart(), zone.centre.translate(dir * t));
                let mut admissible = true;
                for other in &constraints.zones {
                    if dist_below(field, &walked, &other.centre, other.radius + buffer)? {
                        admissible = false;
                        break;
                    }
                }
                if admissible
                    && separated_from_net(field, &walked, points, grid, eps)?
                    && dist_below(field, &walked, probe, eps)?
                {
                    found = Some(walked);
                    break;
                }
            }
            found.ok_or(SamplingError::CoverageImpossible {
                x: probe.x,
                y: probe.y,
                z: probe.z,
            })?
        }
    };
    grid.insert(points.len() as u32, &candidate);
    points.push(candidate);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counterexample::{build_configuration, CounterexampleConfig, XiScan};

    fn flat_field() -> MetricField {
        MetricField::standard(2.0, 0.0).unwrap()
    }

    fn control_net() -> PointSet {
        generate_net_constrained(&flat_field(), 0.45, 11, &NetConstraints::none()).unwrap()
    }

    #[test]
    fn control_net_is_certified_and_deterministic() {
        let field = flat_field();
        let net = control_net();
        assert!(net.density_certified && net.separation_certified);
        assert!(net.fixed_indices.is_empty());
        // packing and covering bounds for a maximal 0.45-net on [-1,1)^3
        assert!(net.points.len() >= 21 && net.points.len() <= 167, "{}", net.points.len());

        let again = generate_net_constrained(&field, 0.45, 11, &NetConstraints::none()).unwrap();
        assert_eq!(net.points.len(), again.points.len());
        for (p, q) in net.points.iter().zip(again.points.iter()) {
            assert_eq!(p.coords(), q.coords());
        }
        let other = generate_net_constrained(&field, 0.45, 12, &NetConstraints::none()).unwrap();
        assert!(
            net.points.len() != other.points.len()
                || net
                    .points
                    .iter()
                    .zip(other.points.iter())
                    .any(|(p, q)| p.coords() != q.coords())
        );
    }

    #[test]
    fn duplicated_point_breaks_separation() {
        let field = flat_field();
        let mut net = control_net();
        net.points.push(net.points[7]);
        let cert = verify_net(&field, &net, 0.25 * net.epsilon).unwrap();
        assert!(!cert.separation);
        assert!(cert.pair_witnesses.iter().any(|w| w.j == net.points.len() - 1));
        assert!(cert.density);
    }

    #[test]
    fn removing_a_point_can_break_density() {
        let field = flat_field();
        let net = control_net();
        let mut broke = false;
        for removed in 0..net.points.len() {
            let mut thinned = net.clone();
            thinned.points.remove(removed);
            let cert = verify_net(&field, &thinned, 0.25 * net.epsilon).unwrap();
            assert!(cert.separation);
            if !cert.density {
                assert!(!cert.probe_witnesses.is_empty());
                assert!(cert.probe_witnesses[0].lower_bound >= thinned.epsilon);
                broke = true;
                break;
            }
        }
        assert!(broke, "no single removal uncovered a probe");
    }

    #[test]
    fn synthetic_zone_is_respected_and_still_covered() {
        let field = flat_field();
        let zone = ExclusionZone {
            centre: ChartPoint::new(0.0, 0.0, 0.0),
            radius: 0.3,
        };
        let constraints = NetConstraints {
            fixed_points: vec![],
            anchors: vec![],
            zones: vec![zone],
        };
        let net = generate_net_constrained(&field, 0.45, 3, &constraints).unwrap();
        assert!(net.density_certified && net.separation_certified);
        assert!(verify_zones(&field, &net, &[zone]).unwrap().is_empty());
        for q in &net.points {
            assert!(flat_torus_distance(field.chart(), q, &zone.centre) >= 0.3 - 1e-12);
        }
    }

    #[test]
    fn verification_rejects_a_coarse_grid() {
        let field = flat_field();
        let net = control_net();
        assert!(matches!(
            verify_net(&field, &net, 0.2),
            Err(SamplingError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let field = flat_field();
        let net = control_net();
        let text = net.to_json(&field);
        let (loaded, loaded_field) = PointSet::from_json(&text).unwrap();
        assert_eq!(loaded_field.period(), field.period());
        assert_eq!(loaded_field.amplitude(), field.amplitude());
        assert_eq!(loaded.epsilon, net.epsilon);
        assert_eq!(loaded.seed, net.seed);
        assert_eq!(loaded.fixed_indices, net.fixed_indices);
        assert_eq!(loaded.points.len(), net.points.len());
        for (p, q) in loaded.points.iter().zip(net.points.iter()) {
            assert_eq!(p.coords(), q.coords());
        }
        assert!(!loaded.density_certified && !loaded.separation_certified);
    }

    #[test]
    fn configuration_constraints_validate_epsilon() {
        let field = MetricField::standard(2.0, 0.375).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        let scan = XiScan {
            rows: vec![],
            b_star: 0.25,
            xi_selected: 0.3,
            slope_at_b_star: -1e-3,
        };
        let conf = build_configuration(&cfg, &scan).unwrap();
        let constraints = NetConstraints::for_configuration(&conf, 0.1).unwrap();
        assert_eq!(constraints.fixed_points.len(), 4);
        assert!(constraints.zones.is_empty() && constraints.anchors.is_empty());
        assert!(matches!(
            NetConstraints::for_configuration(&conf, 0.05),
            Err(SamplingError::ConfigMismatch(_))
        ));
    }
}
