//! Construction of a four-point configuration whose tetrahedron owns two
//! distinct, certified circumballs.
//!
//! The construction lives in the z = 0 mirror plane of the perturbed metric.
//! Two vertices u, v sit on the z-axis where the metric is stretched, two
//! vertices w, p sit on the x-axis where it is not. The stretch makes the
//! geodesic ball around a candidate centre on the y-axis "see" u and v as
//! farther than their chart coordinates suggest, and the ratio controlling
//! the effect decays strictly as the centre moves off the plane. A scan of
//! that ratio certifies a working offset b, after which Newton iteration
//! recovers the two equidistant points at +/- b eps on the y-axis.

use crate::chart::{ChartPoint, MetricField};
use crate::geodesic::{geodesic_distance, GeodesicError};
use crate::roots::{
    polish_equidistance, smooth_residual, solve_equidistance, AdaptivePolish, EquidistanceNewton,
    NewtonOutcome, NewtonStatus,
};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

/// Tolerance for the adaptive distance solves backing the scan, the
/// separation checks, and root certification.
pub(crate) const TIGHT_TOL: f64 = 1e-11;
/// Polyline resolution of the smooth distance behind derivative studies.
pub(crate) const SMOOTH_SEGMENTS: usize = 256;
/// Quadrature panels of the chord residual driving broad Newton phases.
const CHORD_PANELS: usize = 2;
/// Newton accepts a root once the equidistance residual sup-norm is below
/// this; well under the certification budget of 1e-8 * epsilon.
const NEWTON_STOP: f64 = 5e-12;
const NEWTON_MAX_ITERATIONS: usize = 25;
/// Finite-difference step factor (times epsilon) for Jacobians.
const FD_FACTOR: f64 = 1e-5;
/// A scan slope only counts as negative below this; finite-difference noise
/// on the ratio curve sits orders of magnitude lower.
const SLOPE_FLOOR: f64 = 1e-7;
/// Grid points whose ratio is within this fraction of the critical ratio are
/// considered degenerate and skipped during selection.
const DEGENERACY_GUARD: f64 = 1e-4;
/// Newton iterates straying this many epsilons from their seed abort the
/// solve: the sought roots sit within 1e-6 * epsilon of the seeds.
const ESCAPE_FACTOR: f64 = 0.5;
/// Accepted roots must lie this close (times epsilon) to their seeds.
const SEED_CAPTURE: f64 = 1e-6;
/// Certification budget (times epsilon) for equidistance and mirror symmetry.
const CERTIFY_BUDGET: f64 = 1e-8;
/// Distance tolerance for the cheaper per-trial checks of the stability probe.
const PROBE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CounterexampleError {
    #[error("epsilon {0} rejected: need 0 < epsilon < injectivity floor / 2 and epsilon <= period / 20")]
    InvalidEpsilon(f64),
    #[error("scan offset b = {0} outside (0, b_max]")]
    InvalidOffset(f64),
    #[error("scan grid must hold at least two strictly increasing offsets in (0, b_max]")]
    InvalidGrid,
    #[error("no grid point has a certifiably negative ratio slope")]
    NoNegativeSlope,
    #[error("separation violated: {0}")]
    SeparationViolated(String),
    #[error("circumcentre Newton diverged: {0}")]
    NewtonDiverged(String),
    #[error("circumcentre roots coincide: separation {separation:.3e} <= threshold {threshold:.3e}")]
    RootsCoincide { separation: f64, threshold: f64 },
    #[error("root certification failed: equidistance deviation {deviation:.3e} exceeds {allowed:.3e}")]
    CertificationFailed { deviation: f64, allowed: f64 },
    #[error("certified circumradius {radius} does not stay below epsilon {epsilon}")]
    RadiusExceeded { radius: f64, epsilon: f64 },
    #[error("circumcentres are not mirror images: deviation {0:.3e}")]
    CentreAsymmetry(f64),
    #[error("configuration has no solved circumcentres yet")]
    MissingCentres,
    #[error("Jacobian rejected: {0}")]
    SingularJacobian(String),
    #[error("perturbation radius {rho} rejected: need 0 <= rho < {max:.3e}")]
    InvalidRho { rho: f64, max: f64 },
    #[error("geodesic solver failure: {0}")]
    Solver(#[from] GeodesicError),
}

/// Parameters of the counterexample hunt: the sample spacing epsilon, the
/// fixed lateral scale a, the admissible offset range, and the metric.
#[derive(Debug, Clone, Copy)]
pub struct CounterexampleConfig {
    epsilon: f64,
    a: f64,
    b_max: f64,
    xi0: f64,
    field: MetricField,
}

impl CounterexampleConfig {
    /// Validates that epsilon keeps the whole construction strictly inside
    /// the injectivity floor and small against the period.
    pub fn new(field: MetricField, epsilon: f64) -> Result<Self, CounterexampleError> {
        let floor = field.injectivity_floor();
        let period = field.period();
        if !epsilon.is_finite() || epsilon <= 0.0 || epsilon >= 0.5 * floor || epsilon > period / 20.0
        {
            return Err(CounterexampleError::InvalidEpsilon(epsilon));
        }
        let a = FRAC_1_SQRT_2;
        Ok(Self {
            epsilon,
            a,
            b_max: 0.5 * a,
            xi0: critical_xi(&field),
            field,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Lateral scale of the configuration; a^2 = 1/2 up to one rounding.
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b_max(&self) -> f64 {
        self.b_max
    }

    /// Critical ratio: the value the ratio curve attains at offset zero.
    pub fn xi0(&self) -> f64 {
        self.xi0
    }

    pub fn field(&self) -> &MetricField {
        &self.field
    }

    /// Uniform scan grid i * b_max / points for i = 1..=points.
    pub fn uniform_grid(&self, points: usize) -> Vec<f64> {
        (1..=points)
            .map(|i| self.b_max * (i as f64 / points as f64))
            .collect()
    }
}

/// Ratio limit at offset zero: sqrt(1 + f(0)) - 1.
pub fn critical_xi(field: &MetricField) -> f64 {
    (1.0 + field.bump().value(0.0)).sqrt() - 1.0
}

/// One row of the ratio scan.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanRow {
    /// Offset b of the probe centre (0, b eps, 0).
    pub b: f64,
    /// Ratio sqrt(d(u, c_b)^2 - (b eps)^2) / (a eps) - 1.
    pub xi_tilde: f64,
    /// Finite-difference slope of the ratio across the grid.
    pub slope: f64,
}

/// Result of scanning the ratio curve over an offset grid.
#[derive(Debug, Clone, Serialize)]
pub struct XiScan {
    pub rows: Vec<ScanRow>,
    /// Grid offset with the most negative certified slope.
    pub b_star: f64,
    /// Ratio at b_star; the configuration is built with exactly this value.
    pub xi_selected: f64,
    pub slope_at_b_star: f64,
}

/// The four vertices, their construction parameters, and (once solved) the
/// two circumcentres with the shared certified radius.
#[derive(Debug, Clone, Copy)]
pub struct Configuration {
    pub u: ChartPoint,
    pub v: ChartPoint,
    pub w: ChartPoint,
    pub p: ChartPoint,
    b: f64,
    xi: f64,
    slope: f64,
    field: MetricField,
    c_plus: Option<ChartPoint>,
    c_minus: Option<ChartPoint>,
    circumradius: Option<f64>,
}

impl Configuration {
    /// The tetrahedron of interest.
    pub fn sigma(&self) -> [ChartPoint; 4] {
        [self.u, self.v, self.w, self.p]
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Ratio slope at the selected offset, carried over from the scan.
    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn field(&self) -> &MetricField {
        &self.field
    }

    /// Both circumcentres, once `solve_circumcentres` has populated them.
    pub fn centres(&self) -> Option<(ChartPoint, ChartPoint)> {
        Some((self.c_plus?, self.c_minus?))
    }

    pub fn circumradius(&self) -> Option<f64> {
        self.circumradius
    }

    fn lifted_vertices(&self) -> [Vector3<f64>; 4] {
        [
            self.u.coords(),
            self.v.coords(),
            self.w.coords(),
            self.p.coords(),
        ]
    }
}

/// Measures the ratio curve at offset `b`: place a probe centre at
/// (0, b eps, 0), measure its geodesic distance d to u = (0, 0, a eps) and
/// report sqrt(d^2 - (b eps)^2) / (a eps) - 1.
pub fn xi_tilde(cfg: &CounterexampleConfig, b: f64) -> Result<f64, CounterexampleError> {
    if !b.is_finite() || b <= 0.0 || b > cfg.b_max {
        return Err(CounterexampleError::InvalidOffset(b));
    }
    let eps = cfg.epsilon;
    let u = ChartPoint::new(0.0, 0.0, cfg.a * eps);
    let centre = ChartPoint::new(0.0, b * eps, 0.0);
    let d = geodesic_distance(&cfg.field, &u, &centre, TIGHT_TOL)?.distance;
    Ok(((d * d - b * b * eps * eps).sqrt()) / (cfg.a * eps) - 1.0)
}

/// Measures the ratio and its finite-difference slope at every grid offset,
/// without selecting anything; the table alone is well defined even when no
/// negative slope exists (the flat control).
pub fn scan_rows(
    cfg: &CounterexampleConfig,
    grid: &[f64],
) -> Result<Vec<ScanRow>, CounterexampleError> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CounterexampleError::InvalidGrid);
    }
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&b| xi_tilde(cfg, b))
        .collect::<Result<_, _>>()?;
    let slopes = grid_slopes(grid, &values);
    Ok(grid
        .iter()
        .zip(values.iter().zip(slopes.iter()))
        .map(|(&b, (&xi_tilde, &slope))| ScanRow { b, xi_tilde, slope })
        .collect())
}

/// Scans the ratio curve over `grid`, attaches finite-difference slopes, and
/// selects the offset with the most negative slope. Offsets whose ratio sits
/// within a guard band of the critical ratio are skipped as degenerate.
pub fn scan_xi(cfg: &CounterexampleConfig, grid: &[f64]) -> Result<XiScan, CounterexampleError> {
    let rows = scan_rows(cfg, grid)?;
    let mut candidates: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].slope < -SLOPE_FLOOR)
        .collect();
    candidates.sort_by(|&i, &j| rows[i].slope.total_cmp(&rows[j].slope));
    let selected = candidates
        .into_iter()
        .find(|&i| {
            let xi = rows[i].xi_tilde;
            xi > 0.0 && xi < cfg.xi0 && (cfg.xi0 - xi).abs() >= DEGENERACY_GUARD * cfg.xi0
        })
        .ok_or(CounterexampleError::NoNegativeSlope)?;

    Ok(XiScan {
        b_star: rows[selected].b,
        xi_selected: rows[selected].xi_tilde,
        slope_at_b_star: rows[selected].slope,
        rows,
    })
}

/// Finite-difference slopes over a grid: fourth-order five-point stencils on
/// uniform grids, three-point differences otherwise.
fn grid_slopes(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let h = grid[1] - grid[0];
    let uniform = grid.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    if uniform && n >= 5 {
        let f = values;
        (0..n)
            .map(|i| match i {
                0 => (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4])
                    / (12.0 * h),
                1 => (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h),
                i if i == n - 2 => {
                    -(-3.0 * f[n - 1] - 10.0 * f[n - 2] + 18.0 * f[n - 3] - 6.0 * f[n - 4]
                        + f[n - 5])
                        / (12.0 * h)
                }
                i if i == n - 1 => {
                    -(-25.0 * f[n - 1] + 48.0 * f[n - 2] - 36.0 * f[n - 3] + 16.0 * f[n - 4]
                        - 3.0 * f[n - 5])
                        / (12.0 * h)
                }
                _ => (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h),
            })
            .collect()
    } else {
        (0..n)
            .map(|i| {
                if i == 0 {
                    (values[1] - values[0]) / (grid[1] - grid[0])
                } else if i == n - 1 {
                    (values[n - 1] - values[n - 2]) / (grid[n - 1] - grid[n - 2])
                } else {
                    (values[i + 1] - values[i - 1]) / (grid[i + 1] - grid[i - 1])
                }
            })
            .collect()
    }
}

/// Places the four vertices from the scan selection and verifies every
/// pairwise separation honestly with the adaptive solver.
///
/// u and v sit at (0, 0, +/- a eps); w and p sit at (+/- a (1 + xi) eps, 0, 0)
/// with xi the selected ratio, which makes the stretched u-v pair and the
/// wide w-p pair equidistant from the sought centres.
pub fn build_configuration(
    cfg: &CounterexampleConfig,
    scan: &XiScan,
) -> Result<Configuration, CounterexampleError> {
    let xi = scan.xi_selected;
    if !(xi > 0.0 && xi < cfg.xi0) {
        return Err(CounterexampleError::SeparationViolated(format!(
            "selected ratio {xi} outside (0, {})",
            cfg.xi0
        )));
    }
    let eps = cfg.epsilon;
    let a = cfg.a;
    let conf = Configuration {
        u: ChartPoint::new(0.0, 0.0, a * eps),
        v: ChartPoint::new(0.0, 0.0, -a * eps),
        w: ChartPoint::new(a * (1.0 + xi) * eps, 0.0, 0.0),
        p: ChartPoint::new(-a * (1.0 + xi) * eps, 0.0, 0.0),
        b: scan.b_star,
        xi,
        slope: scan.slope_at_b_star,
        field: cfg.field,
        c_plus: None,
        c_minus: None,
        circumradius: None,
    };

    let sigma = conf.sigma();
    let names = ["u", "v", "w", "p"];
    let mut pairwise = [[0.0_f64; 4]; 4];
    for i in 0..4 {
        for j in (i + 1)..4 {
            let d = geodesic_distance(&cfg.field, &sigma[i], &sigma[j], TIGHT_TOL)?.distance;
            if d <= eps {
                return Err(CounterexampleError::SeparationViolated(format!(
                    "d({}, {}) = {d} <= epsilon {eps}",
                    names[i], names[j]
                )));
            }
            pairwise[i][j] = d;
        }
    }
    // closed forms: the u-v geodesic runs straight down the stretched axis,
    // the w-p segment lies in a flat plane
    let d_uv = 2.0 * a * eps * (1.0 + cfg.field.bump().value(0.0)).sqrt();
    let d_wp = 2.0 * a * (1.0 + xi) * eps;
    for (measured, expected, pair) in [(pairwise[0][1], d_uv, "u-v"), (pairwise[2][3], d_wp, "w-p")]
    {
        if (measured - expected).abs() > 1e-9 * expected {
            return Err(CounterexampleError::SeparationViolated(format!(
                "{pair} separation {measured} disagrees with closed form {expected}"
            )));
        }
    }
    if pairwise[2][3] >= pairwise[0][1] {
        return Err(CounterexampleError::SeparationViolated(format!(
            "d(w, p) = {} must stay below d(u, v) = {}",
            pairwise[2][3], pairwise[0][1]
        )));
    }
    Ok(conf)
}

/// Equidistance residual of a candidate centre against the four vertices,
/// measured with the adaptive solver:
/// (d(q, u) - d(q, p), d(q, v) - d(q, p), d(q, w) - d(q, p)).
pub fn circumcentre_residual(
    conf: &Configuration,
    q: &ChartPoint,
) -> Result<Vector3<f64>, CounterexampleError> {
    let d = |target: &ChartPoint| -> Result<f64, CounterexampleError> {
        Ok(geodesic_distance(&conf.field, q, target, TIGHT_TOL)?.distance)
    };
    let base = d(&conf.p)?;
    Ok(Vector3::new(
        d(&conf.u)? - base,
        d(&conf.v)? - base,
        d(&conf.w)? - base,
    ))
}

/// Runs Newton from the two mirror seeds (0, +/- b eps, 0) and certifies the
/// resulting circumcentres: equidistance with the adaptive solver, radius
/// strictly below epsilon, and mirror symmetry of the pair.
///
/// Each solve is two-phase: a chord-residual Newton captures the root
/// basin, then an adaptive polish removes the chord bending gain so the
/// returned point is a root of the same system the certification measures.
///
/// Root isolation is not decided here; `jacobian_analysis` certifies it.
pub fn solve_circumcentres(
    conf: &Configuration,
    cfg: &CounterexampleConfig,
) -> Result<Configuration, CounterexampleError> {
    let eps = cfg.epsilon;
    let vertices = conf.lifted_vertices();
    let newton = |seed: Vector3<f64>| -> NewtonOutcome {
        let broad = solve_equidistance(
            &cfg.field,
            &vertices,
            seed,
            &EquidistanceNewton {
                panels: CHORD_PANELS,
                fd_step: FD_FACTOR * eps,
                stop_residual: NEWTON_STOP,
                max_iterations: NEWTON_MAX_ITERATIONS,
                escape_centre: seed,
                escape_radius: ESCAPE_FACTOR * eps,
            },
        );
        if broad.status != NewtonStatus::Converged {
            return broad;
        }
        polish_equidistance(
            &cfg.field,
            &vertices,
            broad.point,
            &AdaptivePolish {
                distance_tol: TIGHT_TOL,
                fd_step: FD_FACTOR * eps,
                stop_residual: NEWTON_STOP,
                max_iterations: 6,
            },
        )
    };
    let seed_plus = Vector3::new(0.0, conf.b * eps, 0.0);
    let seed_minus = Vector3::new(0.0, -(conf.b * eps), 0.0);
    let plus = newton(seed_plus);
    let minus = newton(seed_minus);
    for (side, out, seed) in [("+", &plus, seed_plus), ("-", &minus, seed_minus)] {
        if out.status != NewtonStatus::Converged {
            return Err(CounterexampleError::NewtonDiverged(format!(
                "seed {side}: {:?} after {} iterations, residual {:.3e}",
                out.status, out.iterations, out.residual_inf
            )));
        }
        let stray = (out.point - seed).norm();
        if stray > SEED_CAPTURE * eps {
            return Err(CounterexampleError::NewtonDiverged(format!(
                "seed {side}: root strayed {stray:.3e} from its seed"
            )));
        }
    }

    let separation = (plus.point - minus.point).norm();
    let threshold = eps * conf.b;
    if separation <= threshold {
        return Err(CounterexampleError::RootsCoincide {
            separation,
            threshold,
        });
    }

    let mut solved = *conf;
    solved.c_plus = Some(ChartPoint::from(plus.point));
    solved.c_minus = Some(ChartPoint::from(minus.point));

    let mut radius = 0.0_f64;
    for centre in [solved.c_plus.unwrap(), solved.c_minus.unwrap()] {
        let residual = circumcentre_residual(&solved, &centre)?;
        let deviation = residual.amax();
        if deviation > CERTIFY_BUDGET * eps {
            return Err(CounterexampleError::CertificationFailed {
                deviation,
                allowed: CERTIFY_BUDGET * eps,
            });
        }
        radius = radius
            .max(geodesic_distance(&cfg.field, &centre, &solved.u, TIGHT_TOL)?.distance);
    }
    if radius >= eps {
        return Err(CounterexampleError::RadiusExceeded {
            radius,
            epsilon: eps,
        });
    }

    let mirror = Vector3::new(
        minus.point.x - plus.point.x,
        minus.point.y + plus.point.y,
        minus.point.z - plus.point.z,
    );
    if mirror.amax() > CERTIFY_BUDGET * eps {
        return Err(CounterexampleError::CentreAsymmetry(mirror.amax()));
    }

    solved.circumradius = Some(radius);
    Ok(solved)
}

/// Scaled Jacobian of the equidistance residual at the upper circumcentre.
#[derive(Debug, Clone, Copy)]
pub struct JacobianReport {
    /// eps-scaled derivative matrix: entry (i, k) is eps * dh_i / dq_k.
    pub dh: Matrix3<f64>,
    pub determinant: f64,
    /// Closed-form prediction of the y-sensitivity from the scan slope.
    pub h_y_analytic: f64,
    /// Signs of the structural entries (dh_0/dz, dh_2/dx, dh_0/dy).
    pub signs: [i8; 3],
}

/// Certifies that the upper circumcentre is an isolated, transversal root:
/// finite-difference Jacobian with the expected mirror structure, nonzero
/// determinant, and y-sensitivity matching the scan slope prediction.
pub fn jacobian_analysis(
    conf: &Configuration,
    cfg: &CounterexampleConfig,
) -> Result<JacobianReport, CounterexampleError> {
    let (c_plus, _) = conf.centres().ok_or(CounterexampleError::MissingCentres)?;
    let eps = cfg.epsilon;
    let vertices = conf.lifted_vertices();
    let centre = c_plus.coords();
    let step = FD_FACTOR * eps;
    let mut dh = Matrix3::zeros();
    for k in 0..3 {
        let mut hi = centre;
        let mut lo = centre;
        hi[k] += step;
        lo[k] -= step;
        let col = (smooth_residual(&cfg.field, &vertices, &hi, SMOOTH_SEGMENTS)
            - smooth_residual(&cfg.field, &vertices, &lo, SMOOTH_SEGMENTS))
            * (eps / (2.0 * step));
        dh.set_column(k, &col);
    }

    let structure_tol = 1e-6;
    let mirror_pairs = [
        (dh[(1, 0)] - dh[(0, 0)], "dh1/dx vs dh0/dx"),
        (dh[(1, 1)] - dh[(0, 1)], "dh1/dy vs dh0/dy"),
        (dh[(1, 2)] + dh[(0, 2)], "dh1/dz vs -dh0/dz"),
        (dh[(2, 1)], "dh2/dy"),
        (dh[(2, 2)], "dh2/dz"),
    ];
    for (value, label) in mirror_pairs {
        if value.abs() > structure_tol {
            return Err(CounterexampleError::SingularJacobian(format!(
                "structure check {label} off by {value:.3e}"
            )));
        }
    }
    for (value, label) in [
        (dh[(0, 2)], "dh0/dz"),
        (dh[(2, 0)], "dh2/dx"),
        (dh[(0, 1)], "dh0/dy"),
    ] {
        if value >= 0.0 {
            return Err(CounterexampleError::SingularJacobian(format!(
                "{label} = {value:.3e} should be negative"
            )));
        }
    }

    let determinant = dh.determinant();
    if determinant.abs() < 1e-8 {
        return Err(CounterexampleError::SingularJacobian(format!(
            "determinant {determinant:.3e} below floor"
        )));
    }

    let (a, b, xi) = (cfg.a, conf.b, conf.xi);
    let h_y_analytic =
        a * a * (1.0 + xi) * conf.slope * eps / ((1.0 + xi) * (1.0 + xi) * a * a + b * b).sqrt();
    if (h_y_analytic - dh[(0, 1)]).abs() > 1e-4 * h_y_analytic.abs() {
        return Err(CounterexampleError::SingularJacobian(format!(
            "measured dh0/dy {:.6e} disagrees with slope prediction {h_y_analytic:.6e}",
            dh[(0, 1)]
        )));
    }

    Ok(JacobianReport {
        dh,
        determinant,
        h_y_analytic,
        signs: [
            dh[(0, 2)].signum() as i8,
            dh[(2, 0)].signum() as i8,
            dh[(0, 1)].signum() as i8,
        ],
    })
}

/// Outcome of perturbing the vertices and re-solving for the circumcentres.
#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub rho: f64,
    pub trials: u32,
    pub successes: u32,
    /// Indices of failing trials (also their RNG stream ids).
    pub failures: Vec<u32>,
}

impl StabilityReport {
    pub fn all_passed(&self) -> bool {
        self.successes == self.trials
    }
}

/// Displaces every vertex by an independent uniform vector of norm <= rho and
/// re-runs Newton from the unperturbed roots. A trial succeeds when both
/// roots persist, stay distinct, and keep their circumradii below epsilon.
///
/// Trials are deterministic: trial i draws from stream i of a counter RNG
/// keyed by `seed`, independent of thread scheduling.
pub fn stability_probe(
    conf: &Configuration,
    cfg: &CounterexampleConfig,
    rho: f64,
    trials: u32,
    seed: u64,
) -> Result<StabilityReport, CounterexampleError> {
    let eps = cfg.epsilon;
    let max_rho = 1e-2 * eps;
    if !rho.is_finite() || rho < 0.0 || rho >= max_rho {
        return Err(CounterexampleError::InvalidRho { rho, max: max_rho });
    }
    let (c_plus, c_minus) = conf.centres().ok_or(CounterexampleError::MissingCentres)?;
    let base = conf.lifted_vertices();

    let outcomes: Vec<bool> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::from(trial));
            let mut vertices = base;
            for vertex in &mut vertices {
                *vertex += ball_displacement(&mut rng, rho);
            }
            trial_succeeds(cfg, &vertices, c_plus.coords(), c_minus.coords(), conf.b)
        })
        .collect();

    let failures: Vec<u32> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i as u32)
        .collect();
    Ok(StabilityReport {
        rho,
        trials,
        successes: trials - failures.len() as u32,
        failures,
    })
}

fn trial_succeeds(
    cfg: &CounterexampleConfig,
    vertices: &[Vector3<f64>; 4],
    seed_plus: Vector3<f64>,
    seed_minus: Vector3<f64>,
    b: f64,
) -> bool {
    let eps = cfg.epsilon;
    let newton = |seed: Vector3<f64>| {
        solve_equidistance(
            &cfg.field,
            vertices,
            seed,
            &EquidistanceNewton {
                panels: CHORD_PANELS,
                fd_step: FD_FACTOR * eps,
                stop_residual: NEWTON_STOP,
                max_iterations: NEWTON_MAX_ITERATIONS,
                escape_centre: seed,
                escape_radius: ESCAPE_FACTOR * eps,
            },
        )
    };
    let plus = newton(seed_plus);
    let minus = newton(seed_minus);
    if plus.status != NewtonStatus::Converged || minus.status != NewtonStatus::Converged {
        return false;
    }
    if (plus.point - minus.point).norm() <= eps * b {
        return false;
    }
    let u = ChartPoint::from(vertices[0]);
    [plus.point, minus.point].iter().all(|centre| {
        geodesic_distance(&cfg.field, &ChartPoint::from(*centre), &u, PROBE_TOL)
            .map(|r| r.distance < eps)
            .unwrap_or(false)
    })
}

/// Uniform draw from the closed ball of radius rho.
fn ball_displacement<R: Rng>(rng: &mut R, rho: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * rho;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const XI0_A375: f64 = 0.3228756555322953;
    const XI0_A018: f64 = 0.16619037896906008;
    const XT_B010: f64 = 0.32285232667785274;
    const XT_B025: f64 = 0.32272985967748713;
    const XT_BMAX: f64 = 0.32258408643796177;
    const XTP_BMAX: f64 = -0.0016491078177961877;
    const HY_BMAX: f64 = -0.0001090752232255117;
    const D_UC_BMAX: f64 = 0.09998071478287544;

    fn default_cfg() -> CounterexampleConfig {
        let field = MetricField::standard(2.0, 0.375).unwrap();
        CounterexampleConfig::new(field, 0.1).unwrap()
    }

    #[test]
    fn critical_ratio_matches_reference_values() {
        let f = |a: f64| MetricField::standard(2.0, a).unwrap();
        assert_relative_eq!(critical_xi(&f(0.375)), XI0_A375, epsilon = 1e-15);
        assert_relative_eq!(critical_xi(&f(0.18)), XI0_A018, epsilon = 1e-15);
        assert_eq!(critical_xi(&f(0.0)), 0.0);
    }

    #[test]
    fn lateral_scale_squares_to_one_half() {
        let cfg = default_cfg();
        assert!((cfg.a() * cfg.a() - 0.5).abs() <= f64::EPSILON);
        assert_eq!(cfg.b_max(), 0.5 * cfg.a());
    }

    #[test]
    fn epsilon_envelope_is_enforced() {
        let field = MetricField::standard(2.0, 0.375).unwrap();
        assert!(CounterexampleConfig::new(field, 0.1).is_ok());
        // period / 20 = 0.1 is the largest admissible value
        assert!(matches!(
            CounterexampleConfig::new(field, 0.11),
            Err(CounterexampleError::InvalidEpsilon(_))
        ));
        for bad in [0.0, -0.1, f64::NAN, 0.5] {
            assert!(matches!(
                CounterexampleConfig::new(field, bad),
                Err(CounterexampleError::InvalidEpsilon(_))
            ));
        }
    }

    #[test]
    fn ratio_matches_reference_values() {
        let cfg = default_cfg();
        assert_relative_eq!(xi_tilde(&cfg, 0.10).unwrap(), XT_B010, max_relative = 1e-8);
        assert_relative_eq!(xi_tilde(&cfg, 0.25).unwrap(), XT_B025, max_relative = 1e-8);
        assert_relative_eq!(
            xi_tilde(&cfg, cfg.b_max()).unwrap(),
            XT_BMAX,
            max_relative = 1e-8
        );
    }

    #[test]
    fn ratio_rejects_offsets_outside_the_admissible_range() {
        let cfg = default_cfg();
        for bad in [0.0, -0.2, cfg.b_max() * 1.01, f64::NAN] {
            assert!(matches!(
                xi_tilde(&cfg, bad),
                Err(CounterexampleError::InvalidOffset(_))
            ));
        }
    }

    #[test]
    fn flat_metric_ratio_vanishes() {
        let field = MetricField::standard(2.0, 0.0).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        assert!(xi_tilde(&cfg, 0.25).unwrap().abs() < 1e-9);
    }

    #[test]
    fn scan_rejects_malformed_grids() {
        let cfg = default_cfg();
        assert!(matches!(
            scan_xi(&cfg, &[]),
            Err(CounterexampleError::InvalidGrid)
        ));
        assert!(matches!(
            scan_xi(&cfg, &[0.2]),
            Err(CounterexampleError::InvalidGrid)
        ));
        assert!(matches!(
            scan_xi(&cfg, &[0.2, 0.2]),
            Err(CounterexampleError::InvalidGrid)
        ));
        assert!(matches!(
            scan_xi(&cfg, &[0.1, 0.5]),
            Err(CounterexampleError::InvalidOffset(_))
        ));
    }

    #[test]
    fn flat_metric_scan_finds_no_negative_slope() {
        let field = MetricField::standard(2.0, 0.0).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        assert!(matches!(
            scan_xi(&cfg, &cfg.uniform_grid(8)),
            Err(CounterexampleError::NoNegativeSlope)
        ));
    }

    #[test]
    fn flat_metric_with_positive_ratio_has_no_equidistant_point() {
        let field = MetricField::standard(2.0, 0.0).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        let eps = cfg.epsilon();
        let a = cfg.a();
        let xi = 0.1;
        let conf = Configuration {
            u: ChartPoint::new(0.0, 0.0, a * eps),
            v: ChartPoint::new(0.0, 0.0, -a * eps),
            w: ChartPoint::new(a * (1.0 + xi) * eps, 0.0, 0.0),
            p: ChartPoint::new(-a * (1.0 + xi) * eps, 0.0, 0.0),
            b: 0.25,
            xi,
            slope: -1e-3,
            field: *cfg.field(),
            c_plus: None,
            c_minus: None,
            circumradius: None,
        };
        assert!(matches!(
            solve_circumcentres(&conf, &cfg),
            Err(CounterexampleError::NewtonDiverged(_))
        ));
    }

    #[test]
    fn flat_metric_root_manifold_is_rejected_as_singular() {
        // xi = 0 on the flat torus: every point of the y-axis is equidistant
        // from all four vertices, so roots exist but are not isolated
        let field = MetricField::standard(2.0, 0.0).unwrap();
        let cfg = CounterexampleConfig::new(field, 0.1).unwrap();
        let eps = cfg.epsilon();
        let a = cfg.a();
        let conf = Configuration {
            u: ChartPoint::new(0.0, 0.0, a * eps),
            v: ChartPoint::new(0.0, 0.0, -a * eps),
            w: ChartPoint::new(a * eps, 0.0, 0.0),
            p: ChartPoint::new(-a * eps, 0.0, 0.0),
            b: 0.25,
            xi: 0.0,
            slope: 0.0,
            field: *cfg.field(),
            c_plus: None,
            c_minus: None,
            circumradius: None,
        };
        let solved = solve_circumcentres(&conf, &cfg).unwrap();
        assert!(matches!(
            jacobian_analysis(&solved, &cfg),
            Err(CounterexampleError::SingularJacobian(_))
        ));
    }

    #[test]
    fn configuration_pipeline_certifies_the_two_centres() {
        let cfg = default_cfg();
        let eps = cfg.epsilon();
        let scan = scan_xi(&cfg, &cfg.uniform_grid(8)).unwrap();

        // slope is increasingly negative in b, so selection lands on b_max
        assert_relative_eq!(scan.b_star, cfg.b_max(), epsilon = 1e-15);
        assert_relative_eq!(scan.xi_selected, XT_BMAX, max_relative = 1e-8);
        assert_relative_eq!(scan.slope_at_b_star, XTP_BMAX, max_relative = 1e-4);
        for row in &scan.rows {
            assert!(row.xi_tilde > 0.0 && row.xi_tilde < cfg.xi0());
        }

        let conf = build_configuration(&cfg, &scan).unwrap();
        let solved = solve_circumcentres(&conf, &cfg).unwrap();
        let (c_plus, c_minus) = solved.centres().unwrap();

        // roots captured next to their seeds, bitwise mirror images
        let seed_y = scan.b_star * eps;
        assert!((c_plus.coords() - Vector3::new(0.0, seed_y, 0.0)).norm() < 1e-6 * eps);
        assert_eq!(c_minus.x, c_plus.x);
        assert_eq!(c_minus.y, -c_plus.y);
        assert_eq!(c_minus.z, c_plus.z);

        let radius = solved.circumradius().unwrap();
        assert_relative_eq!(radius, D_UC_BMAX, max_relative = 1e-8);
        assert!(radius < eps);
        // lower sandwich bound: the flat chord from centre to u
        let a = cfg.a();
        let b = scan.b_star;
        assert!(radius > eps * (a * a + b * b).sqrt());

        let residual = circumcentre_residual(&solved, &c_plus).unwrap();
        assert!(residual.amax() <= 1e-8 * eps);

        let report = jacobian_analysis(&solved, &cfg).unwrap();
        assert_relative_eq!(report.dh[(0, 1)], HY_BMAX, max_relative = 1e-4);
        assert_relative_eq!(report.h_y_analytic, HY_BMAX, max_relative = 1e-4);
        assert!(report.determinant > 0.0);
        assert_eq!(report.signs, [-1, -1, -1]);
        // closed-form x-sensitivities: dh0/dx and dh2/dx = 2 dh0/dx
        let xi = solved.xi();
        let denom = ((1.0 + xi) * (1.0 + xi) * a * a + b * b).sqrt();
        let h_x = -a * (1.0 + xi) * eps / denom;
        assert_relative_eq!(report.dh[(0, 0)], h_x, max_relative = 1e-4);
        assert_relative_eq!(report.dh[(2, 0)], 2.0 * h_x, max_relative = 1e-4);

        // unperturbed probe is trivially stable; a tiny radius keeps all
        // trials, a radius past the certification margin loses some
        let calm = stability_probe(&solved, &cfg, 0.0, 4, 7).unwrap();
        assert!(calm.all_passed());
        let tiny = stability_probe(&solved, &cfg, 1e-8, 12, 7).unwrap();
        assert!(tiny.all_passed());
        let rough = stability_probe(&solved, &cfg, 5e-4, 12, 7).unwrap();
        assert!(rough.successes < rough.trials);
        assert_eq!(
            rough.successes as usize + rough.failures.len(),
            rough.trials as usize
        );

        assert!(matches!(
            stability_probe(&solved, &cfg, 2e-3, 4, 7),
            Err(CounterexampleError::InvalidRho { .. })
        ));
        assert!(matches!(
            jacobian_analysis(&conf, &cfg),
            Err(CounterexampleError::MissingCentres)
        ));
    }

    #[test]
    fn build_rejects_ratios_outside_the_open_interval() {
        let cfg = default_cfg();
        let fake = |xi: f64| XiScan {
            rows: vec![],
            b_star: 0.25,
            xi_selected: xi,
            slope_at_b_star: -1e-3,
        };
        for bad in [0.0, -0.1, cfg.xi0(), cfg.xi0() * 1.5] {
            assert!(matches!(
                build_configuration(&cfg, &fake(bad)),
                Err(CounterexampleError::SeparationViolated(_))
            ));
        }
    }
}
