//! Torus chart, bump function, metric tensor, and straight-segment quadrature.
//!
//! Geometry lives on the torus obtained from a cube of side `L` (period per
//! axis) with the diagonal metric g(q) = diag(1, 1, 1 + f(y(q))), where
//! f(y) = A(1 + cos(pi y)). Everything downstream reduces to two primitives
//! defined here: canonical coordinates on the fundamental domain
//! [-L/2, L/2)^3, and the metric length of a straight chart segment.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Maximum admissible bump amplitude; keeps f(0) = 2A at or below 3/4 so the
/// zz metric eigenvalue stays at or below 7/4.
pub const MAX_AMPLITUDE: f64 = 0.375;

/// Errors from constructing chart-level objects.
#[derive(Debug, Error)]
pub enum ChartError {
    #[error("period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("amplitude must lie in [0, {MAX_AMPLITUDE}], got {0}")]
    InvalidAmplitude(f64),
    #[error("bump has period 2 in y; a perturbed metric needs an even integer period, got {0}")]
    IncompatiblePeriod(f64),
}

/// A point in chart coordinates. Equality of torus points is modulo the
/// period lattice; see [`canonicalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ChartPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn translate(&self, v: Vector3<f64>) -> Self {
        Self::new(self.x + v.x, self.y + v.y, self.z + v.z)
    }

    /// Offset `other - self` in the ambient chart (no wraparound).
    pub fn offset_to(&self, other: &ChartPoint) -> Vector3<f64> {
        Vector3::new(other.x - self.x, other.y - self.y, other.z - self.z)
    }
}

impl From<[f64; 3]> for ChartPoint {
    fn from(c: [f64; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }
}

impl From<Vector3<f64>> for ChartPoint {
    fn from(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl From<ChartPoint> for [f64; 3] {
    fn from(p: ChartPoint) -> Self {
        [p.x, p.y, p.z]
    }
}

/// The cubic torus domain: period `L` on every axis, fundamental domain
/// [-L/2, L/2)^3, plus a documented conservative lower bound on the
/// injectivity radius.
#[derive(Debug, Clone, Copy)]
pub struct TorusChart {
    period: f64,
    injectivity_floor: f64,
}

impl TorusChart {
    /// The curvature-derived cap on the injectivity floor. For any admissible
    /// amplitude the sectional curvatures of g are bounded by
    /// |K| <= pi^2 A / 2 + pi^2 A^2 / 4 <= 2.199 (write g_zz = phi^2 with
    /// phi = sqrt(1 + f); the only curved planes have K = -phi''/phi), so
    /// conjugate points are at least pi / sqrt(2.199) > 2.11 apart, and 2.0
    /// is a safe cap. Noncontractible loops have length >= L, so the floor
    /// min(L/2, 2.0) is a genuine lower bound on the injectivity radius.
    const CONJUGATE_CAP: f64 = 2.0;

    pub fn new(period: f64) -> Result<Self, ChartError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(ChartError::InvalidPeriod(period));
        }
        Ok(Self {
            period,
            injectivity_floor: (period / 2.0).min(Self::CONJUGATE_CAP),
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn injectivity_floor(&self) -> f64 {
        self.injectivity_floor
    }

    /// Reduce one coordinate into [-L/2, L/2). Bitwise idempotent: values
    /// already in range pass through untouched.
    fn reduce(&self, c: f64) -> f64 {
        let half = self.period / 2.0;
        if (-half..half).contains(&c) {
            return c;
        }
        let r = c.rem_euclid(self.period);
        if r >= half {
            r - self.period
        } else {
            r
        }
    }
}

/// Reduce every coordinate of `q` into the fundamental domain [-L/2, L/2).
pub fn canonicalize(chart: &TorusChart, q: ChartPoint) -> ChartPoint {
    ChartPoint::new(chart.reduce(q.x), chart.reduce(q.y), chart.reduce(q.z))
}

/// The even bump f(y) = A(1 + cos(pi y)), period 2, unique maximum f(0) = 2A
/// on the period, strictly decreasing on (0, 1).
///
/// Evaluation goes through |y|, and the derivative through sign(y), so that
/// f is *bitwise* even and f' *bitwise* odd. Downstream, mirror-image solver
/// runs then produce exactly mirrored iterates, which is what makes the two
/// circumcentres land at exact reflections of each other.
#[derive(Debug, Clone, Copy)]
pub struct BumpFunction {
    amplitude: f64,
}

impl BumpFunction {
    pub fn new(amplitude: f64) -> Result<Self, ChartError> {
        if !(amplitude.is_finite() && (0.0..=MAX_AMPLITUDE).contains(&amplitude)) {
            return Err(ChartError::InvalidAmplitude(amplitude));
        }
        Ok(Self { amplitude })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// f(y) = A(1 + cos(pi y)); bitwise even in y.
    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        self.amplitude * (1.0 + (std::f64::consts::PI * y.abs()).cos())
    }

    /// f'(y) = -A pi sin(pi y); bitwise odd in y.
    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        let s = if y > 0.0 {
            1.0
        } else if y < 0.0 {
            -1.0
        } else {
            // f'(0) = 0; keep the exact zero so paths on the symmetry plane
            // feel no spurious lateral force.
            return 0.0;
        };
        -self.amplitude * std::f64::consts::PI * s * (std::f64::consts::PI * y.abs()).sin()
    }

    /// f''(y) = -A pi^2 cos(pi y); bitwise even in y.
    #[inline]
    pub fn second_derivative(&self, y: f64) -> f64 {
        let pi = std::f64::consts::PI;
        -self.amplitude * pi * pi * (pi * y.abs()).cos()
    }
}

/// The torus chart together with the metric g(q) = diag(1, 1, 1 + f(y(q))).
#[derive(Debug, Clone, Copy)]
pub struct MetricField {
    chart: TorusChart,
    bump: BumpFunction,
}

impl MetricField {
    /// A perturbed metric (A > 0) requires an even integer period, since f
    /// has period 2 in y and must close up around the torus.
    pub fn new(chart: TorusChart, bump: BumpFunction) -> Result<Self, ChartError> {
        if bump.amplitude() > 0.0 {
            let half = chart.period() / 2.0;
            if half.fract() != 0.0 {
                return Err(ChartError::IncompatiblePeriod(chart.period()));
            }
        }
        Ok(Self { chart, bump })
    }

    /// Convenience constructor for the standard setup: period `L`, bump
    /// amplitude `A`.
    pub fn standard(period: f64, amplitude: f64) -> Result<Self, ChartError> {
        Self::new(TorusChart::new(period)?, BumpFunction::new(amplitude)?)
    }

    pub fn chart(&self) -> &TorusChart {
        &self.chart
    }

    pub fn bump(&self) -> &BumpFunction {
        &self.bump
    }

    pub fn amplitude(&self) -> f64 {
        self.bump.amplitude()
    }

    pub fn period(&self) -> f64 {
        self.chart.period()
    }

    pub fn injectivity_floor(&self) -> f64 {
        self.chart.injectivity_floor()
    }

    /// Largest eigenvalue of g anywhere: 1 + f(0) = 1 + 2A.
    pub fn max_eigenvalue(&self) -> f64 {
        1.0 + 2.0 * self.amplitude()
    }

    /// sqrt(1 + 2A): the global metric-vs-Euclidean stretch factor.
    pub fn stretch(&self) -> f64 {
        self.max_eigenvalue().sqrt()
    }

    /// Squared metric norm of tangent vector `v` at y-coordinate `y`.
    #[inline]
    pub fn speed_sq(&self, y: f64, v: &Vector3<f64>) -> f64 {
        v.x * v.x + v.y * v.y + (1.0 + self.bump.value(y)) * v.z * v.z
    }

    /// Metric norm of tangent vector `v` at chart point `q`.
    #[inline]
    pub fn line_element(&self, q: &ChartPoint, v: &Vector3<f64>) -> f64 {
        self.speed_sq(q.y, v).sqrt()
    }
}

/// The metric tensor at `q`: diag(1, 1, 1 + f(y(q))).
pub fn metric_at(field: &MetricField, q: &ChartPoint) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1.0 + field.bump().value(q.y)))
}

/// 7-point Gauss nodes embedded in the 15-point Kronrod rule on [-1, 1].
/// Nodes are symmetric; only the nonnegative half is tabulated.
const KRONROD_NODES: [f64; 8] = [
    0.0,
    0.207784955007898467600689403773245,
    0.405845151377397166906606412076961,
    0.586087235467691130294144838258730,
    0.741531185599394439863864773280788,
    0.864864423359769072789712788640926,
    0.949107912342758524526189684047851,
    0.991455371120812639206854697526329,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.209482141084727828012999174891714,
    0.204432940075298892414161999234649,
    0.190350578064785409913256402421014,
    0.169004726639267902826583426598550,
    0.140653259715525918745189590510238,
    0.104790010322250183839876322541518,
    0.063092092629978553290700663189204,
    0.022935322010529224963732008058970,
];
/// Gauss weights for Kronrod nodes 1, 3, 5, 7 (the embedded 7-point rule).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
];

/// One Gauss-Kronrod 15/7 panel of `f` over [lo, hi]; returns (K15, |K15-G7|).
fn gk15_panel(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (lo + hi);
    let f0 = f(mid);
    let mut kronrod = KRONROD_WEIGHTS[0] * f0;
    let mut gauss = 0.0;
    for i in 1..8 {
        let dx = half * KRONROD_NODES[i];
        let fs = f(mid + dx) + f(mid - dx);
        kronrod += KRONROD_WEIGHTS[i] * fs;
        if i % 2 == 0 {
            gauss += GAUSS_WEIGHTS[i / 2] * fs;
        }
    }
    gauss += GAUSS_WEIGHTS[0] * f0;
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Adaptive Gauss-Kronrod integration of a smooth positive integrand over
/// [0, 1] to the given relative tolerance. The integrand here is bounded away
/// from zero, so a relative target is well posed. Bisection depth is capped;
/// the cap is unreachable for the analytic integrands this module feeds in.
fn integrate_adaptive(f: &impl Fn(f64) -> f64, rel_tol: f64) -> f64 {
    let (whole, err) = gk15_panel(f, 0.0, 1.0);
    if err <= rel_tol * whole.abs() {
        return whole;
    }
    // Stack of (lo, hi, estimate, error, depth); refine worst-first would be
    // fancier, but plain depth-first bisection is deterministic and cheap.
    let mut total = 0.0;
    let mut stack = vec![(0.0f64, 1.0f64, whole, err, 0u32)];
    let budget = rel_tol * whole.abs();
    while let Some((lo, hi, est, e, depth)) = stack.pop() {
        if e <= budget * (hi - lo) || depth >= 40 {
            total += est;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (left, le) = gk15_panel(f, lo, mid);
        let (right, re) = gk15_panel(f, mid, hi);
        stack.push((lo, mid, left, le, depth + 1));
        stack.push((mid, hi, right, re, depth + 1));
    }
    total
}

/// Default relative tolerance for [`straight_line_length`].
pub const QUADRATURE_REL_TOL: f64 = 1e-10;

/// Metric length of the straight chart segment from `q1` to `q2`, treated as
/// a specific lift pair (no wraparound minimisation):
/// integral over [0, 1] of sqrt(v . g(q1 + t v) . v) dt with v = q2 - q1.
///
/// Exact fast paths: identity metric (A = 0), constant-y segments (the
/// integrand is constant), and z-constant directions (the metric restricted
/// to such segments is Euclidean). The result never falls below the
/// Euclidean length of the lift.
pub fn straight_line_length(field: &MetricField, q1: &ChartPoint, q2: &ChartPoint) -> f64 {
    straight_line_length_tol(field, q1, q2, QUADRATURE_REL_TOL)
}

/// [`straight_line_length`] with an explicit relative quadrature tolerance.
pub fn straight_line_length_tol(
    field: &MetricField,
    q1: &ChartPoint,
    q2: &ChartPoint,
    rel_tol: f64,
) -> f64 {
    segment_length_tol(field, q1, q1.offset_to(q2), rel_tol)
}

/// Metric length of the nearest-image straight segment: like
/// [`straight_line_length`] but along the wraparound-minimal offset, so it
/// upper-bounds the geodesic distance for points given in the canonical
/// domain.
pub fn nearest_straight_upper(field: &MetricField, q1: &ChartPoint, q2: &ChartPoint) -> f64 {
    segment_length_tol(
        field,
        q1,
        nearest_offset(field.chart(), q1, q2),
        QUADRATURE_REL_TOL,
    )
}

/// Metric length of the segment from `q1` along the explicit offset `v`.
fn segment_length_tol(field: &MetricField, q1: &ChartPoint, v: Vector3<f64>, rel_tol: f64) -> f64 {
    let planar = v.x * v.x + v.y * v.y;
    if field.amplitude() == 0.0 || v.z == 0.0 {
        return (planar + v.z * v.z).sqrt();
    }
    if v.y == 0.0 {
        return (planar + (1.0 + field.bump().value(q1.y)) * v.z * v.z).sqrt();
    }
    let bump = *field.bump();
    let (y0, vy, vzsq) = (q1.y, v.y, v.z * v.z);
    let integrand = move |t: f64| (planar + vzsq * (1.0 + bump.value(y0 + t * vy))).sqrt();
    integrate_adaptive(&integrand, rel_tol)
}

/// Metric length of the straight segment using a fixed composite rule:
/// `panels` equal Gauss-Kronrod 15 panels, no adaptivity. Unlike the adaptive
/// version this is an infinitely differentiable function of the endpoints,
/// which finite-difference Jacobians downstream rely on.
pub fn straight_line_length_fixed(
    field: &MetricField,
    q1: &ChartPoint,
    q2: &ChartPoint,
    panels: usize,
) -> f64 {
    let v = q1.offset_to(q2);
    let planar = v.x * v.x + v.y * v.y;
    if field.amplitude() == 0.0 || v.z == 0.0 {
        return (planar + v.z * v.z).sqrt();
    }
    if v.y == 0.0 {
        return (planar + (1.0 + field.bump().value(q1.y)) * v.z * v.z).sqrt();
    }
    let bump = *field.bump();
    let (y0, vy, vzsq) = (q1.y, v.y, v.z * v.z);
    let integrand = move |t: f64| (planar + vzsq * (1.0 + bump.value(y0 + t * vy))).sqrt();
    let mut total = 0.0;
    let h = 1.0 / panels as f64;
    for k in 0..panels {
        let (est, _) = gk15_panel(&integrand, k as f64 * h, (k + 1) as f64 * h);
        total += est;
    }
    total
}

/// Nearest-image offset from `q1` to `q2`: the representative of `q2 - q1`
/// with every coordinate in [-L/2, L/2).
pub fn nearest_offset(chart: &TorusChart, q1: &ChartPoint, q2: &ChartPoint) -> Vector3<f64> {
    let d = q1.offset_to(q2);
    Vector3::new(chart.reduce(d.x), chart.reduce(d.y), chart.reduce(d.z))
}

/// Flat-torus Euclidean distance: the minimum over lattice lifts of the
/// Euclidean length. A lower bound for the geodesic distance of any metric
/// with g >= identity.
pub fn flat_torus_distance(chart: &TorusChart, q1: &ChartPoint, q2: &ChartPoint) -> f64 {
    nearest_offset(chart, q1, q2).norm()
}

/// Upper bound on geodesic distance from the constant comparison metric
/// diag(1, 1, 1 + 2A) >= g: minimum over lattice lifts of the anisotropic
/// straight-line length. Cheap (no quadrature) and certified.
pub fn anisotropic_upper_bound(field: &MetricField, q1: &ChartPoint, q2: &ChartPoint) -> f64 {
    let chart = field.chart();
    let lam = field.max_eigenvalue();
    let d = q1.offset_to(q2);
    // Per-axis minimisation is valid because the comparison metric is
    // diagonal and constant.
    let mx = reduce_abs(chart, d.x);
    let my = reduce_abs(chart, d.y);
    let mz = reduce_abs(chart, d.z);
    (mx * mx + my * my + lam * mz * mz).sqrt()
}

/// Anisotropic length of a specific lift offset (no wraparound).
pub fn anisotropic_lift_bound(field: &MetricField, v: &Vector3<f64>) -> f64 {
    let lam = field.max_eigenvalue();
    (v.x * v.x + v.y * v.y + lam * v.z * v.z).sqrt()
}

/// Certified lower bound on the torus distance, much tighter than the flat
/// bound for z-heavy offsets near the stretched plane.
///
/// `straight_upper` must be a certified upper bound for the nearest-lift
/// geodesic (e.g. its straight-line length). Any path competitive with that
/// budget stays inside the endpoint y-interval widened by straight_upper / 2
/// on each side, because g_yy = 1 prices y-travel at chart speed; on that
/// slab the metric dominates the constant metric diag(1, 1, 1 + min f).
/// Every other lattice lift is floored by its flat length.
pub fn tube_lower_bound(
    field: &MetricField,
    q1: &ChartPoint,
    q2: &ChartPoint,
    straight_upper: f64,
) -> f64 {
    let chart = field.chart();
    let v = nearest_offset(chart, q1, q2);
    let y1 = canonicalize(chart, *q1).y;
    let y2 = y1 + v.y;
    let half = 0.5 * straight_upper;
    let fmin = bump_min_on(field.bump(), y1.min(y2) - half, y1.max(y2) + half);
    let tube = (v.x * v.x + v.y * v.y + (1.0 + fmin) * v.z * v.z).sqrt();
    // the nearest offset minimises the flat length coordinate-wise, so any
    // other lift pays at least period - |v|_inf in some coordinate
    let other_lifts = (chart.period() - v.amax()).max(v.norm());
    tube.min(other_lifts)
}

/// Minimum of the bump over [lo, hi]: zero when the interval touches a
/// trough (odd integer y), otherwise attained at an endpoint.
fn bump_min_on(bump: &BumpFunction, lo: f64, hi: f64) -> f64 {
    if bump.amplitude() == 0.0 {
        return 0.0;
    }
    let first_odd = 2.0 * ((lo - 1.0) * 0.5).ceil() + 1.0;
    if first_odd <= hi {
        0.0
    } else {
        bump.value(lo).min(bump.value(hi))
    }
}

fn reduce_abs(chart: &TorusChart, c: f64) -> f64 {
    let r = c.rem_euclid(chart.period());
    r.min(chart.period() - r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn field(amplitude: f64) -> MetricField {
        MetricField::standard(2.0, amplitude).unwrap()
    }

    // Independent high-precision references (50-digit arithmetic, reduced
    // scalar quadrature): straight-segment length for a generic bent segment,
    // and the closed-form z-axis value.
    const SLL_GENERIC: f64 = 0.21975425735397788;
    const D_UV: f64 = 0.18708286933869708;

    #[test]
    fn metric_tensor_matches_bump() {
        let id = metric_at(&field(0.0), &ChartPoint::new(0.3, -0.7, 0.2));
        assert_eq!(id, Matrix3::identity());

        let at_origin = metric_at(&field(0.375), &ChartPoint::new(0.0, 0.0, 0.0));
        assert_eq!(at_origin[(2, 2)], 1.75);
        assert_eq!(at_origin[(0, 0)], 1.0);
        assert_eq!(at_origin[(1, 1)], 1.0);

        // f vanishes at the waist y = L/2 - L = -1 (canonical form of y = 1).
        let at_waist = metric_at(&field(0.375), &ChartPoint::new(0.0, 1.0, 0.0));
        assert_relative_eq!(at_waist[(2, 2)], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn bump_is_bitwise_even_and_derivative_bitwise_odd() {
        let bump = BumpFunction::new(0.375).unwrap();
        let mut y = 0.001;
        while y < 3.0 {
            assert_eq!(bump.value(y).to_bits(), bump.value(-y).to_bits());
            assert_eq!(
                bump.derivative(y).to_bits(),
                (-bump.derivative(-y)).to_bits()
            );
            assert_eq!(
                bump.second_derivative(y).to_bits(),
                bump.second_derivative(-y).to_bits()
            );
            y += 0.017;
        }
        assert_eq!(bump.derivative(0.0), 0.0);
    }

    #[test]
    fn bump_shape() {
        let bump = BumpFunction::new(0.2).unwrap();
        assert_relative_eq!(bump.value(0.0), 0.4, max_relative = 1e-15);
        assert!(bump.value(1.0).abs() < 1e-16);
        // strictly decreasing on (0, 1)
        let mut prev = bump.value(1e-6);
        let mut y = 0.05;
        while y < 1.0 {
            let cur = bump.value(y);
            assert!(cur < prev, "bump not decreasing at y={y}");
            assert!(bump.derivative(y) < 0.0);
            prev = cur;
            y += 0.05;
        }
    }

    #[test]
    fn constructor_validation() {
        assert!(TorusChart::new(0.0).is_err());
        assert!(TorusChart::new(-1.0).is_err());
        assert!(BumpFunction::new(0.3751).is_err());
        assert!(BumpFunction::new(-0.1).is_err());
        // bump needs an even integer period when A > 0
        assert!(MetricField::standard(3.0, 0.1).is_err());
        assert!(MetricField::standard(4.0, 0.1).is_ok());
        assert!(MetricField::standard(3.0, 0.0).is_ok());
    }

    #[test]
    fn injectivity_floor_is_half_period_capped() {
        assert_eq!(TorusChart::new(2.0).unwrap().injectivity_floor(), 1.0);
        assert_eq!(TorusChart::new(8.0).unwrap().injectivity_floor(), 2.0);
    }

    #[test]
    fn canonicalize_examples() {
        let chart = TorusChart::new(2.0).unwrap();
        let c = |x, y, z| canonicalize(&chart, ChartPoint::new(x, y, z));
        assert_eq!(c(2.5, 0.0, 0.0), ChartPoint::new(0.5, 0.0, 0.0));
        assert_eq!(c(-1.0, 0.0, 0.0), ChartPoint::new(-1.0, 0.0, 0.0));
        let r = c(0.1, 1.9, -2.0);
        assert_relative_eq!(r.x, 0.1, max_relative = 1e-15);
        assert_relative_eq!(r.y, -0.1, max_relative = 1e-12);
        assert_eq!(r.z, 0.0);
        // idempotent
        assert_eq!(canonicalize(&chart, r), r);
    }

    #[test]
    fn straight_line_z_axis_closed_form() {
        let f = field(0.375);
        let a_eps = 0.1 / std::f64::consts::SQRT_2;
        let u = ChartPoint::new(0.0, 0.0, a_eps);
        let v = ChartPoint::new(0.0, 0.0, -a_eps);
        let len = straight_line_length(&f, &u, &v);
        assert_relative_eq!(len, 2.0 * a_eps * 1.75_f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(len, D_UV, max_relative = 1e-15);
    }

    #[test]
    fn straight_line_fast_paths() {
        let f = field(0.375);
        // identity metric
        let f0 = field(0.0);
        let p = ChartPoint::new(0.1, 0.2, 0.3);
        let q = ChartPoint::new(-0.4, 0.7, -0.1);
        assert_relative_eq!(
            straight_line_length(&f0, &p, &q),
            p.offset_to(&q).norm(),
            max_relative = 1e-15
        );
        // z-constant segment: Euclidean even with the bump
        let r = ChartPoint::new(0.5, -0.3, 0.3);
        assert_relative_eq!(
            straight_line_length(&f, &p, &r),
            p.offset_to(&r).norm(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn straight_line_generic_anchor() {
        let f = field(0.375);
        let q1 = ChartPoint::new(0.03, -0.04, 0.05);
        let q2 = ChartPoint::new(-0.01, 0.12, -0.06);
        let len = straight_line_length(&f, &q1, &q2);
        assert_relative_eq!(len, SLL_GENERIC, max_relative = 1e-12);
        // contract tolerance
        assert!((len - SLL_GENERIC).abs() <= 1e-10 * SLL_GENERIC);
        // symmetry
        assert_relative_eq!(
            len,
            straight_line_length(&f, &q2, &q1),
            max_relative = 1e-12
        );
        // never below Euclidean
        assert!(len >= q1.offset_to(&q2).norm());
    }

    #[test]
    fn straight_line_mirror_symmetry_is_bitwise() {
        let f = field(0.375);
        let q1 = ChartPoint::new(0.03, -0.04, 0.05);
        let q2 = ChartPoint::new(-0.01, 0.12, -0.06);
        let m1 = ChartPoint::new(0.03, 0.04, 0.05);
        let m2 = ChartPoint::new(-0.01, -0.12, -0.06);
        assert_eq!(
            straight_line_length(&f, &q1, &q2).to_bits(),
            straight_line_length(&f, &m1, &m2).to_bits()
        );
    }

    #[test]
    fn fixed_panel_quadrature_agrees_with_adaptive() {
        let f = field(0.375);
        let q1 = ChartPoint::new(0.03, -0.04, 0.05);
        let q2 = ChartPoint::new(-0.01, 0.12, -0.06);
        let adaptive = straight_line_length(&f, &q1, &q2);
        for panels in [1, 2, 4] {
            let fixed = straight_line_length_fixed(&f, &q1, &q2, panels);
            assert_relative_eq!(fixed, adaptive, max_relative = 1e-12);
        }
    }

    #[test]
    fn quadrature_tolerance_refinement() {
        let f = field(0.375);
        // long segment so the adaptive rule actually subdivides
        let q1 = ChartPoint::new(0.0, -0.9, 0.0);
        let q2 = ChartPoint::new(0.3, 0.9, 0.8);
        let coarse = straight_line_length_tol(&f, &q1, &q2, 1e-6);
        let fine = straight_line_length_tol(&f, &q1, &q2, 5e-7);
        assert!((coarse - fine).abs() < 1e-6 * fine.abs());
    }

    #[test]
    fn flat_torus_distance_wraps() {
        let chart = TorusChart::new(2.0).unwrap();
        let p = ChartPoint::new(-0.9, 0.0, 0.0);
        let q = ChartPoint::new(0.9, 0.0, 0.0);
        assert_relative_eq!(flat_torus_distance(&chart, &p, &q), 0.2, max_relative = 1e-12);
        let r = ChartPoint::new(0.9, 0.9, -0.9);
        let s = ChartPoint::new(-0.9, -0.9, 0.9);
        assert_relative_eq!(
            flat_torus_distance(&chart, &r, &s),
            (3.0 * 0.2f64 * 0.2).sqrt(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn anisotropic_bound_dominates_flat() {
        let f = field(0.375);
        let p = ChartPoint::new(0.1, 0.4, -0.2);
        let q = ChartPoint::new(-0.5, -0.8, 0.9);
        let lo = flat_torus_distance(f.chart(), &p, &q);
        let hi = anisotropic_upper_bound(&f, &p, &q);
        assert!(lo <= hi);
        assert!(hi <= f.stretch() * lo + 1e-12);
    }

    #[test]
    fn tube_bound_sandwiches_stretched_pairs_tightly() {
        let f = field(0.375);
        // reference: distance from (0, b eps, 0) to (0, 0, a eps) at b = a/2
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let q1 = ChartPoint::new(0.0, 0.5 * a * 0.1, 0.0);
        let q2 = ChartPoint::new(0.0, 0.0, a * 0.1);
        let reference = 0.09998071478287544;
        let upper = straight_line_length(&f, &q1, &q2);
        let lower = tube_lower_bound(&f, &q1, &q2, upper);
        assert!(lower <= reference && reference <= upper);
        assert!(lower >= 0.995 * reference);
        assert!(lower > flat_torus_distance(f.chart(), &q1, &q2) * 1.2);

        // near a trough the slab may include y = 1 and the bound falls back
        // to the flat length
        let r1 = ChartPoint::new(0.0, 0.95, 0.0);
        let r2 = ChartPoint::new(0.0, 0.95, 0.12);
        let u2 = straight_line_length(&f, &r1, &r2);
        let l2 = tube_lower_bound(&f, &r1, &r2, u2);
        assert!(l2 <= u2);
        assert_relative_eq!(l2, 0.12, max_relative = 1e-12);
    }
}
