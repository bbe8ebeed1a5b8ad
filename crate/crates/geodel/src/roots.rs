//! Newton root finding for equidistance systems.
//!
//! A circumcentre of four sample points is a root of the residual map
//! q -> (d(q, v0) - d(q, v3), d(q, v1) - d(q, v3), d(q, v2) - d(q, v3)).
//! Three interchangeable residuals serve three budgets: straight-chord
//! lengths for the broad search (the chord exceeds the geodesic by a bending
//! gain orders below every screening tolerance at net scales), the
//! fixed-discretization smooth distance for finite-difference derivative
//! studies, and the adaptive distance for the final polish that certified
//! radii are measured against.

use crate::chart::{straight_line_length_fixed, ChartPoint, MetricField};
use crate::geodesic::{distance_adaptive_lift, distance_smooth_lift};
use nalgebra::{Matrix3, Vector3};

/// How a Newton run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NewtonStatus {
    /// Residual dropped below the stop threshold.
    Converged,
    /// An iterate left the escape ball: any root out there is irrelevant to
    /// the caller (its ball could not be empty), so this is a clean negative.
    Escaped,
    /// Iteration budget exhausted or the Jacobian became singular.
    Exhausted,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOutcome {
    pub point: Vector3<f64>,
    pub status: NewtonStatus,
    pub iterations: usize,
    pub residual_inf: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EquidistanceNewton {
    /// Quadrature panels of the chord lengths.
    pub panels: usize,
    /// Central finite-difference step for the Jacobian. Central, not
    /// forward: it keeps the iteration exactly mirror-symmetric, so solves
    /// launched from mirrored seeds of a mirror-symmetric configuration
    /// return bitwise mirror roots.
    pub fd_step: f64,
    /// Stop when the residual sup-norm falls below this.
    pub stop_residual: f64,
    pub max_iterations: usize,
    /// Iterates leaving the ball (escape_centre, escape_radius) end the run
    /// with `Escaped`.
    pub escape_centre: Vector3<f64>,
    pub escape_radius: f64,
}

/// Equidistance residual on straight-chord lengths along the fixed lifts
/// `v - q`. No inner optimization at all: one quadrature sweep per vertex,
/// smooth in `q`, and within the chord bending gain of the true residual.
pub(crate) fn chord_residual(
    field: &MetricField,
    vertices: &[Vector3<f64>; 4],
    q: &Vector3<f64>,
    panels: usize,
) -> Vector3<f64> {
    let qp = ChartPoint::from(*q);
    let len = |v: &Vector3<f64>| {
        straight_line_length_fixed(field, &qp, &ChartPoint::from(*v), panels)
    };
    let base = len(&vertices[3]);
    Vector3::new(
        len(&vertices[0]) - base,
        len(&vertices[1]) - base,
        len(&vertices[2]) - base,
    )
}

/// Equidistance residual at `q` against four lifted vertices, with the last
/// vertex as the reference. Distances run along the fixed lifts `v - q`
/// rather than nearest images, so the residual stays smooth even when an
/// iterate strays past a wrap boundary.
pub(crate) fn smooth_residual(
    field: &MetricField,
    vertices: &[Vector3<f64>; 4],
    q: &Vector3<f64>,
    segments: usize,
) -> Vector3<f64> {
    let qp = ChartPoint::from(*q);
    let dist = |v: &Vector3<f64>| distance_smooth_lift(field, &qp, v - q, segments);
    let base = dist(&vertices[3]);
    Vector3::new(
        dist(&vertices[0]) - base,
        dist(&vertices[1]) - base,
        dist(&vertices[2]) - base,
    )
}

/// Damping-free Newton iteration on the chord equidistance residual with a
/// central finite-difference Jacobian. Steps are capped at half the escape
/// radius to keep wild early iterates inside the diagnostic ball.
pub(crate) fn solve_equidistance(
    field: &MetricField,
    vertices: &[Vector3<f64>; 4],
    seed: Vector3<f64>,
    cfg: &EquidistanceNewton,
) -> NewtonOutcome {
    let mut q = seed;
    let step_cap = 0.5 * cfg.escape_radius;
    for iter in 0..cfg.max_iterations {
        let r = chord_residual(field, vertices, &q, cfg.panels);
        let rmax = r.amax();
        if rmax <= cfg.stop_residual {
            return NewtonOutcome {
                point: q,
                status: NewtonStatus::Converged,
                iterations: iter,
                residual_inf: rmax,
            };
        }
        if (q - cfg.escape_centre).norm() > cfg.escape_radius {
            return NewtonOutcome {
                point: q,
                status: NewtonStatus::Escaped,
                iterations: iter,
                residual_inf: rmax,
            };
        }
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut hi = q;
            let mut lo = q;
            hi[k] += cfg.fd_step;
            lo[k] -= cfg.fd_step;
            let col = (chord_residual(field, vertices, &hi, cfg.panels)
                - chord_residual(field, vertices, &lo, cfg.panels))
                / (2.0 * cfg.fd_step);
            jac.set_column(k, &col);
        }
        let lu = jac.lu();
        let step = match lu.solve(&(-r)) {
            Some(s) if s.iter().all(|c| c.is_finite()) => s,
            _ => {
                return NewtonOutcome {
                    point: q,
                    status: NewtonStatus::Exhausted,
                    iterations: iter,
                    residual_inf: rmax,
                }
            }
        };
        let norm = step.norm();
        q += if norm > step_cap {
            step * (step_cap / norm)
        } else {
            step
        };
    }
    let r = chord_residual(field, vertices, &q, cfg.panels);
    NewtonOutcome {
        point: q,
        status: NewtonStatus::Exhausted,
        iterations: cfg.max_iterations,
        residual_inf: r.amax(),
    }
}

/// Equidistance residual built on the adaptive distance, again along fixed
/// lifts. Expensive; reserved for polishing near-converged roots.
pub(crate) fn adaptive_residual(
    field: &MetricField,
    vertices: &[Vector3<f64>; 4],
    q: &Vector3<f64>,
    tol: f64,
) -> Vector3<f64> {
    let qp = ChartPoint::from(*q);
    let dist = |v: &Vector3<f64>| distance_adaptive_lift(field, &qp, v - q, tol);
    let base = dist(&vertices[3]);
    Vector3::new(
        dist(&vertices[0]) - base,
        dist(&vertices[1]) - base,
        dist(&vertices[2]) - base,
    )
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdaptivePolish {
    /// Relative length tolerance of the adaptive distance underneath.
    pub distance_tol: f64,
    /// Central finite-difference step for the Jacobian (central for the
    /// same mirror-symmetry reason as the broad phase).
    pub fd_step: f64,
    pub stop_residual: f64,
    pub max_iterations: usize,
}

/// Final Newton polish on the adaptive-distance residual. The seed must
/// already be close to a root (from the chord solve); a handful of
/// quadratic steps removes the chord bending gain.
pub(crate) fn polish_equidistance(
    field: &MetricField,
    vertices: &[Vector3<f64>; 4],
    seed: Vector3<f64>,
    cfg: &AdaptivePolish,
) -> NewtonOutcome {
    let mut q = seed;
    let mut r = adaptive_residual(field, vertices, &q, cfg.distance_tol);
    for iter in 0..cfg.max_iterations {
        let rmax = r.amax();
        if rmax <= cfg.stop_residual {
            return NewtonOutcome {
                point: q,
                status: NewtonStatus::Converged,
                iterations: iter,
                residual_inf: rmax,
            };
        }
        let mut jac = Matrix3::zeros();
        for k in 0..3 {
            let mut hi = q;
            let mut lo = q;
            hi[k] += cfg.fd_step;
            lo[k] -= cfg.fd_step;
            let col = (adaptive_residual(field, vertices, &hi, cfg.distance_tol)
                - adaptive_residual(field, vertices, &lo, cfg.distance_tol))
                / (2.0 * cfg.fd_step);
            jac.set_column(k, &col);
        }
        let step = match jac.lu().solve(&(-r)) {
            Some(s) if s.iter().all(|c| c.is_finite()) => s,
            _ => {
                return NewtonOutcome {
                    point: q,
                    status: NewtonStatus::Exhausted,
                    iterations: iter,
                    residual_inf: rmax,
                }
            }
        };
        q += step;
        r = adaptive_residual(field, vertices, &q, cfg.distance_tol);
    }
    let rmax = r.amax();
    NewtonOutcome {
        point: q,
        status: if rmax <= cfg.stop_residual {
            NewtonStatus::Converged
        } else {
            NewtonStatus::Exhausted
        },
        iterations: cfg.max_iterations,
        residual_inf: rmax,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::MetricField;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_euclidean_circumcentre_of_a_regular_tetrahedron() {
        let field = MetricField::standard(2.0, 0.0).unwrap();
        // regular tetrahedron inscribed in the sphere of radius sqrt(3)*s
        let s = 0.05;
        let vertices = [
            Vector3::new(s, s, s),
            Vector3::new(s, -s, -s),
            Vector3::new(-s, s, -s),
            Vector3::new(-s, -s, s),
        ];
        let cfg = EquidistanceNewton {
            panels: 2,
            fd_step: 1e-6,
            stop_residual: 1e-12,
            max_iterations: 25,
            escape_centre: Vector3::zeros(),
            escape_radius: 0.3,
        };
        let out = solve_equidistance(&field, &vertices, Vector3::new(0.02, -0.01, 0.015), &cfg);
        assert_eq!(out.status, NewtonStatus::Converged);
        assert_relative_eq!(out.point.norm(), 0.0, epsilon = 1e-9);
        let r = chord_residual(&field, &vertices, &out.point, 2);
        assert!(r.amax() <= 1e-12);
    }

    #[test]
    fn escape_ball_reports_cleanly() {
        let field = MetricField::standard(2.0, 0.0).unwrap();
        // nearly collinear quadruple: equidistant point is far away
        let vertices = [
            Vector3::new(0.00, 0.0, 0.0),
            Vector3::new(0.05, 0.0, 0.001),
            Vector3::new(0.10, 0.0, 0.0),
            Vector3::new(0.15, 0.0, 0.001),
        ];
        let cfg = EquidistanceNewton {
            panels: 2,
            fd_step: 1e-6,
            stop_residual: 1e-12,
            max_iterations: 40,
            escape_centre: Vector3::new(0.075, 0.0, 0.0),
            escape_radius: 0.25,
        };
        let out = solve_equidistance(&field, &vertices, Vector3::new(0.07, 0.01, 0.0), &cfg);
        assert_eq!(out.status, NewtonStatus::Escaped);
    }
}
