//! Geodesic distance, Voronoi, and Delaunay machinery for a flat 3-torus
//! carrying the diagonal metric g = diag(1, 1, 1 + f(y)) with the bump
//! f(y) = A(1 + cos(pi y)).
//!
//! The headline construction: four points u, v on the z-axis and w, p on the
//! x-axis, scaled by a sampling parameter epsilon, admit *two* distinct
//! geodesic circumcentres at (0, +/-b epsilon, 0) once the x-axis pair is
//! stretched by a solver-determined factor 1 + xi. Realised inside a certified
//! epsilon-net, the tetrahedron {u, v, w, p} owns two Delaunay balls, its
//! triangles {u, p, w} and {v, p, w} have exactly one coface each, and the
//! Delaunay complex therefore cannot triangulate the torus. The modules below
//! build, certify, and audit that configuration end to end.
//!
//! Module map:
//! - [`chart`]: torus domain, metric tensor, straight-segment quadrature.
//! - [`geodesic`]: two independent distance solvers with certified bounds.
//! - [`counterexample`]: the xi-scan, circumcentre pair, Jacobian regularity,
//!   and perturbation-stability probes.
//! - [`sampling`]: constrained epsilon-net generation and certification.
//! - [`delaunay`]: local Delaunay extraction, coface census, genericity.
//! - [`pipeline`]: end-to-end orchestration and machine-readable reports.
//! - [`figure`]: SVG cross-sections of the Voronoi structure.

pub mod chart;
pub mod counterexample;
pub mod delaunay;
pub mod figure;
pub mod geodesic;
pub mod pipeline;
mod roots;
pub mod sampling;
