//! Extracts a local Delaunay complex and censuses triangle cofaces. On the
//! flat control every interior triangle has exactly two incident tetrahedra;
//! the perturbed full-scale run (enable with FULL) convicts the two
//! triangles that share the planted two-ball tetrahedron.
//!
//! Usage: defect_audit [FULL]
//!
//! The default control run uses a coarse unperturbed net (epsilon = 0.38,
//! amplitude = 0) and finishes in seconds. FULL runs the complete audit at
//! epsilon = 0.1, amplitude = 0.375 and takes considerably longer.

use geodel::chart::{ChartPoint, MetricField};
use geodel::counterexample::{
    build_configuration, scan_xi, solve_circumcentres, CounterexampleConfig,
};
use geodel::delaunay::{coface_census, detect_defect, local_delaunay, GENERICITY_TOL};
use geodel::sampling::{generate_net_constrained, verify_net, NetConstraints};
use std::error::Error;
use std::time::Instant;

fn main() -> Result<(), Box<dyn Error>> {
    let full = std::env::args().nth(1).is_some_and(|s| s == "FULL");
    if full {
        full_audit()
    } else {
        control_audit()
    }
}

/// Flat control: unconstrained net, extraction around the origin, and a
/// census whose every interior count is 2 (the manifold invariant).
fn control_audit() -> Result<(), Box<dyn Error>> {
    let epsilon = 0.38;
    let field = MetricField::standard(2.0, 0.0)?;
    let started = Instant::now();
    let net = generate_net_constrained(&field, epsilon, 7, &NetConstraints::default())?;
    let certificate = verify_net(&field, &net, 0.25 * epsilon)?;
    println!(
        "control net: {} points | density {} | separation {}  [{:.2?}]",
        net.points.len(),
        certificate.density,
        certificate.separation,
        started.elapsed()
    );

    let started = Instant::now();
    let complex = local_delaunay(&field, &net, ChartPoint::new(0.0, 0.0, 0.0), 3.0 * epsilon)?;
    let census = coface_census(&complex);
    println!(
        "complex: {} tetrahedra, {} triangles ({} interior, {} indeterminate)  [{:.2?}]",
        complex.tetrahedra.len(),
        complex.triangles.len(),
        census.counts.len(),
        census.indeterminate.len(),
        started.elapsed()
    );
    let worst = census.counts.values().filter(|&&c| c != 2).count();
    println!(
        "interior triangles with coface count != 2: {} (abandoned candidates: {})",
        worst,
        complex.seed_exhausted.len()
    );
    Ok(())
}

/// Full-scale audit: perturbed metric, planted configuration, and the
/// two-coface invariant broken by exactly the two triangles of the witness.
fn full_audit() -> Result<(), Box<dyn Error>> {
    let epsilon = 0.1;
    let field = MetricField::standard(2.0, 0.375)?;
    let cfg = CounterexampleConfig::new(field, epsilon)?;
    let scan = scan_xi(&cfg, &cfg.uniform_grid(8))?;
    let conf = solve_circumcentres(&build_configuration(&cfg, &scan)?, &cfg)?;

    let started = Instant::now();
    let net = geodel::sampling::generate_net(&field, &conf, epsilon, 42)?;
    println!(
        "net: {} points (first four planted)  [{:.2?}]",
        net.points.len(),
        started.elapsed()
    );

    let started = Instant::now();
    let report = detect_defect(&field, &net, &conf, GENERICITY_TOL)?;
    println!(
        "audit: established {} | generic {} | {} tetrahedra  [{:.2?}]",
        report.established(),
        report.generic,
        report.complex.tetrahedra.len(),
        started.elapsed()
    );
    for (triangle, count) in &report.bad_triangles {
        println!("  triangle {:?} has {} coface(s)", triangle.vertices(), count);
    }
    if let Some(witness) = &report.witness {
        println!(
            "  witness tetrahedron {:?} owns {} Delaunay balls, radii {:?}",
            witness.simplex.vertices(),
            witness.centres.len(),
            witness.radii
        );
    }
    Ok(())
}
