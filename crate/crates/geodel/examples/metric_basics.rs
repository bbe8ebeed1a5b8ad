//! Tour of the chart layer: the bump profile, the metric it induces, the
//! certified length bounds, and coordinate canonicalization.
//!
//! Usage: metric_basics [AMPLITUDE]
//!
//! Default: AMPLITUDE = 0.375 (the largest admissible bump).

use geodel::chart::{
    anisotropic_upper_bound, canonicalize, flat_torus_distance, nearest_straight_upper,
    ChartPoint, MetricField,
};
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    let amplitude: f64 = match std::env::args().nth(1) {
        Some(s) => s.parse()?,
        None => 0.375,
    };
    let field = MetricField::standard(2.0, amplitude)?;

    println!(
        "torus period {} | amplitude {} | max eigenvalue {} | stretch {:.6}",
        field.period(),
        field.amplitude(),
        field.max_eigenvalue(),
        field.stretch()
    );
    println!(
        "injectivity floor {:.3} (uniqueness of minimizers is certified below half of it)",
        field.injectivity_floor()
    );

    println!("\nbump profile f(y) = A (1 + cos(pi y)) and induced g_zz = 1 + f(y):");
    for k in 0..=4 {
        let y = -1.0 + 0.5 * f64::from(k);
        let q = ChartPoint::new(0.0, y, 0.0);
        let g = field.metric_at(&q);
        println!(
            "  y = {y:+.2}   f = {:+.6}   f' = {:+.6}   g = diag({}, {}, {:.6})",
            field.bump().value(y),
            field.bump().derivative(y),
            g.x,
            g.y,
            g.z
        );
    }

    // A pure-z move through the bump's peak pays the full stretch; the same
    // move at the trough (y = 1) costs its flat length.
    let peak_a = ChartPoint::new(0.0, 0.0, -0.1);
    let peak_b = ChartPoint::new(0.0, 0.0, 0.1);
    let trough_a = ChartPoint::new(0.0, 1.0, -0.1);
    let trough_b = ChartPoint::new(0.0, 1.0, 0.1);
    println!("\nstraight-segment lengths (certified upper bounds on distance):");
    println!(
        "  through the peak   {:.9}  (flat {:.9})",
        nearest_straight_upper(&field, &peak_a, &peak_b),
        flat_torus_distance(field.chart(), &peak_a, &peak_b)
    );
    println!(
        "  through the trough {:.9}  (flat {:.9})",
        nearest_straight_upper(&field, &trough_a, &trough_b),
        flat_torus_distance(field.chart(), &trough_a, &trough_b)
    );
    println!(
        "  comparison-metric bound for the peak pair: {:.9}",
        anisotropic_upper_bound(&field, &peak_a, &peak_b)
    );

    let wild = ChartPoint::new(3.25, -7.0, 1.0);
    let canon = canonicalize(field.chart(), wild);
    println!(
        "\ncanonicalize ({}, {}, {}) -> ({}, {}, {})  [fundamental domain [-1, 1)^3]",
        wild.x, wild.y, wild.z, canon.x, canon.y, canon.z
    );
    Ok(())
}
