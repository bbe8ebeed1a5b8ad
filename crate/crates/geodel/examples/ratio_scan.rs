//! Scans the circumradius ratio over the centre-offset grid and selects the
//! working offset: the largest b with a certified negative slope, where
//! shrinking the equatorial bulge xi below its flat-pair value still leaves
//! both circumballs of the planted tetrahedron strictly inside epsilon.
//!
//! Usage: ratio_scan [AMPLITUDE [ROWS]]
//!
//! Defaults: AMPLITUDE = 0.375, ROWS = 16. At AMPLITUDE = 0 every ratio is
//! zero and selection fails: the flat torus admits no such configuration,
//! which is the point of the construction.

use geodel::counterexample::{scan_rows, scan_xi, CounterexampleConfig};
use geodel::chart::MetricField;
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let amplitude: f64 = match args.next() {
        Some(s) => s.parse()?,
        None => 0.375,
    };
    let rows: usize = match args.next() {
        Some(s) => s.parse()?,
        None => 16,
    };
    let field = MetricField::standard(2.0, amplitude)?;
    let cfg = CounterexampleConfig::new(field, 0.1)?;
    println!(
        "amplitude {} | flat-pair bulge xi0 = {:.12}",
        amplitude,
        cfg.xi0()
    );

    let grid = cfg.uniform_grid(rows);
    let table = scan_rows(&cfg, &grid)?;
    println!("\n    b (offset/eps)      xi_tilde           slope");
    for row in &table {
        println!(
            "  {:>14.9}  {:>16.12}  {:>+12.5e}",
            row.b, row.xi_tilde, row.slope
        );
    }

    match scan_xi(&cfg, &grid) {
        Ok(scan) => println!(
            "\nselected b* = {:.9} with xi = {:.12} (< xi0) and slope {:+.5e}",
            scan.b_star, scan.xi_selected, scan.slope_at_b_star
        ),
        Err(err) => println!("\nselection failed: {err}"),
    }
    Ok(())
}
