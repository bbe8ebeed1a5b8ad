//! Sweeps the vertex-perturbation radius and reports how many random trials
//! keep the two-ball configuration alive: both circumcentre solves converge,
//! the centres stay separated, and both radii stay below epsilon.
//!
//! Usage: stability_sweep [TRIALS [SEED]]
//!
//! Defaults: TRIALS = 20, SEED = 42. Radii are swept over one-significant-
//! figure steps up to the probe's admissibility ceiling (1e-2 epsilon,
//! exclusive). The configuration survives tiny perturbations and dies well
//! before the ceiling; the crossover locates the certified radius.

use geodel::counterexample::{
    build_configuration, scan_xi, solve_circumcentres, stability_probe, CounterexampleConfig,
};
use geodel::chart::MetricField;
use std::error::Error;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let trials: u32 = match args.next() {
        Some(s) => s.parse()?,
        None => 20,
    };
    let seed: u64 = match args.next() {
        Some(s) => s.parse()?,
        None => 42,
    };
    let epsilon = 0.1;
    let field = MetricField::standard(2.0, 0.375)?;
    let cfg = CounterexampleConfig::new(field, epsilon)?;
    let scan = scan_xi(&cfg, &cfg.uniform_grid(8))?;
    let conf = solve_circumcentres(&build_configuration(&cfg, &scan)?, &cfg)?;

    println!("rho (abs)    rho/eps    passed");
    for exponent in [-7, -6, -5, -4, -3] {
        for mantissa in [1.0, 3.0] {
            let rho = mantissa * 10f64.powi(exponent) * epsilon;
            if rho >= 1e-2 * epsilon {
                continue;
            }
            let report = stability_probe(&conf, &cfg, rho, trials, seed)?;
            println!(
                "{:<9.1e}  {:>8.1e}   {:>2}/{:<2} {}",
                rho,
                rho / epsilon,
                report.successes,
                report.trials,
                if report.all_passed() { "all" } else { "" }
            );
        }
    }
    Ok(())
}
