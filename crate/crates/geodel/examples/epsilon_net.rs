//! Generates the certified epsilon-net that embeds the counterexample
//! configuration, then prints its statistics and optionally writes the
//! interchange JSON.
//!
//! Usage: epsilon_net [EPSILON] [SEED] [OUT.json]
//!
//! Defaults: EPSILON = 0.1, SEED = 2026. The four configuration vertices
//! enter the net as fixed points, both circumballs become exclusion zones,
//! and the run ends with an independent density and separation
//! certification of the result.

use geodel::chart::MetricField;
use geodel::counterexample::{
    build_configuration, scan_xi, solve_circumcentres, CounterexampleConfig,
};
use geodel::sampling::{generate_net, verify_net};
use std::error::Error;
use std::time::Instant;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let epsilon: f64 = match args.next() {
        Some(s) => s.parse()?,
        None => 0.1,
    };
    let seed: u64 = match args.next() {
        Some(s) => s.parse()?,
        None => 2026,
    };
    let out = args.next();

    let field = MetricField::standard(2.0, 0.375)?;
    let cfg = CounterexampleConfig::new(field, epsilon)?;

    let started = Instant::now();
    let scan = scan_xi(&cfg, &cfg.uniform_grid(8))?;
    let conf = build_configuration(&cfg, &scan)?;
    let conf = solve_circumcentres(&conf, &cfg)?;
    let (c_plus, _) = conf.centres().expect("solved above");
    println!(
        "configuration: b = {:.6}, xi = {:.12}, slope = {:+.6e}  [{:.2?}]",
        conf.b(),
        conf.xi(),
        conf.slope(),
        started.elapsed()
    );
    println!(
        "circumcentre (+) = ({:+.12e}, {:+.12e}, {:+.12e}), radius = {:.12}",
        c_plus.x,
        c_plus.y,
        c_plus.z,
        conf.circumradius().expect("solved above")
    );

    let started = Instant::now();
    let net = generate_net(&field, &conf, epsilon, seed)?;
    println!(
        "net: {} points (4 fixed), generated and certified in {:.2?}",
        net.points.len(),
        started.elapsed()
    );

    let started = Instant::now();
    let certificate = verify_net(&field, &net, 0.25 * epsilon)?;
    println!(
        "verify: density {} | separation {} | {} probes, {} near pairs  [{:.2?}]",
        certificate.density,
        certificate.separation,
        certificate.probes,
        certificate.checked_pairs,
        started.elapsed()
    );
    println!(
        "covering radius of probe grid <= {:.6} (strict-margin fraction {:.3})",
        certificate.max_probe_upper, certificate.strict_margin_fraction
    );

    if let Some(path) = out {
        std::fs::write(&path, net.to_json(&field))?;
        println!("wrote {path}");
    }
    Ok(())
}
