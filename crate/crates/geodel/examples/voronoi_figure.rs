//! Renders a coordinate-plane slice of the geodesic Voronoi diagram of a
//! net as an SVG: one colour per nearest net point, net points in the slice
//! marked, certified-ownership labelling throughout.
//!
//! Usage: voronoi_figure [OUT.svg [PLANE [RESOLUTION]]]
//!
//! Defaults: OUT = voronoi_slice.svg, PLANE = xz, RESOLUTION = 160. Uses a
//! coarse perturbed net so the render finishes in seconds; raise RESOLUTION
//! for smoother region boundaries.

use geodel::chart::MetricField;
use geodel::figure::{render_slice_at, Plane};
use geodel::sampling::{generate_net_constrained, NetConstraints};
use std::error::Error;
use std::time::Instant;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "voronoi_slice.svg".into());
    let plane: Plane = match args.next() {
        Some(s) => s.parse()?,
        None => Plane::Xz,
    };
    let resolution: usize = match args.next() {
        Some(s) => s.parse()?,
        None => 160,
    };

    let field = MetricField::standard(2.0, 0.2)?;
    let net = generate_net_constrained(&field, 0.45, 7, &NetConstraints::default())?;
    println!("net: {} points at epsilon 0.45, amplitude 0.2", net.points.len());

    let started = Instant::now();
    let svg = render_slice_at(&field, &net, &[], plane, resolution)?;
    println!(
        "rendered {}x{} {} slice in {:.2?}",
        resolution,
        resolution,
        plane.name(),
        started.elapsed()
    );
    std::fs::write(&out, svg)?;
    println!("wrote {out}");
    Ok(())
}
