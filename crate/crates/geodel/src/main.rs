//! Command-line front end over the library pipeline.
//!
//! Every subcommand takes the same configuration surface: an optional JSON
//! config file plus flags that override it field by field. Exit codes follow
//! one contract everywhere: 0 means the command's claim is certified, 2 means
//! the command ran to completion but the claim did not certify, 1 means a
//! stage failed outright (the error goes to stderr as one JSON object with
//! `stage` and `error` fields).

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geodel::chart::ChartPoint;
use geodel::delaunay::{verify_certificate, Simplex, VoronoiCertificate};
use geodel::figure::{render_slice, Plane};
use geodel::geodesic::{geodesic_distance, geodesic_distance_shooting};
use geodel::pipeline::{
    load_figure_inputs, scan_csv, Pipeline, RunConfig, RunReport, Stage, StageError,
    PROBE_SPACING,
};
use geodel::sampling::{generate_net, verify_net, PointSet};
use serde_json::Value;

/// Artifact directory used when neither the config file nor a flag names one.
const DEFAULT_OUT_DIR: &str = "geodel-out";

/// Absolute budget within which the two distance solvers must agree.
const SOLVER_AGREEMENT: f64 = 1e-6;

/// Slack allowed when checking a distance against its own certified bounds.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "geodel",
    version,
    about = "Delaunay counterexample toolkit for a perturbed flat 3-torus",
    long_about = "Builds a generic epsilon-net on a flat 3-torus with metric \
diag(1, 1, 1 + f(y)) whose Delaunay complex fails to triangulate the torus, \
and certifies every step: geodesic distances, circumcentre pairs, net density \
and separation, the coface census, and stability under vertex perturbation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline, write artifacts, certify the defect
    Reproduce(CommonArgs),
    /// Geodesic distance between two chart points, by both solvers
    Distance {
        #[command(flatten)]
        common: CommonArgs,
        /// First point as x,y,z
        #[arg(value_parser = parse_point)]
        from: ChartPoint,
        /// Second point as x,y,z
        #[arg(value_parser = parse_point)]
        to: ChartPoint,
    },
    /// Circumradius-ratio table over the centre-offset grid, as CSV
    XiScan(CommonArgs),
    /// Generate the epsilon-net, verify density and separation, write net.json
    Net(CommonArgs),
    /// Extract the Delaunay complex near the witness, write complex.json
    Complex(CommonArgs),
    /// Re-verify previously written artifacts from their files alone
    Audit(CommonArgs),
    /// Perturb the witness configuration and certify a stability radius
    Stability(CommonArgs),
    /// Render a coordinate-plane slice of the Voronoi regions from artifacts
    Figure {
        #[command(flatten)]
        common: CommonArgs,
        /// Slice plane: xz, xy, or yz
        #[arg(long, default_value = "xz")]
        plane: Plane,
    },
}

/// Flags shared by every subcommand. Each one overrides the matching field
/// of the JSON config file; unset flags leave the file (or default) value.
#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Torus period L (must be an even integer when amplitude > 0)
    #[arg(long)]
    period: Option<f64>,
    /// Metric bump amplitude A in [0, 0.375]
    #[arg(long)]
    amplitude: Option<f64>,
    /// Net scale epsilon
    #[arg(long)]
    epsilon: Option<f64>,
    /// Rows in the centre-offset scan grid
    #[arg(long)]
    b_grid: Option<usize>,
    /// RNG seed for net generation and stability trials
    #[arg(long)]
    seed: Option<u64>,
    /// Adaptive geodesic-distance tolerance
    #[arg(long)]
    distance_tol: Option<f64>,
    /// Circumcentre residual budget, as a fraction of epsilon
    #[arg(long)]
    newton_tol: Option<f64>,
    /// Cosphericity band of the genericity audit, as a fraction of epsilon
    #[arg(long)]
    genericity_tol: Option<f64>,
    /// Perturbation radius for stability trials (omit to bisect for one)
    #[arg(long)]
    rho: Option<f64>,
    /// Number of stability trials
    #[arg(long)]
    trials: Option<u32>,
    /// Artifact directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Cap on worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, StageError> {
    match cli.command {
        Command::Reproduce(common) => {
            let config = resolve(&common, true)?;
            install_thread_pool(&config)?;
            cmd_reproduce(config)
        }
        Command::Distance { common, from, to } => {
            let config = resolve(&common, false)?;
            install_thread_pool(&config)?;
            cmd_distance(&config, &from, &to)
        }
        Command::XiScan(common) => {
            let config = resolve(&common, false)?;
            install_thread_pool(&config)?;
            cmd_xi_scan(config)
        }
        Command::Net(common) => {
            let config = resolve(&common, true)?;
            install_thread_pool(&config)?;
            cmd_net(config)
        }
        Command::Complex(common) => {
            let config = resolve(&common, true)?;
            install_thread_pool(&config)?;
            cmd_complex(config)
        }
        Command::Audit(common) => {
            let config = resolve(&common, true)?;
            install_thread_pool(&config)?;
            cmd_audit(&config)
        }
        Command::Stability(common) => {
            let config = resolve(&common, false)?;
            install_thread_pool(&config)?;
            cmd_stability(config)
        }
        Command::Figure { common, plane } => {
            let config = resolve(&common, true)?;
            install_thread_pool(&config)?;
            cmd_figure(&config, plane)
        }
    }
}

/// Layers a config: file values (when `--config` is given) under flag
/// overrides. Commands that write artifacts default `out_dir` so a bare
/// invocation has somewhere to put them.
fn resolve(common: &CommonArgs, default_out_dir: bool) -> Result<RunConfig, StageError> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                StageError::new(Stage::Config, format!("config {}: {e}", path.display()))
            })?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = common.period {
        config.period = v;
    }
    if let Some(v) = common.amplitude {
        config.amplitude = v;
    }
    if let Some(v) = common.epsilon {
        config.epsilon = v;
    }
    if let Some(v) = common.b_grid {
        config.b_grid = v;
    }
    if let Some(v) = common.seed {
        config.seed = v;
    }
    if let Some(v) = common.distance_tol {
        config.distance_tol = v;
    }
    if let Some(v) = common.newton_tol {
        config.newton_tol = v;
    }
    if let Some(v) = common.genericity_tol {
        config.genericity_tol = v;
    }
    if let Some(v) = common.rho {
        config.rho = Some(v);
    }
    if let Some(v) = common.trials {
        config.trials = v;
    }
    if let Some(v) = &common.out_dir {
        config.out_dir = Some(v.clone());
    }
    if let Some(v) = common.threads {
        config.threads = Some(v);
    }
    if default_out_dir && config.out_dir.is_none() {
        config.out_dir = Some(PathBuf::from(DEFAULT_OUT_DIR));
    }
    Ok(config)
}

/// Caps the global worker pool when the config asks for it. Parallelism only
/// changes wall-clock time; every parallel reduction in the library is
/// order-preserving, so outputs are thread-count independent.
fn install_thread_pool(config: &RunConfig) -> Result<(), StageError> {
    if let Some(threads) = config.threads {
        if threads == 0 {
            return Err(StageError::new(Stage::Config, "threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| StageError::new(Stage::Config, e))?;
    }
    Ok(())
}

fn parse_point(text: &str) -> Result<ChartPoint, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {text:?}"));
    }
    let mut coords = [0.0_f64; 3];
    for (slot, part) in coords.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate {part:?}: {e}"))?;
        if !slot.is_finite() {
            return Err(format!("coordinate {part:?} is not finite"));
        }
    }
    Ok(ChartPoint::new(coords[0], coords[1], coords[2]))
}

fn cmd_reproduce(config: RunConfig) -> Result<u8, StageError> {
    let mut pipeline = Pipeline::new(config)?;
    let report = pipeline.report()?;
    let paths = pipeline.write_artifacts()?;
    print_report(&report);
    for (stage, seconds) in pipeline.timings() {
        println!("timing {stage} {seconds:.2}s");
    }
    for path in &paths {
        println!("artifact {}", path.display());
    }
    let certified = report.certified();
    println!("certified {certified}");
    Ok(if certified { 0 } else { 2 })
}

fn print_report(report: &RunReport) {
    let config = &report.config;
    println!(
        "config period {} amplitude {} epsilon {} seed {}",
        config.period, config.amplitude, config.epsilon, config.seed
    );
    println!("xi0 {:.12e}", report.xi0);
    println!(
        "b_star {:.12e} xi_selected {:.12e} slope {:.3e}",
        report.b_star, report.xi_selected, report.slope_at_b_star
    );
    for (tag, c) in [("centre_plus", 0), ("centre_minus", 1)] {
        let [x, y, z] = report.circumcentres[c];
        println!("{tag} {x:.12e} {y:.12e} {z:.12e}");
    }
    println!("circumradius {:.12e}", report.circumradius);
    println!(
        "jacobian det {:.6e} signs {:?} h_y analytic {:.6e} measured {:.6e}",
        report.jacobian.determinant,
        report.jacobian.signs,
        report.jacobian.h_y_analytic,
        report.jacobian.h_y_measured
    );
    println!(
        "net points {} density {} separation {} max_probe_upper {:.6e}",
        report.net.points, report.net.density, report.net.separation, report.net.max_probe_upper
    );
    println!(
        "defect established {} generic {} tetrahedra {} interior_triangles {}",
        report.defect.established,
        report.defect.generic,
        report.defect.tetrahedra,
        report.defect.interior_triangles
    );
    for bad in &report.defect.bad_triangles {
        println!(
            "defect triangle {:?} cofaces {}",
            bad.triangle, bad.count
        );
    }
    if let Some(witness) = &report.defect.witness {
        println!(
            "witness simplex {:?} centres {} radii {:?}",
            witness.simplex,
            witness.centres.len(),
            witness.radii
        );
    }
    println!(
        "stability rho {:.6e} bisected {} passed {}/{}",
        report.stability.rho,
        report.stability.certified_by_bisection,
        report.stability.successes,
        report.stability.trials
    );
}

fn cmd_distance(config: &RunConfig, from: &ChartPoint, to: &ChartPoint) -> Result<u8, StageError> {
    // Pipeline::new would also demand a valid net scale; distance needs only
    // the metric, so build the field directly.
    let pipeline_err = |e: geodel::geodesic::GeodesicError| StageError::new(Stage::Distance, e);
    let field = geodel::chart::MetricField::standard(config.period, config.amplitude)
        .map_err(|e| StageError::new(Stage::Config, e))?;
    let energy = geodesic_distance(&field, from, to, config.distance_tol).map_err(pipeline_err)?;
    let shooting =
        geodesic_distance_shooting(&field, from, to, config.distance_tol).map_err(pipeline_err)?;
    let gap = (energy.distance - shooting.distance).abs();
    let within = |result: &geodel::geodesic::DistanceResult| {
        result.distance >= result.lower_bound - BOUND_SLACK
            && result.distance <= result.upper_bound + BOUND_SLACK
    };
    let agree = gap <= SOLVER_AGREEMENT && within(&energy) && within(&shooting);
    println!("distance {:.17e}", energy.distance);
    println!("lower_bound {:.17e}", energy.lower_bound);
    println!("upper_bound {:.17e}", energy.upper_bound);
    println!("shooting {:.17e}", shooting.distance);
    println!("solver_gap {gap:.3e}");
    println!("agreement {agree}");
    Ok(if agree { 0 } else { 2 })
}

fn cmd_xi_scan(config: RunConfig) -> Result<u8, StageError> {
    let out_dir = config.out_dir.clone();
    let pipeline = Pipeline::new(config)?;
    let rows = pipeline.scan_table()?;
    let csv = scan_csv(&rows);
    print!("{csv}");
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| StageError::new(Stage::Artifacts, e))?;
        let path = dir.join("xi_scan.csv");
        std::fs::write(&path, csv).map_err(|e| StageError::new(Stage::Artifacts, e))?;
    }
    Ok(0)
}

fn cmd_net(config: RunConfig) -> Result<u8, StageError> {
    let out_dir = config.out_dir.clone();
    let (epsilon, seed) = (config.epsilon, config.seed);
    let mut pipeline = Pipeline::new(config)?;
    let configuration = *pipeline.configuration()?;
    let field = *pipeline.field();
    let net = generate_net(&field, &configuration, epsilon, seed)
        .map_err(|e| StageError::new(Stage::GenerateNet, e))?;
    let certificate = verify_net(&field, &net, PROBE_SPACING * epsilon)
        .map_err(|e| StageError::new(Stage::VerifyNet, e))?;
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| StageError::new(Stage::Artifacts, e))?;
        let path = dir.join("net.json");
        std::fs::write(&path, net.to_json(&field))
            .map_err(|e| StageError::new(Stage::Artifacts, e))?;
        println!("artifact {}", path.display());
    }
    println!(
        "net points {} fixed {:?} epsilon {:.12e} seed {}",
        net.points.len(),
        net.fixed_indices,
        net.epsilon,
        net.seed
    );
    println!(
        "density {} separation {} probes {} checked_pairs {} max_probe_upper {:.6e} strict_margin_fraction {:.3}",
        certificate.density,
        certificate.separation,
        certificate.probes,
        certificate.checked_pairs,
        certificate.max_probe_upper,
        certificate.strict_margin_fraction
    );
    let pass = certificate.density && certificate.separation;
    println!("certified {pass}");
    Ok(if pass { 0 } else { 2 })
}

fn cmd_complex(config: RunConfig) -> Result<u8, StageError> {
    let out_dir = config.out_dir.clone();
    let mut pipeline = Pipeline::new(config)?;
    let json = pipeline.complex_json()?;
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir).map_err(|e| StageError::new(Stage::Artifacts, e))?;
        let path = dir.join("complex.json");
        std::fs::write(&path, json).map_err(|e| StageError::new(Stage::Artifacts, e))?;
        println!("artifact {}", path.display());
    }
    let defect = pipeline.defect()?;
    println!(
        "complex tetrahedra {} triangles {} edges {} vertices {}",
        defect.complex.tetrahedra.len(),
        defect.complex.triangles.len(),
        defect.complex.edges.len(),
        defect.complex.vertices.len()
    );
    println!(
        "census interior {} indeterminate {} seed_exhausted {}",
        defect.census.counts.len(),
        defect.census.indeterminate.len(),
        defect.complex.seed_exhausted.len()
    );
    for (triangle, count) in &defect.bad_triangles {
        println!("census triangle {:?} cofaces {count}", triangle.vertices());
    }
    println!(
        "defect established {} generic {}",
        defect.established(),
        defect.generic
    );
    let clean = defect.complex.seed_exhausted.is_empty() && defect.generic;
    println!("certified {clean}");
    Ok(if clean { 0 } else { 2 })
}

fn cmd_stability(config: RunConfig) -> Result<u8, StageError> {
    let mut pipeline = Pipeline::new(config)?;
    let (report, bisected) = {
        let (report, bisected) = pipeline.stability()?;
        (report.clone(), *bisected)
    };
    println!(
        "stability rho {:.6e} bisected {} trials {} successes {} failures {:?}",
        report.rho, bisected, report.trials, report.successes, report.failures
    );
    let pass = report.all_passed();
    println!("certified {pass}");
    Ok(if pass { 0 } else { 2 })
}

fn cmd_figure(config: &RunConfig, plane: Plane) -> Result<u8, StageError> {
    let dir = config
        .out_dir
        .clone()
        .expect("figure resolves a default out_dir");
    let (field, net, centres) = load_figure_inputs(&dir)?;
    let svg = render_slice(&field, &net, &centres, plane)
        .map_err(|e| StageError::new(Stage::Figure, e))?;
    let path = dir.join(format!("figure_{}.svg", plane.name()));
    std::fs::write(&path, svg).map_err(|e| StageError::new(Stage::Figure, e))?;
    println!("artifact {}", path.display());
    Ok(0)
}

/// Re-verifies written artifacts from the files alone: the net certificate
/// is re-derived from net.json, and complex.json must be internally closed,
/// carry a census matching its own tetrahedra, and have every Delaunay ball
/// certificate re-verify against the net. Run-time state is not consulted.
fn cmd_audit(config: &RunConfig) -> Result<u8, StageError> {
    let dir = config
        .out_dir
        .clone()
        .expect("audit resolves a default out_dir");
    let fail = |msg: String| StageError::new(Stage::Audit, msg);
    let read = |name: &str| -> Result<String, StageError> {
        std::fs::read_to_string(dir.join(name)).map_err(|e| {
            fail(format!(
                "missing artifact {name} in {}: {e}; run `reproduce` first",
                dir.display()
            ))
        })
    };

    let (net, field) = PointSet::from_json(&read("net.json")?)
        .map_err(|e| fail(format!("net.json: {e}")))?;
    let complex: Value = serde_json::from_str(&read("complex.json")?)
        .map_err(|e| fail(format!("complex.json: {e}")))?;

    let vertices = parse_index_list(&complex["simplices"]["d0"])
        .map_err(|e| fail(format!("complex.json simplices.d0: {e}")))?;
    let edges = parse_simplex_list(&complex["simplices"]["d1"])
        .map_err(|e| fail(format!("complex.json simplices.d1: {e}")))?;
    let triangles = parse_simplex_list(&complex["simplices"]["d2"])
        .map_err(|e| fail(format!("complex.json simplices.d2: {e}")))?;
    let tetrahedra = parse_simplex_list(&complex["simplices"]["d3"])
        .map_err(|e| fail(format!("complex.json simplices.d3: {e}")))?;
    let certificates = parse_certificates(&complex["certificates"])
        .map_err(|e| fail(format!("complex.json certificates: {e}")))?;
    let census = parse_census(&complex["census"])
        .map_err(|e| fail(format!("complex.json census: {e}")))?;

    let mut checks: Vec<(&str, bool)> = Vec::new();

    let net_ref = &complex["net_ref"];
    let ref_matches = net_ref["epsilon"].as_f64() == Some(net.epsilon)
        && net_ref["seed"].as_u64() == Some(net.seed)
        && net_ref["points"].as_u64() == Some(net.points.len() as u64);
    checks.push(("net_ref_matches", ref_matches));

    let certificate = verify_net(&field, &net, PROBE_SPACING * net.epsilon)
        .map_err(|e| fail(format!("verify_net: {e}")))?;
    checks.push(("net_density", certificate.density));
    checks.push(("net_separation", certificate.separation));

    let vertex_set: BTreeSet<u32> = vertices.into_iter().collect();
    let edge_set: BTreeSet<Vec<u32>> = edges.into_iter().collect();
    let triangle_set: BTreeSet<Vec<u32>> = triangles.iter().cloned().collect();
    let closed = tetrahedra
        .iter()
        .all(|tet| subsimplices(tet).iter().all(|f| triangle_set.contains(f)))
        && triangles
            .iter()
            .all(|tri| subsimplices(tri).iter().all(|e| edge_set.contains(e)))
        && edge_set
            .iter()
            .flatten()
            .all(|v| vertex_set.contains(v));
    checks.push(("closure_complete", closed));

    let mut coface_counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    for tet in &tetrahedra {
        for facet in subsimplices(tet) {
            *coface_counts.entry(facet).or_insert(0) += 1;
        }
    }
    let census_ok = census
        .iter()
        .all(|(tri, count)| coface_counts.get(tri).copied().unwrap_or(0) == *count);
    checks.push(("census_counts_match", census_ok));

    let aligned = certificates.len() == tetrahedra.len()
        && certificates
            .iter()
            .zip(&tetrahedra)
            .all(|(cert, tet)| cert.simplex.vertices() == tet.as_slice());
    checks.push(("certificates_cover_tetrahedra", aligned));

    let mut balls_ok = true;
    for cert in &certificates {
        let pass = verify_certificate(&field, &net, cert)
            .map_err(|e| fail(format!("verify_certificate: {e}")))?;
        balls_ok &= pass;
    }
    checks.push(("delaunay_balls_verified", balls_ok));

    for (name, pass) in &checks {
        println!("check {name} {pass}");
    }
    let single: Vec<&Vec<u32>> = census
        .iter()
        .filter(|(_, count)| *count == 1)
        .map(|(tri, _)| tri)
        .collect();
    println!(
        "info tetrahedra {} census_interior {} count_one_triangles {:?}",
        tetrahedra.len(),
        census.len(),
        single
    );
    let pass = checks.iter().all(|(_, ok)| *ok);
    println!("certified {pass}");
    Ok(if pass { 0 } else { 2 })
}

fn parse_index_list(value: &Value) -> Result<Vec<u32>, String> {
    value
        .as_array()
        .ok_or_else(|| "expected an array".to_string())?
        .iter()
        .map(|v| {
            v.as_u64()
                .and_then(|u| u32::try_from(u).ok())
                .ok_or_else(|| format!("bad index {v}"))
        })
        .collect()
}

fn parse_simplex_list(value: &Value) -> Result<Vec<Vec<u32>>, String> {
    value
        .as_array()
        .ok_or_else(|| "expected an array".to_string())?
        .iter()
        .map(|entry| {
            let mut indices = parse_index_list(entry)?;
            indices.sort_unstable();
            Ok(indices)
        })
        .collect()
}

fn parse_certificates(value: &Value) -> Result<Vec<VoronoiCertificate>, String> {
    value
        .as_array()
        .ok_or_else(|| "expected an array".to_string())?
        .iter()
        .map(|entry| {
            let indices = parse_index_list(&entry["simplex"])?;
            let simplex = Simplex::new(indices).map_err(|e| e.to_string())?;
            let centres = entry["centres"]
                .as_array()
                .ok_or_else(|| "centres missing".to_string())?
                .iter()
                .map(|c| {
                    let coords: Vec<f64> = c
                        .as_array()
                        .ok_or_else(|| "bad centre".to_string())?
                        .iter()
                        .map(|v| v.as_f64().ok_or_else(|| "bad coordinate".to_string()))
                        .collect::<Result<_, _>>()?;
                    if coords.len() != 3 {
                        return Err("centre needs three coordinates".to_string());
                    }
                    Ok(ChartPoint::new(coords[0], coords[1], coords[2]))
                })
                .collect::<Result<Vec<_>, String>>()?;
            let radii = entry["radii"]
                .as_array()
                .ok_or_else(|| "radii missing".to_string())?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| "bad radius".to_string()))
                .collect::<Result<Vec<_>, String>>()?;
            if centres.is_empty() || centres.len() != radii.len() {
                return Err("centres and radii must pair up".to_string());
            }
            Ok(VoronoiCertificate {
                simplex,
                centres,
                radii,
            })
        })
        .collect()
}

fn parse_census(value: &Value) -> Result<Vec<(Vec<u32>, usize)>, String> {
    value
        .as_array()
        .ok_or_else(|| "expected an array".to_string())?
        .iter()
        .map(|entry| {
            let mut triangle = parse_index_list(&entry["triangle"])?;
            triangle.sort_unstable();
            let count = entry["count"]
                .as_u64()
                .ok_or_else(|| "bad count".to_string())? as usize;
            Ok((triangle, count))
        })
        .collect()
}

/// All facets of a sorted simplex: drop one vertex at a time.
fn subsimplices(simplex: &[u32]) -> Vec<Vec<u32>> {
    (0..simplex.len())
        .map(|skip| {
            simplex
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != skip)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect()
}
