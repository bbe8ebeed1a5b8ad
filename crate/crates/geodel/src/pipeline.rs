//! End-to-end orchestration: ratio scan, configuration solve, Jacobian
//! regularity, net generation, Delaunay audit, stability certification, and
//! byte-stable machine-readable reports.
//!
//! Stages run lazily and exactly once per [`Pipeline`]; every stage failure
//! carries the stage name so front ends can emit structured errors. The
//! serialized [`RunReport`] deliberately excludes wall-clock timings: for a
//! fixed (config, seed) on one build, reports are byte-identical across runs.

use crate::chart::{ChartPoint, MetricField};
use crate::counterexample::{
    build_configuration, jacobian_analysis, scan_rows, scan_xi, solve_circumcentres,
    stability_probe, Configuration, CounterexampleConfig, JacobianReport, ScanRow,
    StabilityReport, XiScan,
};
use crate::delaunay::{detect_defect, verify_certificate, DefectReport, GENERICITY_TOL};
use crate::figure::{render_slice, Plane};
use crate::sampling::{generate_net, verify_net, NetCertificate, PointSet};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Fraction of epsilon used as the density-probe lattice spacing.
pub const PROBE_SPACING: f64 = 0.25;

/// Upper end of the perturbation-radius bisection, as a fraction of the
/// probe's own admissibility ceiling.
const RHO_SEARCH_FACTOR: f64 = 0.99;

/// Bisection stops once the pass/fail bracket is this tight relative to its
/// upper end; one significant figure needs no more.
const RHO_BRACKET: f64 = 0.05;

/// Pipeline stage names as they appear in structured errors and timings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    ScanXi,
    BuildConfiguration,
    SolveCircumcentres,
    JacobianAnalysis,
    GenerateNet,
    VerifyNet,
    DetectDefect,
    StabilityProbe,
    Artifacts,
    Distance,
    Figure,
    Audit,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::ScanXi => "scan_xi",
            Stage::BuildConfiguration => "build_configuration",
            Stage::SolveCircumcentres => "solve_circumcentres",
            Stage::JacobianAnalysis => "jacobian_analysis",
            Stage::GenerateNet => "generate_net",
            Stage::VerifyNet => "verify_net",
            Stage::DetectDefect => "detect_defect",
            Stage::StabilityProbe => "stability_probe",
            Stage::Artifacts => "artifacts",
            Stage::Distance => "distance",
            Stage::Figure => "figure",
            Stage::Audit => "audit",
        }
    }
}

/// A stage failure: which stage, and the underlying error rendered to text.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: String,
}

impl StageError {
    pub fn new(stage: Stage, error: impl fmt::Display) -> Self {
        Self {
            stage,
            error: error.to_string(),
        }
    }

    /// The structured form front ends print to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "stage": self.stage.name(),
            "error": self.error,
        })
        .to_string()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for StageError {}

fn default_period() -> f64 {
    2.0
}
fn default_amplitude() -> f64 {
    0.375
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_b_grid() -> usize {
    32
}
fn default_seed() -> u64 {
    42
}
fn default_distance_tol() -> f64 {
    1e-10
}
fn default_newton_tol() -> f64 {
    1e-8
}
fn default_genericity_tol() -> f64 {
    GENERICITY_TOL
}
fn default_trials() -> u32 {
    20
}

/// Everything a run needs, JSON-serializable. Flags and config files produce
/// the same struct; unspecified fields take the stock defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Torus period L.
    #[serde(default = "default_period")]
    pub period: f64,
    /// Bump amplitude A.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Offset-grid resolution of the ratio scan.
    #[serde(default = "default_b_grid")]
    pub b_grid: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Adaptive-solver tolerance for report-level distance statements.
    #[serde(default = "default_distance_tol")]
    pub distance_tol: f64,
    /// Acceptance budget (fraction of epsilon) for circumcentre residuals.
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    /// Cosphericity band (fraction of epsilon) of the genericity audit.
    #[serde(default = "default_genericity_tol")]
    pub genericity_tol: f64,
    /// Perturbation radius for the stability probe; `None` certifies one by
    /// bisection.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Artifact directory; `None` runs without writing files.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Worker-thread cap; `None` leaves the global pool untouched.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    /// Parses a config file, rejecting unknown keys.
    pub fn from_json(text: &str) -> Result<Self, StageError> {
        serde_json::from_str(text).map_err(|e| StageError::new(Stage::Config, e))
    }

    fn validate(&self) -> Result<(), StageError> {
        let bad = |what: &str| Err(StageError::new(Stage::Config, what.to_string()));
        if !(self.period.is_finite() && self.period > 0.0) {
            return bad("period must be a positive finite real");
        }
        if !(self.amplitude.is_finite() && (0.0..=0.375).contains(&self.amplitude)) {
            return bad("amplitude must lie in [0, 0.375]");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be a positive finite real");
        }
        if self.b_grid < 2 {
            return bad("b_grid needs at least two offsets");
        }
        for (name, tol) in [
            ("distance_tol", self.distance_tol),
            ("newton_tol", self.newton_tol),
            ("genericity_tol", self.genericity_tol),
        ] {
            if !(tol.is_finite() && tol >= 1e-12) {
                return Err(StageError::new(
                    Stage::Config,
                    format!("{name} must be finite and at least 1e-12"),
                ));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return bad("rho must be a positive finite real when given");
            }
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        Ok(())
    }
}

/// Jacobian facts the report keeps: determinant, the structural signs, and
/// the analytic-versus-measured y-sensitivity.
#[derive(Debug, Clone, Serialize)]
pub struct JacobianSummary {
    pub determinant: f64,
    pub h_y_analytic: f64,
    pub h_y_measured: f64,
    /// Signs of (dh0/dz, dh2/dx, dh0/dy); all -1 for the certified defect.
    pub signs: [i8; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct NetSummary {
    pub points: usize,
    pub fixed_indices: Vec<usize>,
    pub density: bool,
    pub separation: bool,
    pub probes: usize,
    pub checked_pairs: usize,
    pub max_probe_upper: f64,
    pub strict_margin_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleCount {
    pub triangle: [u32; 3],
    pub count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WitnessSummary {
    pub simplex: [u32; 4],
    pub centres: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DefectSummary {
    pub established: bool,
    pub generic: bool,
    pub tetrahedra: usize,
    pub interior_triangles: usize,
    pub indeterminate_triangles: usize,
    pub seed_exhausted: usize,
    pub genericity_violations: usize,
    pub bad_triangles: Vec<TriangleCount>,
    pub witness: Option<WitnessSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    pub rho: f64,
    /// True when rho came out of the bisection rather than the config.
    pub certified_by_bisection: bool,
    pub trials: u32,
    pub successes: u32,
    pub failures: Vec<u32>,
}

/// The full machine-readable outcome of a run. Serialization excludes
/// timings, so identical (config, seed) pairs yield byte-identical reports;
/// every numeric claim is re-derivable from the serialized net plus config.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub xi0: f64,
    pub b_star: f64,
    pub xi_selected: f64,
    pub slope_at_b_star: f64,
    /// Upper centre first, then lower.
    pub circumcentres: [[f64; 3]; 2],
    pub circumradius: f64,
    pub jacobian: JacobianSummary,
    pub net: NetSummary,
    pub defect: DefectSummary,
    pub stability: StabilitySummary,
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl RunReport {
    /// The exit-code contract: certified means the defect is established,
    /// the net is certified on both axes, and every stability trial passed.
    pub fn certified(&self) -> bool {
        self.defect.established
            && self.net.density
            && self.net.separation
            && self.stability.successes == self.stability.trials
    }

    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("report serialization is infallible");
        text.push('\n');
        text
    }
}

/// Lazily-evaluated run: each stage computes at most once and later stages
/// pull in the ones they need. Accessors return stage errors verbatim so
/// front ends can map them to exit codes.
pub struct Pipeline {
    config: RunConfig,
    field: MetricField,
    cx: CounterexampleConfig,
    scan: Option<XiScan>,
    configuration: Option<Configuration>,
    jacobian: Option<JacobianReport>,
    net: Option<PointSet>,
    net_certificate: Option<NetCertificate>,
    defect: Option<DefectReport>,
    stability: Option<(StabilityReport, bool)>,
    timings: Vec<(String, f64)>,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self, StageError> {
        config.validate()?;
        let field = MetricField::standard(config.period, config.amplitude)
            .map_err(|e| StageError::new(Stage::Config, e))?;
        let cx = CounterexampleConfig::new(field, config.epsilon)
            .map_err(|e| StageError::new(Stage::Config, e))?;
        Ok(Self {
            config,
            field,
            cx,
            scan: None,
            configuration: None,
            jacobian: None,
            net: None,
            net_certificate: None,
            defect: None,
            stability: None,
            timings: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn field(&self) -> &MetricField {
        &self.field
    }

    pub fn counterexample(&self) -> &CounterexampleConfig {
        &self.cx
    }

    /// Stage timings in seconds, in execution order.
    pub fn timings(&self) -> &[(String, f64)] {
        &self.timings
    }

    fn timed<T>(
        timings: &mut Vec<(String, f64)>,
        stage: Stage,
        f: impl FnOnce() -> Result<T, StageError>,
    ) -> Result<T, StageError> {
        let started = Instant::now();
        let out = f()?;
        timings.push((stage.name().to_string(), started.elapsed().as_secs_f64()));
        Ok(out)
    }

    /// Ratio table over the configured uniform grid, with no selection; this
    /// is the xi-scan artifact and works for the flat control too.
    pub fn scan_table(&self) -> Result<Vec<ScanRow>, StageError> {
        scan_rows(&self.cx, &self.cx.uniform_grid(self.config.b_grid))
            .map_err(|e| StageError::new(Stage::ScanXi, e))
    }

    pub fn scan(&mut self) -> Result<&XiScan, StageError> {
        if self.scan.is_none() {
            let grid = self.cx.uniform_grid(self.config.b_grid);
            let cx = &self.cx;
            let scan = Self::timed(&mut self.timings, Stage::ScanXi, || {
                scan_xi(cx, &grid).map_err(|e| StageError::new(Stage::ScanXi, e))
            })?;
            self.scan = Some(scan);
        }
        Ok(self.scan.as_ref().expect("populated above"))
    }

    /// The solved configuration: vertices placed, both circumcentres found
    /// and certified within the configured residual budget.
    pub fn configuration(&mut self) -> Result<&Configuration, StageError> {
        if self.configuration.is_none() {
            self.scan()?;
            let scan = self.scan.as_ref().expect("populated above");
            let cx = &self.cx;
            let built = Self::timed(&mut self.timings, Stage::BuildConfiguration, || {
                build_configuration(cx, scan)
                    .map_err(|e| StageError::new(Stage::BuildConfiguration, e))
            })?;
            let solved = Self::timed(&mut self.timings, Stage::SolveCircumcentres, || {
                solve_circumcentres(&built, cx)
                    .map_err(|e| StageError::new(Stage::SolveCircumcentres, e))
            })?;
            self.configuration = Some(solved);
        }
        Ok(self.configuration.as_ref().expect("populated above"))
    }

    pub fn jacobian(&mut self) -> Result<&JacobianReport, StageError> {
        if self.jacobian.is_none() {
            self.configuration()?;
            let conf = self.configuration.as_ref().expect("populated above");
            let cx = &self.cx;
            let report = Self::timed(&mut self.timings, Stage::JacobianAnalysis, || {
                jacobian_analysis(conf, cx).map_err(|e| StageError::new(Stage::JacobianAnalysis, e))
            })?;
            self.jacobian = Some(report);
        }
        Ok(self.jacobian.as_ref().expect("populated above"))
    }

    /// The certified net: generated around the solved configuration, then
    /// independently re-verified for density and separation.
    pub fn net(&mut self) -> Result<(&PointSet, &NetCertificate), StageError> {
        if self.net.is_none() {
            self.configuration()?;
            let conf = self.configuration.as_ref().expect("populated above");
            let field = &self.field;
            let (epsilon, seed) = (self.config.epsilon, self.config.seed);
            let net = Self::timed(&mut self.timings, Stage::GenerateNet, || {
                generate_net(field, conf, epsilon, seed)
                    .map_err(|e| StageError::new(Stage::GenerateNet, e))
            })?;
            let certificate = Self::timed(&mut self.timings, Stage::VerifyNet, || {
                verify_net(field, &net, PROBE_SPACING * epsilon)
                    .map_err(|e| StageError::new(Stage::VerifyNet, e))
            })?;
            if !(certificate.density && certificate.separation) {
                return Err(StageError::new(
                    Stage::VerifyNet,
                    format!(
                        "net certification failed: density {}, separation {}",
                        certificate.density, certificate.separation
                    ),
                ));
            }
            self.net = Some(net);
            self.net_certificate = Some(certificate);
        }
        Ok((
            self.net.as_ref().expect("populated above"),
            self.net_certificate.as_ref().expect("populated above"),
        ))
    }

    pub fn defect(&mut self) -> Result<&DefectReport, StageError> {
        if self.defect.is_none() {
            self.net()?;
            let conf = *self.configuration.as_ref().expect("net implies configuration");
            let net = self.net.as_ref().expect("populated above");
            let field = &self.field;
            let tol = self.config.genericity_tol;
            let report = Self::timed(&mut self.timings, Stage::DetectDefect, || {
                detect_defect(field, net, &conf, tol)
                    .map_err(|e| StageError::new(Stage::DetectDefect, e))
            })?;
            self.defect = Some(report);
        }
        Ok(self.defect.as_ref().expect("populated above"))
    }

    /// Stability probe at the configured radius, or at a bisection-certified
    /// one when the config leaves rho open. Returns the report and whether
    /// the radius came from the bisection.
    pub fn stability(&mut self) -> Result<&(StabilityReport, bool), StageError> {
        if self.stability.is_none() {
            self.configuration()?;
            let conf = self.configuration.as_ref().expect("populated above");
            let cx = &self.cx;
            let (trials, seed) = (self.config.trials, self.config.seed);
            let configured = self.config.rho;
            let outcome = Self::timed(&mut self.timings, Stage::StabilityProbe, || {
                match configured {
                    Some(rho) => stability_probe(conf, cx, rho, trials, seed)
                        .map(|report| (report, false))
                        .map_err(|e| StageError::new(Stage::StabilityProbe, e)),
                    None => certify_rho(conf, cx, trials, seed),
                }
            })?;
            self.stability = Some(outcome);
        }
        Ok(self.stability.as_ref().expect("populated above"))
    }

    /// Runs every stage and assembles the report.
    pub fn report(&mut self) -> Result<RunReport, StageError> {
        self.jacobian()?;
        self.defect()?;
        self.stability()?;
        let scan = self.scan.as_ref().expect("stages ran");
        let conf = self.configuration.as_ref().expect("stages ran");
        let jacobian = self.jacobian.as_ref().expect("stages ran");
        let net = self.net.as_ref().expect("stages ran");
        let net_certificate = self.net_certificate.as_ref().expect("stages ran");
        let defect = self.defect.as_ref().expect("stages ran");
        let (stability, bisected) = self.stability.as_ref().expect("stages ran");

        let (c_plus, c_minus) = conf.centres().expect("solved configuration has centres");
        let as_triple = |p: &ChartPoint| [p.x, p.y, p.z];
        let witness = defect.witness.as_ref().map(|w| {
            let mut simplex = [0u32; 4];
            simplex.copy_from_slice(w.simplex.vertices());
            WitnessSummary {
                simplex,
                centres: w.centres.iter().map(|c| as_triple(c)).collect(),
                radii: w.radii.clone(),
            }
        });
        let bad_triangles = defect
            .bad_triangles
            .iter()
            .map(|(t, count)| {
                let mut triangle = [0u32; 3];
                triangle.copy_from_slice(t.vertices());
                TriangleCount {
                    triangle,
                    count: *count,
                }
            })
            .collect();

        Ok(RunReport {
            config: self.config.clone(),
            xi0: self.cx.xi0(),
            b_star: scan.b_star,
            xi_selected: scan.xi_selected,
            slope_at_b_star: scan.slope_at_b_star,
            circumcentres: [as_triple(&c_plus), as_triple(&c_minus)],
            circumradius: conf.circumradius().expect("solved configuration has radius"),
            jacobian: JacobianSummary {
                determinant: jacobian.determinant,
                h_y_analytic: jacobian.h_y_analytic,
                h_y_measured: jacobian.dh[(0, 1)],
                signs: jacobian.signs,
            },
            net: NetSummary {
                points: net.points.len(),
                fixed_indices: net.fixed_indices.clone(),
                density: net_certificate.density,
                separation: net_certificate.separation,
                probes: net_certificate.probes,
                checked_pairs: net_certificate.checked_pairs,
                max_probe_upper: net_certificate.max_probe_upper,
                strict_margin_fraction: net_certificate.strict_margin_fraction,
            },
            defect: DefectSummary {
                established: defect.established(),
                generic: defect.generic,
                tetrahedra: defect.complex.tetrahedra.len(),
                interior_triangles: defect.census.counts.len(),
                indeterminate_triangles: defect.census.indeterminate.len(),
                seed_exhausted: defect.complex.seed_exhausted.len(),
                genericity_violations: defect.violations.len(),
                bad_triangles,
                witness,
            },
            stability: StabilitySummary {
                rho: stability.rho,
                certified_by_bisection: *bisected,
                trials: stability.trials,
                successes: stability.successes,
                failures: stability.failures.clone(),
            },
            timings: self.timings.clone(),
        })
    }

    /// The net artifact of this run, serialized.
    pub fn net_json(&mut self) -> Result<String, StageError> {
        self.net()?;
        let net = self.net.as_ref().expect("populated above");
        Ok(net.to_json(&self.field))
    }

    /// The complex artifact of this run, serialized.
    pub fn complex_json(&mut self) -> Result<String, StageError> {
        self.defect()?;
        let net = self.net.as_ref().expect("defect implies net");
        let defect = self.defect.as_ref().expect("populated above");
        Ok(defect.complex.to_json(net))
    }

    /// Independent re-checks of what the run certified: the net certificate
    /// is re-derived and the witness's Delaunay balls re-verified against
    /// the whole net at tight tolerance. Returns the list of (check, pass).
    pub fn audit(&mut self) -> Result<Vec<(String, bool)>, StageError> {
        self.defect()?;
        let field = &self.field;
        let net = self.net.as_ref().expect("defect implies net");
        let defect = self.defect.as_ref().expect("populated above");
        let mut checks = vec![
            (
                "net_density".to_string(),
                self.net_certificate.as_ref().expect("net ran").density,
            ),
            (
                "net_separation".to_string(),
                self.net_certificate.as_ref().expect("net ran").separation,
            ),
            ("defect_established".to_string(), defect.established()),
        ];
        match &defect.witness {
            Some(witness) => {
                let pass = verify_certificate(field, net, witness)
                    .map_err(|e| StageError::new(Stage::DetectDefect, e))?;
                checks.push(("witness_certificate".to_string(), pass));
            }
            None => checks.push(("witness_certificate".to_string(), false)),
        }
        Ok(checks)
    }

    /// Writes every artifact of a completed run into `out_dir`: report,
    /// net, complex, and the three coordinate-plane figures. Returns the
    /// paths written.
    pub fn write_artifacts(&mut self) -> Result<Vec<PathBuf>, StageError> {
        let report = self.report()?;
        let out_dir = match &self.config.out_dir {
            Some(dir) => dir.clone(),
            None => {
                return Err(StageError::new(
                    Stage::Artifacts,
                    "no out_dir configured; artifacts have nowhere to go",
                ))
            }
        };
        let net = self.net.as_ref().expect("report implies net");
        let defect = self.defect.as_ref().expect("report implies defect");
        let conf = self.configuration.as_ref().expect("report implies configuration");
        let field = &self.field;
        let timings = &mut self.timings;
        Self::timed(timings, Stage::Artifacts, || {
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| StageError::new(Stage::Artifacts, e))?;
            let mut written = Vec::new();
            let mut write = |name: &str, text: String| -> Result<(), StageError> {
                let path = out_dir.join(name);
                std::fs::write(&path, text).map_err(|e| StageError::new(Stage::Artifacts, e))?;
                written.push(path);
                Ok(())
            };
            write("report.json", report.to_json())?;
            write("net.json", net.to_json(field))?;
            write("complex.json", defect.complex.to_json(net))?;
            let (c_plus, c_minus) = conf.centres().expect("solved");
            for plane in [Plane::Xz, Plane::Xy, Plane::Yz] {
                let svg = render_slice(field, net, &[c_plus, c_minus], plane)
                    .map_err(|e| StageError::new(Stage::Figure, e))?;
                write(&format!("figure_{}.svg", plane.name()), svg)?;
            }
            Ok(written)
        })
    }
}

/// Largest perturbation radius, to one significant figure, at which every
/// trial keeps two distinct sub-epsilon circumcentres. Bisects between a
/// passing and a failing radius, rounds the passing edge down to one
/// significant figure, and re-confirms; if confirmation fails (the probe is
/// not perfectly monotone), steps down one notch and retries.
fn certify_rho(
    conf: &Configuration,
    cx: &CounterexampleConfig,
    trials: u32,
    seed: u64,
) -> Result<(StabilityReport, bool), StageError> {
    let ceiling = 1e-2 * cx.epsilon();
    let probe = |rho: f64| -> Result<StabilityReport, StageError> {
        stability_probe(conf, cx, rho, trials, seed)
            .map_err(|e| StageError::new(Stage::StabilityProbe, e))
    };
    let mut hi = RHO_SEARCH_FACTOR * ceiling;
    let mut lo = 0.0_f64;
    if probe(hi)?.all_passed() {
        lo = hi;
    } else {
        while hi - lo > RHO_BRACKET * hi {
            let mid = 0.5 * (lo + hi);
            if probe(mid)?.all_passed() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    if lo <= 0.0 {
        return Err(StageError::new(
            Stage::StabilityProbe,
            "bisection found no positive radius with all trials passing",
        ));
    }
    let mut rho = round_down_one_sig(lo);
    for _ in 0..8 {
        let report = probe(rho)?;
        if report.all_passed() {
            return Ok((report, true));
        }
        rho = step_down_one_sig(rho);
    }
    Err(StageError::new(
        Stage::StabilityProbe,
        "no rounded radius confirmed all trials passing",
    ))
}

/// Rounds a positive real down to one significant figure.
fn round_down_one_sig(x: f64) -> f64 {
    let exponent = x.log10().floor();
    let scale = 10f64.powf(exponent);
    (x / scale).floor() * scale
}

/// One significant-figure notch below: 7e-6 -> 6e-6, 1e-6 -> 9e-7.
fn step_down_one_sig(x: f64) -> f64 {
    let exponent = x.log10().floor();
    let scale = 10f64.powf(exponent);
    let mantissa = (x / scale).round();
    if mantissa <= 1.0 {
        9.0 * scale / 10.0
    } else {
        (mantissa - 1.0) * scale
    }
}

/// The xi-scan table as CSV: header row, one row per offset, LF endings.
pub fn scan_csv(rows: &[ScanRow]) -> String {
    let mut out = String::from("b,xi_tilde,xi_tilde_prime\n");
    for row in rows {
        let _ = writeln!(out, "{:.17e},{:.17e},{:.17e}", row.b, row.xi_tilde, row.slope);
    }
    out
}

/// Reads the two artifacts a figure render needs: the net (with its field)
/// and the report's circumcentres.
pub fn load_figure_inputs(
    out_dir: &Path,
) -> Result<(MetricField, PointSet, [ChartPoint; 2]), StageError> {
    let missing = |name: &str| {
        StageError::new(
            Stage::Figure,
            format!("missing artifact {name}; run `reproduce` with --out-dir first"),
        )
    };
    let net_path = out_dir.join("net.json");
    let report_path = out_dir.join("report.json");
    let net_text = std::fs::read_to_string(&net_path).map_err(|_| missing("net.json"))?;
    let report_text =
        std::fs::read_to_string(&report_path).map_err(|_| missing("report.json"))?;
    let (net, field) =
        PointSet::from_json(&net_text).map_err(|e| StageError::new(Stage::Figure, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&report_text).map_err(|e| StageError::new(Stage::Figure, e))?;
    let centres = value
        .get("circumcentres")
        .and_then(|c| c.as_array())
        .filter(|c| c.len() == 2)
        .ok_or_else(|| StageError::new(Stage::Figure, "report.json lacks circumcentres"))?;
    let mut parsed = [ChartPoint::new(0.0, 0.0, 0.0); 2];
    for (slot, entry) in parsed.iter_mut().zip(centres) {
        let coords: Vec<f64> = entry
            .as_array()
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .filter(|v: &Vec<f64>| v.len() == 3)
            .ok_or_else(|| StageError::new(Stage::Figure, "malformed circumcentre triple"))?;
        *slot = ChartPoint::new(coords[0], coords[1], coords[2]);
    }
    Ok((field, net, parsed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_match_the_stock_run() {
        let config = RunConfig::default();
        assert_eq!(config.period, 2.0);
        assert_eq!(config.amplitude, 0.375);
        assert_eq!(config.epsilon, 0.1);
        assert_eq!(config.b_grid, 32);
        assert_eq!(config.seed, 42);
        assert_eq!(config.trials, 20);
        assert!(config.rho.is_none());
        assert!(config.out_dir.is_none());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = RunConfig::from_json("{\"epsilonn\": 0.1}").unwrap_err();
        assert_eq!(err.stage, Stage::Config);
    }

    #[test]
    fn validation_rejects_out_of_range_amplitude() {
        let config = RunConfig {
            amplitude: 0.5,
            ..RunConfig::default()
        };
        let err = match Pipeline::new(config) {
            Err(e) => e,
            Ok(_) => panic!("amplitude 0.5 must be rejected"),
        };
        assert_eq!(err.stage, Stage::Config);
    }

    #[test]
    fn flat_amplitude_fails_in_the_scan_stage() {
        let config = RunConfig {
            amplitude: 0.0,
            b_grid: 4,
            ..RunConfig::default()
        };
        let mut pipeline = Pipeline::new(config).unwrap();
        let err = pipeline.scan().unwrap_err();
        assert_eq!(err.stage, Stage::ScanXi);
        assert!(err.to_json().contains("\"stage\":\"scan_xi\""));
        // the table itself is still well defined for the control
        let rows = pipeline.scan_table().unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.xi_tilde.abs() < 1e-9));
    }

    #[test]
    fn sig_figure_rounding_steps_cleanly() {
        assert_eq!(round_down_one_sig(7.9e-6), 7e-6);
        assert_eq!(round_down_one_sig(1.0e-4), 1e-4);
        assert_eq!(step_down_one_sig(7e-6), 6e-6);
        assert_eq!(step_down_one_sig(1e-6), 9e-7);
        let csv = scan_csv(&[]);
        assert_eq!(csv, "b,xi_tilde,xi_tilde_prime\n");
    }
}
