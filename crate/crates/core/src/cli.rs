//! Batch experiment runner: parses JSON configs, builds operator
//! expressions, executes identity suites and parameter sweeps, and emits
//! CSV/JSON artifacts.
//!
//! Subcommands: `run <config.json>`, `describe <expr.json>`, and
//! `repro <criterion-id>` which replays the bundled verification
//! experiments. Exit codes: 0 on success, 2 on configuration errors, 3 on
//! numerical failures. All outputs are deterministic for a fixed config:
//! no wall-clock data is ever written.

use crate::analysis::{
    default_pair_epsilon, derive_seed, fitzpatrick_average_check, fitzpatrick_check, fnv1a64,
    gamma_sweep, hausdorff_estimate, inclusion_oracle, minty_sample, modulus_estimate,
    sweep_to_csv, AnalysisError, MetricRecord, ModulusReport, OracleGrid, SweepConfig,
    SweepReport,
};
use crate::calculus::{
    native_param, resolvent, CalculusError, MixtureTerm, OperatorExpr, ReparamOptions,
};
use crate::linalg::{DenseMatrix, LinalgError, LinearMap, Vector};
use crate::operators::{atom_resolvent, Atom, ConvexSet, OperatorError, ResolventQuery};
use crate::rng::Rng;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Errors surfaced by the runner, split by exit-code class.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed input: bad config, bad expression file, bad arguments.
    Config(String),
    /// A validated experiment failed numerically or could not write output.
    Experiment(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Experiment(m) => write!(f, "experiment error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::InvalidSweep { .. } => CliError::Config(e.to_string()),
            other => CliError::Experiment(other.to_string()),
        }
    }
}

impl From<CalculusError> for CliError {
    fn from(e: CalculusError) -> Self {
        CliError::Experiment(e.to_string())
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        CliError::Experiment(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Experiment(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "rescomp",
    version,
    about = "Resolvent composition experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory for artifacts (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweep rows (default 1; results are identical for
    /// any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiments in a JSON config and print a run manifest.
    Run { config: PathBuf },
    /// Print an annotated tree for an operator expression JSON file.
    Describe { expr: PathBuf },
    /// Replay a bundled verification experiment (1-10, or "all").
    Repro { criterion: String },
}

fn default_identity_tolerance() -> f64 {
    1e-9
}

fn default_dr_tolerance() -> f64 {
    1e-12
}

/// One experiment description. A config file holds either a single
/// experiment object or an array of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    /// Pointwise checks of the resolvent calculus identities.
    IdentitySuite {
        label: String,
        samples: usize,
        radius: f64,
        seed: u64,
        #[serde(default = "default_identity_tolerance")]
        tolerance: f64,
        output: String,
    },
    /// Parameter sweep delegated to the analysis module.
    Sweep {
        #[serde(flatten)]
        sweep: SweepConfig,
        output: String,
    },
    /// Graph-distance estimate between two operator expressions.
    Hausdorff {
        label: String,
        first: OperatorExpr,
        second: OperatorExpr,
        rho: f64,
        probe_gamma: f64,
        samples: usize,
        seed: u64,
        output: String,
    },
    /// Splitting-node resolvent versus the reflected two-step formula.
    DrDemo {
        label: String,
        first: Atom,
        second: Atom,
        samples: usize,
        radius: f64,
        seed: u64,
        #[serde(default = "default_dr_tolerance")]
        tolerance: f64,
        output: String,
    },
    /// Writes sampled graph points of an expression as CSV.
    SampleGraph {
        label: String,
        expr: OperatorExpr,
        gamma: f64,
        radius: f64,
        samples: usize,
        seed: u64,
        output: String,
    },
    /// Monotonicity modulus estimate for an expression.
    Modulus {
        label: String,
        expr: OperatorExpr,
        gamma: f64,
        radius: f64,
        samples: usize,
        seed: u64,
        output: String,
    },
}

impl ExperimentConfig {
    pub fn label(&self) -> &str {
        match self {
            ExperimentConfig::IdentitySuite { label, .. }
            | ExperimentConfig::Hausdorff { label, .. }
            | ExperimentConfig::DrDemo { label, .. }
            | ExperimentConfig::SampleGraph { label, .. }
            | ExperimentConfig::Modulus { label, .. } => label,
            ExperimentConfig::Sweep { sweep, .. } => &sweep.label,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::IdentitySuite { .. } => "identity-suite",
            ExperimentConfig::Sweep { .. } => "sweep",
            ExperimentConfig::Hausdorff { .. } => "hausdorff",
            ExperimentConfig::DrDemo { .. } => "dr-demo",
            ExperimentConfig::SampleGraph { .. } => "sample-graph",
            ExperimentConfig::Modulus { .. } => "modulus",
        }
    }

    fn output(&self) -> &str {
        match self {
            ExperimentConfig::IdentitySuite { output, .. }
            | ExperimentConfig::Sweep { output, .. }
            | ExperimentConfig::Hausdorff { output, .. }
            | ExperimentConfig::DrDemo { output, .. }
            | ExperimentConfig::SampleGraph { output, .. }
            | ExperimentConfig::Modulus { output, .. } => output,
        }
    }

    fn override_seed(&mut self, value: u64) {
        match self {
            ExperimentConfig::IdentitySuite { seed, .. }
            | ExperimentConfig::Hausdorff { seed, .. }
            | ExperimentConfig::DrDemo { seed, .. }
            | ExperimentConfig::SampleGraph { seed, .. }
            | ExperimentConfig::Modulus { seed, .. } => *seed = value,
            ExperimentConfig::Sweep { sweep, .. } => sweep.seed = value,
        }
    }
}

/// Summary of one executed run: configuration hash, crate version, per
/// experiment status, and the declared output files (relative paths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: u64,
    pub artifact_version: String,
    pub experiments: Vec<ExperimentStatus>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub label: String,
    pub kind: String,
    pub status: String,
}

/// One row of the identity suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub identity: String,
    pub samples: usize,
    pub max_residual: f64,
}

/// Outcome of a splitting-node cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrOutcome {
    pub label: String,
    pub samples: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

/// Payload handed back by an executed experiment, for callers that inspect
/// results beyond the written files.
#[derive(Debug)]
pub enum Payload {
    Identities(Vec<IdentityRow>),
    Sweep(SweepReport),
    Metric(MetricRecord),
    Dr(DrOutcome),
    Graph(usize),
    Modulus(ModulusReport),
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub label: String,
    pub kind: &'static str,
    pub outputs: Vec<String>,
    pub payload: Payload,
}

pub struct RunContext {
    pub out_dir: PathBuf,
    pub threads: usize,
    pub seed_override: Option<u64>,
}

fn check_samples(label: &str, samples: usize) -> Result<(), CliError> {
    if samples < 2 {
        return Err(CliError::Config(format!(
            "experiment {label}: field samples must be at least 2, got {samples}"
        )));
    }
    Ok(())
}

fn check_positive_field(label: &str, field: &str, value: f64) -> Result<(), CliError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(CliError::Config(format!(
            "experiment {label}: field {field} must be a positive real, got {value}"
        )));
    }
    Ok(())
}

fn resolve_out(out_dir: &Path, declared: &str) -> Result<PathBuf, CliError> {
    if declared.trim().is_empty() {
        return Err(CliError::Config(
            "field output must be a non-empty path".to_string(),
        ));
    }
    let p = Path::new(declared);
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    })
}

fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Experiment(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    std::fs::write(path, content)
        .map_err(|e| CliError::Experiment(format!("cannot write {}: {e}", path.display())))
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization");
    text.push('\n');
    text
}

/// Executes one experiment, writing its artifacts under `ctx.out_dir`.
pub fn execute_experiment(
    config: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<ExperimentOutcome, CliError> {
    let mut config = config.clone();
    if let Some(seed) = ctx.seed_override {
        config.override_seed(seed);
    }
    let label = config.label().to_string();
    if label.trim().is_empty() {
        return Err(CliError::Config(
            "field label must be non-empty".to_string(),
        ));
    }
    let declared = config.output().to_string();
    let path = resolve_out(&ctx.out_dir, &declared)?;
    match &config {
        ExperimentConfig::IdentitySuite {
            samples,
            radius,
            seed,
            tolerance,
            ..
        } => {
            check_samples(&label, *samples)?;
            check_positive_field(&label, "radius", *radius)?;
            check_positive_field(&label, "tolerance", *tolerance)?;
            let rows = identity_suite(*samples, *radius, *seed)?;
            let mut csv = String::from("identity,samples,max_residual\n");
            for row in &rows {
                csv.push_str(&format!(
                    "{},{},{}\n",
                    row.identity, row.samples, row.max_residual
                ));
            }
            write_text(&path, &csv)?;
            if let Some(bad) = rows.iter().find(|r| r.max_residual > *tolerance) {
                return Err(CliError::Experiment(format!(
                    "experiment {label}: identity {} residual {} exceeds tolerance {tolerance}",
                    bad.identity, bad.max_residual
                )));
            }
            Ok(ExperimentOutcome {
                label,
                kind: "identity-suite",
                outputs: vec![declared],
                payload: Payload::Identities(rows),
            })
        }
        ExperimentConfig::Sweep { sweep, .. } => {
            let report = gamma_sweep(sweep, ctx.threads)?;
            write_text(&path, &sweep_to_csv(&report))?;
            let json_declared = json_sibling(&declared);
            let json_path = resolve_out(&ctx.out_dir, &json_declared)?;
            write_text(&json_path, &pretty_json(&report))?;
            Ok(ExperimentOutcome {
                label,
                kind: "sweep",
                outputs: vec![declared, json_declared],
                payload: Payload::Sweep(report),
            })
        }
        ExperimentConfig::Hausdorff {
            first,
            second,
            rho,
            probe_gamma,
            samples,
            seed,
            ..
        } => {
            check_samples(&label, *samples)?;
            check_positive_field(&label, "rho", *rho)?;
            check_positive_field(&label, "probe_gamma", *probe_gamma)?;
            let record = hausdorff_estimate(first, second, *rho, *probe_gamma, *samples, *seed)?;
            let doc = serde_json::json!({ "label": label, "record": record });
            write_text(&path, &pretty_json(&doc))?;
            Ok(ExperimentOutcome {
                label,
                kind: "hausdorff",
                outputs: vec![declared],
                payload: Payload::Metric(record),
            })
        }
        ExperimentConfig::DrDemo {
            first,
            second,
            samples,
            radius,
            seed,
            tolerance,
            ..
        } => {
            check_samples(&label, *samples)?;
            check_positive_field(&label, "radius", *radius)?;
            check_positive_field(&label, "tolerance", *tolerance)?;
            let outcome = dr_demo(&label, first, second, *samples, *radius, *seed, *tolerance)?;
            write_text(&path, &pretty_json(&outcome))?;
            if outcome.max_deviation > outcome.tolerance {
                return Err(CliError::Experiment(format!(
                    "experiment {label}: splitting deviation {} exceeds tolerance {}",
                    outcome.max_deviation, outcome.tolerance
                )));
            }
            Ok(ExperimentOutcome {
                label,
                kind: "dr-demo",
                outputs: vec![declared],
                payload: Payload::Dr(outcome),
            })
        }
        ExperimentConfig::SampleGraph {
            expr,
            gamma,
            radius,
            samples,
            seed,
            ..
        } => {
            check_samples(&label, *samples)?;
            check_positive_field(&label, "radius", *radius)?;
            check_positive_field(&label, "gamma", *gamma)?;
            let sample = minty_sample(expr, *gamma, *radius, *samples, *seed)?;
            let dim = expr.dim();
            let mut csv = String::from("index");
            for i in 0..dim {
                csv.push_str(&format!(",x{i}"));
            }
            for i in 0..dim {
                csv.push_str(&format!(",xstar{i}"));
            }
            csv.push('\n');
            for (idx, (x, xs)) in sample.points.iter().enumerate() {
                csv.push_str(&idx.to_string());
                for v in x.as_slice() {
                    csv.push_str(&format!(",{v}"));
                }
                for v in xs.as_slice() {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
            write_text(&path, &csv)?;
            Ok(ExperimentOutcome {
                label,
                kind: "sample-graph",
                outputs: vec![declared],
                payload: Payload::Graph(sample.points.len()),
            })
        }
        ExperimentConfig::Modulus {
            expr,
            gamma,
            radius,
            samples,
            seed,
            ..
        } => {
            check_samples(&label, *samples)?;
            check_positive_field(&label, "radius", *radius)?;
            check_positive_field(&label, "gamma", *gamma)?;
            let sample = minty_sample(expr, *gamma, *radius, *samples, *seed)?;
            let ip = crate::linalg::InnerProduct::standard(expr.dim())?;
            let report = modulus_estimate(&sample, &ip, default_pair_epsilon(*radius))?;
            let doc = serde_json::json!({
                "label": label,
                "gamma": gamma,
                "radius": radius,
                "report": report,
            });
            write_text(&path, &pretty_json(&doc))?;
            Ok(ExperimentOutcome {
                label,
                kind: "modulus",
                outputs: vec![declared],
                payload: Payload::Modulus(report),
            })
        }
    }
}

fn json_sibling(declared: &str) -> String {
    let p = Path::new(declared);
    p.with_extension("json").to_string_lossy().into_owned()
}

/// Parses a config document: either one experiment object or an array.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>, CliError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
    if value.is_array() {
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    } else {
        serde_json::from_value::<ExperimentConfig>(value)
            .map(|c| vec![c])
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Runs every experiment in the config file and prints the manifest.
pub fn run_config_file(config_path: &Path, ctx: &RunContext) -> Result<RunManifest, CliError> {
    let bytes = std::fs::read(config_path).map_err(|e| {
        CliError::Config(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("config file is not UTF-8".to_string()))?;
    let experiments = parse_config(&text)?;
    if experiments.is_empty() {
        return Err(CliError::Config("config lists no experiments".to_string()));
    }
    let mut statuses = Vec::with_capacity(experiments.len());
    let mut outputs = Vec::new();
    let mut first_failure: Option<CliError> = None;
    for config in &experiments {
        match execute_experiment(config, ctx) {
            Ok(outcome) => {
                for declared in &outcome.outputs {
                    let path = resolve_out(&ctx.out_dir, declared)?;
                    if !path.is_file() {
                        return Err(CliError::Experiment(format!(
                            "declared output {} was not written",
                            declared
                        )));
                    }
                }
                outputs.extend(outcome.outputs.iter().cloned());
                statuses.push(ExperimentStatus {
                    label: outcome.label,
                    kind: outcome.kind.to_string(),
                    status: "ok".to_string(),
                });
            }
            Err(CliError::Config(m)) => return Err(CliError::Config(m)),
            Err(CliError::Experiment(m)) => {
                statuses.push(ExperimentStatus {
                    label: config.label().to_string(),
                    kind: config.kind().to_string(),
                    status: format!("failed: {m}"),
                });
                if first_failure.is_none() {
                    first_failure = Some(CliError::Experiment(m));
                }
            }
        }
    }
    let manifest = RunManifest {
        config_hash: fnv1a64(&bytes),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        experiments: statuses,
        outputs,
    };
    println!("{}", pretty_json(&manifest).trim_end());
    match first_failure {
        Some(err) => Err(err),
        None => Ok(manifest),
    }
}

const MAP_2X2: [[f64; 2]; 2] = [[0.6, 0.2], [0.1, 0.7]];
const MAP_S: [[f64; 2]; 2] = [[0.5, 0.3], [-0.2, 0.6]];

fn dense(rows: &[[f64; 2]; 2]) -> DenseMatrix {
    DenseMatrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).expect("fixed matrix")
}

fn map_of(rows: &[[f64; 2]; 2]) -> LinearMap {
    LinearMap::new(dense(rows)).expect("fixed map")
}

fn box_atom_2d() -> Atom {
    Atom::normal_cone(
        ConvexSet::boxed(Vector::zeros(2), Vector::from_slice(&[1.0, 1.0]).expect("box hi"))
            .expect("unit box"),
    )
}

fn suite_atoms() -> Vec<Atom> {
    vec![
        Atom::subdiff_l1(2, 0.8).expect("l1 atom"),
        box_atom_2d(),
    ]
}

fn max_resolvent_gap(
    a: &OperatorExpr,
    b: &OperatorExpr,
    gamma: f64,
    radius: f64,
    n: usize,
    seed: u64,
) -> Result<f64, CliError> {
    let opts = ReparamOptions::default();
    let dim = a.dim();
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let y = Vector::new(rng.in_ball(dim, radius))?;
        let q = ResolventQuery::new(gamma, y)?;
        let ja = resolvent(a, &q, &opts)?;
        let jb = resolvent(b, &q, &opts)?;
        worst = worst.max(ja.sub(&jb).norm());
    }
    Ok(worst)
}

/// Pointwise residuals for the resolvent calculus identities, each checked
/// on two different atoms with the sample budget split between them.
pub fn identity_suite(
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<Vec<IdentityRow>, CliError> {
    let half = samples / 2;
    let l = map_of(&MAP_2X2);
    let s = map_of(&MAP_S);
    let combined = LinearMap::new(l.matrix().matmul(s.matrix())?)?;
    let mut rows = Vec::new();
    let atoms = suite_atoms();

    let mut push = |name: &str, residual: f64| {
        rows.push(IdentityRow {
            identity: name.to_string(),
            samples: 2 * half,
            max_residual: residual,
        });
    };

    {
        let gamma = 0.8;
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::compose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?;
            let rhs = OperatorExpr::inverse(OperatorExpr::cocompose(
                l.clone(),
                1.0 / gamma,
                OperatorExpr::inverse(OperatorExpr::leaf(atom.clone())),
            )?);
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma,
                radius,
                half,
                derive_seed(seed, k as u64),
            )?);
        }
        push("compose_inverse_duality", worst);
    }

    {
        let gamma = 0.9;
        let rho = 1.7;
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::scale_left(
                rho,
                OperatorExpr::compose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?,
            )?;
            let rhs = OperatorExpr::compose(
                l.clone(),
                gamma / rho,
                OperatorExpr::scale_left(rho, OperatorExpr::leaf(atom.clone()))?,
            )?;
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma / rho,
                radius,
                half,
                derive_seed(seed, 8 + k as u64),
            )?);
        }
        push("compose_left_scaling", worst);
    }

    {
        let gamma = 0.9;
        let rho = 1.7;
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::scale_left(
                rho,
                OperatorExpr::cocompose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?,
            )?;
            let rhs = OperatorExpr::cocompose(
                l.clone(),
                gamma / rho,
                OperatorExpr::scale_left(rho, OperatorExpr::leaf(atom.clone()))?,
            )?;
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma / rho,
                radius,
                half,
                derive_seed(seed, 16 + k as u64),
            )?);
        }
        push("cocompose_left_scaling", worst);
    }

    {
        let gamma = 1.1;
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::compose(
                s.clone(),
                gamma,
                OperatorExpr::compose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?,
            )?;
            let rhs =
                OperatorExpr::compose(combined.clone(), gamma, OperatorExpr::leaf(atom.clone()))?;
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma,
                radius,
                half,
                derive_seed(seed, 24 + k as u64),
            )?);
        }
        push("compose_associativity", worst);
    }

    {
        let gamma = 1.1;
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::cocompose(
                s.clone(),
                gamma,
                OperatorExpr::cocompose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?,
            )?;
            let rhs = OperatorExpr::cocompose(
                combined.clone(),
                gamma,
                OperatorExpr::leaf(atom.clone()),
            )?;
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma,
                radius,
                half,
                derive_seed(seed, 32 + k as u64),
            )?);
        }
        push("cocompose_associativity", worst);
    }

    {
        let gamma = 1.2;
        let rho = 0.6;
        let beta = gamma / (1.0 + rho * gamma);
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let lhs = OperatorExpr::compose(
                l.clone(),
                gamma,
                OperatorExpr::add_scaled_id(rho, OperatorExpr::leaf(atom.clone()))?,
            )?;
            let rhs = OperatorExpr::add_scaled_id(
                rho,
                OperatorExpr::compose(l.clone(), beta, OperatorExpr::leaf(atom.clone()))?,
            )?;
            worst = worst.max(max_resolvent_gap(
                &lhs,
                &rhs,
                gamma,
                radius,
                half,
                derive_seed(seed, 40 + k as u64),
            )?);
        }
        push("compose_tilt_commutation", worst);
    }

    {
        let gamma = 0.9;
        let opts = ReparamOptions::default();
        let mut worst = 0.0f64;
        for (k, atom) in atoms.iter().enumerate() {
            let node = OperatorExpr::cocompose(l.clone(), gamma, OperatorExpr::leaf(atom.clone()))?;
            let leaf = OperatorExpr::leaf(atom.clone());
            let mut rng = Rng::new(derive_seed(seed, 48 + k as u64));
            for _ in 0..half {
                let x = Vector::new(rng.in_ball(2, radius))?;
                let jt = resolvent(&node, &ResolventQuery::new(gamma, x.clone())?, &opts)?;
                let v1 = x.sub(&jt).scale(1.0 / gamma);
                let lx = l.apply(&x)?;
                let jb = resolvent(&leaf, &ResolventQuery::new(gamma, lx.clone())?, &opts)?;
                let v2 = l.apply_adjoint(&lx.sub(&jb))?.scale(1.0 / gamma);
                worst = worst.max(v1.sub(&v2).norm());
            }
        }
        push("yosida_sandwich", worst);
    }

    Ok(rows)
}

fn dr_demo(
    label: &str,
    first: &Atom,
    second: &Atom,
    samples: usize,
    radius: f64,
    seed: u64,
    tolerance: f64,
) -> Result<DrOutcome, CliError> {
    if first.dim() != second.dim() {
        return Err(CliError::Config(format!(
            "experiment {label}: fields first and second have dimensions {} and {}",
            first.dim(),
            second.dim()
        )));
    }
    let node = OperatorExpr::douglas_rachford(
        OperatorExpr::leaf(first.clone()),
        OperatorExpr::leaf(second.clone()),
    )?;
    let opts = ReparamOptions::default();
    let dim = first.dim();
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let y = Vector::new(rng.in_ball(dim, radius))?;
        let via_node = resolvent(&node, &ResolventQuery::new(1.0, y.clone())?, &opts)?;
        let j1 = atom_resolvent(first, &ResolventQuery::new(1.0, y.clone())?)?;
        let reflected = j1.scale(2.0).sub(&y);
        let j2 = atom_resolvent(second, &ResolventQuery::new(1.0, reflected.clone())?)?;
        let reflected2 = j2.scale(2.0).sub(&reflected);
        let via_reflections = reflected2.add(&y).scale(0.5);
        worst = worst.max(via_node.sub(&via_reflections).norm());
    }
    Ok(DrOutcome {
        label: label.to_string(),
        samples,
        max_deviation: worst,
        tolerance,
    })
}

fn map_headline(map: &LinearMap) -> String {
    format!(
        "map={}x{} norm={:.6} isometry={} coisometry={}",
        map.codomain_dim(),
        map.domain_dim(),
        map.norm(),
        map.is_isometry(),
        map.is_coisometry()
    )
}

fn is_identity_map(map: &LinearMap) -> bool {
    map.matrix().is_square() && *map.matrix() == DenseMatrix::identity(map.domain_dim())
}

fn map_notes(map: &LinearMap, pad: &str, out: &mut String) {
    if is_identity_map(map) {
        out.push_str(&format!(
            "{pad}  note: map is the identity, the node reduces to the inner operator\n"
        ));
    } else if map.is_coisometry() {
        out.push_str(&format!(
            "{pad}  note: coisometry collapse available, the resolvent is the adjoint sandwich at every parameter\n"
        ));
    }
}

fn describe_node(expr: &OperatorExpr, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    let suffix = format!("| dim {} | native {}", expr.dim(), native_param(expr));
    match expr {
        OperatorExpr::Leaf { atom } => {
            out.push_str(&format!("{pad}leaf {atom} {suffix}\n"));
        }
        OperatorExpr::Inverse { inner } => {
            out.push_str(&format!("{pad}inverse {suffix}\n"));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::ScaleLeft { rho, inner } => {
            out.push_str(&format!("{pad}scale_left rho={rho} {suffix}\n"));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::ScaleRight { rho, inner } => {
            out.push_str(&format!("{pad}scale_right rho={rho} {suffix}\n"));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::TranslateOut { z, inner } => {
            out.push_str(&format!(
                "{pad}translate_out z={:?} {suffix}\n",
                z.as_slice()
            ));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::TranslateIn { w, inner } => {
            out.push_str(&format!(
                "{pad}translate_in w={:?} {suffix}\n",
                w.as_slice()
            ));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::AddScaledId { rho, inner } => {
            out.push_str(&format!("{pad}add_scaled_id rho={rho} {suffix}\n"));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::Yosida { lambda, inner } => {
            out.push_str(&format!("{pad}yosida lambda={lambda} {suffix}\n"));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::Compose { map, gamma, inner } => {
            out.push_str(&format!(
                "{pad}compose gamma={gamma} {} {suffix}\n",
                map_headline(map)
            ));
            map_notes(map, &pad, out);
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::Cocompose { map, gamma, inner } => {
            out.push_str(&format!(
                "{pad}cocompose gamma={gamma} {} {suffix}\n",
                map_headline(map)
            ));
            map_notes(map, &pad, out);
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::Mixture { gamma, terms } => {
            out.push_str(&format!(
                "{pad}mixture gamma={gamma} terms={} {suffix}\n",
                terms.len()
            ));
            for t in terms {
                out.push_str(&format!(
                    "{pad}  term weight={} {}\n",
                    t.weight,
                    map_headline(&t.map)
                ));
                describe_node(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::Comixture { gamma, terms } => {
            out.push_str(&format!(
                "{pad}comixture gamma={gamma} terms={} {suffix}\n",
                terms.len()
            ));
            for t in terms {
                out.push_str(&format!(
                    "{pad}  term weight={} {}\n",
                    t.weight,
                    map_headline(&t.map)
                ));
                describe_node(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::Average { gamma, terms } => {
            out.push_str(&format!(
                "{pad}average gamma={gamma} terms={} {suffix}\n",
                terms.len()
            ));
            for t in terms {
                out.push_str(&format!("{pad}  term weight={}\n", t.weight));
                describe_node(&t.inner, depth + 2, out);
            }
        }
        OperatorExpr::DouglasRachford { first, second } => {
            out.push_str(&format!("{pad}douglas_rachford {suffix}\n"));
            describe_node(first, depth + 1, out);
            describe_node(second, depth + 1, out);
        }
        OperatorExpr::Chain { gamma, links } => {
            out.push_str(&format!(
                "{pad}chain gamma={gamma} links={} link_dim={} {suffix}\n",
                links.len(),
                links[0].dim()
            ));
            for link in links {
                describe_node(link, depth + 1, out);
            }
        }
        OperatorExpr::WeightedCompose {
            map,
            gamma,
            inner,
            mode,
            ..
        } => {
            out.push_str(&format!(
                "{pad}weighted_compose gamma={gamma} mode={mode} {} {suffix}\n",
                map_headline(map)
            ));
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::PsiLift {
            map,
            gamma,
            inner,
            lifted,
        } => {
            out.push_str(&format!(
                "{pad}psi_lift gamma={gamma} {} lifted={}x{} {suffix}\n",
                map_headline(map),
                lifted.codomain_dim(),
                lifted.domain_dim()
            ));
            let lm = lifted.matrix();
            let gram = lm
                .matmul(&lm.transpose())
                .and_then(|p| p.sub(&DenseMatrix::identity(lm.rows())));
            if let Ok(dev) = gram {
                out.push_str(&format!(
                    "{pad}  note: map norm {:.6} below one, lifted coisometry residual {:.3e}\n",
                    map.norm(),
                    dev.max_abs()
                ));
            }
            describe_node(inner, depth + 1, out);
        }
        OperatorExpr::DirectSum { blocks } => {
            out.push_str(&format!(
                "{pad}direct_sum blocks={} {suffix}\n",
                blocks.len()
            ));
            for b in blocks {
                describe_node(b, depth + 1, out);
            }
        }
    }
}

/// Annotated expression tree: every node line carries its dimension and
/// native resolvent parameter; maps show norm and isometry/coisometry
/// flags, with collapse notes where a simplification applies.
pub fn describe_report(expr: &OperatorExpr) -> String {
    let mut out = String::new();
    describe_node(expr, 0, &mut out);
    out
}

pub fn describe_file(expr_path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(expr_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", expr_path.display())))?;
    let expr: OperatorExpr = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("expression does not parse: {e}")))?;
    Ok(describe_report(&expr))
}

/// Verdict for one bundled verification experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: u32,
    pub name: String,
    pub status: String,
    pub details: Vec<String>,
}

impl CriterionResult {
    fn passed(&self) -> bool {
        self.status == "pass"
    }
}

fn verdict(ok: bool) -> String {
    if ok { "pass" } else { "fail" }.to_string()
}

const CANNED_IDENTITIES: &str = r#"{
  "experiment": "identity-suite",
  "label": "calculus-identities",
  "samples": 1000,
  "radius": 2.5,
  "seed": 202,
  "tolerance": 1e-9,
  "output": "identities.csv"
}
"#;

const CANNED_DR: &str = r#"[
  {
    "experiment": "dr-demo",
    "label": "dr-interval-identity",
    "first": {"type": "normal_cone", "set": {"type": "box", "lo": [0.0], "hi": [1.0]}},
    "second": {"type": "scaled_identity", "dim": 1, "alpha": 1.0},
    "samples": 1000,
    "radius": 3.0,
    "seed": 404,
    "tolerance": 1e-12,
    "output": "dr_interval_identity.json"
  },
  {
    "experiment": "dr-demo",
    "label": "dr-point-zero",
    "first": {"type": "normal_cone", "set": {"type": "singleton", "point": [0.0]}},
    "second": {"type": "zero", "dim": 1},
    "samples": 1000,
    "radius": 3.0,
    "seed": 405,
    "tolerance": 1e-12,
    "output": "dr_point_zero.json"
  }
]
"#;

const CANNED_SWEEPS: &str = r#"[
  {
    "experiment": "sweep",
    "label": "yosida-interval",
    "kind": "yosida",
    "gammas": [1.0, 0.1, 0.01, 0.001],
    "probe_gamma": 1.0,
    "delta": 2.0,
    "rho": 1.0,
    "samples": 32,
    "seed": 601,
    "atom": {"type": "normal_cone", "set": {"type": "box", "lo": [0.0], "hi": [1.0]}},
    "output": "yosida.csv"
  },
  {
    "experiment": "sweep",
    "label": "sandwich-ball",
    "kind": "sandwich_limit",
    "gammas": [0.5, 0.25, 0.1, 0.05, 0.01],
    "probe_gamma": 1.0,
    "delta": 2.0,
    "rho": 1.0,
    "samples": 24,
    "seed": 602,
    "map": {"rows": 2, "cols": 2, "data": [0.8, 0.0, 0.0, 0.8]},
    "atom": {"type": "normal_cone", "set": {"type": "ball", "center": [0.0, 0.0], "radius": 1.0}},
    "limit": {
      "type": "scale_left",
      "rho": 0.8,
      "inner": {
        "type": "scale_right",
        "rho": 0.8,
        "inner": {
          "type": "leaf",
          "atom": {"type": "normal_cone", "set": {"type": "ball", "center": [0.0, 0.0], "radius": 1.0}}
        }
      }
    },
    "output": "sandwich.csv"
  },
  {
    "experiment": "sweep",
    "label": "domain-soft-threshold",
    "kind": "domain_limit",
    "gammas": [0.1, 0.01, 0.001],
    "probe_gamma": 1.0,
    "delta": 2.0,
    "rho": 1.0,
    "samples": 24,
    "seed": 603,
    "map": {"rows": 2, "cols": 2, "data": [0.6, 0.2, 0.1, 0.7]},
    "atom": {"type": "subdiff_l1", "dim": 2, "lambda": 1.0},
    "limit": {
      "type": "compose",
      "map": {"rows": 2, "cols": 2, "data": [0.6, 0.2, 0.1, 0.7]},
      "gamma": 1.0,
      "inner": {"type": "leaf", "atom": {"type": "zero", "dim": 2}}
    },
    "output": "domain.csv"
  },
  {
    "experiment": "sweep",
    "label": "zeros-soft-threshold",
    "kind": "zeros_limit",
    "gammas": [5.0, 20.0, 80.0],
    "probe_gamma": 1.0,
    "delta": 2.0,
    "rho": 1.0,
    "samples": 24,
    "seed": 604,
    "map": {"rows": 2, "cols": 2, "data": [0.6, 0.2, 0.1, 0.7]},
    "atom": {"type": "subdiff_l1", "dim": 2, "lambda": 1.0},
    "limit": {
      "type": "compose",
      "map": {"rows": 2, "cols": 2, "data": [0.6, 0.2, 0.1, 0.7]},
      "gamma": 1.0,
      "inner": {"type": "leaf", "atom": {"type": "normal_cone", "set": {"type": "singleton", "point": [0.0, 0.0]}}}
    },
    "output": "zeros.csv"
  }
]
"#;

fn run_canned(
    canned: &str,
    file_name: &str,
    dir: &Path,
    threads: usize,
) -> Result<Vec<(ExperimentStatus, Option<Payload>)>, CliError> {
    write_text(&dir.join(file_name), canned)?;
    let experiments = parse_config(canned)?;
    let ctx = RunContext {
        out_dir: dir.to_path_buf(),
        threads,
        seed_override: None,
    };
    let mut out = Vec::with_capacity(experiments.len());
    for config in &experiments {
        match execute_experiment(config, &ctx) {
            Ok(outcome) => out.push((
                ExperimentStatus {
                    label: outcome.label.clone(),
                    kind: outcome.kind.to_string(),
                    status: "ok".to_string(),
                },
                Some(outcome.payload),
            )),
            Err(CliError::Config(m)) => return Err(CliError::Config(m)),
            Err(CliError::Experiment(m)) => out.push((
                ExperimentStatus {
                    label: config.label().to_string(),
                    kind: config.kind().to_string(),
                    status: format!("failed: {m}"),
                },
                None,
            )),
        }
    }
    Ok(out)
}

struct OracleCase {
    name: &'static str,
    map: LinearMap,
    atom: Atom,
    gamma: f64,
}

fn oracle_cases() -> Vec<OracleCase> {
    let id2 = LinearMap::identity(2);
    let s = 1.0 / 2.0f64.sqrt();
    let half2 = LinearMap::new(
        DenseMatrix::from_rows(&[vec![s, 0.0], vec![0.0, s]]).expect("half map"),
    )
    .expect("half map");
    let row = LinearMap::new(DenseMatrix::new(1, 2, vec![s, s]).expect("row map"))
        .expect("row map");
    let box1 = Atom::normal_cone(
        ConvexSet::boxed(
            Vector::from_slice(&[0.0]).expect("box lo"),
            Vector::from_slice(&[1.0]).expect("box hi"),
        )
        .expect("unit interval"),
    );
    vec![
        OracleCase { name: "id_zero", map: id2.clone(), atom: Atom::zero(2).expect("zero"), gamma: 0.5 },
        OracleCase { name: "id_scaled", map: id2.clone(), atom: Atom::scaled_identity(2, 1.5).expect("sid"), gamma: 1.0 },
        OracleCase { name: "id_box", map: id2.clone(), atom: box_atom_2d(), gamma: 2.0 },
        OracleCase { name: "id_l1", map: id2, atom: Atom::subdiff_l1(2, 0.7).expect("l1"), gamma: 0.7 },
        OracleCase { name: "half_zero", map: half2.clone(), atom: Atom::zero(2).expect("zero"), gamma: 1.0 },
        OracleCase { name: "half_scaled", map: half2.clone(), atom: Atom::scaled_identity(2, 1.5).expect("sid"), gamma: 2.0 },
        OracleCase { name: "half_box", map: half2.clone(), atom: box_atom_2d(), gamma: 0.5 },
        OracleCase { name: "half_l1", map: half2, atom: Atom::subdiff_l1(2, 0.7).expect("l1"), gamma: 1.3 },
        OracleCase { name: "row_zero", map: row.clone(), atom: Atom::zero(1).expect("zero"), gamma: 2.0 },
        OracleCase { name: "row_scaled", map: row.clone(), atom: Atom::scaled_identity(1, 1.5).expect("sid"), gamma: 0.5 },
        OracleCase { name: "row_box", map: row.clone(), atom: box1, gamma: 1.0 },
        OracleCase { name: "row_l1", map: row, atom: Atom::subdiff_l1(1, 0.7).expect("l1"), gamma: 0.8 },
    ]
}

fn criterion_1(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    let opts = ReparamOptions::default();
    let grid = OracleGrid::default();
    let tol = 1e-5;
    let probes = 20;
    let mut csv = String::from("case,mode,gamma,probes,max_abs_deviation\n");
    let mut details = Vec::new();
    let mut ok = true;
    for (case_idx, case) in oracle_cases().iter().enumerate() {
        for (mode_idx, mode) in ["compose", "cocompose"].iter().enumerate() {
            let expr = if mode_idx == 0 {
                OperatorExpr::compose(
                    case.map.clone(),
                    case.gamma,
                    OperatorExpr::leaf(case.atom.clone()),
                )?
            } else {
                OperatorExpr::cocompose(
                    case.map.clone(),
                    case.gamma,
                    OperatorExpr::leaf(case.atom.clone()),
                )?
            };
            let dim = expr.dim();
            let mut rng = Rng::new(derive_seed(1201, (case_idx * 2 + mode_idx) as u64));
            let mut worst = 0.0f64;
            for _ in 0..probes {
                let y = Vector::new(rng.in_ball(dim, 2.0))?;
                let direct =
                    resolvent(&expr, &ResolventQuery::new(case.gamma, y.clone())?, &opts)?;
                let searched = inclusion_oracle(&expr, case.gamma, &y, &grid)?;
                worst = worst.max(direct.sub(&searched).norm());
            }
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                case.name, mode, case.gamma, probes, worst
            ));
            if worst > tol {
                ok = false;
                details.push(format!(
                    "case {} {} deviates by {}",
                    case.name, mode, worst
                ));
            }
        }
    }
    write_text(&dir.join("oracle_agreement.csv"), &csv)?;
    if ok {
        details.push(format!(
            "24 node variants, 20 probes each, every deviation at most {tol}"
        ));
    }
    Ok(CriterionResult {
        criterion: 1,
        name: "resolvent-oracle-agreement".to_string(),
        status: verdict(ok),
        details,
    })
}

fn criterion_2(dir: &Path, threads: usize) -> Result<CriterionResult, CliError> {
    let results = run_canned(CANNED_IDENTITIES, "config.json", dir, threads)?;
    let (status, payload) = &results[0];
    let mut details = vec![format!("experiment {}: {}", status.label, status.status)];
    let mut ok = status.status == "ok";
    if let Some(Payload::Identities(rows)) = payload {
        let worst = rows
            .iter()
            .map(|r| r.max_residual)
            .fold(0.0f64, f64::max);
        details.push(format!(
            "{} identities, worst pointwise residual {worst:.3e}",
            rows.len()
        ));
        ok = ok && rows.iter().all(|r| r.max_residual <= 1e-9);
    } else {
        ok = false;
    }
    Ok(CriterionResult {
        criterion: 2,
        name: "calculus-identity-suite".to_string(),
        status: verdict(ok),
        details,
    })
}

fn criterion_3(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    let opts = ReparamOptions::default();
    let l = map_of(&MAP_2X2);
    let gamma = 0.9;
    let margin_floor = -1e-10;
    let mut details = Vec::new();
    let mut ok = true;

    let nodes = [
        (
            "compose",
            OperatorExpr::compose(
                l.clone(),
                gamma,
                OperatorExpr::leaf(Atom::subdiff_l1(2, 0.8)?),
            )?,
        ),
        (
            "cocompose",
            OperatorExpr::cocompose(l, gamma, OperatorExpr::leaf(box_atom_2d()))?,
        ),
    ];
    for (idx, (name, node)) in nodes.iter().enumerate() {
        let mut rng = Rng::new(derive_seed(3301, idx as u64));
        let mut points = Vec::with_capacity(142);
        for _ in 0..142 {
            let y = Vector::new(rng.in_ball(2, 3.0))?;
            let j = resolvent(node, &ResolventQuery::new(gamma, y.clone())?, &opts)?;
            points.push((y, j));
        }
        let mut min_margin = f64::INFINITY;
        let mut pairs = 0usize;
        for i in 0..points.len() {
            for k in i + 1..points.len() {
                let dy = points[i].0.sub(&points[k].0);
                let dj = points[i].1.sub(&points[k].1);
                let margin = dj.dot(&dy) - dj.dot(&dj);
                min_margin = min_margin.min(margin);
                pairs += 1;
            }
        }
        details.push(format!(
            "{name}: firm nonexpansiveness margin {min_margin:.3e} over {pairs} pairs"
        ));
        if min_margin < margin_floor {
            ok = false;
        }
    }

    let mut csv = String::from("alpha,gamma,map_scale,beta_hat,beta_formula,abs_error\n");
    let mut grid_worst = 0.0f64;
    let mut cell = 0u64;
    let mut grid_rows: Vec<(f64, f64, f64, Option<Atom>)> = Vec::new();
    for alpha in [0.5, 1.0, 2.0] {
        for g in [0.5, 1.0, 2.0] {
            for c in [0.6, 0.8, 1.0] {
                grid_rows.push((alpha, g, c, None));
            }
        }
    }
    grid_rows.push((0.0, 1.0, 0.6, Some(Atom::zero(2)?)));
    grid_rows.push((0.0, 1.0, 0.8, Some(Atom::zero(2)?)));
    for (alpha, g, c, zero_atom) in grid_rows {
        let map = LinearMap::new(
            DenseMatrix::from_rows(&[vec![c, 0.0], vec![0.0, c]]).expect("scaled map"),
        )?;
        let atom = match &zero_atom {
            Some(z) => z.clone(),
            None => Atom::scaled_identity(2, alpha)?,
        };
        let node = OperatorExpr::compose(map, g, OperatorExpr::leaf(atom))?;
        let sample = minty_sample(&node, g, 2.0, 12, derive_seed(3302, cell))?;
        let ip = crate::linalg::InnerProduct::standard(2)?;
        let report = modulus_estimate(&sample, &ip, default_pair_epsilon(2.0))?;
        let formula = (alpha + 1.0 / g) / (c * c) - 1.0 / g;
        let err = (report.beta_hat - formula).abs();
        grid_worst = grid_worst.max(err);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            alpha, g, c, report.beta_hat, formula, err
        ));
        cell += 1;
    }
    write_text(&dir.join("strong_monotonicity_grid.csv"), &csv)?;
    details.push(format!(
        "29 grid cells, worst |beta_hat - formula| = {grid_worst:.3e}"
    ));
    if grid_worst > 1e-6 {
        ok = false;
    }

    Ok(CriterionResult {
        criterion: 3,
        name: "monotonicity-margins".to_string(),
        status: verdict(ok),
        details,
    })
}

fn criterion_4(dir: &Path, threads: usize) -> Result<CriterionResult, CliError> {
    let results = run_canned(CANNED_DR, "config.json", dir, threads)?;
    let mut details = Vec::new();
    let mut ok = true;
    for (status, payload) in &results {
        details.push(format!("experiment {}: {}", status.label, status.status));
        if status.status != "ok" {
            ok = false;
        }
        if let Some(Payload::Dr(outcome)) = payload {
            details.push(format!(
                "{}: max deviation {:.3e} over {} samples",
                outcome.label, outcome.max_deviation, outcome.samples
            ));
        }
    }
    Ok(CriterionResult {
        criterion: 4,
        name: "splitting-reflection-agreement".to_string(),
        status: verdict(ok),
        details,
    })
}

fn yosida_closed_form_node() -> Result<OperatorExpr, CliError> {
    let map = LinearMap::new(DenseMatrix::new(1, 1, vec![0.5]).expect("half map"))?;
    let inner = OperatorExpr::scale_left(
        2.0,
        OperatorExpr::scale_right(2.0, OperatorExpr::leaf(Atom::scaled_identity(1, 1.0)?))?,
    )?;
    Ok(OperatorExpr::cocompose(map, 1.0 / 3.0, inner)?)
}

fn criterion_5_impl(dir: &Path) -> Result<CriterionResult, CliError> {
    let expr = yosida_closed_form_node()?;
    let gamma = 1.0 / 3.0;
    let x = Vector::from_slice(&[1.0])?;
    let expected = 6.0 / 7.0;
    let direct = resolvent(
        &expr,
        &ResolventQuery::new(gamma, x.clone())?,
        &ReparamOptions::default(),
    )?;
    let direct_err = (direct.as_slice()[0] - expected).abs();
    let searched = inclusion_oracle(&expr, gamma, &x, &OracleGrid::default())?;
    let oracle_err = (searched.as_slice()[0] - expected).abs();
    let ok = direct_err <= 1e-10 && oracle_err <= 1e-6;
    let doc = serde_json::json!({
        "expected": expected,
        "resolvent_value": direct.as_slice()[0],
        "resolvent_abs_error": direct_err,
        "oracle_value": searched.as_slice()[0],
        "oracle_abs_error": oracle_err,
    });
    write_text(&dir.join("result_values.json"), &pretty_json(&doc))?;
    Ok(CriterionResult {
        criterion: 5,
        name: "regularization-closed-form".to_string(),
        status: verdict(ok),
        details: vec![
            format!("resolvent error {direct_err:.3e} (bound 1e-10)"),
            format!("oracle error {oracle_err:.3e} (bound 1e-6)"),
        ],
    })
}

fn criterion_5(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    criterion_5_impl(dir)
}

fn criterion_6(dir: &Path, threads: usize) -> Result<CriterionResult, CliError> {
    let results = run_canned(CANNED_SWEEPS, "config.json", dir, threads)?;
    let mut details = Vec::new();
    let mut ok = true;
    for (status, payload) in &results {
        if status.status != "ok" {
            ok = false;
            details.push(format!("experiment {}: {}", status.label, status.status));
            continue;
        }
        let report = match payload {
            Some(Payload::Sweep(report)) => report,
            _ => {
                ok = false;
                details.push(format!("experiment {}: no sweep payload", status.label));
                continue;
            }
        };
        let ds: Vec<f64> = report.rows.iter().map(|r| r.record.d_gamma_delta).collect();
        match report.experiment.as_str() {
            "yosida-interval" => {
                let decreasing = ds.windows(2).all(|w| w[1] < w[0]);
                let last = *ds.last().expect("rows");
                let pass = decreasing && last <= 0.05;
                details.push(format!(
                    "yosida-interval: gaps strictly decreasing = {decreasing}, final gap {last:.3e} (bound 0.05)"
                ));
                ok = ok && pass;
            }
            "sandwich-ball" => {
                let bounded = report
                    .rows
                    .iter()
                    .all(|r| r.record.d_gamma_delta <= r.record.haus_upper_bound + 1e-6);
                details.push(format!(
                    "sandwich-ball: every gap within its a-priori bound = {bounded}"
                ));
                ok = ok && bounded;
            }
            "domain-soft-threshold" | "zeros-soft-threshold" => {
                let last = *ds.last().expect("rows");
                let pass = last <= 0.02;
                details.push(format!(
                    "{}: gap to declared limit at the extreme parameter {last:.3e} (bound 0.02)",
                    report.experiment
                ));
                ok = ok && pass;
            }
            other => {
                ok = false;
                details.push(format!("unexpected sweep label {other}"));
            }
        }
    }
    Ok(CriterionResult {
        criterion: 6,
        name: "convergence-sweeps".to_string(),
        status: verdict(ok),
        details,
    })
}

fn criterion_7(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    let opts = ReparamOptions::default();
    let gamma = 0.9;
    let weights = [0.5, 0.2, 0.3];
    let maps = [
        map_of(&MAP_2X2),
        LinearMap::new(DenseMatrix::new(1, 2, vec![0.5, -0.3]).expect("row"))?,
        LinearMap::new(
            DenseMatrix::from_rows(&[vec![0.7, 0.0], vec![0.0, 0.7]]).expect("scaled"),
        )?,
    ];
    let atoms = [
        Atom::subdiff_l1(2, 0.8)?,
        Atom::scaled_identity(1, 2.0)?,
        box_atom_2d(),
    ];
    let terms: Vec<MixtureTerm> = weights
        .iter()
        .zip(maps.iter())
        .zip(atoms.iter())
        .map(|((w, m), a)| MixtureTerm {
            weight: *w,
            map: m.clone(),
            inner: OperatorExpr::leaf(a.clone()),
        })
        .collect();

    let total_rows: usize = maps.iter().map(LinearMap::codomain_dim).sum();
    let mut stacked = DenseMatrix::zeros(total_rows, 2);
    let mut row0 = 0;
    for (w, m) in weights.iter().zip(maps.iter()) {
        let sw = w.sqrt();
        let mat = m.matrix();
        for r in 0..mat.rows() {
            for c in 0..mat.cols() {
                stacked.set(row0 + r, c, sw * mat.get(r, c));
            }
        }
        row0 += mat.rows();
    }
    let stack_map = LinearMap::new(stacked)?;
    let blocks: Vec<OperatorExpr> = weights
        .iter()
        .zip(atoms.iter())
        .map(|(w, a)| {
            let sw = w.sqrt();
            OperatorExpr::scale_left(
                sw,
                OperatorExpr::scale_right(1.0 / sw, OperatorExpr::leaf(a.clone()))?,
            )
        })
        .collect::<Result<_, _>>()?;
    let lifted_inner = OperatorExpr::direct_sum(blocks)?;

    let mixture = OperatorExpr::mixture(gamma, terms.clone())?;
    let lifted = OperatorExpr::compose(stack_map.clone(), gamma, lifted_inner.clone())?;
    let comixture = OperatorExpr::comixture(gamma, terms)?;
    let colifted = OperatorExpr::cocompose(stack_map, gamma, lifted_inner)?;

    let mut worst_mix = 0.0f64;
    let mut worst_comix = 0.0f64;
    let mut rng = Rng::new(7701);
    for _ in 0..1000 {
        let y = Vector::new(rng.in_ball(2, 2.5))?;
        let q = ResolventQuery::new(gamma, y)?;
        let a = resolvent(&mixture, &q, &opts)?;
        let b = resolvent(&lifted, &q, &opts)?;
        worst_mix = worst_mix.max(a.sub(&b).norm());
        let c = resolvent(&comixture, &q, &opts)?;
        let d = resolvent(&colifted, &q, &opts)?;
        worst_comix = worst_comix.max(c.sub(&d).norm());
    }
    let ok = worst_mix <= 1e-10 && worst_comix <= 1e-10;
    let doc = serde_json::json!({
        "samples": 1000,
        "blocks": 3,
        "mixture_vs_lifting_max_deviation": worst_mix,
        "comixture_vs_lifting_max_deviation": worst_comix,
    });
    write_text(&dir.join("mixture_lifting.json"), &pretty_json(&doc))?;
    Ok(CriterionResult {
        criterion: 7,
        name: "mixture-product-space-lifting".to_string(),
        status: verdict(ok),
        details: vec![
            format!("mixture max deviation {worst_mix:.3e} (bound 1e-10)"),
            format!("comixture max deviation {worst_comix:.3e} (bound 1e-10)"),
        ],
    })
}

fn criterion_8(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    let opts = ReparamOptions::default();
    let grid = OracleGrid::default();
    let box1 = Atom::normal_cone(
        ConvexSet::boxed(Vector::from_slice(&[0.0])?, Vector::from_slice(&[1.0])?)
            .expect("unit interval"),
    );
    let l1 = Atom::subdiff_l1(1, 0.7)?;
    let cases = [
        (
            "two-links",
            vec![
                OperatorExpr::leaf(box1.clone()),
                OperatorExpr::leaf(l1.clone()),
            ],
            5usize,
        ),
        (
            "three-links",
            vec![
                OperatorExpr::leaf(box1.clone()),
                OperatorExpr::leaf(l1),
                OperatorExpr::leaf(box1),
            ],
            4usize,
        ),
    ];
    let gamma = 0.8;
    let tol = 1e-5;
    let mut csv = String::from("case,links,probes,max_abs_deviation\n");
    let mut details = Vec::new();
    let mut ok = true;
    for (idx, (name, links, probes)) in cases.into_iter().enumerate() {
        let count = links.len();
        let expr = OperatorExpr::chain(gamma, links)?;
        let dim = expr.dim();
        let mut rng = Rng::new(derive_seed(8801, idx as u64));
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let y = Vector::new(rng.in_ball(dim, 1.5))?;
            let direct = resolvent(&expr, &ResolventQuery::new(gamma, y.clone())?, &opts)?;
            let searched = inclusion_oracle(&expr, gamma, &y, &grid)?;
            worst = worst.max(direct.sub(&searched).norm());
        }
        csv.push_str(&format!("{},{},{},{}\n", name, count, probes, worst));
        details.push(format!("{name}: max deviation {worst:.3e}"));
        if worst > tol {
            ok = false;
        }
    }
    write_text(&dir.join("chain_oracle.csv"), &csv)?;
    Ok(CriterionResult {
        criterion: 8,
        name: "chain-oracle-agreement".to_string(),
        status: verdict(ok),
        details,
    })
}

fn criterion_9(dir: &Path, _threads: usize) -> Result<CriterionResult, CliError> {
    let map = LinearMap::identity(1);
    let target = Atom::scaled_identity(1, 1.0)?;
    let x = Vector::from_slice(&[1.0])?;
    let xs = Vector::from_slice(&[0.5])?;
    let single = fitzpatrick_check(&map, &target, 1.0, &x, &xs, 600, 9901)?;

    let xa = Vector::from_slice(&[0.7])?;
    let xsa = Vector::from_slice(&[-0.4])?;
    let average =
        fitzpatrick_average_check(&[(0.3, 1.0), (0.7, 2.0)], 1, 0.8, &xa, &xsa, 600, 9902)?;

    let origin = Vector::zeros(1);
    let trivial = fitzpatrick_check(&map, &target, 1.0, &origin, &origin, 200, 9903)?;

    let ok = single.violation <= 1e-8
        && average.violation <= 1e-8
        && trivial.violation <= 1e-8;
    let doc = serde_json::json!({
        "composition_case": single,
        "average_case": average,
        "origin_case": trivial,
    });
    write_text(&dir.join("fitzpatrick.json"), &pretty_json(&doc))?;
    Ok(CriterionResult {
        criterion: 9,
        name: "fitzpatrick-inequalities".to_string(),
        status: verdict(ok),
        details: vec![
            format!(
                "composition case: sampled sup minus bound {:.3e} (slack 1e-8)",
                single.violation
            ),
            format!(
                "average case: sampled sup minus bound {:.3e} (slack 1e-8)",
                average.violation
            ),
            format!(
                "origin case: sampled sup minus bound {:.3e} (slack 1e-8)",
                trivial.violation
            ),
        ],
    })
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<(), CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::Experiment(format!("cannot list {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry =
            entry.map_err(|e| CliError::Experiment(format!("cannot list {}: {e}", dir.display())))?;
        paths.push(entry.path());
    }
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect_files(&path, base, out)?;
        } else {
            let rel = path
                .strip_prefix(base)
                .expect("path under base")
                .to_string_lossy()
                .into_owned();
            let bytes = std::fs::read(&path)
                .map_err(|e| CliError::Experiment(format!("cannot read {}: {e}", path.display())))?;
            out.push((rel, bytes));
        }
    }
    Ok(())
}

fn criterion_10(dir: &Path, threads: usize) -> Result<CriterionResult, CliError> {
    let mut trees = Vec::new();
    for rep in ["rep1", "rep2"] {
        let rep_dir = dir.join(rep);
        std::fs::create_dir_all(&rep_dir)
            .map_err(|e| CliError::Experiment(format!("cannot create {}: {e}", rep_dir.display())))?;
        let result = criterion_5_impl(&rep_dir)?;
        write_text(&rep_dir.join("result.json"), &pretty_json(&result))?;
        let sweeps = run_canned(CANNED_SWEEPS, "config.json", &rep_dir, threads)?;
        if sweeps.iter().any(|(s, _)| s.status != "ok") {
            return Err(CliError::Experiment(
                "determinism replay sweep failed".to_string(),
            ));
        }
        let mut files = Vec::new();
        collect_files(&rep_dir, &rep_dir, &mut files)?;
        trees.push(files);
    }
    let [first, second] = [&trees[0], &trees[1]];
    let mut ok = first.len() == second.len();
    let mut details = vec![format!(
        "replayed {} files twice",
        first.len()
    )];
    if ok {
        for ((na, ba), (nb, bb)) in first.iter().zip(second.iter()) {
            if na != nb || ba != bb {
                ok = false;
                details.push(format!("file {na} differs between replays"));
            }
        }
    } else {
        details.push("replays produced different file sets".to_string());
    }
    if ok {
        details.push("all replayed artifacts are byte-identical".to_string());
    }
    Ok(CriterionResult {
        criterion: 10,
        name: "replay-determinism".to_string(),
        status: verdict(ok),
        details,
    })
}

type CriterionFn = fn(&Path, usize) -> Result<CriterionResult, CliError>;

const CRITERIA: [(u32, CriterionFn); 10] = [
    (1, criterion_1),
    (2, criterion_2),
    (3, criterion_3),
    (4, criterion_4),
    (5, criterion_5),
    (6, criterion_6),
    (7, criterion_7),
    (8, criterion_8),
    (9, criterion_9),
    (10, criterion_10),
];

fn parse_criteria(which: &str) -> Result<Vec<u32>, CliError> {
    if which == "all" {
        return Ok((1..=10).collect());
    }
    match which.parse::<u32>() {
        Ok(n) if (1..=10).contains(&n) => Ok(vec![n]),
        _ => Err(CliError::Config(format!(
            "unknown criterion {which:?}: expected 1-10 or \"all\""
        ))),
    }
}

#[derive(Serialize)]
struct ReproSummary {
    artifact_version: String,
    results: Vec<CriterionResult>,
}

/// Replays the bundled verification experiments into `out_dir`.
pub fn repro(which: &str, out_dir: &Path, threads: usize) -> Result<Vec<CriterionResult>, CliError> {
    let ids = parse_criteria(which)?;
    let mut results = Vec::with_capacity(ids.len());
    for id in ids {
        let (_, runner) = CRITERIA[(id - 1) as usize];
        let dir = out_dir.join(format!("criterion-{id:02}"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Experiment(format!("cannot create {}: {e}", dir.display())))?;
        let result = runner(&dir, threads)?;
        write_text(&dir.join("result.json"), &pretty_json(&result))?;
        println!("criterion {id} {}: {}", result.name, result.status);
        results.push(result);
    }
    let summary = ReproSummary {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        results: results.clone(),
    };
    write_text(&out_dir.join("summary.json"), &pretty_json(&summary))?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("criterion {} {}", r.criterion, r.name))
        .collect();
    println!(
        "repro: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        Ok(results)
    } else {
        Err(CliError::Experiment(format!(
            "failed: {}",
            failed.join(", ")
        )))
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: &'a str,
}

fn emit_error(err: &CliError) -> u8 {
    let (class, message, code) = match err {
        CliError::Config(m) => ("config", m, 2),
        CliError::Experiment(m) => ("experiment", m, 3),
    };
    let record = ErrorRecord {
        error: class,
        message,
    };
    eprintln!(
        "{}",
        serde_json::to_string(&record).expect("error record serialization")
    );
    code
}

/// Entry point for the binary; returns the process exit code.
pub fn entry() -> u8 {
    let cli = Cli::parse();
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from("."));
    let threads = cli.threads.unwrap_or(1);
    let outcome = match cli.command {
        Command::Run { config } => {
            let ctx = RunContext {
                out_dir,
                threads,
                seed_override: cli.seed,
            };
            run_config_file(&config, &ctx).map(|_| ())
        }
        Command::Describe { expr } => describe_file(&expr).map(|text| print!("{text}")),
        Command::Repro { criterion } => repro(&criterion, &out_dir, threads).map(|_| ()),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => emit_error(&err),
    }
}
