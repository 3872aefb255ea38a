//! Batch command-line front end.
//!
//! Every command writes its JSON report and a plain-text summary into the
//! output directory under content-hash names (existing files are never
//! overwritten) and prints the summary to stdout.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{self, BaselineError, PolyActivation};
use crate::cascade::{self, CascadeError, CascadeOptions, FitReport, QuadCoeffs, ThresholdMode};
use crate::evaluator::{self, EvalError, EvalRecord};
use crate::fhecost::{self, ActivationDescriptor, CostError, CostReport, TaskShape};
use crate::lift::{self, LiftCache};
use crate::model_io::{self, CalibrationSet, Dataset, ModelError, ModelKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_DIMENSION: i32 = 3;
pub const EXIT_NOT_EXACT: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "quadrelu", version, about = "Decision-preserving quadratic replacement of ReLU in MLP heads")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for reports.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ThresholdArg {
    FixedZero,
    Free,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineMethod {
    Square,
    Ls,
    Remez,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit shared quadratic coefficients on a calibration set.
    Fit {
        #[arg(long)]
        model: PathBuf,
        /// Calibration features (CSV or JSON).
        #[arg(long)]
        cal: PathBuf,
        /// Explicit calibration targets instead of the ReLU decisions.
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Held-out features for test diagnostics.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Ground-truth labels for the test features.
        #[arg(long)]
        test_labels: Option<PathBuf>,
        #[arg(long, default_value_t = 2026)]
        seed: u64,
        #[arg(long, value_enum, default_value = "fixed-zero")]
        threshold_mode: ThresholdArg,
        #[arg(long)]
        quantize_step: Option<f64>,
        /// Comma-separated descending base caps.
        #[arg(long, value_delimiter = ',')]
        mu_grid: Option<Vec<f64>>,
        /// Comma-separated ascending penalties.
        #[arg(long, value_delimiter = ',')]
        c_grid: Option<Vec<f64>>,
        /// Fail with exit code 4 unless the hard regime is reached.
        #[arg(long)]
        require_exact: bool,
        /// Also write the lifted calibration data to this file.
        #[arg(long)]
        cache_lifts: Option<PathBuf>,
    },
    /// Evaluate a fitted or baseline activation against the ReLU model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Fit report or bare `{alpha, beta, eta}` file.
        #[arg(long, conflicts_with = "poly", required_unless_present = "poly")]
        coeffs: Option<PathBuf>,
        /// Baseline polynomial file.
        #[arg(long)]
        poly: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write per-sample margins as CSV.
        #[arg(long)]
        margins_csv: Option<PathBuf>,
    },
    /// Fit a fixed-interval baseline activation.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Fit interval `a,b`; otherwise taken from `--model` and `--data`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        interval: Option<Vec<f64>>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = baselines::DEFAULT_GRID)]
        grid_size: usize,
    },
    /// CKKS operation counts and minimum feasible parameters.
    Cost {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        k: usize,
        /// `quad`, `square`, `remez-<deg>` or `ls-<deg>`.
        #[arg(long, default_value = "quad")]
        act: String,
        #[arg(long, default_value_t = 1 << 14)]
        ring_degree: usize,
        /// Print the feasibility of every grid configuration.
        #[arg(long)]
        grid: bool,
    },
    /// Print the summary of a previously written report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn model_code(e: &ModelError) -> i32 {
    match e {
        ModelError::DimensionMismatch { .. } => EXIT_DIMENSION,
        ModelError::Io { .. } => EXIT_IO,
        _ => EXIT_SCHEMA,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new(model_code(&e), e.to_string())
    }
}

impl From<CascadeError> for CliError {
    fn from(e: CascadeError) -> Self {
        let code = match &e {
            CascadeError::Model(m) => model_code(m),
            CascadeError::Eval(EvalError::Model(m)) => model_code(m),
            CascadeError::Eval(EvalError::LengthMismatch { .. }) => EXIT_DIMENSION,
            CascadeError::SingleClassCalibration | CascadeError::InvalidOptions(_) | CascadeError::InvalidStep(_) => {
                EXIT_SCHEMA
            }
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::LengthMismatch { .. } => Self::new(EXIT_DIMENSION, e.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        Self::new(EXIT_SCHEMA, e.to_string())
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        Self::new(EXIT_SCHEMA, e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

/// Writes `<stem>-<hash>.json` and `.txt`; identical content maps to the
/// same names and is left untouched.
fn write_outputs(dir: &Path, stem: &str, json: &str, summary: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let digest = Sha256::digest(json.as_bytes());
    let tag = &hex::encode(digest)[..16];
    let json_path = dir.join(format!("{stem}-{tag}.json"));
    let txt_path = dir.join(format!("{stem}-{tag}.txt"));
    for (path, body) in [(&json_path, json), (&txt_path, summary)] {
        if !path.exists() {
            std::fs::write(path, body).map_err(|e| io_err(path, e))?;
        }
    }
    Ok(json_path)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn opt_f(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn opt_u(v: Option<usize>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

pub fn fit_summary(r: &FitReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "fit report (schema {})", r.schema_version);
    let rows: Vec<(&str, String)> = vec![
        ("kind", r.kind.name().into()),
        ("regime", r.regime.to_string()),
        ("alpha", format!("{:.9}", r.coeffs.alpha)),
        ("beta", format!("{:.9}", r.coeffs.beta)),
        ("eta", format!("{:.9}", r.coeffs.eta)),
        (
            "threshold",
            format!(
                "{} ({:.9})",
                match r.threshold_mode {
                    ThresholdMode::FixedZero => "fixed_zero",
                    ThresholdMode::Free => "free",
                },
                r.threshold
            ),
        ),
        ("exact", r.exact.to_string()),
        ("n_c", r.n_c.to_string()),
        ("pairs", opt_u(r.pair_count)),
        ("cal agr (%)", format!("{:.2}", r.cal_agreement)),
        ("cal mism.", r.cal_mismatches.to_string()),
        ("test agr (%)", opt_f(r.test.as_ref().map(|t| t.agreement))),
        ("test mism.", opt_u(r.test.as_ref().map(|t| t.mismatches))),
        ("test acc (%)", opt_f(r.test.as_ref().and_then(|t| t.accuracy))),
        ("norm. marg.", format!("{:.6e}", r.normalized_margin)),
        ("slack count", opt_u(r.slack_count)),
        ("slack sum", opt_f(r.slack_sum)),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<14}{v}");
    }
    if let Some(q) = &r.quantization {
        let _ = writeln!(
            s,
            "quantized     step {} certified {} mismatches {}",
            q.step, q.certified, q.mismatches
        );
    }
    if !r.selection_trace.is_empty() {
        let _ = writeln!(s, "\n{:<9}{:>10}{:>14}{:>10}{:>12}  sel", "param", "value", "norm. marg.", "agr (%)", "slack sum");
        for e in &r.selection_trace {
            let _ = writeln!(
                s,
                "{:<9}{:>10}{:>14.4e}{:>10.2}{:>12}  {}",
                e.parameter,
                e.value,
                e.normalized_margin,
                e.cal_agreement,
                opt_f(e.slack_sum),
                if e.selected { "*" } else { "" }
            );
        }
    }
    s
}

pub fn eval_summary(r: &EvalRecord) -> String {
    let mut s = String::from("eval report\n");
    let _ = writeln!(s, "{:<14}{}", "n", r.decisions.len());
    let _ = writeln!(s, "{:<14}{:.2}", "agr (%)", r.agreement_vs_relu);
    let _ = writeln!(s, "{:<14}{}", "mismatches", r.mismatch_indices.len());
    let _ = writeln!(s, "{:<14}{}", "acc (%)", opt_f(r.accuracy_vs_labels));
    let _ = writeln!(s, "{:<14}{}", "macro-F1", opt_f(r.macro_f1));
    s
}

pub fn cost_summary(r: &CostReport, grid: bool) -> String {
    let mut s = String::from("ckks cost report\n");
    let rows: Vec<(&str, String)> = vec![
        ("shape", format!("d={} m={} K={} N={}", r.shape.d, r.shape.m, r.shape.k, r.shape.ring_degree)),
        ("activation", r.activation.name.clone()),
        ("batch", r.batch.to_string()),
        ("enc", r.encryptions.to_string()),
        ("ct-ct", r.ctct.to_string()),
        ("ct-pt", r.ctpt.to_string()),
        ("rotations", r.rotations.to_string()),
        ("rescales", r.rescales.to_string()),
        ("depth", r.total_depth.to_string()),
        (
            "min config",
            r.feasible_config
                .map_or_else(|| "none".into(), |c| format!("N=2^{} depth {} logQ {}", c.ring_degree.trailing_zeros(), c.depth, c.log_q)),
        ),
        (
            "chain",
            r.modulus_chain
                .as_ref()
                .map_or_else(|| "-".into(), |c| format!("{c:?}")),
        ),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<12}{v}");
    }
    if grid {
        let _ = writeln!(s, "\n{:<8}{:>6}{:>7}  feasible", "N", "depth", "logQ");
        for (c, ok) in fhecost::feasibility_grid(&r.activation) {
            let _ = writeln!(s, "2^{:<6}{:>6}{:>7}  {}", c.ring_degree.trailing_zeros(), c.depth, c.log_q, ok);
        }
    }
    s
}

pub fn poly_summary(p: &PolyActivation) -> String {
    let mut s = String::from("baseline activation\n");
    let _ = writeln!(s, "{:<12}{:?}", "method", p.method);
    let _ = writeln!(s, "{:<12}{}", "degree", p.degree());
    let _ = writeln!(s, "{:<12}[{}, {}]", "interval", p.interval[0], p.interval[1]);
    let _ = writeln!(s, "{:<12}{:.6e}", "max error", p.max_error);
    for (k, c) in p.coefficients.iter().enumerate() {
        let _ = writeln!(s, "c{k:<11}{c:.12e}");
    }
    s
}

fn load_features(path: &Path) -> Result<Dataset, CliError> {
    Ok(model_io::load_dataset(path)?)
}

fn cmd_fit(cli: &Cli) -> Result<i32, CliError> {
    let Command::Fit {
        model,
        cal,
        targets,
        test,
        test_labels,
        seed,
        threshold_mode,
        quantize_step,
        mu_grid,
        c_grid,
        require_exact,
        cache_lifts,
    } = &cli.command
    else {
        unreachable!()
    };
    let model = model_io::load_model(model)?;
    let cal_data = load_features(cal)?;
    let cal_set = match targets {
        Some(p) => CalibrationSet::with_targets(&model, cal_data.features, model_io::load_labels(p)?)?,
        None => CalibrationSet::from_relu(&model, cal_data.features)?,
    };
    let mut opts = CascadeOptions {
        seed: *seed,
        threshold_mode: match threshold_mode {
            ThresholdArg::FixedZero => ThresholdMode::FixedZero,
            ThresholdArg::Free => ThresholdMode::Free,
        },
        quantize_step: *quantize_step,
        ..Default::default()
    };
    if let Some(g) = mu_grid {
        opts.mu_grid = g.clone();
    }
    if let Some(g) = c_grid {
        opts.c_grid = g.clone();
    }
    if let Some(path) = cache_lifts {
        let preacts = model.preactivations(&cal_set.features)?;
        let cache = match model.kind() {
            ModelKind::Binary => LiftCache::Binary(lift::binary_lift(&model, &preacts, &cal_set.targets)?),
            ModelKind::Multiclass => {
                let stats = lift::class_stats(&model, &preacts)?;
                LiftCache::Pairwise(lift::pairwise_lifts(&stats, &cal_set.targets)?)
            }
        };
        cache.save(path).map_err(|e| io_err(path, e))?;
    }
    let mut report = cascade::fit(&model, &cal_set, &opts)?;
    if let Some(tp) = test {
        let ds = load_features(tp)?;
        let labels = match test_labels {
            Some(p) => Some(model_io::load_labels(p)?),
            None => ds.labels.clone(),
        };
        cascade::attach_test(&mut report, &model, &ds.features, labels.as_deref())?;
    }
    let summary = fit_summary(&report);
    write_outputs(&cli.out, "fit", &to_json(&report), &summary)?;
    print!("{summary}");
    if *require_exact && !report.exact {
        eprintln!("error: exact preservation required but regime is {}", report.regime);
        return Ok(EXIT_NOT_EXACT);
    }
    Ok(EXIT_OK)
}

/// Reads either a full fit report or bare coefficients.
fn load_coeffs(path: &Path) -> Result<(QuadCoeffs, f64), CliError> {
    let text = read_text(path)?;
    if let Ok(r) = serde_json::from_str::<FitReport>(&text) {
        return Ok((r.coeffs, r.threshold));
    }
    serde_json::from_str::<QuadCoeffs>(&text)
        .map(|c| (c, 0.0))
        .map_err(|e| CliError::new(EXIT_SCHEMA, format!("{}: {e}", path.display())))
}

fn cmd_eval(cli: &Cli) -> Result<i32, CliError> {
    let Command::Eval {
        model,
        coeffs,
        poly,
        data,
        labels,
        margins_csv,
    } = &cli.command
    else {
        unreachable!()
    };
    let model = model_io::load_model(model)?;
    let ds = load_features(data)?;
    let labels = match labels {
        Some(p) => Some(model_io::load_labels(p)?),
        None => ds.labels.clone(),
    };
    let record = match (coeffs, poly) {
        (Some(c), _) => {
            let (q, thr) = load_coeffs(c)?;
            evaluator::eval_record(&model, &q, &ds.features, thr, labels.as_deref())?
        }
        (None, Some(p)) => {
            let text = read_text(p)?;
            let act: PolyActivation = serde_json::from_str(&text)
                .map_err(|e| CliError::new(EXIT_SCHEMA, format!("{}: {e}", p.display())))?;
            evaluator::eval_record(&model, &act, &ds.features, 0.0, labels.as_deref())?
        }
        (None, None) => return Err(CliError::new(EXIT_SCHEMA, "one of --coeffs or --poly is required")),
    };
    if let Some(path) = margins_csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        w.write_record(["index", "decision", "margin"]).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        for (i, (d, m)) in record.decisions.iter().zip(&record.per_sample_margin).enumerate() {
            w.write_record([i.to_string(), d.to_string(), m.to_string()])
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
    }
    let summary = eval_summary(&record);
    write_outputs(&cli.out, "eval", &to_json(&record), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_baseline(cli: &Cli) -> Result<i32, CliError> {
    let Command::Baseline {
        method,
        degree,
        interval,
        model,
        data,
        grid_size,
    } = &cli.command
    else {
        unreachable!()
    };
    let act = if let BaselineMethod::Square = method {
        baselines::square_activation()
    } else {
        let iv = match (interval, model, data) {
            (Some(v), _, _) => match v[..] {
                [a, b] => [a, b],
                _ => return Err(CliError::new(EXIT_SCHEMA, "--interval takes exactly two values `a,b`")),
            },
            (None, Some(m), Some(d)) => {
                let model = model_io::load_model(m)?;
                let ds = load_features(d)?;
                baselines::empirical_interval(&model.preactivations(&ds.features)?)?
            }
            _ => {
                return Err(CliError::new(EXIT_SCHEMA, "give --interval or both --model and --data"));
            }
        };
        match method {
            BaselineMethod::Ls => baselines::fit_least_squares(*degree, iv, *grid_size)?,
            _ => baselines::fit_remez(*degree, iv, *grid_size)?,
        }
    };
    let summary = poly_summary(&act);
    write_outputs(&cli.out, "baseline", &to_json(&act), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_cost(cli: &Cli) -> Result<i32, CliError> {
    let Command::Cost {
        d,
        m,
        k,
        act,
        ring_degree,
        grid,
    } = &cli.command
    else {
        unreachable!()
    };
    let shape = TaskShape::new(*d, *m, *k, *ring_degree)?;
    let act = ActivationDescriptor::parse(act)?;
    let report = fhecost::op_counts(&shape, &act)?;
    let summary = cost_summary(&report, *grid);
    write_outputs(&cli.out, "cost", &to_json(&report), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_report(input: &Path) -> Result<i32, CliError> {
    let text = read_text(input)?;
    let summary = if let Ok(r) = serde_json::from_str::<FitReport>(&text) {
        fit_summary(&r)
    } else if let Ok(r) = serde_json::from_str::<EvalRecord>(&text) {
        eval_summary(&r)
    } else if let Ok(r) = serde_json::from_str::<CostReport>(&text) {
        cost_summary(&r, false)
    } else if let Ok(r) = serde_json::from_str::<PolyActivation>(&text) {
        poly_summary(&r)
    } else {
        return Err(CliError::new(EXIT_SCHEMA, format!("{}: not a known report", input.display())));
    };
    print!("{summary}");
    Ok(EXIT_OK)
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: &Cli) -> i32 {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Fit { .. } => cmd_fit(cli),
        Command::Eval { .. } => cmd_eval(cli),
        Command::Baseline { .. } => cmd_baseline(cli),
        Command::Cost { .. } => cmd_cost(cli),
        Command::Report { input } => cmd_report(input),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Parses arguments (including the program name) and runs.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_SCHEMA
            } else {
                EXIT_OK
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_command_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = run_from(["quadrelu", "--out", out, "cost", "--d", "93", "--m", "256", "--k", "9", "--act", "quad"]);
        assert_eq!(code, EXIT_OK);
        let json = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|e| e == "json"))
            .unwrap();
        let r: CostReport = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!((r.encryptions, r.ctpt), (1, 139));
    }

    #[test]
    fn missing_model_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_from([
            "quadrelu",
            "--out",
            dir.path().to_str().unwrap(),
            "fit",
            "--model",
            "/nonexistent/m.json",
            "--cal",
            "/nonexistent/c.csv",
        ]);
        assert_eq!(code, EXIT_IO);
    }

    #[test]
    fn bad_arguments_are_schema_errors() {
        assert_eq!(run_from(["quadrelu", "cost", "--d", "x"]), EXIT_SCHEMA);
    }
}
