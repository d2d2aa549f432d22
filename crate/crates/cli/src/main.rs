use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use miml_core::bench::{run_bench, BenchConfig, CSV_HEADER};
use miml_core::fit::{cross_validate, evaluate_model, fit, fold_columns, summarize};
use miml_core::io::{
    load_dataset, load_model, metrics_to_json, read_predictions, save_dataset, save_model,
    write_predictions,
};
use miml_core::metrics::{evaluate, BagTruth, CoverageMode};
use miml_core::synth::{generate_synthetic, CardinalityDist, Geometry, SynthSpec};
use miml_core::train::Backtracking;
use miml_core::{
    predict_dataset, CvOptions, Dataset, Engine, KernelOptions, MimlError, PredictMode, TrainConfig,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "miml",
    version,
    about = "Instance annotation for multi-instance multi-label data"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model by EM.
    Train(TrainCmd),
    /// Predict instance labels, bag labels and bag scores.
    Predict(PredictCmd),
    /// Compute the metric report of a model or of a predictions file.
    Evaluate(EvaluateCmd),
    /// k-fold cross-validation with a fixed iteration count.
    Cv(CvCmd),
    /// Write a synthetic dataset.
    Generate(GenerateCmd),
    /// Time the posterior engines over bag sizes and label cardinalities.
    Bench(BenchCmd),
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// L2 penalty on all weights, bias included.
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    /// Fraction of bags sampled per iteration (stochastic EM below 1).
    #[arg(long, default_value_t = 1.0)]
    sample_frac: f64,
    /// Fraction of the costliest bags dropped before training.
    #[arg(long, default_value_t = 0.0)]
    prune_frac: f64,
    /// Train on RBF kernel features.
    #[arg(long)]
    kernel: bool,
    /// Kernel width multiplier on the mean pairwise squared distance.
    #[arg(long, requires = "kernel")]
    kernel_s: Option<f64>,
    /// Fraction of training instances kept as kernel anchors.
    #[arg(long, requires = "kernel")]
    dict_frac: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Fast)]
    engine: EngineArg,
    /// Maximum backtracking steps per M-step.
    #[arg(long, default_value_t = 50)]
    bt_max_steps: usize,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            em_iterations: self.iters,
            line_search: Backtracking {
                max_steps: self.bt_max_steps,
                ..Backtracking::default()
            },
            l2_lambda: self.l2,
            sample_fraction: self.sample_frac,
            prune_fraction: self.prune_frac,
            rng_seed: self.seed,
            engine: self.engine.into(),
        }
    }

    fn kernel(&self) -> Option<KernelOptions> {
        self.kernel.then(|| KernelOptions {
            scale_s: self.kernel_s.unwrap_or(1.0),
            dict_fraction: self.dict_frac.unwrap_or(1.0),
        })
    }
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Also write the per-iteration trace (includes wall times) as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Load the dataset even if validation reports fatal findings.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct PredictCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Inductive)]
    mode: ModeArg,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    model: Option<PathBuf>,
    /// Evaluate a predictions file written by `predict` instead of a model.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = CoverageArg::Normalized)]
    coverage: CoverageArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct CvCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[command(flatten)]
    opts: TrainOpts,
    /// Seed of the fold shuffle (default: the training seed).
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Also train the supervised reference on true instance labels.
    #[arg(long)]
    sisl: bool,
    #[arg(long, value_enum, default_value_t = CoverageArg::Normalized)]
    coverage: CoverageArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct GenerateCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    bags: usize,
    #[arg(long, default_value_t = 3)]
    min_instances: usize,
    #[arg(long, default_value_t = 8)]
    max_instances: usize,
    #[arg(long, default_value_t = 1)]
    min_labels: usize,
    #[arg(long, default_value_t = 3)]
    max_labels: usize,
    /// Radius of the class means (ring: spacing of the annuli).
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = GeometryArg::GaussianClusters)]
    geometry: GeometryArg,
    /// Draw label-set sizes geometrically with this ratio instead of uniformly.
    #[arg(long)]
    geometric_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchCmd {
    #[arg(long, value_enum, default_value_t = EngineArg::Fast)]
    engine: EngineArg,
    #[arg(long, value_delimiter = ',', default_values_t = vec![8, 16, 32, 64, 128])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3])]
    cards: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    bags: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EngineArg {
    Forward,
    Fast,
    Brute,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Engine {
        match e {
            EngineArg::Forward => Engine::Forward,
            EngineArg::Fast => Engine::Fast,
            EngineArg::Brute => Engine::Brute,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Inductive,
    Transductive,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum CoverageArg {
    Normalized,
    Raw,
}

impl From<CoverageArg> for CoverageMode {
    fn from(c: CoverageArg) -> CoverageMode {
        match c {
            CoverageArg::Normalized => CoverageMode::Normalized,
            CoverageArg::Raw => CoverageMode::Raw,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum GeometryArg {
    GaussianClusters,
    Ring,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(MimlError),
}

impl From<MimlError> for CliError {
    fn from(e: MimlError) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(MimlError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(MimlError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Core(MimlError::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn path_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).map_err(path_error(p))?)),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path, force: bool) -> CliResult<Dataset> {
    let (ds, report) = load_dataset(path, force)?;
    for f in report.warnings() {
        eprintln!("warning: {f}");
    }
    if force {
        for f in report.fatal() {
            eprintln!("warning (forced): {f}");
        }
    }
    Ok(ds)
}

fn train(cmd: &TrainCmd) -> CliResult<()> {
    let ds = load(&cmd.data, cmd.force)?;
    let cfg = cmd.opts.config();
    let kernel = cmd.opts.kernel();
    let (model, report) = fit(&ds, &cfg, kernel.as_ref())?;
    save_model(&model, &cmd.out)?;
    if let Some(path) = &cmd.trace {
        let json = serde_json::to_string_pretty(&report).map_err(io::Error::from)?;
        std::fs::write(path, json + "\n").map_err(path_error(path))?;
    }
    eprintln!(
        "trained on {} bags ({} pruned), final log-likelihood {:.6}",
        report.bags_used, report.bags_pruned, report.trace.final_log_likelihood
    );
    Ok(())
}

fn predict(cmd: &PredictCmd) -> CliResult<()> {
    let model = load_model(&cmd.model)?;
    let ds = load(&cmd.data, cmd.force)?;
    let mode = match cmd.mode {
        ModeArg::Inductive => PredictMode::Inductive,
        ModeArg::Transductive => PredictMode::Transductive,
    };
    let preds = predict_dataset(&model, &ds, mode)?;
    write_predictions(&preds, output(cmd.out.as_deref())?)?;
    Ok(())
}

fn evaluate_cmd(cmd: &EvaluateCmd) -> CliResult<()> {
    let ds = load(&cmd.data, cmd.force)?;
    let coverage = cmd.coverage.into();
    let mut metrics = BTreeMap::new();
    match (&cmd.model, &cmd.predictions) {
        (Some(m), None) => {
            let model = load_model(m)?;
            let ev = evaluate_model(&model, &ds, coverage)?;
            metrics.extend(ev.model.to_map("model."));
            if let Some(t) = ev.transductive_accuracy {
                metrics.insert("model.transductive_accuracy".into(), t);
            }
            if let Some(d) = ev.dummy {
                metrics.extend(d.to_map("dummy."));
            }
        }
        (None, Some(p)) => {
            let preds = read_predictions(File::open(p).map_err(path_error(p))?)?;
            if let Some((p, b)) = preds.iter().zip(&ds.bags).find(|(p, b)| p.bag_id != b.id) {
                return Err(MimlError::InvalidData(format!(
                    "prediction for bag '{}' where '{}' was expected",
                    p.bag_id, b.id
                ))
                .into());
            }
            let report = evaluate(
                &preds,
                &BagTruth::from_dataset(&ds),
                ds.num_classes,
                coverage,
            )?;
            metrics.extend(report.to_map("model."));
        }
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --model or --predictions".into(),
            ))
        }
    }
    output(cmd.out.as_deref())?.write_all(metrics_to_json(&metrics).as_bytes())?;
    Ok(())
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

fn cv(cmd: &CvCmd) -> CliResult<()> {
    let ds = load(&cmd.data, cmd.force)?;
    let cfg = cmd.opts.config();
    let kernel = cmd.opts.kernel();
    let opts = CvOptions {
        folds: cmd.folds,
        seed: cmd.fold_seed.unwrap_or(cfg.rng_seed),
        coverage: cmd.coverage.into(),
        with_sisl: cmd.sisl,
    };
    let folds = cross_validate(&ds, &cfg, kernel.as_ref(), &opts)?;
    let summary = summarize(&folds);
    let mut out = output(cmd.out.as_deref())?;
    let names: Vec<&str> = summary.iter().map(|(k, _, _)| k.as_str()).collect();
    writeln!(out, "fold,{}", names.join(","))?;
    for f in &folds {
        let cols = fold_columns(f);
        let row: Vec<String> = names
            .iter()
            .map(|n| {
                cols.iter()
                    .find(|(k, _)| k == n)
                    .map_or(String::new(), |(_, v)| fmt_value(*v))
            })
            .collect();
        writeln!(out, "{},{}", f.fold, row.join(","))?;
    }
    let means: Vec<String> = summary.iter().map(|(_, m, _)| fmt_value(*m)).collect();
    let stds: Vec<String> = summary.iter().map(|(_, _, s)| fmt_value(*s)).collect();
    writeln!(out, "mean,{}", means.join(","))?;
    writeln!(out, "std,{}", stds.join(","))?;
    out.flush()?;
    Ok(())
}

fn generate(cmd: &GenerateCmd) -> CliResult<()> {
    let spec = SynthSpec {
        num_classes: cmd.classes,
        feature_dim: cmd.dim,
        num_bags: cmd.bags,
        instances_per_bag: (cmd.min_instances, cmd.max_instances),
        classes_per_bag: (cmd.min_labels, cmd.max_labels),
        separation: cmd.separation,
        noise: cmd.noise,
        geometry: match cmd.geometry {
            GeometryArg::GaussianClusters => Geometry::GaussianClusters,
            GeometryArg::Ring => Geometry::Ring,
        },
        cardinality: match cmd.geometric_ratio {
            Some(ratio) => CardinalityDist::Geometric { ratio },
            None => CardinalityDist::Uniform,
        },
        seed: cmd.seed,
    };
    save_dataset(&generate_synthetic(&spec)?, &cmd.out)?;
    Ok(())
}

fn bench(cmd: &BenchCmd) -> CliResult<()> {
    let cfg = BenchConfig {
        engine: cmd.engine.into(),
        bag_sizes: cmd.sizes.clone(),
        cardinalities: cmd.cards.clone(),
        num_classes: cmd.classes,
        bags_per_point: cmd.bags,
        repeats: cmd.repeats,
        seed: cmd.seed,
    };
    let rows = run_bench(&cfg)?;
    let mut out = output(cmd.out.as_deref())?;
    writeln!(out, "{CSV_HEADER}")?;
    for r in &rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Predict(c) => predict(c),
        Command::Evaluate(c) => evaluate_cmd(c),
        Command::Cv(c) => cv(c),
        Command::Generate(c) => generate(c),
        Command::Bench(c) => bench(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
