//! `modt` command line: train, predict, eval, bench, and plot subcommands
//! over CSV datasets with schema sidecars.
//!
//! Exit code classes: 2 usage, 3 data, 4 training, 5 io.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use modt::search::{BenchProtocol, SearchError};
use modt::viz::{render_gating_plot, render_tree, GatePlotSpec, TreePlotSpec, VizError};
use modt::ndarray::Array2;
use modt::{
    benchmark, load_csv, load_model, one_hot_encode, save_model, train, DataError, Dataset,
    Encoder, FeatureSelection, GateSpec, GatingError, ModelIoError, ModelSelection, MoDTModel,
    PredictError, RawDataset, Schema, TrainConfig, TrainError, TreeError,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;
const EXIT_IO: u8 = 5;

#[derive(Parser)]
#[command(
    name = "modt",
    version,
    about = "Mixture of decision trees: interpretable gated tree ensembles"
)]
struct Cli {
    /// Cap the number of worker threads used for searches and benchmarks.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print per-iteration training progress.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it as versioned JSON.
    Train(TrainArgs),
    /// Predict classes for a dataset; writes a CSV with the chosen expert per row.
    Predict(PredictArgs),
    /// Print accuracy of a model on a labeled dataset.
    Eval(EvalArgs),
    /// Run the benchmark protocol and emit a per-method report.
    Bench(BenchArgs),
    /// Render the gating regions and the expert trees as SVG files.
    Plot(PlotArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum GateArg {
    #[value(name = "2d")]
    TwoD,
    Full,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SelectArg {
    Tree,
    Linear,
    Pca,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModelSelArg {
    Best,
    Last,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset CSV path.
    #[arg(long)]
    dataset: PathBuf,
    /// Schema sidecar path (name=numeric|categorical|target lines).
    #[arg(long)]
    schema: PathBuf,
    /// Output model path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-iteration trace CSV path.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Config file with the same keys as the flags below (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum)]
    gate: Option<GateArg>,
    /// Manual gate feature pair for the 2D gate, e.g. --features 0,2.
    #[arg(long)]
    features: Option<String>,
    /// Feature-selection method for the 2D gate.
    #[arg(long, value_enum)]
    select: Option<SelectArg>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    model_selection: Option<ModelSelArg>,
    #[arg(long)]
    early_stop: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Output predictions CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Search trials per gate variant.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Best configurations kept from each search.
    #[arg(long, default_value_t = 10)]
    k_best: usize,
    /// Test repetitions per kept configuration.
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    experts: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    /// Report CSV output path.
    #[arg(long)]
    out_csv: Option<PathBuf>,
    /// Report Markdown output path.
    #[arg(long)]
    out_md: Option<PathBuf>,
    /// Search trial log CSV output path.
    #[arg(long)]
    trial_log: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Directory the SVG files are written into.
    #[arg(long)]
    out_dir: PathBuf,
    /// Gating-region grid cells per axis.
    #[arg(long, default_value_t = 300)]
    resolution: usize,
}

/// One error type per exit-code class.
enum CliError {
    Usage(String),
    Data(String),
    Training(String),
    Io(String),
}

impl CliError {
    fn class(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Training(_) => EXIT_TRAINING,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Training(m) | CliError::Io(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<GatingError> for CliError {
    fn from(e: GatingError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::InvalidArgs(m) => CliError::Usage(m),
            SearchError::Data(d) => CliError::Data(d.to_string()),
            other => CliError::Training(other.to_string()),
        }
    }
}

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<VizError> for CliError {
    fn from(e: VizError) -> Self {
        match e {
            VizError::NotTwoDGate | VizError::BadResolution(_) => CliError::Usage(e.to_string()),
            VizError::Gating(g) => CliError::Training(g.to_string()),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global();
    }
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args, cli.verbose),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.class())
        }
    }
}

fn load_dataset(dataset: &Path, schema: &Path) -> Result<(Dataset, RawDataset), CliError> {
    let schema = Schema::load(schema)?;
    let raw = load_csv(dataset, &schema)?;
    let ds = one_hot_encode(&raw)?;
    Ok((ds, raw))
}

// --- train -------------------------------------------------------------------

/// Values from a `key=value` config file; command-line flags override them.
#[derive(Default)]
struct FileConfig {
    experts: Option<usize>,
    depth: Option<usize>,
    gate: Option<GateArg>,
    features: Option<String>,
    select: Option<SelectArg>,
    gamma: Option<f64>,
    iterations: Option<usize>,
    seed: Option<u64>,
    model_selection: Option<ModelSelArg>,
    early_stop: Option<bool>,
}

fn parse_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut out = FileConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| {
            CliError::Usage(format!(
                "{} line {}: {what}",
                path.display(),
                lineno + 1
            ))
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad("expected key=value"))?;
        let value = value.trim();
        match key.trim() {
            "experts" => out.experts = Some(value.parse().map_err(|_| bad("bad experts"))?),
            "depth" => out.depth = Some(value.parse().map_err(|_| bad("bad depth"))?),
            "gate" => {
                out.gate = Some(match value {
                    "2d" => GateArg::TwoD,
                    "full" => GateArg::Full,
                    _ => return Err(bad("gate must be 2d or full")),
                })
            }
            "features" => out.features = Some(value.to_string()),
            "select" => {
                out.select = Some(match value {
                    "tree" => SelectArg::Tree,
                    "linear" => SelectArg::Linear,
                    "pca" => SelectArg::Pca,
                    _ => return Err(bad("select must be tree, linear, or pca")),
                })
            }
            "gamma" => out.gamma = Some(value.parse().map_err(|_| bad("bad gamma"))?),
            "iterations" => {
                out.iterations = Some(value.parse().map_err(|_| bad("bad iterations"))?)
            }
            "seed" => out.seed = Some(value.parse().map_err(|_| bad("bad seed"))?),
            "model-selection" => {
                out.model_selection = Some(match value {
                    "best" => ModelSelArg::Best,
                    "last" => ModelSelArg::Last,
                    _ => return Err(bad("model-selection must be best or last")),
                })
            }
            "early-stop" => {
                out.early_stop = Some(value.parse().map_err(|_| bad("bad early-stop"))?)
            }
            other => return Err(bad(&format!("unknown key {other:?}"))),
        }
    }
    Ok(out)
}

fn parse_feature_pair(text: &str) -> Result<(usize, usize), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::Usage(format!(
            "--features expects two comma-separated indices, got {text:?}"
        )));
    }
    let i = parts[0]
        .parse()
        .map_err(|_| CliError::Usage(format!("bad feature index {:?}", parts[0])))?;
    let j = parts[1]
        .parse()
        .map_err(|_| CliError::Usage(format!("bad feature index {:?}", parts[1])))?;
    Ok((i, j))
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let file = match &args.config {
        Some(path) => parse_file_config(path)?,
        None => FileConfig::default(),
    };
    let defaults = TrainConfig::default();
    let gate_arg = args.gate.or(file.gate).unwrap_or(GateArg::TwoD);
    let features = args.features.clone().or(file.features);
    let select = args.select.or(file.select);
    if features.is_some() && select.is_some() {
        return Err(CliError::Usage(
            "--features and --select are mutually exclusive".into(),
        ));
    }
    let gate = match gate_arg {
        GateArg::Full => {
            if features.is_some() {
                return Err(CliError::Usage(
                    "--features only applies to the 2d gate".into(),
                ));
            }
            GateSpec::Full
        }
        GateArg::TwoD => {
            if let Some(text) = &features {
                let (i, j) = parse_feature_pair(text)?;
                GateSpec::TwoD(FeatureSelection::Manual { i, j })
            } else {
                GateSpec::TwoD(match select.unwrap_or(SelectArg::Tree) {
                    SelectArg::Tree => FeatureSelection::TreeImportance,
                    SelectArg::Linear => FeatureSelection::LinearImportance,
                    SelectArg::Pca => FeatureSelection::Pca,
                })
            }
        }
    };
    Ok(TrainConfig {
        n_experts: args.experts.or(file.experts).unwrap_or(defaults.n_experts),
        max_depth: args.depth.or(file.depth).unwrap_or(defaults.max_depth),
        gate,
        gamma: args.gamma.or(file.gamma).unwrap_or(defaults.gamma),
        iterations: args
            .iterations
            .or(file.iterations)
            .unwrap_or(defaults.iterations),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        model_selection: match args.model_selection.or(file.model_selection) {
            Some(ModelSelArg::Best) => ModelSelection::BestTrainingAccuracy,
            Some(ModelSelArg::Last) => ModelSelection::LastIteration,
            None => defaults.model_selection,
        },
        early_stop: args.early_stop || file.early_stop.unwrap_or(false),
    })
}

fn cmd_train(args: &TrainArgs, verbose: bool) -> Result<(), CliError> {
    let config = resolve_train_config(args)?;
    let (dataset, _) = load_dataset(&args.dataset, &args.schema)?;
    let result = train(&dataset, &config)?;
    if verbose {
        for rec in &result.trace.records {
            println!(
                "iteration {:>3}: training accuracy {:.4}",
                rec.iteration, rec.train_accuracy
            );
        }
    }
    save_model(&result.model, &args.out)?;
    if let Some(trace_path) = &args.trace {
        write_file(trace_path, &result.trace.to_csv_string())?;
    }
    let meta = &result.model.train_meta;
    println!(
        "trained {} experts (depth {}) in {} iterations; training accuracy {:.4}; model: {}",
        config.n_experts,
        config.max_depth,
        meta.iterations_run,
        meta.final_train_accuracy,
        args.out.display()
    );
    Ok(())
}

// --- predict / eval -----------------------------------------------------------

/// Encodes raw rows against the model's stored layout (falling back to the
/// model's feature names for models without an encoder).
fn encode_for_model(model: &MoDTModel, raw: &RawDataset) -> Result<Array2<f64>, CliError> {
    let fallback;
    let encoder = match &model.encoder {
        Some(e) => e,
        None => {
            fallback = Encoder::all_numeric(&model.feature_names);
            &fallback
        }
    };
    let x = encoder.encode(raw)?;
    if x.ncols() != model.n_features() {
        return Err(CliError::Data(format!(
            "input has {} features but the model was trained on {}",
            x.ncols(),
            model.n_features()
        )));
    }
    Ok(x)
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let schema = Schema::load(&args.schema)?;
    let raw = load_csv(&args.dataset, &schema)?;
    let x = encode_for_model(&model, &raw)?;
    let predictions = model.predict_with_experts(&x)?;
    let mut writer = csv::Writer::from_path(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    writer
        .write_record(["row", "predicted_class", "expert"])
        .and_then(|_| {
            for (i, (class, expert)) in predictions.iter().enumerate() {
                writer.write_record([
                    i.to_string(),
                    model.class_names[*class].clone(),
                    expert.to_string(),
                ])?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    println!("wrote {} predictions to {}", predictions.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let schema = Schema::load(&args.schema)?;
    let raw = load_csv(&args.dataset, &schema)?;
    let labels = raw
        .labels
        .as_ref()
        .ok_or_else(|| CliError::Data(DataError::MissingTarget.to_string()))?;
    let x = encode_for_model(&model, &raw)?;
    let y: Result<Vec<usize>, CliError> = labels
        .iter()
        .map(|l| {
            model
                .class_names
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| CliError::Data(DataError::UnknownLabel(l.clone()).to_string()))
        })
        .collect();
    let y = y?;
    let pred = model.predict(&x)?;
    let correct = pred.iter().zip(&y).filter(|(a, b)| a == b).count();
    println!("accuracy {:.4}", correct as f64 / y.len() as f64);
    Ok(())
}

// --- bench ---------------------------------------------------------------------

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let (dataset, _) = load_dataset(&args.dataset, &args.schema)?;
    let name = args
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let protocol = BenchProtocol {
        n_trials: args.trials,
        k_best: args.k_best,
        n_reps: args.reps,
        n_experts: args.experts,
        max_depth: args.depth,
        seed: args.seed,
        ..BenchProtocol::default()
    };
    let report = benchmark(&name, &dataset, &protocol)?;
    print!("{}", report.to_markdown());
    if let Some(path) = &args.out_csv {
        write_file(path, &report.to_csv_string())?;
    }
    if let Some(path) = &args.out_md {
        write_file(path, &report.to_markdown())?;
    }
    if let Some(path) = &args.trial_log {
        write_file(path, &report.trial_log_csv)?;
    }
    Ok(())
}

// --- plot ------------------------------------------------------------------------

fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let (dataset, _) = load_dataset(&args.dataset, &args.schema)?;
    if dataset.n_features() != model.n_features() {
        return Err(CliError::Data(format!(
            "dataset has {} features but the model was trained on {}",
            dataset.n_features(),
            model.n_features()
        )));
    }
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let stem = args
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());

    for (j, tree) in model.trees.iter().enumerate() {
        let svg = render_tree(&TreePlotSpec {
            tree,
            class_names: &model.class_names,
            feature_names: &model.feature_names,
            class_palette: None,
        });
        let path = args.out_dir.join(format!("{stem}_tree{j}.svg"));
        write_file(&path, &svg)?;
        println!("wrote {}", path.display());
    }

    let mut spec = GatePlotSpec::new(&model, &dataset);
    spec.resolution = args.resolution;
    match render_gating_plot(&spec) {
        Ok(svg) => {
            let path = args.out_dir.join(format!("{stem}_gate.svg"));
            write_file(&path, &svg)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Err(VizError::NotTwoDGate) => Err(CliError::Usage(format!(
            "{} (tree plots were written to {})",
            VizError::NotTwoDGate,
            args.out_dir.display()
        ))),
        Err(e) => Err(e.into()),
    }
}
