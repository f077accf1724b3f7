//! Command-line front end: reproducible training, evaluation, studies, and
//! exports for memory-associated differential models.
//!
//! Every run writes a `resolved_config.json` next to its outputs; feeding
//! that file back through `--config` reproduces the run (only `--out` and
//! the `MAD_SEED` environment variable still apply). Exit codes: 0 on
//! success, 1 for usage errors, 2 for data problems, 3 for numeric
//! failures.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mad_core::rng::tags;
use mad_core::{
    export_embeddings, export_metrics, fit, generate_sbm, hits_at_k, karate, load_edge_list,
    load_model, load_unary_csv, mean_predictor_mse, predict_unary, run_ablation, sample_negatives,
    save_model, train_unary, Ablation, AblationCellResult, AblationConfig, AblationGrid,
    AggregatorChoice, ErrorCategory, EvalSetup, EvalSplit, Graph, HitsByMode,
    LinkModel, LoadOptions, LossReport, MadConfig, MadError, ParamStore, RefMode, Rng,
    SentinelConfig, SplitSpec, TrainConfig, UnaryConfig, UnaryModel, UnaryRefMode,
    UnaryTrainConfig,
};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap's own exit code for usage problems is 2; the contract
            // here reserves 2 for data errors and uses 1 for usage.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e.category() {
                ErrorCategory::Data => ExitCode::from(2),
                ErrorCategory::Numeric => ExitCode::from(3),
            }
        }
    }
}

enum Failure {
    Usage(String),
    Core(MadError),
}

impl From<MadError> for Failure {
    fn from(e: MadError) -> Self {
        Failure::Core(e)
    }
}

#[derive(Parser)]
#[command(
    name = "mad",
    version,
    about = "Link prediction and scalar regression from memorized facts plus learned differences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a link model; writes metrics.json, model.bin, resolved_config.json
    Train(TrainArgs),
    /// Evaluate a saved model on a freshly split dataset
    Eval(EvalArgs),
    /// Run a study grid of ablations or aggregators across seeds
    Ablate(AblateArgs),
    /// Train on a whole graph and export positions and differentials as CSV
    ExportEmbeddings(ExportArgs),
    /// Scalar-regression demo: memorize a sampled line, beat the mean predictor
    UnaryDemo(UnaryArgs),
    /// Print a node's nearest neighbours in a saved model's position space
    Knn(KnnArgs),
}

// ---------------------------------------------------------------------------
// Shared flag groups
// ---------------------------------------------------------------------------

#[derive(Args, Clone)]
struct OutArgs {
    /// Output directory (default mad-out; created if missing)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replay a resolved_config.json from an earlier run of this command.
    /// All other flags except --out are ignored; MAD_SEED still applies.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SeedArg {
    /// Base seed for every random stream; the MAD_SEED environment
    /// variable overrides this flag
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Built-in dataset (karate | sbm) or a path to an edge-list file
    #[arg(long, default_value = "karate")]
    dataset: String,
    /// Treat file edges as directed
    #[arg(long)]
    directed: bool,
    /// Drop self-loop lines in files instead of rejecting them
    #[arg(long)]
    allow_self_loops: bool,
    /// Seed for synthetic dataset generation (kept separate from --seed so
    /// studies vary the model, not the graph)
    #[arg(long, default_value_t = 0)]
    dataset_seed: u64,
    #[arg(long, default_value_t = 200)]
    sbm_nodes: usize,
    #[arg(long, default_value_t = 2)]
    sbm_blocks: usize,
    #[arg(long, default_value_t = 0.15)]
    sbm_p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    sbm_p_out: f64,
}

impl DataArgs {
    fn to_spec(&self) -> DatasetSpec {
        DatasetSpec {
            source: self.dataset.clone(),
            directed: self.directed,
            allow_self_loops: self.allow_self_loops,
            dataset_seed: self.dataset_seed,
            sbm_nodes: self.sbm_nodes,
            sbm_blocks: self.sbm_blocks,
            sbm_p_in: self.sbm_p_in,
            sbm_p_out: self.sbm_p_out,
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Encoding dimension per head
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// References sampled per side of each query
    #[arg(long, default_value_t = 8)]
    k_refs: usize,
    /// Sentinel count (used by the sentinel aggregator)
    #[arg(long, default_value_t = 8)]
    sentinels: usize,
    #[arg(long, default_value_t = 1.0)]
    sentinel_distance: f64,
    #[arg(long, value_enum, default_value_t = AggregatorArg::Sentinel)]
    aggregator: AggregatorArg,
    #[arg(long, value_enum, default_value_t = AblationArg::Full)]
    ablation: AblationArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    train_mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ModeArg::DynamicNn)]
    eval_mode: ModeArg,
    /// Preset for large drug-interaction graphs: 12 heads of dimension 12
    /// (overrides --dim and --heads). Expect hours of runtime on a full
    /// ~4300-node graph.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
}

impl ModelArgs {
    fn to_config(&self) -> MadConfig {
        let (mut dim, mut heads) = (self.dim, self.heads);
        if let Some(PresetArg::Ddi) = self.preset {
            dim = 12;
            heads = 12;
        }
        let (aggregator, sentinels) = AggregatorChoice::from(self.aggregator).to_model(
            &SentinelConfig {
                count: self.sentinels,
                distance: self.sentinel_distance,
                value: 0.0,
            },
        );
        MadConfig {
            dim,
            heads,
            k_refs: self.k_refs,
            share_tables: None,
            sentinels,
            aggregator,
            ablation: self.ablation.into(),
            train_mode: self.train_mode.into(),
            eval_mode: self.eval_mode.into(),
        }
    }
}

#[derive(Args, Clone)]
struct OptimArgs {
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    /// Negatives sampled per positive in each training epoch
    #[arg(long, default_value_t = 1)]
    neg_ratio: usize,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
}

#[derive(Args, Clone)]
struct ProtocolArgs {
    /// Evaluate every N epochs (0: only after the final epoch)
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// Comma-separated train,valid,test fractions
    #[arg(long, default_value = "0.9,0.05,0.05", value_parser = parse_split)]
    split: SplitFractions,
    /// Fixed negative pairs scored at every evaluation
    #[arg(long, default_value_t = 200)]
    eval_negatives: usize,
    #[arg(long, default_value_t = 10)]
    hits_k: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SplitFractions([f64; 3]);

fn parse_split(s: &str) -> Result<SplitFractions, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated fractions, e.g. 0.9,0.05,0.05".into());
    }
    let mut f = [0.0; 3];
    for (slot, part) in f.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("{part:?}: {e}"))?;
    }
    Ok(SplitFractions(f))
}

impl SplitFractions {
    fn to_spec(self) -> mad_core::Result<SplitSpec> {
        SplitSpec::new(self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AggregatorArg {
    Mean,
    Softmin,
    Sentinel,
}

impl From<AggregatorArg> for AggregatorChoice {
    fn from(a: AggregatorArg) -> Self {
        match a {
            AggregatorArg::Mean => AggregatorChoice::Mean,
            AggregatorArg::Softmin => AggregatorChoice::Softmin,
            AggregatorArg::Sentinel => AggregatorChoice::Sentinel,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Full,
    Nograd,
    Nomem,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::Nograd => Ablation::NoGrad,
            AblationArg::Nomem => Ablation::NoMem,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Random,
    DynamicNn,
}

impl From<ModeArg> for RefMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Random => RefMode::Random,
            ModeArg::DynamicNn => RefMode::DynamicNn,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Ddi,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum GridArg {
    /// Full model vs. memory-only vs. differential-only
    Memory,
    /// Mean vs. softmin vs. softmin-with-sentinels pooling
    Aggregators,
}

// ---------------------------------------------------------------------------
// Subcommand flags
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Hide each batch's positive edges from the memory while its gradient
    /// is computed (slower; trains the model not to rely on self-lookup)
    #[arg(long)]
    strict_masking: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    data: DataArgs,
    /// Saved model.bin from a train run
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "0.9,0.05,0.05", value_parser = parse_split)]
    split: SplitFractions,
    #[arg(long, default_value_t = 200)]
    eval_negatives: usize,
    #[arg(long, default_value_t = 10)]
    hits_k: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Which study grid to run
    #[arg(long, value_enum, default_value_t = GridArg::Memory)]
    grid: GridArg,
    /// Comma-separated model seeds; each seed gets its own split,
    /// negatives, and initialization shared across all cells
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 25)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    neg_ratio: usize,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Study tables are kept narrower than the training default so the
    /// differential cannot simply memorize a desk-scale graph
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    k_refs: usize,
    #[arg(long, default_value_t = 8)]
    sentinels: usize,
    #[arg(long, default_value_t = 1.0)]
    sentinel_distance: f64,
    #[arg(long, default_value = "0.9,0.05,0.05", value_parser = parse_split)]
    split: SplitFractions,
    #[arg(long, default_value_t = 200)]
    eval_negatives: usize,
    #[arg(long, default_value_t = 20)]
    hits_k: usize,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    seed: SeedArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Args)]
struct UnaryArgs {
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    seed: SeedArg,
    /// CSV with feature columns and the label last; default is 64 samples
    /// of y = 2x on [0, 1]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic sample count when no --data file is given
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    k_refs: usize,
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
}

#[derive(Args)]
struct KnnArgs {
    #[command(flatten)]
    out: OutArgs,
    /// Saved model.bin from a train run
    #[arg(long)]
    model: Option<PathBuf>,
    /// Query node id
    #[arg(long)]
    node: Option<u32>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Which head's position table to search
    #[arg(long, default_value_t = 0)]
    head: usize,
}

// ---------------------------------------------------------------------------
// Resolved run configurations (the replayable artifact)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum ResolvedConfig {
    Train(TrainRun),
    Eval(EvalRun),
    Ablate(AblateRun),
    ExportEmbeddings(ExportRun),
    UnaryDemo(UnaryRun),
    Knn(KnnRun),
}

impl ResolvedConfig {
    fn name(&self) -> &'static str {
        match self {
            ResolvedConfig::Train(_) => "train",
            ResolvedConfig::Eval(_) => "eval",
            ResolvedConfig::Ablate(_) => "ablate",
            ResolvedConfig::ExportEmbeddings(_) => "export-embeddings",
            ResolvedConfig::UnaryDemo(_) => "unary-demo",
            ResolvedConfig::Knn(_) => "knn",
        }
    }
}

#[derive(Serialize, Deserialize, Clone)]
struct DatasetSpec {
    source: String,
    directed: bool,
    allow_self_loops: bool,
    dataset_seed: u64,
    sbm_nodes: usize,
    sbm_blocks: usize,
    sbm_p_in: f64,
    sbm_p_out: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct TrainRun {
    dataset: DatasetSpec,
    model: MadConfig,
    train: TrainConfig,
    split: SplitFractions,
    eval_negatives: usize,
    hits_k: usize,
    out: String,
}

#[derive(Serialize, Deserialize, Clone)]
struct EvalRun {
    dataset: DatasetSpec,
    model_path: String,
    seed: u64,
    split: SplitFractions,
    eval_negatives: usize,
    hits_k: usize,
    out: String,
}

#[derive(Serialize, Deserialize, Clone)]
struct AblateRun {
    dataset: DatasetSpec,
    grid: GridArg,
    seeds: Vec<u64>,
    epochs: usize,
    batch_size: usize,
    neg_ratio: usize,
    lr: f64,
    dim: usize,
    heads: usize,
    k_refs: usize,
    sentinels: usize,
    sentinel_distance: f64,
    split: SplitFractions,
    eval_negatives: usize,
    hits_k: usize,
    out: String,
}

#[derive(Serialize, Deserialize, Clone)]
struct ExportRun {
    dataset: DatasetSpec,
    model: MadConfig,
    train: TrainConfig,
    out: String,
}

#[derive(Serialize, Deserialize, Clone)]
struct UnaryRun {
    data: Option<String>,
    samples: usize,
    dim: usize,
    k_refs: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
    out: String,
}

#[derive(Serialize, Deserialize, Clone)]
struct KnnRun {
    model_path: String,
    node: u32,
    k: usize,
    head: usize,
    out: String,
}

// ---------------------------------------------------------------------------
// Dispatch: flags (or a replayed config) become a Run, then execute
// ---------------------------------------------------------------------------

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => {
            let mut run = match replay(&args.out, "train")? {
                Some(ResolvedConfig::Train(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => TrainRun {
                    dataset: args.data.to_spec(),
                    model: args.model.to_config(),
                    train: TrainConfig {
                        epochs: args.optim.epochs,
                        batch_size: args.optim.batch_size,
                        neg_ratio: args.optim.neg_ratio,
                        lr: args.optim.lr,
                        seed: args.seed.seed,
                        eval_every: args.protocol.eval_every,
                        strict_masking: args.strict_masking,
                    },
                    split: args.protocol.split,
                    eval_negatives: args.protocol.eval_negatives,
                    hits_k: args.protocol.hits_k,
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run.train.seed = env_seed(run.train.seed)?;
            run_train(&run).map_err(Failure::Core)
        }
        Command::Eval(args) => {
            let mut run = match replay(&args.out, "eval")? {
                Some(ResolvedConfig::Eval(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => EvalRun {
                    dataset: args.data.to_spec(),
                    model_path: args
                        .model
                        .as_ref()
                        .ok_or_else(|| Failure::Usage("--model is required".into()))?
                        .display()
                        .to_string(),
                    seed: args.seed.seed,
                    split: args.split,
                    eval_negatives: args.eval_negatives,
                    hits_k: args.hits_k,
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run.seed = env_seed(run.seed)?;
            run_eval(&run).map_err(Failure::Core)
        }
        Command::Ablate(args) => {
            let mut run = match replay(&args.out, "ablate")? {
                Some(ResolvedConfig::Ablate(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => AblateRun {
                    dataset: args.data.to_spec(),
                    grid: args.grid,
                    seeds: args.seeds.clone(),
                    epochs: args.epochs,
                    batch_size: args.batch_size,
                    neg_ratio: args.neg_ratio,
                    lr: args.lr,
                    dim: args.dim,
                    heads: args.heads,
                    k_refs: args.k_refs,
                    sentinels: args.sentinels,
                    sentinel_distance: args.sentinel_distance,
                    split: args.split,
                    eval_negatives: args.eval_negatives,
                    hits_k: args.hits_k,
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run_ablate(&run).map_err(Failure::Core)
        }
        Command::ExportEmbeddings(args) => {
            let mut run = match replay(&args.out, "export-embeddings")? {
                Some(ResolvedConfig::ExportEmbeddings(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => ExportRun {
                    dataset: args.data.to_spec(),
                    model: args.model.to_config(),
                    train: TrainConfig {
                        epochs: args.optim.epochs,
                        batch_size: args.optim.batch_size,
                        neg_ratio: args.optim.neg_ratio,
                        lr: args.optim.lr,
                        seed: args.seed.seed,
                        eval_every: 0,
                        strict_masking: false,
                    },
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run.train.seed = env_seed(run.train.seed)?;
            run_export(&run).map_err(Failure::Core)
        }
        Command::UnaryDemo(args) => {
            let mut run = match replay(&args.out, "unary-demo")? {
                Some(ResolvedConfig::UnaryDemo(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => UnaryRun {
                    data: args.data.as_ref().map(|p| p.display().to_string()),
                    samples: args.samples,
                    dim: args.dim,
                    k_refs: args.k_refs,
                    epochs: args.epochs,
                    lr: args.lr,
                    seed: args.seed.seed,
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run.seed = env_seed(run.seed)?;
            run_unary(&run).map_err(Failure::Core)
        }
        Command::Knn(args) => {
            let mut run = match replay(&args.out, "knn")? {
                Some(ResolvedConfig::Knn(run)) => run,
                Some(_) => unreachable!("replay checks the tag"),
                None => KnnRun {
                    model_path: args
                        .model
                        .as_ref()
                        .ok_or_else(|| Failure::Usage("--model is required".into()))?
                        .display()
                        .to_string(),
                    node: args
                        .node
                        .ok_or_else(|| Failure::Usage("--node is required".into()))?,
                    k: args.k,
                    head: args.head,
                    out: out_dir(&args.out),
                },
            };
            if let Some(out) = &args.out.out {
                run.out = out.display().to_string();
            }
            run_knn(&run).map_err(Failure::Core)
        }
    }
}

fn out_dir(out: &OutArgs) -> String {
    out.out
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "mad-out".to_string())
}

/// Load and tag-check a replayed config, if one was requested.
fn replay(out: &OutArgs, expected: &str) -> Result<Option<ResolvedConfig>, Failure> {
    let Some(path) = &out.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::Core(MadError::Io(e))
    })?;
    let cfg: ResolvedConfig = serde_json::from_str(&text).map_err(MadError::Json)?;
    if cfg.name() != expected {
        return Err(Failure::Usage(format!(
            "config file describes a '{}' run, not '{}'",
            cfg.name(),
            expected
        )));
    }
    Ok(Some(cfg))
}

/// MAD_SEED overrides whichever seed the flags or config resolved to.
fn env_seed(fallback: u64) -> Result<u64, Failure> {
    match std::env::var("MAD_SEED") {
        Ok(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|e| Failure::Usage(format!("MAD_SEED={s:?}: {e}"))),
        Err(_) => Ok(fallback),
    }
}

fn load_dataset(spec: &DatasetSpec) -> mad_core::Result<(Graph, Option<Vec<u8>>)> {
    match spec.source.as_str() {
        "karate" => {
            let (graph, labels) = karate();
            Ok((graph, Some(labels)))
        }
        "sbm" => {
            let mut rng = Rng::new(spec.dataset_seed).fork(tags::DATASET);
            let graph = generate_sbm(
                spec.sbm_nodes,
                spec.sbm_blocks,
                spec.sbm_p_in,
                spec.sbm_p_out,
                &mut rng,
            )?;
            Ok((graph, None))
        }
        path => {
            let loaded = load_edge_list(
                path,
                &LoadOptions {
                    directed: spec.directed,
                    allow_self_loops: spec.allow_self_loops,
                    n_nodes: None,
                },
            )?;
            if loaded.duplicates_dropped > 0 || loaded.self_loops_dropped > 0 {
                eprintln!(
                    "note: dropped {} duplicate and {} self-loop lines from {}",
                    loaded.duplicates_dropped, loaded.self_loops_dropped, path
                );
            }
            Ok((loaded.graph, None))
        }
    }
}

fn prepare_out(dir: &str, config: &ResolvedConfig) -> mad_core::Result<PathBuf> {
    let out = PathBuf::from(dir);
    fs::create_dir_all(&out)?;
    export_metrics(out.join("resolved_config.json"), config)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Command bodies
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrainMetrics {
    n_nodes: usize,
    train_edges: usize,
    valid_edges: usize,
    test_edges: usize,
    n_params: usize,
    hits_k: usize,
    final_loss: f64,
    final_eval: Option<HitsByMode>,
    reports: Vec<LossReport>,
}

fn run_train(run: &TrainRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::Train(run.clone()))?;
    let (graph, _) = load_dataset(&run.dataset)?;
    let root = Rng::new(run.train.seed);
    let split = EvalSplit::from_graph(&graph, &run.split.to_spec()?, &mut root.fork(tags::SPLIT))?;
    let negatives =
        sample_negatives(&graph, run.eval_negatives, &mut root.fork(tags::EVAL_NEGATIVES))?;

    let mut params = ParamStore::new();
    let mut model = LinkModel::init(
        &run.model,
        &split.train,
        &mut params,
        &mut root.fork(tags::MODEL_INIT),
    )?;
    let setup = EvalSetup {
        eval_positives: split.eval_positives(),
        negatives,
        train_probe_cap: 0,
        hits_k: run.hits_k,
    };
    let reports = fit(&mut model, &mut params, &split.train, &run.train, Some(&setup))?;

    let last = reports.last().expect("at least one epoch");
    let metrics = TrainMetrics {
        n_nodes: graph.n_nodes(),
        train_edges: split.train.edges().len(),
        valid_edges: split.valid.len(),
        test_edges: split.test.len(),
        n_params: params.n_params(),
        hits_k: run.hits_k,
        final_loss: last.mean_loss,
        final_eval: last.eval_hits.clone(),
        reports,
    };
    export_metrics(out.join("metrics.json"), &metrics)?;
    save_model(out.join("model.bin"), &run.model, &params)?;

    println!(
        "trained {} epochs on {} ({} nodes, {} train edges)",
        run.train.epochs,
        run.dataset.source,
        metrics.n_nodes,
        metrics.train_edges
    );
    println!("final mean loss {}", metrics.final_loss);
    if let Some(hits) = &metrics.final_eval {
        println!(
            "eval hits@{}: random {} dynamic_nn {}",
            run.hits_k, hits.random, hits.dynamic_nn
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalMetrics {
    n_nodes: usize,
    eval_positives: usize,
    eval_negatives: usize,
    hits_k: usize,
    hits: HitsByMode,
    mean_uncertainty: f64,
}

fn run_eval(run: &EvalRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::Eval(run.clone()))?;
    let (graph, _) = load_dataset(&run.dataset)?;
    let (model_cfg, params) = load_model(&run.model_path)?;
    let root = Rng::new(run.seed);
    let split = EvalSplit::from_graph(&graph, &run.split.to_spec()?, &mut root.fork(tags::SPLIT))?;
    let negatives =
        sample_negatives(&graph, run.eval_negatives, &mut root.fork(tags::EVAL_NEGATIVES))?;
    let model = LinkModel::attach(&model_cfg, &split.train, &params)?;

    let positives = split.eval_positives();
    let eval_rng = root.fork(tags::EVAL);
    let mut hits = HitsByMode {
        random: 0.0,
        dynamic_nn: 0.0,
    };
    let mut mean_uncertainty = 0.0;
    for mode in [RefMode::Random, RefMode::DynamicNn] {
        let pos_scores = model.score_batch(&params, &positives, mode, &eval_rng)?;
        let neg_scores = model.score_batch(&params, &negatives, mode, &eval_rng)?;
        let pos: Vec<f64> = pos_scores.iter().map(|s| s.logit).collect();
        let neg: Vec<f64> = neg_scores.iter().map(|s| s.logit).collect();
        let h = hits_at_k(&pos, &neg, run.hits_k)?;
        match mode {
            RefMode::Random => hits.random = h,
            RefMode::DynamicNn => {
                hits.dynamic_nn = h;
                mean_uncertainty = pos_scores.iter().map(|s| s.uncertainty).sum::<f64>()
                    / pos_scores.len().max(1) as f64;
            }
        }
    }
    let metrics = EvalMetrics {
        n_nodes: graph.n_nodes(),
        eval_positives: positives.len(),
        eval_negatives: negatives.len(),
        hits_k: run.hits_k,
        hits,
        mean_uncertainty,
    };
    export_metrics(out.join("metrics.json"), &metrics)?;
    println!(
        "hits@{}: random {} dynamic_nn {} (uncertainty {})",
        run.hits_k, metrics.hits.random, metrics.hits.dynamic_nn, metrics.mean_uncertainty
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Column label for a study cell: the part that varies in this grid plus
/// the evaluation mode.
fn cell_label(grid: GridArg, cell: &AblationCellResult) -> String {
    match grid {
        GridArg::Memory => format!("{}_{}", cell.ablation.label(), cell.eval_mode.label()),
        GridArg::Aggregators => {
            format!("{}_{}", cell.aggregator.label(), cell.eval_mode.label())
        }
    }
}

fn run_ablate(run: &AblateRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::Ablate(run.clone()))?;
    let (graph, _) = load_dataset(&run.dataset)?;
    let grid = match run.grid {
        GridArg::Memory => AblationGrid::memory(),
        GridArg::Aggregators => AblationGrid::aggregators(),
    };
    let cfg = AblationConfig {
        seeds: run.seeds.clone(),
        epochs: run.epochs,
        batch_size: run.batch_size,
        neg_ratio: run.neg_ratio,
        lr: run.lr,
        dim: run.dim,
        heads: run.heads,
        k_refs: run.k_refs,
        sentinels: SentinelConfig {
            count: run.sentinels,
            distance: run.sentinel_distance,
            value: 0.0,
        },
        split: run.split.to_spec()?,
        n_negatives: run.eval_negatives,
        hits_k: run.hits_k,
    };
    let results = run_ablation(&graph, &grid, &cfg)?;
    export_metrics(out.join("summary.json"), &results)?;

    // One hits-curve CSV per seed, one column per grid cell.
    for &seed in &run.seeds {
        let cells: Vec<&AblationCellResult> =
            results.iter().filter(|r| r.seed == seed).collect();
        let mut csv = String::from("epoch");
        for cell in &cells {
            write!(csv, ",{}", cell_label(run.grid, cell)).expect("string write");
        }
        csv.push('\n');
        for epoch in 0..run.epochs {
            write!(csv, "{}", epoch + 1).expect("string write");
            for cell in &cells {
                write!(csv, ",{}", cell.hits_curve[epoch]).expect("string write");
            }
            csv.push('\n');
        }
        fs::write(out.join(format!("curves_seed{seed}.csv")), csv)?;
    }

    println!(
        "study grid '{}' on {}: final hits@{}",
        match run.grid {
            GridArg::Memory => "memory",
            GridArg::Aggregators => "aggregators",
        },
        run.dataset.source,
        run.hits_k
    );
    for r in &results {
        println!(
            "  seed {} {:24} {}",
            r.seed,
            cell_label(run.grid, r),
            r.final_hits
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_export(run: &ExportRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::ExportEmbeddings(run.clone()))?;
    let (graph, labels) = load_dataset(&run.dataset)?;
    let root = Rng::new(run.train.seed);
    let mut params = ParamStore::new();
    let mut model = LinkModel::init(
        &run.model,
        &graph,
        &mut params,
        &mut root.fork(tags::MODEL_INIT),
    )?;
    let reports = fit(&mut model, &mut params, &graph, &run.train, None)?;
    export_embeddings(out.join("embeddings.csv"), &model, &params)?;
    export_metrics(out.join("metrics.json"), &reports)?;
    save_model(out.join("model.bin"), &run.model, &params)?;
    if let Some(labels) = labels {
        let mut tsv = String::from("# node\tcommunity\n");
        for (node, label) in labels.iter().enumerate() {
            writeln!(tsv, "{node}\t{label}").expect("string write");
        }
        fs::write(out.join("communities.tsv"), tsv)?;
    }
    println!(
        "trained {} epochs on the full {} graph and exported {} nodes x {} dims",
        run.train.epochs,
        run.dataset.source,
        graph.n_nodes(),
        run.model.dim
    );
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct UnaryProbe {
    input: Vec<f64>,
    target: f64,
    prediction: f64,
    uncertainty: f64,
}

#[derive(Serialize)]
struct UnaryMetrics {
    samples: usize,
    baseline_mse: f64,
    final_mse: f64,
    beats_baseline: bool,
    probes: Vec<UnaryProbe>,
    curve: Vec<f64>,
}

fn run_unary(run: &UnaryRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::UnaryDemo(run.clone()))?;
    let data: Vec<(Vec<f64>, f64)> = match &run.data {
        Some(path) => {
            let (xs, ys) = load_unary_csv(path)?;
            xs.into_iter().zip(ys).collect()
        }
        None => {
            if run.samples < 2 {
                return Err(MadError::Config(
                    "the synthetic line needs at least 2 samples".into(),
                ));
            }
            (0..run.samples)
                .map(|i| {
                    let x = i as f64 / (run.samples - 1) as f64;
                    (vec![x], 2.0 * x)
                })
                .collect()
        }
    };
    let cfg = UnaryConfig {
        in_dim: data[0].0.len(),
        dim: run.dim,
        k_refs: run.k_refs,
        sentinels: SentinelConfig::none(),
        train_mode: UnaryRefMode::Random,
        eval_mode: UnaryRefMode::DynamicNn,
    };
    let mut params = ParamStore::new();
    let root = Rng::new(run.seed);
    let mut model = UnaryModel::init(&cfg, &mut params, &mut root.fork(tags::MODEL_INIT))?;
    let train_cfg = UnaryTrainConfig {
        epochs: run.epochs,
        lr: run.lr,
        seed: run.seed,
    };
    let curve = train_unary(&mut model, &mut params, &data, &train_cfg)?;
    let baseline = mean_predictor_mse(&data)?;
    let final_mse = *curve.last().expect("at least one epoch");

    let mut eval_rng = root.fork(tags::EVAL);
    let mut probes = Vec::new();
    let n = data.len();
    for idx in [0, n / 4, n / 2, 3 * n / 4, n - 1] {
        let (x, y) = &data[idx.min(n - 1)];
        let (prediction, uncertainty) = predict_unary(&model, &params, x, &mut eval_rng)?;
        probes.push(UnaryProbe {
            input: x.clone(),
            target: *y,
            prediction,
            uncertainty,
        });
    }
    let metrics = UnaryMetrics {
        samples: n,
        baseline_mse: baseline,
        final_mse,
        beats_baseline: final_mse < baseline,
        probes,
        curve,
    };
    export_metrics(out.join("metrics.json"), &metrics)?;
    println!(
        "unary demo: {} samples, final mse {} vs mean-predictor baseline {}",
        n, final_mse, baseline
    );
    println!(
        "{}",
        if metrics.beats_baseline {
            "the trained model beats the baseline"
        } else {
            "the trained model does NOT beat the baseline"
        }
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn run_knn(run: &KnnRun) -> mad_core::Result<()> {
    let out = prepare_out(&run.out, &ResolvedConfig::Knn(run.clone()))?;
    let (model_cfg, params) = load_model(&run.model_path)?;
    // The position tables alone determine neighbourhoods; an edgeless graph
    // of the right shape stands in for the training memory. Separate
    // source tables in the file mean the model was directed.
    let n_nodes = params.value("head0.pos")?.rows();
    let directed = params.contains("head0.g_src");
    let graph = Graph::new(n_nodes, vec![], directed)?;
    let model = LinkModel::attach(&model_cfg, &graph, &params)?;
    if run.head >= model_cfg.heads {
        return Err(MadError::Config(format!(
            "head {} out of range: the model has {} head(s)",
            run.head, model_cfg.heads
        )));
    }
    let table = model.heads().head(run.head);
    let neighbours = mad_core::knn_positions(table, &params, run.node, run.k, &[run.node])?;
    let query_pos = table.position(&params, run.node)?.to_vec();
    println!(
        "{} nearest neighbours of node {} in head {} position space:",
        run.k, run.node, run.head
    );
    for (rank, &node) in neighbours.iter().enumerate() {
        let pos = table.position(&params, node)?;
        let distance = mad_core::tensor::l2_distance_slices(&query_pos, pos);
        println!("  {:>2}. node {:>5}  distance {}", rank + 1, node, distance);
    }
    println!("wrote {}", out.display());
    Ok(())
}
