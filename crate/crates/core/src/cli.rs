//! The `grbe` command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config;
use crate::eda::LambdaPolicy;
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitTag};
use crate::io::{self, GraphRecord};
use crate::metrics::{distribution_distance, mean_shift_count, AucPooling, Bandwidth, Distance};
use crate::num::Fault;
use crate::spmotif::{generate_spmotif, SpmotifConfig};
use crate::trainer::{
    augment_corpus, environment_embeddings, evaluate_with, full_loss_gradcheck, train, CorpusAugmentConfig,
    EnvironmentSource, EpochRecord, FullLossCheck, PredictionMode, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "grbe", version, about = "Graph rationalization with environment-mixing augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Spurious-Motif corpus.
    GenSpmotif(GenArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Write environment-mixed graphs synthesized by a trained model.
    Augment(AugmentArgs),
    /// Count environment categories and measure corpus distances.
    Diversity(DiversityArgs),
    /// Finite-difference check of the full training loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for SplitTag {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitTag::Train,
            SplitArg::Val => SplitTag::Val,
            SplitArg::Test => SplitTag::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictionArg {
    Rationale,
    FullGraph,
}

impl From<PredictionArg> for PredictionMode {
    fn from(p: PredictionArg) -> Self {
        match p {
            PredictionArg::Rationale => PredictionMode::Rationale,
            PredictionArg::FullGraph => PredictionMode::FullGraph,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub bias: f64,
    #[arg(long, default_value_t = 1500)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_val: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub base_scale: usize,
    /// Corpus file; metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Key-value configuration file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json, history.csv and config.ini.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, visible_alias = "r")]
    pub r_aug: Option<f64>,
    #[arg(long)]
    pub r_s: Option<f64>,
    #[arg(long)]
    pub r_add: Option<f64>,
    /// A number in [0,1], `uniform` or `uniform(low,high)`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub temperature_final: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub prediction: Option<PredictionArg>,
    /// Train the ERM baseline: no mask, augmentation or contrastive terms.
    #[arg(long)]
    pub erm: bool,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Only graphs of this split; all graphs when omitted.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Override the prediction mode stored in the checkpoint.
    #[arg(long, value_enum)]
    pub prediction: Option<PredictionArg>,
    /// Pool AUC over each graph separately instead of all edges at once.
    #[arg(long)]
    pub macro_auc: bool,
    /// Report file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[arg(long, default_value_t = 0.2)]
    pub r_aug: f64,
    #[arg(long, default_value = "0.5")]
    pub lambda: String,
    #[arg(long, default_value_t = 0.1)]
    pub r_add: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long)]
    pub seed: u64,
    /// Swap in the whole environment of `j` instead of mixing.
    #[arg(long)]
    pub swap: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Second corpus, e.g. an augmented dump.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Training history whose distance series is echoed into the report.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Mean-shift bandwidth; chosen from the pooled points when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Coordinates sampled per parameter tensor; all when omitted.
    #[arg(long)]
    pub coordinates: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, hide = true, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    SigmoidSign,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    check_threads()?;
    match cli.command {
        Command::GenSpmotif(a) => gen_spmotif(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Diversity(a) => diversity_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

/// `GRBE_THREADS` caps internal parallelism. Computation is single-threaded,
/// so the cap is validated and otherwise always satisfied.
fn check_threads() -> Result<()> {
    match std::env::var("GRBE_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(Error::Usage(format!("GRBE_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(()),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn gen_spmotif(a: GenArgs) -> Result<()> {
    let cfg = SpmotifConfig {
        bias: a.bias,
        n_train: a.n_train,
        n_val: a.n_val,
        n_test: a.n_test,
        seed: a.seed,
        base_scale: a.base_scale,
        ..SpmotifConfig::default()
    };
    cfg.validate()?;
    let data = generate_spmotif(&cfg)?;
    io::write_corpus(&a.out, &data.graphs)?;
    io::write_json(&sidecar(&a.out), &data.metadata())?;
    eprintln!("wrote {} graphs to {}", data.graphs.len(), a.out.display());
    Ok(())
}

fn load_graphs(path: &Path, split: Option<SplitArg>) -> Result<Vec<Graph>> {
    let all = io::read_corpus(path)?;
    let graphs = match split {
        Some(s) => io::split_of(&all, s.into()),
        None => all,
    };
    if graphs.is_empty() {
        return Err(Error::Data(format!("{}: no graphs selected", path.display())));
    }
    Ok(graphs)
}

fn parse_lambda(text: &str) -> Result<LambdaPolicy> {
    let mut cfg = TrainConfig::default();
    config::apply(&mut cfg, "lambda", text)?;
    cfg.lambda.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg.lambda)
}

/// The effective training configuration: defaults, then the file, then flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seeded = false;
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        seeded = text
            .lines()
            .any(|l| l.split(['#', ';']).next().unwrap_or("").split('=').next().map(str::trim) == Some("seed"));
        config::apply_text(&mut cfg, &text)?;
    }
    let flags: [(&str, Option<String>); 16] = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("alpha", a.alpha.map(|v| v.to_string())),
        ("beta", a.beta.map(|v| v.to_string())),
        ("gamma", a.gamma.map(|v| v.to_string())),
        ("r_aug", a.r_aug.map(|v| v.to_string())),
        ("r_s", a.r_s.map(|v| v.to_string())),
        ("r_add", a.r_add.map(|v| v.to_string())),
        ("lambda", a.lambda.clone()),
        ("temperature", a.temperature.map(|v| v.to_string())),
        ("temperature_final", a.temperature_final.map(|v| v.to_string())),
        ("tau", a.tau.map(|v| v.to_string())),
        ("hidden", a.hidden.map(|v| v.to_string())),
        ("layers", a.layers.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            config::apply(&mut cfg, k, &v)?;
        }
    }
    seeded |= a.seed.is_some();
    if !seeded {
        return Err(Error::Usage("a seed is required (--seed or `seed =` in --config)".into()));
    }
    if a.erm {
        cfg = cfg.erm();
    }
    if let Some(p) = a.prediction {
        cfg.prediction = p.into();
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    let all = io::read_corpus(&a.data)?;
    let tagged = all.iter().any(|g| g.split.is_some());
    let (tr, va) = if tagged {
        (io::split_of(&all, SplitTag::Train), io::split_of(&all, SplitTag::Val))
    } else {
        (all, Vec::new())
    };
    let quiet = a.quiet;
    let mut log = |r: &EpochRecord| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  total {:.4}  L_r {:.4}  train {:.3}  val {}",
                r.epoch,
                r.total,
                r.l_r,
                r.train_acc,
                r.val_acc.map_or("-".into(), |v| format!("{v:.3}"))
            );
        }
    };
    let out = train(&tr, &va, &cfg, Some(&mut log))?;
    io::save_checkpoint(&a.out.join("checkpoint.json"), &out.model, cfg.prediction)?;
    io::write_history(&a.out.join("history.csv"), &out.history)?;
    io::atomic_write(&a.out.join("config.ini"), |w| {
        w.write_all(config::render(&cfg).as_bytes())
            .map_err(|e| Error::io(&a.out, e))
    })?;
    Ok(())
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value)?;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let (model, stored) = io::load_checkpoint(&a.checkpoint)?;
    let graphs = load_graphs(&a.data, a.split)?;
    if let Some(g) = graphs.iter().find(|g| g.feature_dim() != model.architecture().feature_dim) {
        return Err(Error::Data(format!(
            "graph {} has {} features, checkpoint expects {}",
            g.id,
            g.feature_dim(),
            model.architecture().feature_dim
        )));
    }
    if let Some(g) = graphs.iter().find(|g| g.label >= model.architecture().classes) {
        return Err(Error::Data(format!("graph {} has label {} outside the checkpoint's classes", g.id, g.label)));
    }
    let mode = a.prediction.map_or(stored, Into::into);
    let pooling = if a.macro_auc { AucPooling::Macro } else { AucPooling::Micro };
    let report = evaluate_with(&model, &graphs, mode, pooling)?;
    emit(a.out.as_deref(), &report)
}

fn augment_cmd(a: AugmentArgs) -> Result<()> {
    let lambda = parse_lambda(&a.lambda)?;
    let (model, _) = io::load_checkpoint(&a.checkpoint)?;
    let graphs = load_graphs(&a.data, a.split)?;
    let cfg = CorpusAugmentConfig {
        r_aug: a.r_aug,
        r_add: a.r_add,
        temperature: a.temperature,
        seed: a.seed,
        source: if a.swap {
            EnvironmentSource::Swap
        } else {
            EnvironmentSource::Mixup(lambda)
        },
    };
    let made = augment_corpus(&model, &graphs, &cfg)?;
    for (i, j) in &made.skipped {
        eprintln!("skipped degenerate pair ({i}, {j})");
    }
    let records: Vec<GraphRecord> = made
        .graphs
        .iter()
        .map(|s| GraphRecord::from_graph(s.graph(), Some(s.provenance.clone())))
        .collect();
    io::write_records(&a.out, &records)?;
    eprintln!("wrote {} augmented graphs, skipped {}", records.len(), made.skipped.len());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CorpusDiversity {
    pub graphs: usize,
    pub env_category_count: usize,
}

#[derive(Debug, Serialize)]
pub struct DiversityReport {
    pub bandwidth: f64,
    pub data: CorpusDiversity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CorpusDiversity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub js_distance: Option<Distance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_series: Option<Vec<(usize, Option<f64>)>>,
}

fn diversity_cmd(a: DiversityArgs) -> Result<()> {
    let (model, _) = io::load_checkpoint(&a.checkpoint)?;
    let data = load_graphs(&a.data, a.split)?;
    let compare = a.compare.as_deref().map(|p| load_graphs(p, None)).transpose()?;
    let emb_a = environment_embeddings(&model, &data)?;
    let emb_b = compare.as_ref().map(|c| environment_embeddings(&model, c)).transpose()?;
    // one bandwidth for both corpora so the counts are comparable
    let bandwidth = match a.bandwidth {
        Some(b) => b,
        None => {
            let pooled: Vec<Vec<f64>> = emb_a.iter().chain(emb_b.iter().flatten()).cloned().collect();
            crate::metrics::auto_bandwidth(&pooled)
        }
    };
    if !(bandwidth > 0.0) {
        return Err(Error::Degenerate(format!("bandwidth {bandwidth} is not positive")));
    }
    let count = |emb: &[Vec<f64>]| mean_shift_count(emb, Bandwidth::Fixed(bandwidth)).map(|r| r.count);
    let js_distance = match &compare {
        Some(c) => {
            let ra: Vec<&Graph> = data.iter().collect();
            let rb: Vec<&Graph> = c.iter().collect();
            Some(distribution_distance(&ra, &rb, a.bins)?)
        }
        None => None,
    };
    let report = DiversityReport {
        bandwidth,
        data: CorpusDiversity {
            graphs: data.len(),
            env_category_count: count(&emb_a)?,
        },
        compare: match (&compare, &emb_b) {
            (Some(c), Some(e)) => Some(CorpusDiversity {
                graphs: c.len(),
                env_category_count: count(e)?,
            }),
            _ => None,
        },
        js_distance,
        distance_series: a
            .history
            .as_deref()
            .map(io::read_history)
            .transpose()?
            .map(|h| h.iter().map(|r| (r.epoch, r.aug_distance)).collect()),
    };
    emit(a.out.as_deref(), &report)
}

#[derive(Debug, Serialize)]
struct GradcheckOutput<'a> {
    passed: bool,
    tolerance: f64,
    #[serde(flatten)]
    report: &'a crate::num::GradCheckReport,
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let report = full_loss_gradcheck(&FullLossCheck {
        seed: a.seed,
        hidden: a.hidden,
        layers: a.layers,
        coordinates_per_param: a.coordinates,
        fault: a.inject_fault.map(|FaultArg::SigmoidSign| Fault::FlipSigmoidGradient),
    })?;
    let passed = report.passes(a.tolerance);
    emit(
        None,
        &GradcheckOutput {
            passed,
            tolerance: a.tolerance,
            report: &report,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "max relative error {:e} exceeds {:e}",
            report.max_relative_error, a.tolerance
        )))
    }
}
