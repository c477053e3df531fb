//! Command-line front end.
//!
//! Every subcommand writes its outputs atomically into `--out` together with
//! a `run.json` run manifest holding the fully resolved settings (minus the
//! output directory and thread count, neither of which affects results).
//! `labelprop replay run.json --out DIR` re-runs from such a manifest.
//!
//! Exit codes: 0 success, 1 internal or solver failure, 2 usage or
//! validation failure. Logs go to standard error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, ClassifierParams, Optimizer, PseudoLabels, TrainConfig};
use crate::dataset::{self, DatasetManifest, EmbeddingMatrix, SyntheticConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, Averaging};
use crate::graph::{self, GraphConfig, GraphStats};
use crate::io::{write_atomic, write_json_atomic};
use crate::labels;
use crate::propagation::{self, LoopConfig, PropagationConfig, PropagationResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Tolerance on the spectral-radius precondition of the diffusion solve.
const SPECTRAL_SLACK: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "labelprop", version, about = "Transductive label propagation over kNN graphs")]
pub struct Cli {
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset.
    Generate(GenerateArgs),
    /// Build the kNN graph, dump S and print graph statistics.
    BuildGraph(BuildGraphArgs),
    /// Propagate seed labels once and write pseudo-labels.
    Propagate(PropagateArgs),
    /// Train the classifier on seeds plus (optional) pseudo-labels.
    Train(TrainArgs),
    /// Propagate / train / re-embed for several rounds, then evaluate.
    Pipeline(PipelineArgs),
    /// Score a labels file against the manifest's eval items.
    Evaluate(EvaluateArgs),
    /// Re-run a command from its run manifest.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InputArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GraphArgs {
    /// Neighbors per node.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    /// Similarity sharpness exponent.
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    /// Unit-normalize embeddings before computing similarities.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub normalize_embeddings: bool,
}

impl GraphArgs {
    fn config(&self) -> GraphConfig {
        GraphConfig { k: self.k, gamma: self.gamma, normalize_embeddings: self.normalize_embeddings }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PropArgs {
    /// Diffusion strength in [0, 1).
    #[arg(long, default_value_t = 0.99)]
    pub alpha: f64,
    /// CG relative residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Normalize score columns by class mass before assigning labels.
    #[arg(long)]
    pub class_mass_norm: bool,
}

impl PropArgs {
    fn config(&self) -> PropagationConfig {
        PropagationConfig {
            alpha: self.alpha,
            tol: self.tol,
            max_iter: self.max_iter,
            class_mass_norm: self.class_mass_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgsShared {
    #[arg(long, default_value_t = 1e-2)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Weight multiplier for pseudo-labeled examples.
    #[arg(long, default_value_t = 1.0)]
    pub pseudo_weight: f64,
    /// Ignore propagation confidence when weighting pseudo-labels.
    #[arg(long)]
    pub uniform_pseudo_weights: bool,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// Hidden layer width.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

impl TrainArgsShared {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            pseudo_weight: self.pseudo_weight,
            uniform_pseudo_weights: self.uniform_pseudo_weights,
            optimizer: match self.optimizer {
                OptimizerArg::Sgd => Optimizer::Sgd,
                OptimizerArg::Adam => Optimizer::Adam,
            },
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 50)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.02)]
    pub label_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub chunks_per_file: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BuildGraphArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Power iterations for the spectral-radius estimate.
    #[arg(long, default_value_t = graph::DEFAULT_POWER_ITERS)]
    pub power_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PropagateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub prop: PropArgs,
    /// Include the full score row in each labels record.
    #[arg(long)]
    pub emit_scores: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Propagation output to use as pseudo-labels; seeds only when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgsShared,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub graph: GraphArgs,
    #[command(flatten)]
    pub prop: PropArgs,
    #[command(flatten)]
    pub train: TrainArgsShared,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    /// Seed-only epochs before the first pseudo-label round.
    #[arg(long, default_value_t = 10)]
    pub pretrain_epochs: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub emit_scores: bool,
    /// Support-weighted instead of macro averaging.
    #[arg(long)]
    pub weighted: bool,
    /// Include per-class rows in the text report.
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Labels file written by `propagate` or `pipeline`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub per_class: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `run.json` written by an earlier invocation.
    pub run_manifest: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_INTERNAL;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_INTERNAL
            }
        }
    }
}

/// Runs one command on the current rayon pool.
pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::Propagate(a) => cmd_propagate(a),
        Command::Train(a) => cmd_train(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Param(format!("{what} {} does not exist", path.display())))
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Param(format!("cannot create output directory {}: {e}", out.display())))
}

fn write_run_manifest(out: &Path, command: Command) -> Result<()> {
    write_json_atomic(&out.join("run.json"), &command)
}

fn load_inputs(input: &InputArgs) -> Result<(EmbeddingMatrix, DatasetManifest)> {
    require_file(&input.embeddings, "embeddings file")?;
    require_file(&input.manifest, "manifest file")?;
    let emb = dataset::load_embeddings(&input.embeddings)?;
    let manifest = dataset::load_manifest(&input.manifest, emb.n())?;
    Ok((emb, manifest))
}

/// Fails when the normalized graph violates the `rho(S) <= 1` precondition.
fn check_spectral_radius(s: &crate::sparse::SparseAffinity) -> Result<f64> {
    let rho = graph::estimate_spectral_radius(s, 100, 0);
    if rho > 1.0 + SPECTRAL_SLACK {
        return Err(Error::Solver(format!("normalized graph has spectral radius {rho} > 1")));
    }
    Ok(rho)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_per_class: a.n_per_class,
        num_classes: a.classes,
        dim: a.dim,
        separation: a.separation,
        label_fraction: a.label_fraction,
        seed: a.seed,
        chunks_per_file: a.chunks_per_file,
    };
    let (emb, manifest) = dataset::generate_synthetic(&cfg)?;
    prepare_out(&a.out.out)?;
    emb.save(&a.out.out.join("embeddings.lpem"))?;
    manifest.save(&a.out.out.join("manifest.jsonl"))?;
    write_run_manifest(&a.out.out, Command::Generate(a.clone()))?;
    info!("generated {} items in {} classes", emb.n(), manifest.num_classes());
    Ok(())
}

pub fn cmd_build_graph(a: &BuildGraphArgs) -> Result<()> {
    require_file(&a.embeddings, "embeddings file")?;
    let emb = dataset::load_embeddings(&a.embeddings)?;
    let g = graph::build_graph(&emb, &a.graph.config())?;
    let stats = GraphStats::compute(&g, a.power_iters, a.seed);
    prepare_out(&a.out.out)?;
    g.normalized.save_dump(&a.out.out.join("graph.lpgs"))?;
    write_json_atomic(&a.out.out.join("graph_stats.json"), &stats)?;
    write_run_manifest(&a.out.out, Command::BuildGraph(a.clone()))?;
    println!("nodes            {}", stats.n);
    println!("stored edges     {}", stats.nnz);
    println!("isolated nodes   {}", stats.isolated);
    println!(
        "degree           min {:.4}  median {:.4}  mean {:.4}  max {:.4}",
        stats.degree_min, stats.degree_median, stats.degree_mean, stats.degree_max
    );
    let hist: Vec<String> = stats.edge_count_histogram.iter().map(|(e, c)| format!("{e}:{c}")).collect();
    println!("edges per node   {}", hist.join(" "));
    println!("spectral radius  {:.10}", stats.spectral_radius);
    Ok(())
}

fn write_propagation(out: &Path, manifest: &DatasetManifest, result: &PropagationResult, emit_scores: bool) -> Result<()> {
    labels::write_labels(&out.join("labels.jsonl"), &labels::label_records(manifest, result, emit_scores))?;
    write_json_atomic(&out.join("cg_stats.json"), &result.cg_report(manifest.classes()))
}

pub fn cmd_propagate(a: &PropagateArgs) -> Result<()> {
    let (emb, manifest) = load_inputs(&a.input)?;
    let g = graph::build_graph(&emb, &a.graph.config())?;
    check_spectral_radius(&g.normalized)?;
    let y = propagation::build_label_matrix(&manifest);
    let result = propagation::propagate_cg(&g.normalized, &y, &a.prop.config())?;
    prepare_out(&a.out.out)?;
    write_propagation(&a.out.out, &manifest, &result, a.emit_scores)?;
    write_run_manifest(&a.out.out, Command::Propagate(a.clone()))?;
    let assigned = result.pseudo_labels.iter().filter(|l| l.is_some()).count();
    info!("assigned {assigned} of {} items", manifest.len());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let (emb, manifest) = load_inputs(&a.input)?;
    let pseudo = match &a.labels {
        Some(path) => {
            require_file(path, "labels file")?;
            Some(labels::read_labels(path, &manifest)?)
        }
        None => None,
    };
    let cfg = a.train.config(a.seed);
    let init = ClassifierParams::init(emb.d(), a.train.hidden, manifest.num_classes(), a.seed);
    let pl = pseudo.as_ref().map(|(l, c)| PseudoLabels { labels: l, confidence: c });
    let (params, trace) = classifier::train_with_pseudo(&init, &emb, &manifest, pl, &cfg)?;
    prepare_out(&a.out.out)?;
    params.save(&a.out.out.join("model.lpmc"))?;
    write_json_atomic(&a.out.out.join("loss_trace.json"), &trace)?;
    write_run_manifest(&a.out.out, Command::Train(a.clone()))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RoundTrace<'a> {
    rounds_run: usize,
    agreement: &'a [f64],
    loss: &'a [Vec<f64>],
}

fn write_eval(out: &Path, manifest: &DatasetManifest, pred: &[Option<usize>], weighted: bool, per_class: bool) -> Result<String> {
    let averaging = if weighted { Averaging::Weighted } else { Averaging::Macro };
    let (chunk, file) = evaluation::evaluate_manifest(manifest, pred, averaging)?;
    write_json_atomic(&out.join("eval_chunk.json"), &chunk)?;
    write_json_atomic(&out.join("eval_file.json"), &file)?;
    let table = format!("{}\n{}", chunk.to_table(per_class), file.to_table(per_class));
    write_atomic(&out.join("eval.txt"), |w| Ok(w.write_all(table.as_bytes())?))?;
    Ok(table)
}

pub fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let (emb, manifest) = load_inputs(&a.input)?;
    let loop_cfg = LoopConfig {
        rounds: a.rounds,
        hidden: a.train.hidden,
        pretrain_epochs: a.pretrain_epochs,
        ..Default::default()
    };
    let outcome = propagation::iterate_propagation(
        &emb,
        &manifest,
        &a.graph.config(),
        &a.prop.config(),
        &a.train.config(a.seed),
        &loop_cfg,
    )?;
    check_spectral_radius(&outcome.graph.normalized)?;
    prepare_out(&a.out.out)?;
    write_propagation(&a.out.out, &manifest, &outcome.result, a.emit_scores)?;
    write_json_atomic(
        &a.out.out.join("rounds.json"),
        &RoundTrace { rounds_run: outcome.rounds_run, agreement: &outcome.agreement_trace, loss: &outcome.loss_traces },
    )?;
    if let Some(params) = &outcome.classifier {
        params.save(&a.out.out.join("model.lpmc"))?;
    }
    if manifest.eval_indices().is_empty() {
        warn!("manifest has no eval items; skipping evaluation");
    } else {
        write_eval(&a.out.out, &manifest, &outcome.result.pseudo_labels, a.weighted, a.per_class)?;
    }
    write_run_manifest(&a.out.out, Command::Pipeline(a.clone()))?;
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    require_file(&a.manifest, "manifest file")?;
    require_file(&a.labels, "labels file")?;
    let mut r = std::io::BufReader::new(fs::File::open(&a.manifest)?);
    let manifest = DatasetManifest::read_from(&mut r, None)?;
    let (pred, _) = labels::read_labels(&a.labels, &manifest)?;
    prepare_out(&a.out.out)?;
    let table = write_eval(&a.out.out, &manifest, &pred, a.weighted, a.per_class)?;
    print!("{table}");
    write_run_manifest(&a.out.out, Command::Evaluate(a.clone()))?;
    Ok(())
}

fn with_out(mut command: Command, out: &Path) -> Result<Command> {
    let slot = match &mut command {
        Command::Generate(a) => &mut a.out,
        Command::BuildGraph(a) => &mut a.out,
        Command::Propagate(a) => &mut a.out,
        Command::Train(a) => &mut a.out,
        Command::Pipeline(a) => &mut a.out,
        Command::Evaluate(a) => &mut a.out,
        Command::Replay(_) => return Err(Error::Param("a run manifest cannot replay a replay".into())),
    };
    slot.out = out.to_path_buf();
    Ok(command)
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    require_file(&a.run_manifest, "run manifest")?;
    let text = fs::read_to_string(&a.run_manifest)?;
    let command: Command = serde_json::from_str(&text).map_err(|e| Error::Param(format!("run manifest: {e}")))?;
    execute(&with_out(command, &a.out.out)?)
}
