//! `treemil` command line: synthetic data, two-stage training, evaluation,
//! prediction dumps and gradient self-checks.
//!
//! Settings come from an optional TOML file; flags override it. Every
//! artifact is written under `--out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use treemil::autodiff::Checkpoint;
use treemil::data::{generate_synthetic, load_dataset, write_dataset, PropagationTree, SynthConfig};
use treemil::gradsuite::{standard_suite, SuiteReport};
use treemil::milbank::ModelConfig;
use treemil::pipeline::{
    evaluate, label_set, new_bank, predict_all, prediction_record, run_stage1, run_stage2, split_holdout,
    DEFAULT_HOLDOUT,
};
use treemil::training::{LossRecord, TrainConfig};
use treemil::treemodel::Direction;
use treemil::ClassifierBank;

pub const STAGE1_CHECKPOINT: &str = "stage1.json";
pub const MODEL_CHECKPOINT: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const RUN_CONFIG: &str = "run_config.toml";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const RUMOR_REPORT: &str = "rumor_report.json";
pub const STANCE_REPORT: &str = "stance_report.json";
pub const REPORT_TABLE: &str = "report.txt";
pub const GRADCHECK_REPORT: &str = "gradcheck.json";
pub const SYNTH_DATASET: &str = "dataset.jsonl";

/// Failure classes and their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }
}

impl From<treemil::Error> for Failure {
    fn from(e: treemil::Error) -> Self {
        match e {
            treemil::Error::Divergence { .. } => Failure::Divergence(e.to_string()),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DirectionArg {
    Td,
    Bu,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Td => Direction::TopDown,
            DirectionArg::Bu => Direction::BottomUp,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "treemil", version, about = "Joint rumor verification and stance detection over propagation trees")]
pub struct Cli {
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for classifier training and prediction (default: all cores).
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-correlation dataset.
    Synth(SynthArgs),
    /// Train the classifier bank, then the aggregation encoder.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Write per-claim predictions with attention weights.
    Predict(PredictArgs),
    /// Compare every backward rule with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub claims_per_class: Option<usize>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// Also write a seeded train/test split with this test fraction.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Without it a seeded 20% holdout of the training set is used.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Pretrained embeddings (`V d` header, then `token v1 .. vd`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Stage-1 checkpoint to resume from; stage 1 is skipped.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Method label in the report table.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

/// Everything a run needs, as read from the config file and then patched by
/// flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| Failure::Input(format!("cannot serialize config: {e}")))
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn require_seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| Failure::Input("a seed is required (--seed or `seed` in the config)".into()))
    }

    fn apply_model_args(&mut self, a: &ModelArgs) {
        if let Some(d) = a.direction {
            self.model.direction = d.into();
        }
        if let Some(h) = a.hidden {
            self.model.hidden = h;
        }
        if let Some(d) = a.embed_dim {
            self.model.embed_dim = d;
        }
        if let Some(lr) = a.lr {
            self.train.lr = lr;
        }
        if let Some(e) = a.max_epochs {
            self.train.max_epochs = e;
        }
        if let Some(p) = a.patience {
            self.train.patience = p;
        }
        if let Some(s) = a.seed {
            self.seed = Some(s);
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a PathBuf> {
    let p = p.as_ref().ok_or_else(|| Failure::Input(format!("missing {what} path")))?;
    if !p.exists() {
        return Err(Failure::Input(format!("{what} file {} does not exist", p.display())));
    }
    Ok(p)
}

fn load(path: &Path) -> CliResult<Vec<PropagationTree>> {
    load_dataset(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_bank(path: &Path) -> CliResult<ClassifierBank> {
    if !path.exists() {
        return Err(Failure::Input(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::read(path)?;
    Ok(ClassifierBank::from_checkpoint(&ck)?)
}

fn save_bank(bank: &ClassifierBank, path: &Path) -> CliResult<()> {
    bank.to_checkpoint()?.write(path)?;
    Ok(())
}

pub fn cmd_synth(mut cfg: RunConfig, a: &SynthArgs) -> CliResult<PathBuf> {
    if let Some(s) = a.seed {
        cfg.seed = Some(s);
    }
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    cfg.synth.seed = cfg.require_seed()?;
    if let Some(n) = a.claims_per_class {
        cfg.synth.claims_per_class = n;
    }
    if let Some(r) = a.noise_rate {
        cfg.synth.noise_rate = r;
    }
    let trees = generate_synthetic(&cfg.synth)?;
    let out = cfg.out_dir();
    create_out(&out)?;
    let path = out.join(SYNTH_DATASET);
    write_dataset(&path, &trees)?;
    for v in &cfg.synth.veracities {
        let n = trees.iter().filter(|t| t.veracity == *v).count();
        println!("{v}: {n} claims");
    }
    let nodes: usize = trees.iter().map(|t| t.len()).sum();
    println!("{} claims, {} posts -> {}", trees.len(), nodes, path.display());
    if let Some(f) = a.test_fraction {
        let (train, test) = split_holdout(trees, f, cfg.synth.seed)?;
        write_dataset(&out.join("train.jsonl"), &train)?;
        write_dataset(&out.join("test.jsonl"), &test)?;
        println!("split: {} train, {} test", train.len(), test.len());
    }
    fs::write(out.join(RUN_CONFIG), cfg.to_toml()?)?;
    Ok(path)
}

/// Outcome of `train`: where the final checkpoint went and the loss log.
pub struct TrainOutcome {
    pub model: PathBuf,
    pub records: Vec<LossRecord>,
    pub skipped_stage1: bool,
}

pub fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> CliResult<TrainOutcome> {
    cfg.apply_model_args(&a.model);
    if a.train.is_some() {
        cfg.data.train = a.train.clone();
    }
    if a.validation.is_some() {
        cfg.data.validation = a.validation.clone();
    }
    if a.embeddings.is_some() {
        cfg.data.embeddings = a.embeddings.clone();
    }
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    let seed = cfg.require_seed()?;
    cfg.train.seed = seed;
    cfg.train.validate()?;
    cfg.model.validate()?;

    let train_all = load(required(&cfg.data.train, "training")?)?;
    let (train, val) = match &cfg.data.validation {
        Some(p) => (train_all, load(required(&Some(p.clone()), "validation")?)?),
        None => split_holdout(train_all, DEFAULT_HOLDOUT, seed)?,
    };
    if train.is_empty() {
        return Err(Failure::Input("training set is empty".into()));
    }
    info!("{} training claims, {} validation claims", train.len(), val.len());

    let out = cfg.out_dir();
    create_out(&out)?;
    fs::write(out.join(RUN_CONFIG), cfg.to_toml()?)?;

    let (mut bank, mut records, skipped) = match &cfg.checkpoint {
        Some(p) => {
            let bank = load_bank(p)?;
            if bank.config != cfg.model {
                warn!("model settings come from the checkpoint; config and flags are ignored");
            }
            info!("resuming from {}; stage 1 skipped", p.display());
            (bank, Vec::new(), true)
        }
        None => {
            let mut bank = new_bank(&train, &label_set(&train), &cfg.model, seed)?;
            if let Some(p) = &cfg.data.embeddings {
                let n = bank.vocab.load_embeddings(required(&Some(p.clone()), "embeddings")?)?;
                info!("{n} embedding rows loaded");
                let table = bank.vocab.embeddings().clone();
                for c in &mut bank.classifiers {
                    *c.store.get_mut(c.embedding) = table.clone();
                }
                *bank.agg.store.get_mut(bank.agg.embedding) = table;
            }
            let records = run_stage1(&mut bank, &train, &val, &cfg.train)?;
            save_bank(&bank, &out.join(STAGE1_CHECKPOINT))?;
            (bank, records, false)
        }
    };
    records.extend(run_stage2(&mut bank, &train, &val, &cfg.train)?);
    let model = out.join(MODEL_CHECKPOINT);
    save_bank(&bank, &model)?;
    write_jsonl(&out.join(TRAIN_LOG), &records)?;
    println!("{} classifiers trained; model -> {}", bank.len(), model.display());
    Ok(TrainOutcome {
        model,
        records,
        skipped_stage1: skipped,
    })
}

fn checkpoint_path(cfg: &RunConfig, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.checkpoint.clone())
        .or_else(|| cfg.out.as_ref().map(|o| o.join(MODEL_CHECKPOINT)))
        .ok_or_else(|| Failure::Input("missing --checkpoint".into()))
}

fn dump_predictions(bank: &ClassifierBank, trees: &[PropagationTree], path: &Path) -> CliResult<()> {
    let preds = predict_all(bank, trees)?;
    let records: Vec<_> = trees
        .iter()
        .zip(&preds)
        .map(|(t, p)| prediction_record(bank, t, p))
        .collect();
    write_jsonl(path, &records)
}

pub fn cmd_eval(mut cfg: RunConfig, a: &EvalArgs) -> CliResult<treemil::pipeline::Evaluation> {
    if a.test.is_some() {
        cfg.data.test = a.test.clone();
    }
    let ck = checkpoint_path(&cfg, &a.checkpoint)?;
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    let bank = load_bank(&ck)?;
    let trees = load(required(&cfg.data.test, "test")?)?;
    let out = cfg.out_dir();
    create_out(&out)?;

    let preds = predict_all(&bank, &trees)?;
    let method = a
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-MIL", bank.direction().to_string().to_uppercase()));
    let ev = evaluate(&method, &trees, &preds, &bank.veracities)?;

    let mut table = format!("rumor detection\n{}\n", ev.rumor.table());
    write_json(&out.join(RUMOR_REPORT), &ev.rumor)?;
    match &ev.stance {
        Some(s) => {
            table.push_str(&format!("\nstance detection\n{}\n", s.table()));
            write_json(&out.join(STANCE_REPORT), s)?;
        }
        None => {
            info!("no gold stances in the test set; stance report skipped");
            let _ = fs::remove_file(out.join(STANCE_REPORT));
        }
    }
    print!("{table}");
    fs::write(out.join(REPORT_TABLE), &table)?;
    let records: Vec<_> = trees
        .iter()
        .zip(&preds)
        .map(|(t, p)| prediction_record(&bank, t, p))
        .collect();
    write_jsonl(&out.join(PREDICTIONS), &records)?;
    Ok(ev)
}

pub fn cmd_predict(mut cfg: RunConfig, a: &PredictArgs) -> CliResult<PathBuf> {
    let ck = checkpoint_path(&cfg, &a.checkpoint)?;
    if let Some(out) = &a.out {
        cfg.out = Some(out.clone());
    }
    let bank = load_bank(&ck)?;
    let trees = load(required(&Some(a.input.clone()), "input")?)?;
    let out = cfg.out_dir();
    create_out(&out)?;
    let path = out.join(PREDICTIONS);
    dump_predictions(&bank, &trees, &path)?;
    println!("{} predictions -> {}", trees.len(), path.display());
    Ok(path)
}

/// Prints the table and turns any failing component into a check failure.
pub fn finish_gradcheck(report: &SuiteReport, out: Option<&Path>) -> CliResult<()> {
    print!("{}", report.table());
    if let Some(dir) = out {
        create_out(dir)?;
        write_json(&dir.join(GRADCHECK_REPORT), report)?;
    }
    let bad = report.failures();
    if bad.is_empty() {
        Ok(())
    } else {
        let names: Vec<&str> = bad.iter().map(|c| c.name.as_str()).collect();
        Err(Failure::Check(format!(
            "relative error above {:e} in: {}",
            report.tolerance,
            names.join(", ")
        )))
    }
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<SuiteReport> {
    let report = standard_suite(a.seed)?;
    finish_gradcheck(&report, a.out.as_deref())?;
    Ok(report)
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.parallel {
        if n == 0 {
            return Err(Failure::Input("--parallel must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Synth(a) => cmd_synth(cfg, a).map(drop),
        Command::Train(a) => cmd_train(cfg, a).map(drop),
        Command::Eval(a) => cmd_eval(cfg, a).map(drop),
        Command::Predict(a) => cmd_predict(cfg, a).map(drop),
        Command::Gradcheck(a) => cmd_gradcheck(a).map(drop),
    }
}
