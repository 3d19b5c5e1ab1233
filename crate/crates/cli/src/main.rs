//! `gdiff`: dataset generation, training, sampling and evaluation.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 when a
//! file cannot be read or written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gdiff_core::checkpoint::{file_sha256, Checkpoint};
use gdiff_core::config::RunConfig;
use gdiff_core::ctmc::{NoiseSpecs, ReferenceKind};
use gdiff_core::dataset::{generate_dataset, split_train_test, DatasetKind, DatasetSpec};
use gdiff_core::jsonl::{read_jsonl, write_jsonl};
use gdiff_core::metrics::{evaluate, Statistic};
use gdiff_core::sampler::{generate, NodeCount, SamplerConfig};
use gdiff_core::trainer::train_checkpoint;
use gdiff_core::Error;

#[derive(Debug, Parser)]
#[command(name = "gdiff", version, about = "Continuous-time discrete diffusion for graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSONL.
    Dataset(DatasetArgs),
    /// Train a denoiser and write a checkpoint.
    Train(TrainArgs),
    /// Generate graphs from a checkpoint.
    Sample(SampleArgs),
    /// Score generated graphs against train and test sets.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    kind: DatasetKind,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: u64,
    /// All graphs, or the training split when --test-out is given.
    #[arg(long)]
    out: PathBuf,
    /// Split 80/20 by seed and write the held-out part here.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// CSV log with columns step,epoch,mean_loss.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Overrides train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides train.lr.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    num: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Reference distribution; must match the checkpoint unless --force.
    #[arg(long)]
    reference: Option<ReferenceKind>,
    /// Schedule alpha; must match the checkpoint unless --force.
    #[arg(long)]
    alpha: Option<f64>,
    /// Schedule gamma; must match the checkpoint unless --force.
    #[arg(long)]
    gamma: Option<f64>,
    /// Accept noise settings that differ from the checkpoint.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of deg,clus,orbit.
    #[arg(long, default_value = "deg,clus,orbit", value_delimiter = ',')]
    metrics: Vec<Statistic>,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    /// Wraps a library error, prefixing the flag or file it concerns.
    fn from_core(context: impl std::fmt::Display, e: Error) -> Self {
        let code = if e.is_io() { 2 } else { 1 };
        Self {
            code,
            message: format!("{context}: {e}"),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_graphs(flag: &str, path: &Path) -> Result<Vec<gdiff_core::graph::CategoricalGraph>, Failure> {
    read_jsonl(path).map_err(|e| Failure::from_core(format!("--{flag}"), e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn run_dataset(a: DatasetArgs) -> CmdResult {
    let graphs = generate_dataset(&DatasetSpec {
        kind: a.kind,
        count: a.count,
        seed: a.seed,
    });
    match &a.test_out {
        None => write_jsonl(&a.out, &graphs).map_err(|e| Failure::from_core("--out", e)),
        Some(test_out) => {
            let (train, test) = split_train_test(&graphs, a.seed);
            write_jsonl(&a.out, &train).map_err(|e| Failure::from_core("--out", e))?;
            write_jsonl(test_out, &test).map_err(|e| Failure::from_core("--test-out", e))
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let cfg: RunConfig =
        toml::from_str(&text).map_err(|e| Failure::invalid(format!("--config {}: {e}", path.display())))?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> CmdResult {
    let mut cfg = load_config(&a.config)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()
        .map_err(|e| Failure::from_core(format!("--config {}", a.config.display()), e))?;
    let data = read_graphs("data", &a.data)?;
    let mut log = String::from("step,epoch,mean_loss\n");
    let ck = train_checkpoint(&data, &cfg, |l| {
        let _ = writeln!(log, "{},{},{}", l.step, l.epoch, l.mean_loss);
    })
    .map_err(|e| Failure::from_core("train", e))?;
    let bytes = ck.to_bytes().map_err(|e| Failure::from_core("--out", e))?;
    write_file(&a.out, bytes)?;
    if let Some(path) = &a.log {
        write_file(path, log)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SampleMeta {
    seed: u64,
    steps: usize,
    num: usize,
    reference: ReferenceKind,
    alpha: f64,
    gamma: f64,
    checkpoint_sha256: String,
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn check_override<T: PartialEq + std::fmt::Display>(
    flag: &str,
    given: Option<T>,
    stored: T,
    force: bool,
) -> Result<T, Failure> {
    match given {
        Some(v) if v != stored && !force => Err(Failure::invalid(format!(
            "--{flag}: config mismatch: checkpoint was trained with {flag} = {stored}, got {v} (pass --force to override)"
        ))),
        Some(v) => Ok(v),
        None => Ok(stored),
    }
}

fn run_sample(a: SampleArgs) -> CmdResult {
    if a.steps == 0 {
        return Err(Failure::invalid("--steps: at least one sampling step is required"));
    }
    let ck = Checkpoint::load(&a.ckpt).map_err(|e| Failure::from_core("--ckpt", e))?;
    let mut noise = ck.noise;
    noise.reference = check_override("reference", a.reference, noise.reference, a.force)?;
    noise.alpha = check_override("alpha", a.alpha, noise.alpha, a.force)?;
    noise.gamma = check_override("gamma", a.gamma, noise.gamma, a.force)?;
    let sched = noise.schedule().map_err(|e| Failure::from_core("--alpha/--gamma", e))?;
    let specs = NoiseSpecs::from_kind(noise.reference, ck.alphabet, &ck.node_marginal, &ck.edge_marginal)
        .map_err(|e| Failure::from_core("--reference", e))?;
    let model = ck.build_model().map_err(|e| Failure::from_core("--ckpt", e))?;
    let cfg = SamplerConfig {
        steps: a.steps,
        count: a.num,
        seed: a.seed,
        nodes: NodeCount::Sizes(ck.sizes.clone()),
    };
    let graphs = generate(&model, &specs, &sched, &cfg).map_err(|e| Failure::from_core("sample", e))?;
    write_jsonl(&a.out, &graphs).map_err(|e| Failure::from_core("--out", e))?;
    let meta = SampleMeta {
        seed: a.seed,
        steps: a.steps,
        num: a.num,
        reference: noise.reference,
        alpha: noise.alpha,
        gamma: noise.gamma,
        checkpoint_sha256: file_sha256(&a.ckpt).map_err(|e| Failure::from_core("--ckpt", e))?,
    };
    let meta_out = meta_path(&a.out);
    let text = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    write_file(&meta_out, text + "\n")
}

fn run_eval(a: EvalArgs) -> CmdResult {
    let gen = read_graphs("gen", &a.gen)?;
    if gen.is_empty() {
        return Err(Failure::invalid(format!("--gen {}: empty generated set", a.gen.display())));
    }
    let train = read_graphs("train", &a.train)?;
    let test = read_graphs("test", &a.test)?;
    if test.is_empty() {
        return Err(Failure::invalid(format!("--test {}: empty test set", a.test.display())));
    }
    let report = evaluate(&gen, &train, &test, &a.metrics).map_err(|e| Failure::from_core("eval", e))?;
    let text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    write_file(&a.out, text + "\n")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Dataset(a) => run_dataset(a),
        Command::Train(a) => run_train(a),
        Command::Sample(a) => run_sample(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
