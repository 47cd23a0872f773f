mod commands;
mod config;
mod oracle;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simulmt::synth::{Task, TaskSpec};
use simulmt::trainer::Mode;

use config::RunConfig;

/// A command failure, reported as one line on stderr.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new("io", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind, self.message)
    }
}

macro_rules! failure_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Failure::new($kind, e.to_string())
            }
        })*
    };
}

failure_from! {
    simulmt::data::DataError => "data",
    simulmt::model::ModelError => "model",
    simulmt::trainer::TrainError => "train",
    simulmt::eval::EvalError => "eval",
}

#[derive(Parser)]
#[command(name = "simulmt", version, about = "Simultaneous translation with an adaptive wait token")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PolicyArgs {
    /// Decode with this policy instead of the trained one.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    k: Option<usize>,
}

impl PolicyArgs {
    fn pair(&self) -> (Option<Mode>, Option<usize>) {
        (self.mode, self.k)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthTask {
    Copy,
    Reverse,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges from a tokenised text file.
    BpeTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 8000)]
        merges: usize,
        #[arg(long)]
        model: PathBuf,
        /// Also write a vocabulary of the segmented text.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 4000)]
        vocab_size: usize,
    },
    /// Train a model; everything lands in the run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        k: Option<String>,
        #[arg(long)]
        alpha: Option<String>,
        #[arg(long)]
        lr: Option<String>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        threads: Option<String>,
        /// Override any config key, e.g. `--set max_epochs=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Translate one sentence per line.
    Translate {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write READ/WRITE traces to this file.
        #[arg(long, value_name = "PATH")]
        emit_traces: Option<PathBuf>,
    },
    /// Score translations of a test set: BLEU and first-output latency.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Metrics file; defaults to metrics.tsv in the run directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic parallel corpus with known structure.
    Synth {
        #[arg(long, value_enum)]
        task: SynthTask,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        min_len: usize,
        #[arg(long, default_value_t = 12)]
        max_len: usize,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Randomised self-check of the CTC loss and its gradient.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BpeTrain {
            input,
            merges,
            model,
            vocab,
            vocab_size,
        } => commands::bpe_train(&input, merges, &model, vocab.as_deref(), vocab_size),
        Command::Train {
            config,
            run_dir,
            mode,
            k,
            alpha,
            lr,
            seed,
            threads,
            overrides,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            let flags = [
                ("mode", mode),
                ("k", k),
                ("alpha", alpha),
                ("learning_rate", lr),
                ("seed", seed),
                ("threads", threads),
            ];
            for (key, value) in flags {
                if let Some(v) = value {
                    cfg.set(key, &v)?;
                }
            }
            for pair in &overrides {
                cfg.set_pair(pair)?;
            }
            commands::train(&cfg, &run_dir)
        }
        Command::Translate {
            run_dir,
            input,
            output,
            policy,
            emit_traces,
        } => commands::translate(&run_dir, &input, output.as_deref(), policy.pair(), emit_traces.as_deref()),
        Command::Evaluate {
            run_dir,
            source,
            reference,
            policy,
            report,
        } => commands::evaluate_run(&run_dir, &source, &reference, policy.pair(), report.as_deref()),
        Command::Synth {
            task,
            count,
            seed,
            min_len,
            max_len,
            source,
            target,
        } => {
            if min_len == 0 || min_len > max_len {
                return Err(Failure::new("config", format!("bad length range {min_len}..={max_len}")));
            }
            let task = match task {
                SynthTask::Copy => Task::Copy,
                SynthTask::Reverse => Task::Reverse,
            };
            let spec = TaskSpec {
                min_len,
                max_len,
                ..TaskSpec::new(task)
            };
            commands::synth(&spec, count, seed, &source, &target)
        }
        Command::OracleCheck { trials, seed } => {
            let report = oracle::run(trials, seed);
            match report.first_failure {
                None => {
                    println!("OK {}/{}", report.passed, report.trials);
                    Ok(())
                }
                Some(first) => {
                    println!("FAIL {}/{} passed; {first}", report.passed, report.trials);
                    Err(Failure::new("oracle", format!("{} of {} trials failed", report.trials - report.passed, report.trials)))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
