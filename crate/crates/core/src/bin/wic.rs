use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use wic_contrast::config::{parse_override, RunConfig};
use wic_contrast::pipeline as p;
use wic_contrast::Error;

/// Contrastive word-in-context training and evaluation.
#[derive(Parser)]
#[command(name = "wic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config value, e.g. `--set finetune.tau=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; receives the resolved config.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic corpora and evaluation sets.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Masked-language-model pretraining from scratch.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Contrastive fine-tuning of a checkpoint on raw sentences.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    EvalWic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Also report dev accuracy of every single layer.
        #[arg(long)]
        per_layer: bool,
    },
    EvalSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
    EvalWsd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Isotropy, random-word and intra-sentence similarity per layer.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    DumpEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Targeted sentences, `sentence<TAB>start:end` per line.
        #[arg(long)]
        input: PathBuf,
    },
    /// Fine-tune once per value of one knob and evaluate each.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// dropout, span_k, layers or corpus_size
        #[arg(long)]
        knob: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenSynth { .. } => "gen-synth",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::EvalWic { .. } => "eval-wic",
            Command::EvalSim { .. } => "eval-sim",
            Command::EvalWsd { .. } => "eval-wsd",
            Command::Analyze { .. } => "analyze",
            Command::DumpEmbeddings { .. } => "dump-embeddings",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenSynth { common }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::EvalWic { common, .. }
            | Command::EvalSim { common, .. }
            | Command::EvalWsd { common, .. }
            | Command::Analyze { common, .. }
            | Command::DumpEmbeddings { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

fn resolve(cmd: &Command) -> anyhow::Result<RunConfig> {
    let c = cmd.common();
    let text = match &c.config {
        Some(path) => Some(
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let mut overrides = c.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = c.seed {
        overrides.push(("seed".into(), seed.into()));
    }
    if let Command::Sweep { knob, values, .. } = cmd {
        if let Some(k) = knob {
            let k: wic_contrast::config::SweepKnob = k.parse()?;
            overrides.push(("sweep.knob".into(), k.name().into()));
        }
        if !values.is_empty() {
            overrides.push(("sweep.values".into(), serde_json::to_value(values)?));
        }
    }
    Ok(RunConfig::resolve(text.as_deref(), &overrides)?)
}

fn run(cmd: &Command) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = resolve(cmd)?;
    let out: &Path = &cmd.common().out;
    let files = match cmd {
        Command::GenSynth { .. } => p::cmd_gen_synth(&cfg, out),
        Command::Pretrain { corpus, .. } => p::cmd_pretrain(&cfg, corpus, out),
        Command::Finetune { checkpoint, corpus, .. } => p::cmd_finetune(&cfg, checkpoint, corpus, out),
        Command::EvalWic {
            checkpoint,
            dev,
            test,
            per_layer,
            ..
        } => p::cmd_eval_wic(&cfg, checkpoint, dev, test, *per_layer, out),
        Command::EvalSim { checkpoint, pairs, .. } => p::cmd_eval_sim(&cfg, checkpoint, pairs, out),
        Command::EvalWsd {
            checkpoint, exemplars, test, ..
        } => p::cmd_eval_wsd(&cfg, checkpoint, exemplars, test, out),
        Command::Analyze { checkpoint, corpus, .. } => p::cmd_analyze(&cfg, checkpoint, corpus, out),
        Command::DumpEmbeddings { checkpoint, input, .. } => p::cmd_dump_embeddings(&cfg, checkpoint, input, out),
        Command::Sweep {
            checkpoint,
            corpus,
            dev,
            test,
            ..
        } => p::cmd_sweep(&cfg, checkpoint, corpus, dev, test, out),
    };
    files.with_context(|| format!("{} failed", cmd.name()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(|e| e.exit_code() as u8)
        .unwrap_or(if err.is::<serde_json::Error>() { 1 } else { 2 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // library errors already embed their source in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
