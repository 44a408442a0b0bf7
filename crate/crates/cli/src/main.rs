//! `unids`: build corpora, train, evaluate, probe and serve the model.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 config file not
//! found, 4 corpus format, 5 checkpoint/vocabulary mismatch.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{set, ConfigNotFound, Overrides};

#[derive(Debug, Parser)]
#[command(name = "unids", version, about = "Unified chit-chat and task-oriented dialogue system")]
pub struct Cli {
    /// Write the run manifest here instead of next to the main output.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus construction.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Entity database utilities.
    #[command(subcommand)]
    Db(DbCmd),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Switching and robustness protocols.
    #[command(subcommand)]
    Harness(HarnessCmd),
    /// Train and evaluate across a range of settings.
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Talk to a checkpoint in the terminal.
    Chat(ChatArgs),
    /// Serve the HTTP chat API.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum CorpusCmd {
    /// Filter chit-chat threads, synthesize task dialogues and mix them.
    Build(CorpusBuildArgs),
}

#[derive(Debug, Subcommand)]
enum DbCmd {
    /// Check a database file against the slot registry.
    Validate {
        #[arg(long)]
        db: PathBuf,
    },
    /// Write the synthetic fixture database.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum EvalCmd {
    /// Run the pipeline over a corpus and score it.
    Run(EvalRunArgs),
}

#[derive(Debug, Subcommand)]
enum HarnessCmd {
    /// Switch-n after a prefix of the other dialogue type.
    Switch(SwitchArgs),
    /// Combined score with chit-chat turns spliced into task dialogues.
    Robust(RobustArgs),
}

#[derive(Debug, Subcommand)]
enum SweepCmd {
    /// Train and evaluate one model per recommendation weight.
    W(SweepWArgs),
}

#[derive(Debug, Args)]
struct CorpusFlags {
    #[arg(long)]
    chit_count: Option<usize>,
    #[arg(long)]
    tod_count: Option<usize>,
    /// Seed for task-dialogue synthesis and mixing.
    #[arg(long)]
    corpus_seed: Option<u64>,
    /// Annotate chit-chat beliefs with `[chit]` only (ablation).
    #[arg(long)]
    no_chit_belief: bool,
}

impl CorpusFlags {
    fn overrides(&self, out: &mut Overrides) {
        set(out, "corpus", "chit_count", self.chit_count.map(|v| v as i64));
        set(out, "corpus", "tod_count", self.tod_count.map(|v| v as i64));
        set(out, "corpus", "seed", self.corpus_seed.map(|v| v as i64));
        set(out, "corpus", "chit_belief_enabled", self.no_chit_belief.then_some(false));
    }
}

#[derive(Debug, Args)]
struct CorpusBuildArgs {
    /// Raw chit-chat threads, one utterance per line, blank line between
    /// threads. Defaults to the bundled synthetic threads.
    #[arg(long)]
    chit: Option<PathBuf>,
    /// Entity database JSON. Defaults to the synthetic fixture database.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    corpus: CorpusFlags,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    /// Dialogues per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss weight on entity-recommendation act tokens.
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

impl TrainFlags {
    fn overrides(&self, out: &mut Overrides) {
        set(out, "train", "epochs", self.epochs.map(|v| v as i64));
        set(out, "train", "learning_rate", self.learning_rate);
        set(out, "train", "batch_size", self.batch_size.map(|v| v as i64));
        set(out, "train", "recommend_weight", self.w);
        set(out, "train", "seed", self.seed.map(|v| v as i64));
        set(out, "train", "grad_clip_norm", self.grad_clip);
        set(out, "train", "weight_decay", self.weight_decay);
        set(out, "model", "layers", self.layers.map(|v| v as i64));
        set(out, "model", "heads", self.heads.map(|v| v as i64));
        set(out, "model", "embed_dim", self.embed_dim.map(|v| v as i64));
        set(out, "model", "ffn_dim", self.ffn_dim.map(|v| v as i64));
        set(out, "model", "max_seq_len", self.max_seq_len.map(|v| v as i64));
        set(out, "model", "dropout", self.dropout);
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpus (JSON lines).
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint path; the vocabulary is written next to it as `.vocab`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the checkpoint path with a `.vocab` extension.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Defaults to the synthetic fixture database.
    #[arg(long)]
    db: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Tod,
    Chit,
    Both,
}

#[derive(Debug, Args)]
struct EvalRunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Tod)]
    mode: Mode,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SetupKind {
    ChitFirst,
    TodFirst,
}

#[derive(Debug, Args)]
struct SwitchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Corpus holding both chit-chat and task dialogues.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    setup: SetupKind,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 2)]
    prefix_turns: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RobustArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Task dialogues to perturb; its chit-chat dialogues are the noise pool
    /// unless `--noise-pool` is given.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    noise_pool: Option<PathBuf>,
    /// Chit-chat turns to insert per dialogue.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=2))]
    turns: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepWArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 5.0])]
    values: Vec<f64>,
    #[arg(long)]
    corpus: PathBuf,
    /// Held-out task dialogues for evaluation.
    #[arg(long)]
    eval_corpus: PathBuf,
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct ChatArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, env = "UNIDS_HOST")]
    host: Option<String>,
    #[arg(long, env = "UNIDS_PORT")]
    port: Option<u16>,
    /// Built web client to serve at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    ttl_minutes: Option<u64>,
}

/// Maps an error to its documented exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigNotFound>().is_some() {
        return 3;
    }
    match err.downcast_ref::<unids::Error>() {
        Some(unids::Error::CorpusFormat { .. }) => 4,
        Some(unids::Error::VocabMismatch { .. }) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
