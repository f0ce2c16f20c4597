use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod transcript;

/// Frame-wise label simulation from CTC alignments, plus the CTC /
/// transducer losses, decoders and metrics around it.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "spikealign", version, about)]
pub struct Cli {
    /// Worker threads for per-utterance work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Manifest and the tensor key to read for each utterance.
#[derive(Debug, Args)]
pub struct Inputs {
    /// Utterance manifest (TSV).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest tensor key holding the per-utterance scores.
    #[arg(long, default_value = "logits")]
    pub key: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CTC loss and logit gradient per utterance.
    CtcLoss {
        #[command(flatten)]
        inputs: Inputs,
        /// Writes `losses.tsv` and `grad/<id>.bin`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Best-path CTC alignment, written as hard frame-label records.
    CtcAlign {
        #[command(flatten)]
        inputs: Inputs,
        /// `viterbi` or `occupation-argmax`.
        #[arg(long, default_value = "viterbi")]
        alignment: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-wise targets from teacher CTC logits by spike expansion.
    SimulateLabels {
        #[command(flatten)]
        inputs: Inputs,
        /// Fraction of the blank gap before a spike given to that spike.
        #[arg(long, default_value_t = 0.2)]
        r_left: f64,
        /// Fraction of the blank gap after a spike given to that spike.
        #[arg(long, default_value_t = 0.6)]
        r_right: f64,
        /// `hard` or `soft`.
        #[arg(long, default_value = "soft")]
        mode: String,
        /// `viterbi` or `occupation-argmax`.
        #[arg(long, default_value = "viterbi")]
        alignment: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-wise CE loss and gradient of student logits against label records.
    PretrainLoss {
        #[command(flatten)]
        inputs: Inputs,
        /// Label records from `simulate-labels`.
        #[arg(long)]
        labels: PathBuf,
        /// Writes `losses.tsv` and `grad/<id>.bin`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Transducer loss and gradient from joint scores of shape T x (U+1) x V.
    RnntLoss {
        #[command(flatten)]
        inputs: Inputs,
        /// Writes `losses.tsv` and `grad/<id>.bin`.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Transducer decoding of encoder logits with an optional bigram table.
    Decode {
        #[command(flatten)]
        inputs: Inputs,
        /// V x V bias added to the encoder scores, indexed by the last token.
        #[arg(long)]
        bigram: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        /// Greedy search instead of beam search.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 4)]
        max_symbols: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word error rate between two transcript files (`id<TAB>words`).
    Wer {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", value_name = "REF")]
        reference: PathBuf,
        /// JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Emission latency of decodes against manifest word end frames.
    Latency {
        /// Decode records from `decode`.
        #[arg(long)]
        decodes: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Duration of one model frame in milliseconds.
        #[arg(long, default_value_t = 40.0)]
        frame_ms: f64,
        /// JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic end-to-end run: teacher, label simulation, pre-training,
    /// transducer training from scratch and from pre-trained encoders.
    ToyRun {
        /// TOML config; built-in defaults when absent.
        #[arg(long, env = "SPIKEALIGN_CONFIG")]
        config: Option<PathBuf>,
        /// Single seed (overrides the config's seed).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Comma-separated seeds; the summary averages over them.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
