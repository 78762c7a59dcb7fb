//! `moe-absa`: preprocessing, corpus generation, the three training stages,
//! evaluation and routing diagnostics.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 3 for
//! data errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use moe_absa::pipeline::{Stage, DEFAULT_SEED};
use moe_absa::Error;

#[derive(Parser)]
#[command(name = "moe-absa", version, about = "Sparse MoE routing for aspect-based sentiment analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the review column of a `review,Category,sentiment` CSV
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Two-column `wrong,correct` spelling table replacing the shipped one
        #[arg(long)]
        spelling: Option<PathBuf>,
        /// Recorded in the sidecar metadata [default: 42]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a seeded synthetic corpus
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        output: PathBuf,
        /// Corpus seed [default: 42]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one stage on an 80/10/10 split of a corpus
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a corpus
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// train, validation, test or all
        #[arg(long, default_value = "test")]
        split: String,
        /// Split seed [default: the checkpoint's seed]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the heatmap and utilization from a routing trace
    RouteStats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 6)]
        experts: usize,
        /// Recorded in the outputs [default: 42]
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
pub struct TrainArgs {
    /// sentiment, acd or absa
    stage: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Flat key=value file applied before the flags below
    #[arg(long)]
    config: Option<PathBuf>,
    /// Unlabeled corpus to pseudo-label after sentiment training
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Training and split seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// [default: 2e-5 sentiment, 1.7e-5 acd, 1.8552e-5 absa]
    #[arg(long)]
    learning_rate: Option<String>,
    /// [default: 32 sentiment, 8 acd, 8 absa]
    #[arg(long)]
    batch_size: Option<String>,
    /// [default: 4 sentiment, 4 acd, 3 absa]
    #[arg(long)]
    epochs: Option<String>,
    /// dynamic or hard_gate [default: dynamic]
    #[arg(long)]
    routing: Option<String>,
    /// [default: 3]
    #[arg(long)]
    top_k: Option<String>,
    /// [default: 1.8]
    #[arg(long)]
    capacity_factor: Option<String>,
    /// Gumbel noise scale during training [default: 0.098323]
    #[arg(long)]
    noise_scale: Option<String>,
    /// Embedding width of the hashed encoder [default: 256]
    #[arg(long)]
    dim: Option<String>,
    /// Precomputed embedding file instead of the hashed encoder
    #[arg(long)]
    embeddings: Option<String>,
    /// Any config key, repeatable: --set lambda_aux=0.02
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl TrainArgs {
    fn stage(&self) -> moe_absa::Result<Stage> {
        self.stage.parse()
    }

    /// Flag overrides as config pairs, applied in a fixed order.
    fn overrides(&self) -> moe_absa::Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = [
            ("seed", self.seed.map(|s| s.to_string())),
            ("learning_rate", self.learning_rate.clone()),
            ("batch_size", self.batch_size.clone()),
            ("epochs", self.epochs.clone()),
            ("routing", self.routing.clone()),
            ("top_k", self.top_k.clone()),
            ("capacity_factor", self.capacity_factor.clone()),
            ("noise_scale", self.noise_scale.clone()),
            ("dim", self.dim.clone()),
            ("embeddings", self.embeddings.clone()),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
            out.push((k.trim().replace('-', "_"), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Dimension { .. } => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess {
            input,
            output,
            spelling,
            seed,
        } => commands::preprocess(&input, &output, spelling.as_deref(), seed.unwrap_or(DEFAULT_SEED)),
        Command::Synth { n, output, seed } => commands::synth(n, &output, seed.unwrap_or(DEFAULT_SEED)),
        Command::Train(args) => commands::train(&args),
        Command::Eval {
            checkpoint,
            data,
            out_dir,
            split,
            seed,
        } => commands::eval(&checkpoint, &data, &out_dir, &split, seed),
        Command::RouteStats {
            trace,
            out_dir,
            experts,
            seed,
        } => commands::route_stats(&trace, &out_dir, experts, seed.unwrap_or(DEFAULT_SEED)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
