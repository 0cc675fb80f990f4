//! `expandrank`: stagewise commands and a one-shot pipeline.
//!
//! Every command writes its outputs atomically once the whole stage has
//! succeeded, plus a manifest next to them. Failures print
//! `error[<class>]: <detail>` on stderr and exit with status 1.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use settings::Overrides;

#[derive(Debug, Parser)]
#[command(name = "expandrank", version, about = "Expand-retrieve-rerank retrieval over multimodal queries")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Caption query images; writes the query file with captions filled in.
    Caption {
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine question and caption, then expand; writes the query file.
    Expand {
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed the corpus into a document-vector file for dense retrieval.
    Index {
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-K0 candidates per query, one ranked list per line.
    Retrieve {
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerank passes over retrieved candidates, one outcome per line.
    Rerank {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse rerank passes into final top-K1 lists.
    Fuse {
        #[arg(long)]
        candidates: PathBuf,
        /// Output of `rerank`. Named apart from the global `--passes` count.
        #[arg(long = "rerank-out")]
        rerank_out: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score ranked lists against the qrels; prints the table.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every enabled stage in one go; writes all artifacts into a directory.
    Pipeline {
        #[arg(long)]
        out: PathBuf,
    },
    /// BM25 hard negatives per judged query.
    MineNegatives {
        #[arg(long)]
        out: PathBuf,
        /// Negatives per query; defaults to `hard_negatives` from the config.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Contrastive training of a linear toy encoder on synthetic data.
    TrainToy(commands::TrainToyArgs),
    /// Comparative runs over a configuration grid.
    Sweep {
        #[arg(long, value_enum, default_value = "ladder")]
        grid: commands::Grid,
        /// Retrieval depths for `--grid k0`.
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        depths: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("EXPANDRANK_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .without_time()
        .init();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error[io]: cannot start runtime: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(commands::run(cli.command, &cli.overrides)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
