use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ragrepair::cli::{cmd_index, cmd_repair, cmd_retrieve, RetrieveStage};

#[derive(Parser)]
#[command(name = "ragrepair", version, about = "Retrieval-augmented automated program repair")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Sig,
    Snip,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a project and write its function index.
    Index {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Include glob, repeatable. Defaults to **/*.java.
        #[arg(long = "include")]
        include: Vec<String>,
        #[arg(long = "exclude")]
        exclude: Vec<String>,
    },
    /// Run the repair pipeline for one bug or all bugs.
    Repair {
        #[arg(long)]
        config: PathBuf,
        /// Bug id, or `all`.
        #[arg(long)]
        bug: String,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Print the ranked retrieval results for one bug.
    Retrieve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bug: String,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        k: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let code = match cli.command {
        Command::Index {
            project,
            out: index_out,
            include,
            exclude,
        } => cmd_index(&project, &index_out, &include, &exclude, &mut out, &mut err),
        Command::Repair { config, bug, parallel } => cmd_repair(&config, &bug, parallel.max(1), &mut out, &mut err),
        Command::Retrieve { config, bug, stage, k } => {
            let stage = match stage {
                StageArg::Sig => RetrieveStage::Sig,
                StageArg::Snip => RetrieveStage::Snip,
            };
            cmd_retrieve(&config, &bug, stage, k, &mut out, &mut err)
        }
    };
    ExitCode::from(code as u8)
}
