use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod service;
mod store;

#[derive(Parser)]
#[command(name = "mudscope", version, about = "Analyze MUD files: validate, merge, prune and graph device connectivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Json,
    Dot,
}

#[derive(Subcommand)]
enum Command {
    /// Check MUD files and print one report per file.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// One JSON object per line instead of text.
        #[arg(long)]
        json: bool,
        /// Rewrite files in canonical form when they carry fixable issues.
        #[arg(long)]
        fix: bool,
    },
    /// Build the connectivity graph of a set of MUD files.
    Graph(commands::GraphArgs),
    /// Report ACEs made redundant by other ACEs in the same file.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8520)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, env = "MUDSCOPE_STATE_DIR", default_value = "mudscope-state")]
        state_dir: PathBuf,
        /// Serve a built web UI from this directory.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Load N copies of one profile and report phase timings and peak memory.
    Bench {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        copies: u32,
        #[arg(long)]
        file: PathBuf,
        /// Write the exported graph here instead of discarding it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { paths, json, fix } => commands::validate(&paths, json, fix),
        Command::Graph(args) => commands::graph(&args),
        Command::Report { paths } => commands::report(&paths),
        Command::Serve { port, bind, state_dir, static_dir } => service::run(&bind, port, state_dir, static_dir),
        Command::Bench { copies, file, out } => commands::bench(copies as usize, &file, out.as_deref()),
    };
    ExitCode::from(code)
}
