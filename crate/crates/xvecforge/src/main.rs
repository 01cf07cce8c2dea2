use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use xvecforge::{Pipeline, PipelineConfig, Stage};

const STAGES: [&str; 12] = [
    "gen-corpus",
    "features",
    "train-ubm",
    "bw-stats",
    "train-tv",
    "extract-ivec",
    "train-embedder",
    "extract-xvec",
    "train-backend",
    "score",
    "evaluate",
    "run-all",
];

/// Speaker-embedding experiments, one pipeline stage per invocation.
#[derive(Parser, Debug)]
#[command(name = "xvecforge", version)]
struct Cli {
    /// Stage to run, or `run-all` for every stage the configured system needs.
    #[arg(value_parser = STAGES)]
    stage: String,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured working directory.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: &Cli) -> xvecforge::Result<()> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(w) = &cli.workdir {
        config.workdir = w.clone();
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Ok(t) = std::env::var("XVECFORGE_THREADS") {
        config.threads = t
            .trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .ok_or_else(|| xvecforge::Error::Invalid(format!("XVECFORGE_THREADS must be a positive integer, got `{t}`")))?;
    }
    let pipeline = Pipeline::new(config);
    match cli.stage.as_str() {
        "run-all" => pipeline.run_all(),
        s => pipeline.run(s.parse::<Stage>()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
