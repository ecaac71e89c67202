use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use texgram::{Overrides, Pipeline, PipelineConfig, PipelineError, Stage};
use texgram_core::infotheory::EntropyMethod;
use texgram_core::rdm::DistanceVariant;

/// Gram-matrix texture statistics pipeline.
#[derive(Debug, Parser)]
#[command(name = "texgram", version)]
struct Cli {
    /// Stage to run; upstream stages are computed or taken from the cache.
    stage: Stage,
    /// JSON pipeline configuration.
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one configured model.
    #[arg(long)]
    model: Option<String>,
    /// Restrict rdm, cluster and heatmaps to one tap (1-based).
    #[arg(long)]
    layer: Option<usize>,
    /// Number of clusters (default: number of classes).
    #[arg(long)]
    k: Option<usize>,
    /// MI estimator for best-layer selection: plugin or nsb
    #[arg(long, value_parser = parse_method)]
    mi_method: Option<EntropyMethod>,
    /// RDM distance: upper-tri or full-frobenius
    #[arg(long, value_parser = parse_distance)]
    distance: Option<DistanceVariant>,
    /// Seed for synthesis initialization
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for published artifacts and the report.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<EntropyMethod, String> {
    s.parse()
}

fn parse_distance(s: &str) -> Result<DistanceVariant, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let overrides = Overrides {
        model: cli.model,
        layer: cli.layer,
        k: cli.k,
        mi_method: cli.mi_method,
        distance: cli.distance,
        seed: cli.seed,
        out: cli.out,
    };
    let settings = PipelineConfig::load(&cli.config)?.apply(overrides)?;
    Pipeline::new(settings).run(cli.stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("texgram: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
