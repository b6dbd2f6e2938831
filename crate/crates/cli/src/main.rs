//! `urban3d` command-line front end.
//!
//! Exit codes: 0 success, 1 pipeline or I/O failure (stage named on stderr),
//! 2 usage or configuration error.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use urban3d_core::pipeline::{Pipeline, PipelineConfig, PipelineError, Stage};
use urban3d_core::scene;

const KEY_ENV: &str = "CENERGY_OPENTOPO_KEY";

#[derive(Parser)]
#[command(name = "urban3d", version, about = "Generate 3D urban energy scenes from open data")]
struct Cli {
    /// Log progress and per-stage timings to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the scene for one place and write its figure JSON.
    Generate(GenerateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Run a live generation and record every upstream exchange as fixtures.
    RecordFixtures(RecordArgs),
}

#[derive(Args)]
struct Source {
    /// Replay recorded fixtures instead of touching the network.
    #[arg(long)]
    offline: bool,
    /// Fixture directory used by --offline and --record.
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
    /// JSON pipeline configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Place name, e.g. "Rousay-Orkney Islands-Scotland".
    #[arg(long)]
    place: String,
    /// OpenTopography API key.
    #[arg(long, env = KEY_ENV, hide_env_values = true, default_value = "")]
    api_key: String,
    /// Figure JSON destination, `-` for standard output.
    #[arg(long, default_value = "-", value_name = "PATH|-")]
    out: String,
    /// Also write a standalone HTML page.
    #[arg(long, value_name = "PATH")]
    html: Option<PathBuf>,
    /// Record upstream exchanges into --fixtures while generating.
    #[arg(long, conflicts_with = "offline")]
    record: bool,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8000")]
    addr: SocketAddr,
    #[command(flatten)]
    source: Source,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    place: String,
    #[arg(long, env = KEY_ENV, hide_env_values = true, default_value = "")]
    api_key: String,
    #[arg(long, value_name = "DIR")]
    fixtures: PathBuf,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

/// Failure carrying its exit code.
struct Exit {
    code: u8,
    error: anyhow::Error,
}

impl From<PipelineError> for Exit {
    fn from(e: PipelineError) -> Self {
        let code = if e.stage == Stage::Config { 2 } else { 1 };
        Exit {
            code,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Exit {
    fn from(error: anyhow::Error) -> Self {
        Exit { code: 1, error }
    }
}

fn usage(error: anyhow::Error) -> Exit {
    Exit { code: 2, error }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Exit> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(usage)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .map_err(usage)
}

fn config_for(source: &Source) -> Result<PipelineConfig, Exit> {
    let mut config = load_config(source.config.as_deref())?;
    if source.offline {
        config.offline = true;
    }
    if let Some(dir) = &source.fixtures {
        config.fixture_dir = Some(dir.clone());
    }
    Ok(config)
}

fn write_output(out: &str, bytes: &[u8]) -> anyhow::Result<()> {
    if out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(bytes)?;
        stdout.flush()?;
    } else {
        std::fs::write(out, bytes).with_context(|| format!("writing {out}"))?;
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<(), Exit> {
    let config = config_for(&args.source)?;
    let pipeline = if args.record {
        Pipeline::recording(config)?
    } else {
        Pipeline::new(config)?
    };
    let (figure, stats) = pipeline.generate(&args.place, &args.api_key)?;
    eprintln!("{stats}");
    let bytes = scene::serialize(&figure).context("serializing figure")?;
    write_output(&args.out, &bytes)?;
    if let Some(html) = &args.html {
        let page = scene::to_html(&figure).context("rendering HTML")?;
        std::fs::write(html, page).with_context(|| format!("writing {}", html.display()))?;
    }
    Ok(())
}

fn record(args: RecordArgs) -> Result<(), Exit> {
    let mut config = load_config(args.config.as_deref())?;
    config.offline = false;
    config.fixture_dir = Some(args.fixtures.clone());
    let pipeline = Pipeline::recording(config)?;
    let (_, stats) = pipeline.generate(&args.place, &args.api_key)?;
    eprintln!("{stats}");
    eprintln!("fixtures written to {}", args.fixtures.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Exit> {
    let pipeline = Arc::new(Pipeline::new(config_for(&args.source)?)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    runtime
        .block_on(urban3d_service::serve(args.addr, pipeline))
        .with_context(|| format!("serving on {}", args.addr))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Serve(a) => serve(a),
        Command::RecordFixtures(a) => record(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, error }) => {
            log::debug!("{error:?}");
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
