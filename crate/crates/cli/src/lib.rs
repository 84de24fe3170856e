//! The `carbq` command line: dataset ingest, candidate masks, curation
//! server, splitting, training, evaluation, analytics, synthetic data and
//! tile stitching.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use carbq_core::dataset::Split;
use commands::MaskSource;
use config::{RunConfig, PORT_ENV};
use error::{CliError, CliResult, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "carbq", version, about = "Carbide segmentation and quantification for SEM micrographs")]
pub struct Cli {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory; for `stitch`, the output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run configuration file (JSON). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Curation server port; overrides CARBQ_PORT.
    #[arg(long, global = true)]
    pub port: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from an image directory and a labels CSV
    /// (`image,class_label,magnification[,grid]`).
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Replace an existing manifest.
        #[arg(long)]
        force: bool,
    },
    /// Write the 16 denoised candidate masks per image.
    MakeMasks {
        /// Only this image id.
        #[arg(long)]
        id: Option<String>,
    },
    /// Serve the curation API on localhost.
    Curate {
        /// Directory of UI assets served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Assign curated entries to train/val/test.
    Split {
        /// Three fractions, e.g. `0.8,0.1,0.1`.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Train the network on the train split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a trained model on a split and write overlays.
    Eval {
        /// Weights file; defaults to `<out>/model.cseg`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Measure carbides and write statistics reports.
    Analyze {
        /// Read masks from `<dir>/<id>.pgm` (as written by `eval`)
        /// instead of the curated masks.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Restrict to one split.
        #[arg(long)]
        split: Option<String>,
    },
    /// Generate a synthetic dataset with known masks.
    Synth {
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Amalgamate the tiles of a grid file into one image.
    Stitch {
        #[arg(long)]
        grid: PathBuf,
    },
}

fn parse_split(s: &str) -> CliResult<Split> {
    s.parse::<Split>().map_err(|e| CliError::config(e.to_string()))
}

/// Config file first, then flags on top.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.manifest.is_some() {
        cfg.manifest = cli.manifest.clone();
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli)?;
    match cli.command {
        Command::Ingest { images, labels, force } => {
            commands::ingest(&cfg, &images, &labels, force)?;
        }
        Command::MakeMasks { id } => {
            commands::make_masks(&cfg, id.as_deref())?;
        }
        Command::Curate { static_dir } => {
            let flag = match cli.port {
                Some(p) => Some(
                    u16::try_from(p).map_err(|_| CliError::config(format!("port {p} is outside [1024, 65535]")))?,
                ),
                None => None,
            };
            let env = std::env::var(PORT_ENV).ok();
            let port = cfg.resolve_port(flag, env.as_deref())?;
            let path = cfg.existing_manifest()?.to_path_buf();
            if let Some(d) = &static_dir {
                if !d.is_dir() {
                    return Err(CliError::config(format!("static directory not found: {}", d.display())));
                }
            }
            let state = server::AppState::open(path)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::runtime(e.to_string()))?;
            rt.block_on(server::serve(state, port, static_dir))
                .map_err(|e| CliError::runtime(format!("server on port {port}: {e}")))?;
        }
        Command::Split { ratios } => {
            let r = ratios.as_deref().map(commands::parse_ratios).transpose()?;
            commands::split(&cfg, r)?;
        }
        Command::Train { epochs } => {
            commands::train(&cfg, epochs)?;
        }
        Command::Eval { model, split } => {
            commands::eval(&cfg, model.as_deref(), parse_split(&split)?)?;
        }
        Command::Analyze { predictions, split } => {
            let source = match predictions {
                Some(dir) => MaskSource::Predictions(dir),
                None => MaskSource::Curated,
            };
            let split = split.as_deref().map(parse_split).transpose()?;
            commands::analyze(&cfg, &source, split)?;
        }
        Command::Synth { n_images } => {
            commands::synth(&cfg, n_images)?;
        }
        Command::Stitch { grid } => {
            let out = cfg.require_out()?;
            commands::stitch(&grid, out)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Failures end with one JSON line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let _ = e.print();
            let line = CliError {
                kind: ErrorKind::Usage,
                message: e.kind().to_string(),
            };
            eprintln!("{}", line.to_line());
            return ErrorKind::Usage.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.kind.exit_code()
        }
    }
}
