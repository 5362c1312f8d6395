use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use phasefilter::nvmodel::FrameKind;
use phasefilter_cli::commands::{self, AnalyzeInput};
use phasefilter_cli::config::RunConfig;
use phasefilter_cli::CliError;

#[derive(Parser)]
#[command(name = "phasefilter", version, about = "Phase-invariant pulse synthesis for an NV spin register")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `search.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Logical frame: canonical or hadamard_a.
    #[arg(long)]
    frame: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a pulse and write pulse, summary, trajectory and report files.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Invariants of a phase-map CSV, or of the propagator of a pulse.
    Analyze {
        /// Phase map CSV (`index,bits,phase_rad`).
        phase_map: Option<PathBuf>,
        /// Pulse CSV (`t_ns,envelope` or a tone table).
        #[arg(long)]
        pulse: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Invariant and population time series for a pulse.
    Trajectory {
        #[arg(long)]
        pulse: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Consolidated report for a run directory.
    Report {
        /// Run directory; defaults to `--out`.
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.search.seed = seed;
    }
    if let Some(frame) = &common.frame {
        commands::frame_override(&mut cfg, Some(FrameKind::parse(frame)?));
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Ok(v) = std::env::var("PHASEFILTER_THREADS") {
        cfg.search.threads =
            v.parse().map_err(|_| CliError::Input(format!("PHASEFILTER_THREADS: `{v}` is not a count")))?;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synthesize { common } => {
            let cfg = load(&common)?;
            commands::synthesize(&cfg, &out_dir(&cfg))
        }
        Command::Analyze { phase_map, pulse, common } => {
            let cfg = load(&common)?;
            let input = match (phase_map, pulse) {
                (Some(p), None) => AnalyzeInput::PhaseMap(p),
                (None, Some(p)) => AnalyzeInput::Pulse(p),
                _ => return Err(CliError::Input("give either a phase map or --pulse".into())),
            };
            commands::analyze(&cfg, &input, cfg.out_dir.as_deref())
        }
        Command::Trajectory { pulse, common } => {
            let cfg = load(&common)?;
            commands::trajectory_cmd(&cfg, &pulse, &out_dir(&cfg))
        }
        Command::Report { dir, common } => {
            let cfg = load(&common)?;
            commands::report(&dir.unwrap_or_else(|| out_dir(&cfg)))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("phasefilter: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
