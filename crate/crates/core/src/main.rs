use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use switchlab::design::ExperimentTrajectory;
use switchlab::estimate::{self, Predictor, StayScaling};
use switchlab::harness::{self, HarnessError, ScenarioConfig};
use switchlab::infer::{self, Alternative, RiOptions, SharpNull};
use switchlab::population::CarryoverOrder;
use switchlab::stream::StreamKey;

#[derive(Parser)]
#[command(name = "switchlab", version, about = "Sequentially rerandomized switchback experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    TwoSided,
    Greater,
    Less,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write summary tables.
    Simulate {
        /// Scenario file (TOML).
        config: Option<PathBuf>,
        /// Use a built-in scenario instead of a file.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-replicate records.
        #[arg(long)]
        detail: bool,
        /// Also write one trajectory per grid point and design.
        #[arg(long)]
        trajectories: bool,
        /// List the built-in scenarios and exit.
        #[arg(long)]
        list_presets: bool,
    },
    /// Randomization test of a constant additive effect on a saved trajectory.
    Infer {
        trajectory: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Side::TwoSided)]
        alternative: Side,
        /// Use |estimate - delta| as the two-sided statistic.
        #[arg(long)]
        centered: bool,
    },
    /// Recompute estimates and the block variance report from a trajectory.
    Replay {
        trajectory: PathBuf,
        #[arg(long, default_value_t = estimate::DEFAULT_BLOCK_SIZE)]
        block_size: usize,
        #[arg(long, default_value_t = estimate::DEFAULT_LEVEL)]
        level: f64,
        /// Divide stay-group sums by their realized sizes.
        #[arg(long)]
        ratio: bool,
    },
    /// Log-log slope of RMSE against the grid value, per design.
    Slope { summary: PathBuf },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_trajectory(path: &Path) -> Result<ExperimentTrajectory, Failure> {
    ExperimentTrajectory::from_json(&read(path)?).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn configure_threads() {
    if let Some(n) = std::env::var("SWITCHLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not size thread pool: {e}");
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            seed,
            replications,
            out,
            detail,
            trajectories,
            list_presets,
        } => {
            if list_presets {
                for name in harness::preset_names() {
                    println!("{name}");
                }
                return Ok(());
            }
            let mut cfg = match (config, preset) {
                (Some(path), None) => {
                    ScenarioConfig::from_toml(&read(&path)?).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                (None, Some(name)) => harness::preset(&name).map_err(|e| Failure::Config(e.to_string()))?,
                _ => return Err(Failure::Config("give a config file or --preset".into())),
            };
            if seed.is_some() {
                cfg.seed = seed;
            }
            if let Some(m) = replications {
                cfg.replications = m;
            }
            if let Some(dir) = out {
                cfg.output.dir = dir.display().to_string();
            }
            cfg.output.detail |= detail;
            cfg.output.trajectories |= trajectories;
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;

            let result = harness::run_scenario(&cfg)?;
            let written = harness::emit_outputs(
                &result,
                Path::new(&cfg.output.dir),
                cfg.output.detail,
                cfg.output.trajectories,
            )?;
            print!("{}", harness::summary_csv(&result.table.rows)?);
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Infer {
            trajectory,
            delta,
            draws,
            seed,
            alternative,
            centered,
        } => {
            let tr = load_trajectory(&trajectory)?;
            let options = RiOptions {
                draws,
                alternative: match alternative {
                    Side::TwoSided => Alternative::TwoSided,
                    Side::Greater => Alternative::Greater,
                    Side::Less => Alternative::Less,
                },
                centered,
            };
            let policy = tr.policy.clone();
            let result = infer::randomization_pvalue(&tr, SharpNull { delta }, &policy, options, StreamKey::new(seed))
                .map_err(runtime)?;
            println!("{}", serde_json::to_string_pretty(&result).map_err(runtime)?);
            Ok(())
        }
        Command::Replay {
            trajectory,
            block_size,
            level,
            ratio,
        } => {
            let tr = load_trajectory(&trajectory)?;
            let estimates = match tr.carryover {
                CarryoverOrder::None => estimate::sate_no_carryover(&tr),
                _ => estimate::sate_carryover(&tr, if ratio { StayScaling::Ratio } else { StayScaling::Fixed }),
            }
            .map_err(runtime)?;
            let report = estimate::block_conservative_variance(&estimates, block_size, Predictor::ScaledAverage, level)
                .map_err(runtime)?;
            let out = serde_json::json!({
                "estimates": estimates,
                "variance": report,
                "fallback_periods": tr.fallback_count(),
                "total_draws": tr.total_draws(),
            });
            println!("{}", serde_json::to_string_pretty(&out).map_err(runtime)?);
            Ok(())
        }
        Command::Slope { summary } => {
            let rows = harness::read_summary_csv(&summary)?;
            let mut designs: Vec<&str> = Vec::new();
            for r in &rows {
                if !designs.contains(&r.design.as_str()) {
                    designs.push(&r.design);
                }
            }
            println!("design,slope");
            for d in designs {
                println!("{d},{}", harness::rmse_slope(&rows, d)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
