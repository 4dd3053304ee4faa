use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cacc_cli::commands::{self, CurveRequest};
use cacc_cli::{CliError, Overrides};
use cacc_core::mpc::ControlMode;
use cacc_core::sim::ScenarioConfig;
use clap::{Parser, Subcommand, ValueEnum};

/// Minimum safety distance analysis and robust MPC platoon simulation.
///
/// Log verbosity is read from CACC_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "cacc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Nominal,
    Robust,
}

impl From<Mode> for ControlMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Nominal => ControlMode::Nominal,
            Mode::Robust => ControlMode::Robust,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write trace.csv, metrics.json and SVG plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Overrides the channel seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Minimum safety distance at equal speeds versus lead braking capacity.
    SafetyCurve {
        /// Cruise speeds [m/s].
        #[arg(long, value_delimiter = ',', default_value = "25,35")]
        speeds: Vec<f64>,
        /// Ego braking capacity [m/s^2].
        #[arg(long, default_value_t = 9.0)]
        ego_braking: f64,
        /// Lead braking capacities [m/s^2] as START:STOP:STEP or a single value.
        #[arg(long, default_value = "5:13:0.5")]
        lead_braking: String,
        /// Total delay [s].
        #[arg(long, default_value_t = 0.27)]
        delay: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delay budget that yields a given clearance at each cruise speed.
    DelayTable {
        /// Clearance [m].
        #[arg(long, default_value_t = 2.0)]
        clearance: f64,
        /// Cruise speeds [m/s].
        #[arg(long, value_delimiter = ',', default_value = "25,35")]
        speeds: Vec<f64>,
        /// Also write the table to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several scenario configs in parallel, one output directory each.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default scenario config as JSON.
    DefaultConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports always serialize"));
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            mode,
            seed,
            out,
        } => {
            let overrides = Overrides {
                mode: mode.map(Into::into),
                seed,
            };
            print_json(&commands::cmd_run(&config, &overrides, &out)?);
            Ok(0)
        }
        Command::SafetyCurve {
            speeds,
            ego_braking,
            lead_braking,
            delay,
            out,
        } => {
            let req = CurveRequest {
                speeds,
                ego_braking,
                lead_braking: commands::parse_range(&lead_braking)?,
                delay,
            };
            for path in commands::cmd_safety_curve(&req, &out)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::DelayTable {
            clearance,
            speeds,
            out,
        } => {
            let rows = commands::delay_table(clearance, &speeds)?;
            commands::write_delay_table(&rows, std::io::stdout().lock()).map_err(|e| CliError::Io {
                context: "cannot write to stdout".into(),
                source: e,
            })?;
            if let Some(path) = out {
                let mut buf = Vec::new();
                commands::write_delay_table(&rows, &mut buf).expect("writing to a Vec cannot fail");
                std::fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
            }
            Ok(0)
        }
        Command::Batch {
            configs,
            mode,
            seed,
            jobs,
            out,
        } => {
            let overrides = Overrides {
                mode: mode.map(Into::into),
                seed,
            };
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let entries = commands::cmd_batch(&configs, &overrides, &out, jobs)?;
            for e in &entries {
                match &e.error {
                    None => println!("ok    {} -> {}", e.config.display(), e.output_dir.display()),
                    Some(msg) => eprintln!("error {}: {msg}", e.config.display()),
                }
            }
            Ok(entries.iter().map(|e| e.exit_code).max().unwrap_or(0))
        }
        Command::DefaultConfig { out } => {
            let mut text = serde_json::to_string_pretty(&ScenarioConfig::default()).expect("config serializes");
            text.push('\n');
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?,
                None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Io {
                    context: "cannot write to stdout".into(),
                    source: e,
                })?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CACC_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
