use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avgpred::harness::{
    compare_controllers, certify_scenario, run_scenario, sweep, write_sweep_csv, ControllerKind, HarnessError,
    HarnessResult, Scenario, SweepAxis,
};
use clap::{Parser, Subcommand};

/// Average predictor-feedback experiments on switched linear plants with
/// input delay.
#[derive(Parser)]
#[command(name = "avgpred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectory CSV, certificate and summary JSON.
    Run {
        scenario: PathBuf,
        /// Directory for the output files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run several controllers on the same signal and initial data.
    Compare {
        scenario: PathBuf,
        /// Comma-separated: average, single_mode:<i>, exact_oracle, none.
        #[arg(long, value_delimiter = ',', default_value = "")]
        controllers: Vec<String>,
        /// Write the comparison JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certificate and decay rate over a grid of one parameter.
    Sweep {
        scenario: PathBuf,
        /// D, tau_d or epsilon_scale.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Signal seeds per value, counting up from the scenario's seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Write the sweep CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stability certificate only, no simulation.
    Certify {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> HarnessResult<()>) -> HarnessResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush().map_err(|e| io_err(path, e))?;
    }
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn json_to(out: Option<&Path>, value: &impl serde::Serialize) -> HarnessResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    match out {
        Some(p) => write_atomic(p, |w| writeln!(w, "{text}").map_err(|e| io_err(p, e))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("scenario");
    name.trim_end_matches(".json").trim_end_matches(".scenario").to_string()
}

fn execute(cmd: Command) -> HarnessResult<()> {
    match cmd {
        Command::Run { scenario, out_dir } => {
            let sc = Scenario::from_path(&scenario)?;
            let out = run_scenario(&sc)?;
            let base = stem(&scenario);
            let csv = out_dir.join(format!("{base}.trajectory.csv"));
            write_atomic(&csv, |w| {
                out.trajectory
                    .write_csv(w)
                    .map_err(|e| HarnessError::Runtime(e.to_string()))
            })?;
            json_to(Some(&out_dir.join(format!("{base}.certificate.json"))), &out.certificate)?;
            json_to(Some(&out_dir.join(format!("{base}.summary.json"))), &out.summary)?;
            json_to(None, &out.summary)
        }
        Command::Compare {
            scenario,
            controllers,
            out,
        } => {
            let kinds = controllers
                .iter()
                .filter(|c| !c.trim().is_empty())
                .map(|c| c.parse::<ControllerKind>())
                .collect::<HarnessResult<Vec<_>>>()?;
            let sc = Scenario::from_path(&scenario)?;
            json_to(out.as_deref(), &compare_controllers(&sc, &kinds)?)
        }
        Command::Sweep {
            scenario,
            axis,
            values,
            seeds,
            out,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let sc = Scenario::from_path(&scenario)?;
            let rows = sweep(&sc, axis, &values, seeds)?;
            for r in &rows {
                if let Some(e) = &r.error {
                    eprintln!("row {} seed {}: {e}", r.axis_value, r.seed);
                }
            }
            match out {
                Some(p) => write_atomic(&p, |w| write_sweep_csv(&rows, w)),
                None => write_sweep_csv(&rows, std::io::stdout().lock()),
            }
        }
        Command::Certify { scenario, out } => {
            let sc = Scenario::from_path(&scenario)?;
            json_to(out.as_deref(), &certify_scenario(&sc)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
