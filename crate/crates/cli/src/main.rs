use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lsafem::cli_io::{export_mesh_artifacts, load_config, HistoryWriter};
use lsafem::driver::{run_adaptive, AdaptiveConfig, AdaptiveHistory, LevelData, MeshFormat, RunHooks};
use lsafem::verify::{fit_rate, run_suite, Budgets, RateQuantity, Suite};
use lsafem::Error;

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const REPORT_FILE: &str = "verification_report.txt";

#[derive(Parser)]
#[command(name = "lsafem", version, about = "Adaptive least-squares finite element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive loop described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write zero timings so that histories compare byte for byte.
        #[arg(long)]
        strip_timing: bool,
    },
    /// Run a verification suite and write its report.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configuration and fit convergence rates over its last levels.
    Rates {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        tail: usize,
    },
}

enum Failure {
    Config(Error),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::Config(_) => Failure::Config(e),
            _ => Failure::Failed(e.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<AdaptiveConfig, Failure> {
    load_config(path).map_err(Failure::Config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Failed(format!("cannot create {}: {e}", dir.display())))
}

fn run(config_path: &Path, out: &Path, strip_timing: bool) -> Result<(), Failure> {
    let config = load(config_path)?;
    create_dir(out)?;
    let history_path = out.join(&config.output.history);
    let mut writer = HistoryWriter::create(&history_path, strip_timing)?;
    let format = config.output.mesh_format;
    let mut observer = |d: &LevelData<'_, f64>| -> lsafem::Result<()> {
        writer.append(d.record)?;
        if let Some(format) = format {
            let ext = match format {
                MeshFormat::Text => "txt",
                MeshFormat::VtkLegacy => "vtk",
            };
            let path = out.join(format!("mesh_{:03}.{ext}", d.level));
            export_mesh_artifacts(d.mesh, Some(d.report), path, format)?;
        }
        Ok(())
    };
    let history = run_adaptive::<f64>(
        &config,
        RunHooks {
            observer: Some(&mut observer),
            keep_iterates: false,
        },
    )?;
    if let Some(last) = history.last() {
        println!(
            "{} levels, {} dofs, eta {:.6e}{}; history in {}",
            history.len(),
            last.n_dofs,
            last.eta_total,
            last.error_v.map(|e| format!(", error {e:.6e}")).unwrap_or_default(),
            history_path.display()
        );
    }
    Ok(())
}

fn verify(suite: Suite, out: &Path) -> Result<(), Failure> {
    create_dir(out)?;
    let report = run_suite(suite, &Budgets::default());
    let text = report.to_text();
    print!("{text}");
    let path = out.join(REPORT_FILE);
    fs::write(&path, &text).map_err(|e| Failure::Failed(format!("cannot write {}: {e}", path.display())))?;
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failed().iter().map(|c| c.name()).collect();
        Err(Failure::Failed(format!("failed checks: {}", names.join(", "))))
    }
}

fn rates(config_path: &Path, tail: usize) -> Result<(), Failure> {
    let config = load(config_path)?;
    let history: AdaptiveHistory<f64> = run_adaptive(&config, RunHooks::default())?;
    let eta = fit_rate(&history, RateQuantity::Eta, tail)?;
    println!(
        "eta rate {:.6} (r2 {:.6}) over last {} levels",
        eta.slope, eta.r_squared, eta.levels_used
    );
    if history.levels.iter().all(|l| l.error_v.is_some()) {
        let err = fit_rate(&history, RateQuantity::Error, tail)?;
        println!(
            "error rate {:.6} (r2 {:.6}) over last {} levels",
            err.slope, err.r_squared, err.levels_used
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            out,
            strip_timing,
        } => run(config, out, *strip_timing),
        Command::Verify { suite, out } => verify(*suite, out),
        Command::Rates { config, tail } => rates(config, *tail),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
