use std::path::PathBuf;
use std::process::ExitCode;

use bec_fem::config::{ExampleId, ExperimentConfig};
use bec_fem::elements::ElementKind;
use bec_fem::experiment::{self, ExperimentReport};
use bec_fem::selftest::{run_selftest, SelftestOptions};
use bec_fem::Error;
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

/// Ground states of Bose-Einstein condensates with EQ1rot and Q2 elements.
///
/// Set BEC_FEM_THREADS to choose the worker-thread count.
#[derive(Parser)]
#[command(name = "bec-fem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LowerBoundExample {
    #[value(name = "6.3")]
    ElementCompare,
    #[value(name = "6.4")]
    Stirrer,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML file.
    Run { config: PathBuf },
    /// Run the randomized property suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the EQ1rot basis (the orthogonality suite must then fail).
        #[arg(long, hide = true)]
        corrupt_basis: Option<f64>,
    },
    /// L² and H¹ errors of the sine-well problem against a Q2 reference.
    Table1 {
        #[arg(long, default_value_t = 128)]
        max_level: usize,
        #[arg(long, default_value_t = 512)]
        reference_level: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Energies and eigenvalues of the sine-well problem.
    Table2 {
        #[arg(long, default_value_t = 256)]
        max_level: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// EQ1rot energies against a conforming reference energy.
    Lowerbound {
        #[arg(long, value_enum)]
        example: LowerBoundExample,
        #[arg(long, default_value_t = 256)]
        max_level: usize,
        #[arg(long, default_value_t = 512)]
        reference_level: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::NotConverged { .. } | Error::SolverFailure { .. } | Error::NotPositiveDefinite => {
            EXIT_SOLVER
        }
        Error::Io(_) => 1,
    }
}

fn print_report(report: &ExperimentReport) {
    if let Some(r) = &report.reference {
        println!(
            "reference {} N={} DOFs={} energy={} eigenvalue={} |d2u/dxdy|={:.4}",
            r.element, r.n, r.dofs, r.energy, r.eigenvalue, r.mixed_derivative_l2
        );
    }
    println!(
        "{:>7} {:>5} {:>9} {:>12} {:>12} {:>11} {:>11} {:>5}  status",
        "element", "N", "DOFs", "energy", "eigenvalue", "l2_error", "h1_error", "iter"
    );
    for run in &report.runs {
        let r = &run.record;
        let e = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:>7} {:>5} {:>9} {:>12.6} {:>12.6} {:>11} {:>11} {:>5}  {}",
            run.element.to_string(),
            r.n,
            r.dofs,
            r.energy,
            r.eigenvalue,
            e(r.l2_error),
            e(r.h1_error),
            r.iterations,
            run.status.as_str()
        );
    }
    for (element, lb) in &report.lower_bounds {
        let threshold = lb
            .threshold
            .map_or_else(|| "none".to_string(), |n| n.to_string());
        println!(
            "{element}: below reference on all levels: {}, nondecreasing: {}, below from N = {threshold}",
            lb.all_below(),
            lb.monotone
        );
    }
    println!("tables written to {}", report.config.output.display());
}

fn run_experiment(cfg: ExperimentConfig) -> ExitCode {
    match experiment::run_config(&cfg) {
        Ok(report) => {
            print_report(&report);
            if report.has_failures() {
                eprintln!("error: some levels failed, see the status column");
                ExitCode::from(EXIT_SOLVER)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn with_output(mut cfg: ExperimentConfig, output: Option<PathBuf>) -> ExperimentConfig {
    if let Some(dir) = output {
        cfg.output = dir;
    }
    cfg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match ExperimentConfig::from_path(&config) {
            Ok(cfg) => run_experiment(cfg),
            Err(e) => {
                eprintln!("error: {}: {e}", config.display());
                ExitCode::from(exit_code(&e))
            }
        },
        Command::Selftest {
            seed,
            corrupt_basis,
        } => {
            let opts = SelftestOptions {
                seed,
                corrupt_basis,
            };
            let report = match experiment::with_thread_pool(|| run_selftest(&opts)) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(exit_code(&e));
                }
            };
            for suite in &report.suites {
                println!("{suite}");
            }
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SELFTEST)
            }
        }
        Command::Table1 {
            max_level,
            reference_level,
            output,
        } => run_experiment(with_output(
            ExperimentConfig::table1(max_level, reference_level),
            output,
        )),
        Command::Table2 { max_level, output } => {
            run_experiment(with_output(ExperimentConfig::table2(max_level), output))
        }
        Command::Lowerbound {
            example,
            max_level,
            reference_level,
            output,
        } => {
            let id = match example {
                LowerBoundExample::ElementCompare => ExampleId::ElementCompare,
                LowerBoundExample::Stirrer => ExampleId::Stirrer,
            };
            let mut cfg = ExperimentConfig::lower_bound(id, max_level, reference_level);
            cfg.elements = vec![ElementKind::Eq1Rot];
            run_experiment(with_output(cfg, output))
        }
    }
}
