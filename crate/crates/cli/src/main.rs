//! Command-line front end: seeded simulations, sweeps, report
//! aggregation, and the numerical verification suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sharplab_core::harness::{
    emit_csv, report, run_experiment, run_grid, run_optimizer_ablation, worker_count_from_env,
    ExperimentConfig, GridConfig,
};
use sharplab_core::verify::{
    all_checks, assumption_report, coupling_checks, theory_checks, CheckOutcome,
    ASSUMPTION_CSV_HEADER,
};

#[derive(Parser)]
#[command(
    name = "sharplab",
    about = "Desk-scale laboratory for distribution collapse in policy-gradient \
             training with verifiable rewards",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config across its seeds and write CSVs.
    Simulate {
        /// JSON experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for per-run CSVs and the summary (default:
        /// `runs/<experiment>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized numerical verification suite.
    Verify {
        /// Which check family to run.
        #[arg(long, value_enum, default_value_t = VerifyModule::All)]
        module: VerifyModule,
        /// Override the per-check trial counts.
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed for the randomized instances.
        #[arg(long, default_value_t = 20_240_817)]
        seed: u64,
    },
    /// Expand a grid over a base config and run every cell.
    Sweep {
        /// JSON experiment config (the base cell).
        #[arg(long)]
        config: PathBuf,
        /// JSON grid axes; listed axes override the base config.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate an output directory into summary tables and plot-ready
    /// median curves.
    Report {
        /// Directory previously written by `simulate` or `sweep`.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Median collapse step per optimizer per group size.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        /// Group sizes to compare.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
        group_sizes: Vec<usize>,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VerifyModule {
    Theory,
    Coupling,
    All,
}

fn print_checks(checks: &[CheckOutcome]) -> bool {
    let mut all_passed = true;
    for check in checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<28} {}", check.name, check.detail);
        all_passed &= check.passed;
    }
    all_passed
}

fn run() -> sharplab_core::Result<bool> {
    let cli = Cli::parse();
    let workers = worker_count_from_env();
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
            let records = run_experiment(&cfg, workers)?;
            let paths = emit_csv(&records, &dir)?;
            println!(
                "wrote {} runs ({} files) to {}",
                records.len(),
                paths.len(),
                dir.display()
            );
            Ok(true)
        }
        Command::Verify {
            module,
            trials,
            seed,
        } => {
            let checks = match module {
                VerifyModule::Theory => theory_checks(trials, seed),
                VerifyModule::Coupling => coupling_checks(trials, seed),
                VerifyModule::All => all_checks(trials, seed),
            };
            let all_passed = print_checks(&checks);
            if matches!(module, VerifyModule::Coupling | VerifyModule::All) {
                let (_, rows) = assumption_report();
                println!();
                println!("{ASSUMPTION_CSV_HEADER}");
                for row in rows {
                    println!("{}", row.csv_row());
                }
            }
            Ok(all_passed)
        }
        Command::Sweep { config, grid, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let grid = GridConfig::from_file(&grid)?;
            let dir = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!("{}_sweep", cfg.experiment.name()))
            });
            let records = run_grid(&cfg, &grid, workers)?;
            let paths = emit_csv(&records, &dir)?;
            println!(
                "wrote {} runs ({} files) to {}",
                records.len(),
                paths.len(),
                dir.display()
            );
            Ok(true)
        }
        Command::Report { input } => {
            let (groups, written) = report::write_report(&input)?;
            print!("{}", report::render_table(&groups));
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
        Command::Ablation {
            config,
            group_sizes,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let cells = run_optimizer_ablation(&cfg, &group_sizes, workers)?;
            println!(
                "{:<9} {:>3} {:>9} {:>12}",
                "optimizer", "G", "collapsed", "median_step"
            );
            for cell in cells {
                let median = cell
                    .median_collapse_step
                    .map(|m| format!("{m:.1}"))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "{:<9} {:>3} {:>6}/{:<2} {:>12}",
                    cell.optimizer.name(),
                    cell.group_size,
                    cell.collapsed,
                    cell.runs,
                    median
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
