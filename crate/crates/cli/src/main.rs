use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use tnwmc::driver::{bench, count, render_bench, CountOptions, DriverError, PlannerChoice};

#[derive(Parser)]
#[command(name = "tnwmc", version, about = "Weighted model counting by tensor-network contraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count one DIMACS CNF instance.
    Count {
        file: PathBuf,
        #[command(flatten)]
        opts: Opts,
        /// Write the executed contraction plan here.
        #[arg(long)]
        plan_out: Option<PathBuf>,
    },
    /// Count every file of a directory and report PAR-2.
    Bench {
        dir: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Opts {
    /// Seconds before giving up.
    #[arg(long, default_value_t = 1000.0)]
    timeout: f64,
    /// Performance factor; defaults depend on the planner.
    #[arg(long)]
    alpha: Option<f64>,
    /// minfill, mindegree, portfolio or external:<cmd>.
    #[arg(long, default_value = "minfill")]
    planner: PlannerChoice,
    #[arg(long, default_value_t = 1 << 30)]
    mem_budget: u128,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Heuristic rounds per planner; 0 runs until the guard or timeout.
    #[arg(long, default_value_t = 8)]
    rounds: usize,
}

impl Opts {
    fn to_options(&self) -> Result<CountOptions, String> {
        if !(self.timeout.is_finite() && self.timeout > 0.0) {
            return Err(format!("--timeout must be positive, got {}", self.timeout));
        }
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a >= 0.0) {
                return Err(format!("--alpha must be non-negative, got {a}"));
            }
        }
        if self.jobs == 0 {
            return Err("--jobs must be at least 1".into());
        }
        Ok(CountOptions {
            timeout: Duration::from_secs_f64(self.timeout),
            alpha: self.alpha,
            planner: self.planner.clone(),
            mem_budget: self.mem_budget,
            jobs: self.jobs,
            seed: self.seed,
            rounds: (self.rounds > 0).then_some(self.rounds),
        })
    }
}

fn exit_code(e: &DriverError) -> u8 {
    match e {
        DriverError::Timeout { .. } => 10,
        DriverError::BudgetInfeasible { .. } | DriverError::TooManySlices(_) => 20,
        DriverError::Io { .. } | DriverError::Parse(_) => 2,
        DriverError::Execution(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Count { file, opts, plan_out } => {
            let options = match opts.to_options() {
                Ok(o) => o,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            match count(&file, &options) {
                Ok(report) => {
                    if let Some(path) = plan_out {
                        if let Err(e) = std::fs::write(&path, &report.plan_text) {
                            eprintln!("error: cannot write {}: {e}", path.display());
                            return ExitCode::from(2);
                        }
                    }
                    print!("{}", report.render());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    println!("s UNKNOWN");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
        Command::Bench { dir, opts } => {
            let options = match opts.to_options() {
                Ok(o) => o,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            match bench(&dir, &options) {
                Ok(entries) => {
                    print!("{}", render_bench(&entries, options.timeout));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e))
                }
            }
        }
    }
}
