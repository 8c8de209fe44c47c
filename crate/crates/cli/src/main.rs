use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncs_cli::commands::{self, Overrides};
use ncs_cli::{threads_from_env, CliError, ExperimentConfig};

/// Optimal control of a plant shared by a remote controller behind a lossy
/// link and an embedded controller with noisy local measurements.
#[derive(Parser)]
#[command(name = "ncs-asym", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args)]
struct Flags {
    /// Output directory (overrides the config's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo replicates.
    #[arg(long)]
    replicates: Option<usize>,
    /// Convergence tolerance of the algebraic Riccati iteration.
    #[arg(long)]
    tol: Option<f64>,
    /// Previously written gains.json or riccati.json to simulate.
    #[arg(long)]
    gains: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            replicates: self.replicates,
            tol: self.tol,
            gains: self.gains.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gains; writes riccati.json and gains.json.
    Solve(Common),
    /// Monte Carlo simulation; writes summary.csv, msq.csv and traj_<r>.csv.
    Simulate(Common),
    /// Reproduce the vehicle-positioning experiments (fig3.csv .. fig6.csv).
    ReproduceAuuv {
        #[command(flatten)]
        flags: Flags,
    },
    /// Check the standing assumptions and the stabilization verdict.
    Check(Common),
}

/// Prints a line to stdout, ignoring a closed pipe.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    common.flags.overrides().apply(&mut cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Solve(c) => {
            let cfg = load(&c)?;
            let out = commands::cmd_solve(&cfg)?;
            for e in &out.riccati.entries {
                match &e.solution {
                    Some(sol) => {
                        let c = &sol.certificates;
                        say!(
                            "p={} iterations={} P_W_pd={} Delta_pd={} P_P_pd={} spectral={:.6} spectral_ok={}",
                            e.p, sol.iterations, c.p_w_pd, c.delta_pd, c.p_p_pd, c.spectral_value, c.spectral_ok
                        );
                    }
                    None => say!(
                        "p={} optimal_cost={}",
                        e.p,
                        e.optimal_cost.as_ref().map_or(f64::NAN, |c| c.analytic)
                    ),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(c) => {
            let cfg = load(&c)?;
            let out = commands::cmd_simulate(&cfg)?;
            for (row, div) in out.rows.iter().zip(&out.diverged) {
                say!(
                    "p={} replicates={} mean_cost={} std_err={} analytic_cost={} diverged={div}",
                    row.p, row.replicates, row.mean_cost, row.std_err, row.analytic_cost
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ReproduceAuuv { flags } => {
            let ov = flags.overrides();
            let dir = ov.out.clone().unwrap_or_else(|| PathBuf::from("out/auuv"));
            let out = commands::cmd_reproduce_auuv(&dir, &ov)?;
            say!("fig3 max pairwise mean-velocity gap: {}", out.fig3_max_gap);
            for r in &out.fig4 {
                say!("fig4 p={} mean_cost={} std_err={} analytic={}", r.p, r.mean_cost, r.std_err, r.analytic_cost);
            }
            let last5 = out.fig5.msq_state.last().copied().unwrap_or(f64::NAN);
            say!("fig5 E[x'x]: k=0 {} final {last5}", out.fig5.msq_state[0]);
            say!("fig6 steady-state E[x'x]: {}", out.fig6_steady_state);
            say!("wrote {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check(c) => {
            let cfg = load(&c)?;
            let report = commands::cmd_check(&cfg)?;
            say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(if report.verdict.is_positive() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
