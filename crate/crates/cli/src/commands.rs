use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ncs_core::controller::{optimal_cost, synthesize_finite, synthesize_stationary, CostReport};
use ncs_core::estimator::{covariance_limit, remote_error_limit};
use ncs_core::io::{fmt_f64, CsvTable};
use ncs_core::model::{check_assumptions, prepare, AssumptionReport};
use ncs_core::riccati::{finite_horizon_recursion, solve_are, stabilization_verdict};
use ncs_core::sim::{aggregate, msq_steady_state, Replicate, SimResult, Simulator};
use ncs_core::{moments, AreSolution, AugmentedSpec, GainSchedule, NcsError, RiccatiSchedule, Verdict};

use crate::config::{shipped, ExperimentConfig, Mode};
use crate::report::{msq_csv, summary_csv, trajectory_csv, SummaryRow};
use crate::{write_file, CliError, Result};

/// Tolerance and iteration cap for the filter covariance limits.
const COV_TOL: f64 = 1e-14;
const COV_MAX_ITER: usize = 100_000;

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub tol: Option<f64>,
    pub gains: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = self.tol {
            cfg.are_tol = v;
        }
        if let Some(v) = &self.gains {
            cfg.gains = Some(v.clone());
        }
        cfg.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiEntry {
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<RiccatiSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<AreSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_cost: Option<CostReport>,
}

/// Contents of `riccati.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiReport {
    pub mode: Mode,
    pub entries: Vec<RiccatiEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsEntry {
    pub p: f64,
    pub gains: GainSchedule,
}

/// Contents of `gains.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    pub mode: Mode,
    pub entries: Vec<GainsEntry>,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

fn prepare_at(cfg: &ExperimentConfig, p: f64) -> Result<AugmentedSpec> {
    // Validation failures are bad input, not mathematical failures.
    prepare(&cfg.spec.clone().with_p(p)).map_err(|e: NcsError| {
        if e.is_mathematical() {
            CliError::Core(e)
        } else {
            CliError::Config(e.to_string())
        }
    })
}

fn solve_entry(cfg: &ExperimentConfig, aug: &AugmentedSpec) -> Result<(RiccatiEntry, GainSchedule)> {
    match cfg.mode {
        Mode::Finite => {
            let sched = finite_horizon_recursion(aug)?;
            let gains = synthesize_finite(aug, &sched)?;
            let cost = optimal_cost(aug, &sched)?;
            Ok((RiccatiEntry { p: aug.p, schedule: Some(sched), solution: None, optimal_cost: Some(cost) }, gains))
        }
        Mode::Stationary => {
            let sol = solve_are(aug, cfg.are_tol, cfg.max_iter)?;
            let gains = synthesize_stationary(aug, &sol)?;
            Ok((RiccatiEntry { p: aug.p, schedule: None, solution: Some(sol), optimal_cost: None }, gains))
        }
    }
}

pub struct SolveOutcome {
    pub riccati: RiccatiReport,
    pub gains: GainsFile,
}

/// Synthesizes gains for every grid entry and writes `riccati.json` and
/// `gains.json`.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SolveOutcome> {
    let mut riccati = RiccatiReport { mode: cfg.mode, entries: Vec::new() };
    let mut gains = GainsFile { mode: cfg.mode, entries: Vec::new() };
    for p in cfg.grid() {
        let aug = prepare_at(cfg, p)?;
        let (entry, g) = solve_entry(cfg, &aug)?;
        riccati.entries.push(entry);
        gains.entries.push(GainsEntry { p, gains: g });
    }
    write_file(&cfg.output_dir.join("riccati.json"), &to_json(&riccati))?;
    write_file(&cfg.output_dir.join("gains.json"), &to_json(&gains))?;
    Ok(SolveOutcome { riccati, gains })
}

/// Reads gains for dropout probability `p` from a `gains.json`, or derives
/// them from a `riccati.json`.
pub fn load_gains(path: &Path, aug: &AugmentedSpec) -> Result<GainSchedule> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::MissingGains(format!("{}: {e}", path.display())))?;
    let p = aug.p;
    if let Ok(file) = serde_json::from_str::<GainsFile>(&text) {
        return file
            .entries
            .into_iter()
            .find(|e| e.p == p)
            .map(|e| e.gains)
            .ok_or_else(|| CliError::MissingGains(format!("{} has no entry for p = {p}", path.display())));
    }
    let report: RiccatiReport = serde_json::from_str(&text)
        .map_err(|e| CliError::MissingGains(format!("{} is neither gains.json nor riccati.json: {e}", path.display())))?;
    let entry = report
        .entries
        .into_iter()
        .find(|e| e.p == p)
        .ok_or_else(|| CliError::MissingGains(format!("{} has no entry for p = {p}", path.display())))?;
    match (entry.schedule, entry.solution) {
        (Some(sched), _) => Ok(synthesize_finite(aug, &sched)?),
        (None, Some(sol)) => Ok(synthesize_stationary(aug, &sol)?),
        (None, None) => Err(CliError::MissingGains(format!("{} entry for p = {p} is empty", path.display()))),
    }
}

fn gains_for(cfg: &ExperimentConfig, aug: &AugmentedSpec) -> Result<GainSchedule> {
    let gains = match &cfg.gains {
        Some(path) => load_gains(path, aug)?,
        None => solve_entry(cfg, aug)?.1,
    };
    let steps = cfg.steps();
    if steps > 0 && !gains.covers(steps - 1) {
        return Err(CliError::MissingGains(format!(
            "gain schedule covers {} steps, simulation needs {steps}",
            gains.steps.len()
        )));
    }
    Ok(gains)
}

/// Everything computed for one grid entry.
pub struct GridRun {
    pub p: f64,
    pub aug: AugmentedSpec,
    pub gains: GainSchedule,
    pub result: SimResult,
    pub moments: moments::MomentTrajectory,
    pub analytic_cost: f64,
    /// Replicates with trajectory records, if they were kept.
    pub replicates: Vec<Replicate>,
}

/// Simulates one grid entry. With `keep_records`, every replicate keeps its
/// trajectory.
pub fn run_grid_entry(cfg: &ExperimentConfig, p: f64, keep_records: bool) -> Result<GridRun> {
    let aug = prepare_at(cfg, p)?;
    let gains = gains_for(cfg, &aug)?;
    let steps = cfg.steps();
    let sim = Simulator::new(&aug, &gains, steps, cfg.master_seed)?.with_records(keep_records);
    let reps = sim.run_many(cfg.replicates)?;
    let result = aggregate(&reps, steps, cfg.master_seed);
    let mt = moments::propagate(&aug, &gains, steps)?;
    let analytic_cost = if cfg.mode == Mode::Finite && steps == aug.horizon + 1 {
        optimal_cost(&aug, &finite_horizon_recursion(&aug)?)?.analytic
    } else {
        mt.expected_cost
    };
    Ok(GridRun {
        p,
        aug,
        gains,
        result,
        moments: mt,
        analytic_cost,
        replicates: if keep_records { reps } else { Vec::new() },
    })
}

fn summary_row(run: &GridRun) -> SummaryRow {
    SummaryRow {
        p: run.p,
        replicates: run.result.replicates,
        mean_cost: run.result.mean_cost,
        std_err: run.result.cost_std_err,
        analytic_cost: run.analytic_cost,
    }
}

pub struct SimulateOutcome {
    pub rows: Vec<SummaryRow>,
    pub diverged: Vec<usize>,
}

/// Writes `summary.csv`, `msq.csv` (`msq_<i>.csv` for further grid entries)
/// and the requested `traj_<r>.csv` files of the first grid entry.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutcome> {
    let mut rows = Vec::new();
    let mut diverged = Vec::new();
    for (i, p) in cfg.grid().into_iter().enumerate() {
        let run = run_grid_entry(cfg, p, false)?;
        rows.push(summary_row(&run));
        diverged.push(run.result.diverged);
        let name = if i == 0 { "msq.csv".to_string() } else { format!("msq_{i}.csv") };
        write_file(&cfg.output_dir.join(name), &msq_csv(&run.result.msq_state, &run.moments.msq))?;
        if i == 0 && cfg.trajectories > 0 {
            let sim = Simulator::new(&run.aug, &run.gains, cfg.steps(), cfg.master_seed)?.with_records(true);
            for r in 0..cfg.trajectories.min(cfg.replicates) {
                let rep = sim.run(r as u64)?;
                write_file(&cfg.output_dir.join(format!("traj_{r}.csv")), &trajectory_csv(&rep.records))?;
            }
        }
    }
    write_file(&cfg.output_dir.join("summary.csv"), &summary_csv(&rows))?;
    Ok(SimulateOutcome { rows, diverged })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub p: f64,
    pub assumptions: AssumptionReport,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificates: Option<ncs_core::Certificates>,
}

/// Assumption checks and the stabilization verdict at the spec's `p`.
/// Writes `check.json`.
pub fn cmd_check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let aug = prepare_at(cfg, cfg.spec.p)?;
    let outcome = solve_are(&aug, cfg.are_tol, cfg.max_iter);
    let assumptions = check_assumptions(&aug, outcome.as_ref().ok().map(|s| &s.p_w))?;
    let noisy = aug.q_omega.iter().any(|&v| v != 0.0);
    let verdict = stabilization_verdict(&outcome, noisy);
    let report = CheckReport {
        p: aug.p,
        assumptions,
        verdict,
        certificates: outcome.ok().map(|s| s.certificates),
    };
    write_file(&cfg.output_dir.join("check.json"), &to_json(&report))?;
    Ok(report)
}

fn label(p: f64) -> String {
    format!("p{p}")
}

/// Per-step mean of `u^W + u^P` over replicates (first input component).
fn mean_velocity(reps: &[Replicate], steps: usize) -> Vec<f64> {
    let ok: Vec<&Replicate> = reps.iter().filter(|r| !r.diverged).collect();
    (0..steps)
        .map(|k| ok.iter().map(|r| r.records[k].u_w[0] + r.records[k].u_p[0]).sum::<f64>() / ok.len() as f64)
        .collect()
}

pub struct ReproduceOutcome {
    pub fig3_max_gap: f64,
    pub fig4: Vec<SummaryRow>,
    pub fig5: SimResult,
    pub fig6: SimResult,
    pub fig6_steady_state: f64,
}

fn shipped_config(text: &str, out: &Path, sub: &str, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(text)?;
    ov.apply(&mut cfg)?;
    cfg.output_dir = out.join(sub);
    cfg.gains = None;
    Ok(cfg)
}

/// Runs the four vehicle-positioning experiments and writes `fig3.csv` to
/// `fig6.csv` plus the configs used into `out`.
pub fn cmd_reproduce_auuv(out: &Path, ov: &Overrides) -> Result<ReproduceOutcome> {
    for (name, text) in shipped::ALL {
        write_file(&out.join("configs").join(name), text)?;
    }

    // Fig 3: mean velocity u^W + u^P for several p, plus one sample path.
    let cfg3 = shipped_config(shipped::FIG3, out, "fig3", ov)?;
    let steps3 = cfg3.steps();
    let mut header = vec!["k".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut means = Vec::new();
    for p in cfg3.grid() {
        let run = run_grid_entry(&cfg3, p, true)?;
        let emp = mean_velocity(&run.replicates, steps3);
        let analytic: Vec<f64> = (0..steps3).map(|k| run.moments.mean_u_w[k][0] + run.moments.mean_u_p[k][0]).collect();
        let sample: Vec<f64> = run.replicates[0].records.iter().map(|r| r.u_w[0] + r.u_p[0]).collect();
        header.push(format!("velocity_mean_{}", label(p)));
        header.push(format!("velocity_analytic_{}", label(p)));
        header.push(format!("velocity_sample_{}", label(p)));
        columns.extend([emp.clone(), analytic, sample]);
        means.push(emp);
    }
    let mut t = CsvTable::new(&header);
    for k in 0..steps3 {
        let mut cells = vec![k.to_string()];
        cells.extend(columns.iter().map(|c| fmt_f64(c[k])));
        t.push_cells(&cells);
    }
    write_file(&out.join("fig3.csv"), t.as_str())?;
    let mut fig3_max_gap: f64 = 0.0;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            for k in 0..steps3 {
                fig3_max_gap = fig3_max_gap.max((means[i][k] - means[j][k]).abs());
            }
        }
    }

    // Fig 4: cost against p.
    let cfg4 = shipped_config(shipped::FIG4, out, "fig4", ov)?;
    let mut fig4 = Vec::new();
    for p in cfg4.grid() {
        fig4.push(summary_row(&run_grid_entry(&cfg4, p, false)?));
    }
    write_file(&out.join("fig4.csv"), &summary_csv(&fig4))?;

    // Fig 5: noiseless mean-square stabilization.
    let cfg5 = shipped_config(shipped::FIG5, out, "fig5", ov)?;
    let run5 = run_grid_entry(&cfg5, cfg5.spec.p, false)?;
    let mut t = CsvTable::new(&["k", "msq_empirical", "msq_std_err", "msq_analytic"]);
    for k in 0..=cfg5.steps() {
        t.push_cells(&[
            k.to_string(),
            fmt_f64(run5.result.msq_state[k]),
            fmt_f64(run5.result.msq_std_err[k]),
            fmt_f64(run5.moments.msq[k]),
        ]);
    }
    write_file(&out.join("fig5.csv"), t.as_str())?;

    // Fig 6: noisy mean-square boundedness.
    let cfg6 = shipped_config(shipped::FIG6, out, "fig6", ov)?;
    let run6 = run_grid_entry(&cfg6, cfg6.spec.p, false)?;
    let steady = steady_state_of(&cfg6, &run6.aug)?;
    let mut t = CsvTable::new(&["k", "msq_empirical", "msq_std_err", "msq_analytic", "msq_steady_state"]);
    for k in 0..=cfg6.steps() {
        t.push_cells(&[
            k.to_string(),
            fmt_f64(run6.result.msq_state[k]),
            fmt_f64(run6.result.msq_std_err[k]),
            fmt_f64(run6.moments.msq[k]),
            fmt_f64(steady),
        ]);
    }
    write_file(&out.join("fig6.csv"), t.as_str())?;

    Ok(ReproduceOutcome { fig3_max_gap, fig4, fig5: run5.result, fig6: run6.result, fig6_steady_state: steady })
}

/// Analytic steady-state `E[x'x]` under the stationary gains.
pub fn steady_state_of(cfg: &ExperimentConfig, aug: &AugmentedSpec) -> Result<f64> {
    let sol = solve_are(aug, cfg.are_tol, cfg.max_iter)?;
    let lim = covariance_limit(aug, COV_TOL, COV_MAX_ITER)?;
    let sw = remote_error_limit(aug, &sol.omega, &sol.l, &lim.sigma_filt, COV_TOL, COV_MAX_ITER)?;
    Ok(msq_steady_state(aug, &sol, &lim.sigma_filt, &sw)?)
}
