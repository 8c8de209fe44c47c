//! Seeded Monte Carlo simulation of the closed loop.
//!
//! Every replicate owns four random streams (initial state, process noise,
//! observation noise, channel). Each stream is a ChaCha8 generator keyed by
//! the master seed and the draw kind, with the replicate index as the stream
//! number, so a replicate's draws depend only on `(master_seed, r)` and runs
//! at different dropout probabilities see common random numbers. Results are
//! merged in replicate order and are therefore independent of the worker
//! count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::GainSchedule;
use crate::error::{NcsError, Result};
use crate::estimator::{covariance_schedule, embedded_correct, remote_update, CovarianceStep, RemoteFilterState};
use crate::linalg::{self, psd_factor};
use crate::model::AugmentedSpec;
use crate::riccati::AreSolution;

/// States with a larger Euclidean norm mark the replicate as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Eigenvalues of noise covariances above this (negative) value are clamped
/// to zero before factoring.
pub const NOISE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DrawKind {
    Initial = 1,
    Process = 2,
    Observation = 3,
    Channel = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream(master_seed: u64, replicate: u64, kind: DrawKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ splitmix64(kind as u64)));
    rng.set_stream(replicate);
    rng
}

/// Bernoulli packet channel: a packet is lost with probability `p`.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl ChannelModel {
    pub fn new(p: f64, master_seed: u64, replicate: u64) -> Self {
        Self { p, rng: stream(master_seed, replicate, DrawKind::Channel) }
    }

    /// Draws `β_k`; `true` means delivered.
    pub fn delivered(&mut self) -> bool {
        self.rng.random::<f64>() >= self.p
    }
}

struct Gaussian {
    factor: DMatrix<f64>,
    rng: ChaCha8Rng,
}

impl Gaussian {
    fn new(cov: &DMatrix<f64>, rng: ChaCha8Rng) -> Result<Self> {
        let factor = psd_factor(cov, NOISE_CLAMP).ok_or_else(|| NcsError::NotPsd("noise covariance".into()))?;
        Ok(Self { factor, rng })
    }

    fn draw(&mut self) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| self.rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub beta: bool,
    pub y_p: Vec<f64>,
    pub x_hat_w: Vec<f64>,
    pub x_hat_p: Vec<f64>,
    pub u_w: Vec<f64>,
    pub u_p: Vec<f64>,
    pub stage_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub index: u64,
    /// Empty unless records were requested.
    pub records: Vec<TrajectoryRecord>,
    /// `x_k'x_k` for `k = 0..=steps` (truncated on divergence).
    pub sq_norms: Vec<f64>,
    pub terminal_state: DVector<f64>,
    pub total_cost: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub replicates: usize,
    pub diverged: usize,
    pub mean_cost: f64,
    pub cost_std_err: f64,
    /// Per-step `E[x_k'x_k]` estimate over non-diverged replicates.
    pub msq_state: Vec<f64>,
    pub msq_std_err: Vec<f64>,
    pub seed: u64,
    /// Total cost of every replicate in index order (`NaN` if diverged).
    pub costs: Vec<f64>,
}

/// A prepared closed-loop simulation: noise factors and the embedded
/// filter's covariance schedule are computed once and shared by replicates.
pub struct Simulator<'a> {
    spec: &'a AugmentedSpec,
    gains: &'a GainSchedule,
    steps: usize,
    cov: Vec<CovarianceStep>,
    seed: u64,
    keep_records: bool,
}

impl<'a> Simulator<'a> {
    /// Simulates `steps` control steps, i.e. `x_0..=x_steps`; the terminal
    /// weight is applied to `x_steps`. The finite-horizon problem uses
    /// `steps = N + 1`.
    pub fn new(spec: &'a AugmentedSpec, gains: &'a GainSchedule, steps: usize, seed: u64) -> Result<Self> {
        if steps > 0 && !gains.covers(steps - 1) {
            return Err(NcsError::ScheduleMismatch(format!(
                "gain schedule has {} steps, need {steps}",
                gains.steps.len()
            )));
        }
        let cov = covariance_schedule(spec, steps)?;
        Ok(Self { spec, gains, steps, cov, seed, keep_records: false })
    }

    pub fn with_records(mut self, keep: bool) -> Self {
        self.keep_records = keep;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn run(&self, replicate: u64) -> Result<Replicate> {
        let spec = self.spec;
        let (a, h) = (&spec.a, &spec.h);
        let mut init = Gaussian::new(&spec.sigma, stream(self.seed, replicate, DrawKind::Initial))?;
        let mut process = Gaussian::new(&spec.q_omega, stream(self.seed, replicate, DrawKind::Process))?;
        let mut observation = Gaussian::new(&spec.q_v, stream(self.seed, replicate, DrawKind::Observation))?;
        let mut channel = ChannelModel::new(spec.p, self.seed, replicate);

        let mut x = &spec.mu + init.draw();
        let mut beta = channel.delivered();
        let mut y = h * &x + observation.draw();
        let mut remote = RemoteFilterState {
            k: 0,
            x_hat_filt: if beta { x.clone() } else { spec.mu.clone() },
            x_hat_pred: spec.mu.clone(),
            sigma_filt: None,
        };
        let (_, _, mut x_hat_p) = embedded_correct(spec.mu.clone(), &self.cov[0], beta, &x, &y, h);

        let mut out = Replicate {
            index: replicate,
            records: Vec::with_capacity(if self.keep_records { self.steps } else { 0 }),
            sq_norms: Vec::with_capacity(self.steps + 1),
            terminal_state: DVector::zeros(0),
            total_cost: 0.0,
            diverged: false,
        };
        let w = spec.w();
        for k in 0..self.steps {
            out.sq_norms.push(x.norm_squared());
            let g = self.gains.at(k);
            let x_hat_w = &remote.x_hat_filt;
            let u_w = -(&g.k_w * x_hat_w);
            let u_hat = -(&g.k_phat * x_hat_w);
            let u_tilde = -(&g.k_ptilde * (&x_hat_p - x_hat_w));
            let u_p = &u_hat + &u_tilde;
            let stage = x.dot(&(&spec.q * &x)) + u_w.dot(&(&spec.r_w * &u_w)) + u_p.dot(&(&spec.r_p * &u_p));
            out.total_cost += stage;
            if self.keep_records {
                out.records.push(TrajectoryRecord {
                    k,
                    x: x.as_slice().to_vec(),
                    beta,
                    y_p: y.as_slice().to_vec(),
                    x_hat_w: x_hat_w.as_slice().to_vec(),
                    x_hat_p: x_hat_p.as_slice().to_vec(),
                    u_w: u_w.as_slice().to_vec(),
                    u_p: u_p.as_slice().to_vec(),
                    stage_cost: stage,
                });
            }

            x = a * &x + &spec.b_w * &u_w + &spec.b_p * &u_p + process.draw();
            let norm = x.norm();
            if !norm.is_finite() || norm > DIVERGENCE_NORM {
                out.diverged = true;
                out.terminal_state = x;
                return Ok(out);
            }
            beta = channel.delivered();
            y = h * &x + observation.draw();

            let mut u_stacked = DVector::zeros(spec.b.ncols());
            u_stacked.rows_mut(0, w).copy_from(&u_w);
            u_stacked.rows_mut(w, spec.q_dim()).copy_from(&u_hat);
            let x_pred_p = a * &x_hat_p + &spec.b * &u_stacked + &spec.b_p * &u_tilde;
            remote = remote_update(&remote, beta, &x, &u_stacked, spec)?;
            x_hat_p = embedded_correct(x_pred_p, &self.cov[k + 1], beta, &x, &y, h).2;
        }
        out.sq_norms.push(x.norm_squared());
        out.total_cost += x.dot(&(&spec.p_terminal * &x));
        out.terminal_state = x;
        Ok(out)
    }

    /// Runs replicates `0..count` on the current rayon pool, in index order.
    pub fn run_many(&self, count: usize) -> Result<Vec<Replicate>> {
        (0..count as u64).into_par_iter().map(|r| self.run(r)).collect()
    }

    pub fn monte_carlo(&self, replicates: usize) -> Result<SimResult> {
        if replicates < 2 {
            return Err(NcsError::Config("at least two replicates are required".into()));
        }
        let reps = self.run_many(replicates)?;
        Ok(aggregate(&reps, self.steps, self.seed))
    }
}

fn mean_and_std_err(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / count as f64;
    if count < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let std = (ss / (count - 1) as f64).sqrt();
    (mean, std / (count as f64).sqrt())
}

/// Aggregates replicates in the given order; diverged replicates are counted
/// but excluded from all moments.
pub fn aggregate(reps: &[Replicate], steps: usize, seed: u64) -> SimResult {
    let ok: Vec<&Replicate> = reps.iter().filter(|r| !r.diverged).collect();
    let (mean_cost, cost_std_err) = mean_and_std_err(ok.iter().map(|r| r.total_cost));
    let mut msq_state = Vec::with_capacity(steps + 1);
    let mut msq_std_err = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let (m, se) = mean_and_std_err(ok.iter().map(|r| r.sq_norms[k]));
        msq_state.push(m);
        msq_std_err.push(se);
    }
    SimResult {
        replicates: reps.len(),
        diverged: reps.len() - ok.len(),
        mean_cost,
        cost_std_err,
        msq_state,
        msq_std_err,
        seed,
        costs: reps.iter().map(|r| if r.diverged { f64::NAN } else { r.total_cost }).collect(),
    }
}

/// One finite-horizon replicate with its trajectory records.
pub fn run_replicate(spec: &AugmentedSpec, gains: &GainSchedule, master_seed: u64, replicate: u64) -> Result<Replicate> {
    Simulator::new(spec, gains, spec.horizon + 1, master_seed)?.with_records(true).run(replicate)
}

/// Finite-horizon Monte Carlo estimate of the expected cost.
pub fn monte_carlo(spec: &AugmentedSpec, gains: &GainSchedule, replicates: usize, master_seed: u64) -> Result<SimResult> {
    Simulator::new(spec, gains, spec.horizon + 1, master_seed)?.monte_carlo(replicates)
}

/// Steady-state `E[x'x]` under the stationary gains, given the limits of
/// `Σ^P_{k|k}` and `Σ^W_{k|k}`. The state second moment obeys
/// `X = F X F' + C` with `F = A - BΓ^{-1}M`, where `C` collects the
/// estimation-error and process-noise contributions.
pub fn msq_steady_state(
    spec: &AugmentedSpec,
    sol: &AreSolution,
    sigma_p_limit: &DMatrix<f64>,
    sigma_w_limit: &DMatrix<f64>,
) -> Result<f64> {
    if !sol.certificates.spectral_ok {
        return Err(NcsError::NotStable(format!(
            "spectral certificate {} >= 1",
            sol.certificates.spectral_value
        )));
    }
    let gamma = linalg::SpdFactor::new(&sol.gamma).ok_or(NcsError::SingularGamma(0))?;
    let omega = linalg::SpdFactor::new(&sol.omega).ok_or(NcsError::SingularOmega(0))?;
    let k = &spec.b * gamma.solve(&sol.m);
    let j = &spec.b_p * omega.solve(&sol.l);
    let f = &spec.a - &k;
    let rho = linalg::spectral_radius(&f);
    if rho >= 1.0 {
        return Err(NcsError::NotStable(format!("closed-loop spectral radius {rho} >= 1")));
    }
    let sw = sigma_w_limit;
    let d = sigma_w_limit - sigma_p_limit;
    let c = &f * sw * k.transpose() + &k * sw * f.transpose() - &f * &d * j.transpose() - &j * &d * f.transpose()
        + &k * sw * k.transpose()
        - &k * &d * j.transpose()
        - &j * &d * k.transpose()
        + &j * &d * j.transpose()
        + &spec.q_omega;
    let x = linalg::dlyap(&f, &linalg::symmetrize(&c)).ok_or_else(|| NcsError::NotStable("singular Lyapunov operator".into()))?;
    Ok(x.trace())
}
