//! Gain synthesis and analytic costs.
//!
//! The control laws are
//!
//! ```text
//! u^W_k = -[I 0] Γ_k^{-1} M_k x̂^W_{k|k}
//! u^P_k = -[0 I] Γ_k^{-1} M_k x̂^W_{k|k} - Ω_k^{-1} L_k (x̂^P_{k|k} - x̂^W_{k|k})
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::estimator::{covariance_schedule, CovarianceStep};
use crate::io::mat;
use crate::linalg::SpdFactor;
use crate::model::{AugmentedSpec, ValidatedSpec};
use crate::riccati::{AreSolution, RiccatiSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGains {
    pub k: usize,
    /// w×n, `u^W = -K_W x̂^W`.
    #[serde(rename = "K_W", with = "mat")]
    pub k_w: DMatrix<f64>,
    /// q×n, `û^P = -K_Phat x̂^W`.
    #[serde(rename = "K_Phat", with = "mat")]
    pub k_phat: DMatrix<f64>,
    /// q×n, `ũ^P = -K_Ptilde (x̂^P - x̂^W)`.
    #[serde(rename = "K_Ptilde", with = "mat")]
    pub k_ptilde: DMatrix<f64>,
}

impl StepGains {
    /// `[K_W; K_Phat]`, the gain of the stacked control `u_k`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (w, q, n) = (self.k_w.nrows(), self.k_phat.nrows(), self.k_w.ncols());
        let mut out = DMatrix::zeros(w + q, n);
        out.view_mut((0, 0), (w, n)).copy_from(&self.k_w);
        out.view_mut((w, 0), (q, n)).copy_from(&self.k_phat);
        out
    }
}

/// Per-step feedback gains. A stationary schedule holds a single entry that
/// applies at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub horizon: usize,
    pub stationary: bool,
    pub steps: Vec<StepGains>,
}

impl GainSchedule {
    pub fn at(&self, k: usize) -> &StepGains {
        if self.stationary {
            &self.steps[0]
        } else {
            &self.steps[k]
        }
    }

    /// Whether the schedule covers steps `0..=horizon`.
    pub fn covers(&self, horizon: usize) -> bool {
        self.stationary || self.steps.len() > horizon
    }

    /// Scales one gain block at every step.
    pub fn scaled(&self, block: GainBlock, factor: f64) -> Self {
        let mut out = self.clone();
        for g in &mut out.steps {
            match block {
                GainBlock::Remote => g.k_w *= factor,
                GainBlock::EmbeddedMean => g.k_phat *= factor,
                GainBlock::EmbeddedCorrection => g.k_ptilde *= factor,
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainBlock {
    Remote,
    EmbeddedMean,
    EmbeddedCorrection,
}

impl GainBlock {
    pub const ALL: [GainBlock; 3] = [GainBlock::Remote, GainBlock::EmbeddedMean, GainBlock::EmbeddedCorrection];
}

fn gains_from(
    k: usize,
    w: usize,
    gamma: &DMatrix<f64>,
    m: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    l: &DMatrix<f64>,
) -> Result<StepGains> {
    let stacked = SpdFactor::new(gamma).ok_or(NcsError::SingularGamma(k))?.solve(m);
    let k_ptilde = SpdFactor::new(omega).ok_or(NcsError::SingularOmega(k))?.solve(l);
    let (rows, n) = stacked.shape();
    Ok(StepGains {
        k,
        k_w: stacked.view((0, 0), (w, n)).into_owned(),
        k_phat: stacked.view((w, 0), (rows - w, n)).into_owned(),
        k_ptilde,
    })
}

pub fn synthesize_finite(spec: &ValidatedSpec, sched: &RiccatiSchedule) -> Result<GainSchedule> {
    let steps = sched
        .steps
        .iter()
        .map(|s| gains_from(s.k, spec.w(), &s.gamma, &s.m, &s.omega, &s.l))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainSchedule { horizon: sched.horizon, stationary: false, steps })
}

pub fn synthesize_stationary(spec: &ValidatedSpec, sol: &AreSolution) -> Result<GainSchedule> {
    let c = &sol.certificates;
    if !c.p_w_pd {
        return Err(NcsError::NotCertified("P_W not positive definite".into()));
    }
    if !c.delta_pd {
        return Err(NcsError::NotCertified("Delta not positive definite".into()));
    }
    let g = gains_from(0, spec.w(), &sol.gamma, &sol.m, &sol.omega, &sol.l)?;
    Ok(GainSchedule { horizon: spec.horizon, stationary: true, steps: vec![g] })
}

/// Analytic cost with a labelled breakdown; `analytic` is the sum of `terms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub analytic: f64,
    pub terms: Vec<(String, f64)>,
}

impl CostReport {
    fn from_terms(terms: Vec<(String, f64)>) -> Self {
        let analytic = terms.iter().map(|(_, v)| v).sum();
        Self { analytic, terms }
    }
}

/// `E{x₀'[P^W x̂^W_{0|0} + P^P(x̂^P_{0|0} - x̂^W_{0|0})]}` expanded over the
/// delivery event at k = 0.
fn initial_term(spec: &ValidatedSpec, p_w: &DMatrix<f64>, p_p: &DMatrix<f64>, sigma_pp0: &DMatrix<f64>) -> f64 {
    let p = spec.p;
    let mumu = &spec.mu * spec.mu.transpose();
    let remote = (p_w * ((&mumu + &spec.sigma) * (1.0 - p) + &mumu * p)).trace();
    let embedded = p * (p_p * (&spec.sigma - sigma_pp0)).trace();
    remote + embedded
}

/// Per-step estimation-error contribution evaluated with the next-step
/// weights `(Δ, P^P)` and the next-step filter gain.
fn error_term(
    spec: &ValidatedSpec,
    sigma_filt: &DMatrix<f64>,
    delta_next: &DMatrix<f64>,
    p_p_next: &DMatrix<f64>,
    gain_next: &DMatrix<f64>,
) -> f64 {
    let (a, h, p) = (&spec.a, &spec.h, spec.p);
    let n = spec.n();
    let i_gh = DMatrix::<f64>::identity(n, n) - gain_next * h;
    let a_gha = &i_gh * a;
    let state = (sigma_filt * (a.transpose() * delta_next * a + &spec.q - a_gha.transpose() * p_p_next * &a_gha * p)).trace();
    let process = (&spec.q_omega * (delta_next - i_gh.transpose() * p_p_next * &i_gh * p)).trace();
    let observation = p * (&spec.q_v * gain_next.transpose() * p_p_next * gain_next).trace();
    state + process - observation
}

/// Optimal finite-horizon cost. `cov` must cover `k = 0..=N+1`.
pub fn analytic_cost_finite(spec: &ValidatedSpec, sched: &RiccatiSchedule, cov: &[CovarianceStep]) -> Result<CostReport> {
    let horizon = sched.horizon;
    if sched.steps.len() != horizon + 1 {
        return Err(NcsError::ScheduleMismatch(format!(
            "Riccati schedule has {} steps for horizon {horizon}",
            sched.steps.len()
        )));
    }
    if cov.len() < horizon + 2 {
        return Err(NcsError::ScheduleMismatch(format!(
            "covariance schedule has {} steps, need {}",
            cov.len(),
            horizon + 2
        )));
    }
    let mut terms = vec![("initial".to_string(), initial_term(spec, sched.p_w(0), sched.p_p(0), &cov[0].sigma_pp))];
    for k in 0..=horizon {
        let v = error_term(spec, &cov[k].sigma_filt, sched.delta(k + 1), sched.p_p(k + 1), &cov[k + 1].gain);
        terms.push((format!("step_{k}"), v));
    }
    terms.push(("terminal".to_string(), (&cov[horizon + 1].sigma_filt * &sched.terminal).trace()));
    Ok(CostReport::from_terms(terms))
}

/// Convenience wrapper computing the covariance schedule itself.
pub fn optimal_cost(spec: &AugmentedSpec, sched: &RiccatiSchedule) -> Result<CostReport> {
    let cov = covariance_schedule(spec, sched.horizon + 1)?;
    analytic_cost_finite(spec, sched, &cov)
}

/// Optimal long-run average cost per step under the stationary gains,
/// evaluated at the limiting filter covariance.
pub fn analytic_cost_stationary(spec: &ValidatedSpec, sol: &AreSolution, cov_limit: &CovarianceStep) -> Result<CostReport> {
    if cov_limit.sigma_filt.shape() != sol.p_w.shape() {
        return Err(NcsError::ScheduleMismatch("covariance limit shape differs from ARE solution".into()));
    }
    let (a, h, p) = (&spec.a, &spec.h, spec.p);
    let n = spec.n();
    let g = &cov_limit.gain;
    let i_gh = DMatrix::<f64>::identity(n, n) - g * h;
    let a_gha = &i_gh * a;
    let state = (&cov_limit.sigma_filt * (a.transpose() * &sol.delta * a + &spec.q - a_gha.transpose() * &sol.p_p * &a_gha * p)).trace();
    let process = (&spec.q_omega * (&sol.delta - i_gh.transpose() * &sol.p_p * &i_gh * p)).trace();
    let observation = -p * (&spec.q_v * g.transpose() * &sol.p_p * g).trace();
    Ok(CostReport::from_terms(vec![
        ("estimation_error".into(), state),
        ("process_noise".into(), process),
        ("observation_noise".into(), observation),
    ]))
}

/// Optimal infinite-horizon total cost of the noiseless plant. The series of
/// estimation-error terms is summed until a term drops below `tol`.
pub fn analytic_cost_noiseless(spec: &ValidatedSpec, sol: &AreSolution, tol: f64, max_iter: usize) -> Result<CostReport> {
    if spec.q_omega.iter().any(|&v| v != 0.0) {
        return Err(NcsError::NoisyPlant);
    }
    let mut terms = Vec::new();
    let mut sigma_pred = spec.sigma.clone();
    let mut step = crate::estimator::covariance_step(spec, 0, sigma_pred)?;
    terms.push(("initial".to_string(), initial_term(spec, &sol.p_w, &sol.p_p, &step.sigma_pp)));
    let mut series = 0.0;
    for k in 0..max_iter {
        sigma_pred = crate::estimator::predict_covariance(spec, &step.sigma_filt);
        let next = crate::estimator::covariance_step(spec, k + 1, sigma_pred)?;
        let v = error_term(spec, &step.sigma_filt, &sol.delta, &sol.p_p, &next.gain);
        series += v;
        step = next;
        if v.abs() < tol && step.sigma_filt.norm() < tol {
            terms.push(("estimation_error".to_string(), series));
            return Ok(CostReport::from_terms(terms));
        }
    }
    Err(NcsError::CovNotConverged(max_iter))
}
