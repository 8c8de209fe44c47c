//! The two estimators.
//!
//! The remote side sees the state only when the packet arrives and otherwise
//! propagates its last estimate with the known stacked input `u_{k-1}`. The
//! embedded side runs a Kalman filter on its local observation `y^P_k` and is
//! reset to the true state on every successful delivery. Its covariance
//! recursion is control-independent and averages over the dropout event:
//! `Σ^P_{k|k} = p Σ^{PP}_{k|k}`.
//!
//! The remote update deliberately has no parameter for `y^P_k` or the
//! embedded correction input `ũ^P_{k-1}`; the information pattern is enforced
//! by the signatures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::io::mat;
use crate::linalg::{self, SpdFactor};
use crate::model::{AugmentedSpec, ValidatedSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteFilterState {
    pub k: usize,
    /// `x̂^W_{k|k-1}`
    pub x_hat_pred: DVector<f64>,
    /// `x̂^W_{k|k}`
    pub x_hat_filt: DVector<f64>,
    /// `Σ^W_{k|k}`, attached by [`RemoteFilterState::with_error_covariance`].
    pub sigma_filt: Option<DMatrix<f64>>,
}

impl RemoteFilterState {
    pub fn with_error_covariance(mut self, sigma: DMatrix<f64>) -> Self {
        self.sigma_filt = Some(sigma);
        self
    }
}

fn check_len(name: &str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(NcsError::DimensionMismatch(format!("{name} has length {}, expected {len}", v.len())));
    }
    Ok(())
}

fn gate(delivered: bool, x_true: &DVector<f64>, fallback: &DVector<f64>) -> DVector<f64> {
    if delivered {
        x_true.clone()
    } else {
        fallback.clone()
    }
}

/// Remote estimate at `k = 0`, from the prior mean `x̂^W_{0|-1} = μ`.
pub fn remote_init(delivered: bool, x_true: &DVector<f64>, spec: &AugmentedSpec) -> Result<RemoteFilterState> {
    check_len("x_true", x_true, spec.n())?;
    let pred = spec.mu.clone();
    Ok(RemoteFilterState {
        k: 0,
        x_hat_filt: gate(delivered, x_true, &pred),
        x_hat_pred: pred,
        sigma_filt: None,
    })
}

/// One remote step. `u_prev` is the stacked `u_{k-1} = (u^W_{k-1}, û^P_{k-1})`.
pub fn remote_update(
    prev: &RemoteFilterState,
    delivered: bool,
    x_true: &DVector<f64>,
    u_prev: &DVector<f64>,
    spec: &AugmentedSpec,
) -> Result<RemoteFilterState> {
    check_len("x_true", x_true, spec.n())?;
    check_len("u_prev", u_prev, spec.b.ncols())?;
    let pred = &spec.a * &prev.x_hat_filt + &spec.b * u_prev;
    Ok(RemoteFilterState {
        k: prev.k + 1,
        x_hat_filt: gate(delivered, x_true, &pred),
        x_hat_pred: pred,
        sigma_filt: None,
    })
}

/// Control-independent covariance quantities of the embedded filter at step k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceStep {
    pub k: usize,
    /// `Σ^P_{k|k-1}`
    #[serde(with = "mat")]
    pub sigma_pred: DMatrix<f64>,
    /// `G^P_{k|k-1}`
    #[serde(with = "mat")]
    pub gain: DMatrix<f64>,
    /// `Σ^{PP}_{k|k}`
    #[serde(with = "mat")]
    pub sigma_pp: DMatrix<f64>,
    /// `Σ^P_{k|k} = p Σ^{PP}_{k|k}`
    #[serde(with = "mat")]
    pub sigma_filt: DMatrix<f64>,
}

/// Measurement update of the covariance from a given prediction.
pub fn covariance_step(spec: &ValidatedSpec, k: usize, sigma_pred: DMatrix<f64>) -> Result<CovarianceStep> {
    let h = &spec.h;
    let innovation = h * &sigma_pred * h.transpose() + &spec.q_v;
    let factor = SpdFactor::new(&linalg::symmetrize(&innovation)).ok_or(NcsError::SingularInnovation(k))?;
    // G = Σ H' S^{-1}  <=>  G' = S^{-1} H Σ
    let gain = factor.solve(&(h * &sigma_pred)).transpose();
    let i_gh = DMatrix::<f64>::identity(spec.n(), spec.n()) - &gain * h;
    let sigma_pp = linalg::symmetrize(&(&i_gh * &sigma_pred * i_gh.transpose() + &gain * &spec.q_v * gain.transpose()));
    let sigma_filt = &sigma_pp * spec.p;
    Ok(CovarianceStep { k, sigma_pred, gain, sigma_pp, sigma_filt })
}

/// Time update `Σ^P_{k+1|k} = A Σ^P_{k|k} A' + Q_ω`.
pub fn predict_covariance(spec: &ValidatedSpec, sigma_filt: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(&spec.a * sigma_filt * spec.a.transpose() + &spec.q_omega))
}

/// Covariance quantities for `k = 0..=horizon`.
pub fn covariance_schedule(spec: &ValidatedSpec, horizon: usize) -> Result<Vec<CovarianceStep>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut step = covariance_step(spec, 0, spec.sigma.clone())?;
    for k in 1..=horizon {
        let next = covariance_step(spec, k, predict_covariance(spec, &step.sigma_filt))?;
        out.push(step);
        step = next;
    }
    out.push(step);
    Ok(out)
}

/// Iterates the covariance recursion until successive `Σ^P_{k|k}` differ by
/// less than `tol` in Frobenius norm and returns the limiting step.
pub fn covariance_limit(spec: &ValidatedSpec, tol: f64, max_iter: usize) -> Result<CovarianceStep> {
    let mut step = covariance_step(spec, 0, spec.sigma.clone())?;
    for k in 1..=max_iter {
        let next = covariance_step(spec, k, predict_covariance(spec, &step.sigma_filt))?;
        let delta = (&next.sigma_filt - &step.sigma_filt).norm();
        let pred_delta = (&next.sigma_pred - &step.sigma_pred).norm();
        step = next;
        if delta < tol && pred_delta < tol {
            return Ok(step);
        }
    }
    Err(NcsError::CovNotConverged(max_iter))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedFilterState {
    pub k: usize,
    /// `x̂^P_{k|k-1}`
    pub x_hat_pred: DVector<f64>,
    /// `x̂^P_{k|k}`
    pub x_hat_filt: DVector<f64>,
    /// `x̂^{PP}_{k|k}`, the observation-only update.
    pub x_hat_pp: DVector<f64>,
    pub cov: CovarianceStep,
}

/// Measurement correction with precomputed covariance quantities.
pub(crate) fn embedded_correct(
    x_pred: DVector<f64>,
    cov: &CovarianceStep,
    delivered: bool,
    x_true: &DVector<f64>,
    y_p: &DVector<f64>,
    h: &DMatrix<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let x_pp = &x_pred + &cov.gain * (y_p - h * &x_pred);
    let x_filt = gate(delivered, x_true, &x_pp);
    (x_pred, x_pp, x_filt)
}

fn embedded_from(
    k: usize,
    x_pred: DVector<f64>,
    cov: CovarianceStep,
    delivered: bool,
    x_true: &DVector<f64>,
    y_p: &DVector<f64>,
    spec: &AugmentedSpec,
) -> EmbeddedFilterState {
    let (x_hat_pred, x_hat_pp, x_hat_filt) = embedded_correct(x_pred, &cov, delivered, x_true, y_p, &spec.h);
    EmbeddedFilterState { k, x_hat_pred, x_hat_filt, x_hat_pp, cov }
}

/// Embedded estimate at `k = 0` from `x̂^P_{0|-1} = μ`, `Σ^P_{0|-1} = σ`.
pub fn embedded_init(
    delivered: bool,
    x_true: &DVector<f64>,
    y_p: &DVector<f64>,
    spec: &AugmentedSpec,
) -> Result<EmbeddedFilterState> {
    check_len("x_true", x_true, spec.n())?;
    check_len("y_P", y_p, spec.m())?;
    let cov = covariance_step(spec, 0, spec.sigma.clone())?;
    Ok(embedded_from(0, spec.mu.clone(), cov, delivered, x_true, y_p, spec))
}

/// One embedded step. The embedded side knows its full previous input, so
/// the prediction includes `B^P ũ^P_{k-1}` on top of `B u_{k-1}`.
pub fn embedded_update(
    prev: &EmbeddedFilterState,
    delivered: bool,
    x_true: &DVector<f64>,
    y_p: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_tilde_prev: &DVector<f64>,
    spec: &AugmentedSpec,
) -> Result<EmbeddedFilterState> {
    check_len("x_true", x_true, spec.n())?;
    check_len("y_P", y_p, spec.m())?;
    check_len("u_prev", u_prev, spec.b.ncols())?;
    check_len("u_tilde_prev", u_tilde_prev, spec.q_dim())?;
    let k = prev.k + 1;
    let cov = covariance_step(spec, k, predict_covariance(spec, &prev.cov.sigma_filt))?;
    let x_pred = &spec.a * &prev.x_hat_filt + &spec.b * u_prev + &spec.b_p * u_tilde_prev;
    Ok(embedded_from(k, x_pred, cov, delivered, x_true, y_p, spec))
}

/// `J = B^P Ω^{-1} L`, the embedded correction feedback seen by the plant.
pub fn correction_feedback(spec: &ValidatedSpec, omega: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let factor = SpdFactor::new(omega).ok_or(NcsError::SingularOmega(0))?;
    Ok(&spec.b_p * factor.solve(l))
}

/// One step of the remote error covariance:
/// `Σ^W_k = p[(A-J)Σ^W_{k-1}(A-J)' + JΣ^P_{k-1}(A-J)' + AΣ^P_{k-1}J' + Q_ω]`.
pub fn remote_error_step(
    spec: &ValidatedSpec,
    feedback: &DMatrix<f64>,
    sigma_w_prev: &DMatrix<f64>,
    sigma_p_prev: &DMatrix<f64>,
) -> DMatrix<f64> {
    let closed = &spec.a - feedback;
    let next = &closed * sigma_w_prev * closed.transpose()
        + feedback * sigma_p_prev * closed.transpose()
        + &spec.a * sigma_p_prev * feedback.transpose()
        + &spec.q_omega;
    linalg::symmetrize(&(next * spec.p))
}

/// `Σ^W_{k|k}` for `k = 0..=horizon` under stationary correction gains
/// `Ω^{-1}L`, starting from `Σ^W_{0|0} = pσ`.
pub fn remote_error_covariance(
    spec: &ValidatedSpec,
    omega: &DMatrix<f64>,
    l: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let feedback = correction_feedback(spec, omega, l)?;
    let cov = covariance_schedule(spec, horizon)?;
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(&spec.sigma * spec.p);
    for k in 1..=horizon {
        let next = remote_error_step(spec, &feedback, &out[k - 1], &cov[k - 1].sigma_filt);
        out.push(next);
    }
    Ok(out)
}

/// Limit of `Σ^W_{k|k}` given the limit of `Σ^P_{k|k}`, by fixed-point
/// iteration.
pub fn remote_error_limit(
    spec: &ValidatedSpec,
    omega: &DMatrix<f64>,
    l: &DMatrix<f64>,
    sigma_p_limit: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let feedback = correction_feedback(spec, omega, l)?;
    let mut sigma = &spec.sigma * spec.p;
    for _ in 0..max_iter {
        let next = remote_error_step(spec, &feedback, &sigma, sigma_p_limit);
        if !linalg::all_finite(&next) {
            break;
        }
        let delta = (&next - &sigma).norm();
        sigma = next;
        if delta < tol {
            return Ok(sigma);
        }
    }
    Err(NcsError::CovNotConverged(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prepare, SystemSpec};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn remote_delivery_returns_truth() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let st = remote_init(true, &v(&[7.0]), &aug).unwrap();
        assert_eq!(st.x_hat_filt, v(&[7.0]));
        let st = remote_update(&st, true, &v(&[3.0]), &v(&[100.0, 100.0]), &aug).unwrap();
        assert_eq!(st.x_hat_filt, v(&[3.0]));
    }

    #[test]
    fn remote_loss_uses_prior_then_prediction() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.mu = v(&[0.0]);
        let aug = prepare(&spec).unwrap();
        let st = remote_init(false, &v(&[5.0]), &aug).unwrap();
        assert_eq!(st.x_hat_filt, v(&[0.0]));

        let st = RemoteFilterState { k: 0, x_hat_pred: v(&[0.0]), x_hat_filt: v(&[2.0]), sigma_filt: None };
        let next = remote_update(&st, false, &v(&[9.0]), &v(&[-1.0, 0.0]), &aug).unwrap();
        assert_eq!(next.k, 1);
        assert!((next.x_hat_filt[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn remote_rejects_bad_input_length() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let st = remote_init(true, &v(&[1.0]), &aug).unwrap();
        assert!(matches!(
            remote_update(&st, true, &v(&[1.0]), &v(&[1.0]), &aug),
            Err(NcsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn embedded_reset_on_delivery() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let st = embedded_init(true, &v(&[-29.0]), &v(&[4.0]), &aug).unwrap();
        assert_eq!(st.x_hat_filt, v(&[-29.0]));
        // the observation-only branch is still formed
        assert!((st.x_hat_pp[0] - (-30.0 + 0.5 * 34.0)).abs() < 1e-12);
    }

    #[test]
    fn scalar_gain_and_joseph_form() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let sched = covariance_schedule(&aug, 0).unwrap();
        let c = &sched[0];
        assert_eq!(c.sigma_pred[(0, 0)], 1.0);
        assert!((c.gain[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.sigma_pp[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((c.sigma_filt[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_noise_zero_covariance() {
        let mut spec = SystemSpec::auuv(0.5).noiseless();
        spec.sigma.fill(0.0);
        let aug = prepare(&spec).unwrap();
        for c in covariance_schedule(&aug, 20).unwrap() {
            assert_eq!(c.sigma_filt[(0, 0)], 0.0);
        }
    }

    #[test]
    fn scalar_schedule_converges() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        // fixed point of s = p*s'/(s'+1)*... solved by brute-force iteration
        let mut pred = 1.0_f64;
        for _ in 0..10_000 {
            let pp = pred / (pred + 1.0);
            pred = 0.5 * pp + 1.0;
        }
        let lim = covariance_limit(&aug, 1e-13, 10_000).unwrap();
        assert!((lim.sigma_pred[(0, 0)] - pred).abs() < 1e-12);
    }

    #[test]
    fn filter_never_increases_trace() {
        let aug = prepare(&SystemSpec::auuv(0.3)).unwrap();
        for c in covariance_schedule(&aug, 50).unwrap() {
            assert!(c.sigma_pp.trace() <= c.sigma_pred.trace() + 1e-15);
            assert_eq!(c.sigma_filt, &c.sigma_pp * 0.3);
        }
    }

    #[test]
    fn remote_error_zero_cases() {
        let aug = prepare(&SystemSpec::auuv(0.0)).unwrap();
        let om = DMatrix::from_element(1, 1, 5.1);
        let l = DMatrix::from_element(1, 1, 0.1);
        for s in remote_error_covariance(&aug, &om, &l, 20).unwrap() {
            assert_eq!(s[(0, 0)], 0.0);
        }
        let mut spec = SystemSpec::auuv(0.7).noiseless();
        spec.sigma.fill(0.0);
        let aug = prepare(&spec).unwrap();
        for s in remote_error_covariance(&aug, &om, &l, 20).unwrap() {
            assert_eq!(s[(0, 0)], 0.0);
        }
    }

    #[test]
    fn singular_omega_reported() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let om = DMatrix::from_element(1, 1, 0.0);
        let l = DMatrix::from_element(1, 1, 0.1);
        assert!(matches!(remote_error_covariance(&aug, &om, &l, 3), Err(NcsError::SingularOmega(_))));
    }
}
