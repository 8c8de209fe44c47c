//! Coupled Riccati recursions.
//!
//! Backward from `P^W_{N+1} = P^P_{N+1} = P_{N+1}`:
//!
//! ```text
//! Γ_k = B'P^W_{k+1}B + R          M_k = B'P^W_{k+1}A
//! Ω_k = B^P'Δ_{k+1}B^P + R^P      L_k = B^P'Δ_{k+1}A
//! P^W_k = A'P^W_{k+1}A - M_k'Γ_k^{-1}M_k + Q
//! P^P_k = A'Δ_{k+1}A  - L_k'Ω_k^{-1}L_k + Q
//! Δ_k   = (1-p)P^W_k + pP^P_k
//! ```
//!
//! The algebraic pair is solved as the limit of this recursion started from
//! zero terminal weight; the iterates `Δ_0(N)` are monotone in `N`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result, Weight};
use crate::io::mat;
use crate::linalg::{self, SpdFactor};
use crate::model::{check_assumptions, AssumptionReport, AugmentedSpec, ValidatedSpec};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiStep {
    pub k: usize,
    #[serde(rename = "P_W", with = "mat")]
    pub p_w: DMatrix<f64>,
    #[serde(rename = "P_P", with = "mat")]
    pub p_p: DMatrix<f64>,
    #[serde(rename = "Delta", with = "mat")]
    pub delta: DMatrix<f64>,
    #[serde(rename = "Gamma", with = "mat")]
    pub gamma: DMatrix<f64>,
    #[serde(rename = "M", with = "mat")]
    pub m: DMatrix<f64>,
    #[serde(rename = "Omega", with = "mat")]
    pub omega: DMatrix<f64>,
    #[serde(rename = "L", with = "mat")]
    pub l: DMatrix<f64>,
}

/// Finite-horizon solution. `steps[k]` holds step `k` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSchedule {
    pub p: f64,
    pub horizon: usize,
    #[serde(rename = "P_terminal", with = "mat")]
    pub terminal: DMatrix<f64>,
    pub steps: Vec<RiccatiStep>,
}

impl RiccatiSchedule {
    /// `P^W_k` for `k = 0..=N+1`.
    pub fn p_w(&self, k: usize) -> &DMatrix<f64> {
        self.steps.get(k).map_or(&self.terminal, |s| &s.p_w)
    }

    pub fn p_p(&self, k: usize) -> &DMatrix<f64> {
        self.steps.get(k).map_or(&self.terminal, |s| &s.p_p)
    }

    /// `Δ_k`; at `k = N+1` this is the terminal weight itself.
    pub fn delta(&self, k: usize) -> &DMatrix<f64> {
        self.steps.get(k).map_or(&self.terminal, |s| &s.delta)
    }
}

/// One backward step from `(P^W_{k+1}, P^P_{k+1})`.
pub fn backward_step(spec: &AugmentedSpec, k: usize, p_w_next: &DMatrix<f64>, p_p_next: &DMatrix<f64>) -> Result<RiccatiStep> {
    let p = spec.p;
    let a = &spec.a;
    let b = &spec.b;
    let bp = &spec.b_p;
    let delta_next = p_w_next * (1.0 - p) + p_p_next * p;

    let gamma = linalg::symmetrize(&(b.transpose() * p_w_next * b + &spec.r));
    let m = b.transpose() * p_w_next * a;
    let omega = linalg::symmetrize(&(bp.transpose() * &delta_next * bp + &spec.r_p));
    let l = bp.transpose() * &delta_next * a;

    let gamma_f = SpdFactor::new(&gamma).ok_or(NcsError::NotPositiveDefinite { k, which: Weight::Gamma })?;
    let omega_f = SpdFactor::new(&omega).ok_or(NcsError::NotPositiveDefinite { k, which: Weight::Omega })?;

    let p_w = linalg::symmetrize(&(a.transpose() * p_w_next * a - m.transpose() * gamma_f.solve(&m) + &spec.q));
    let p_p = linalg::symmetrize(&(a.transpose() * &delta_next * a - l.transpose() * omega_f.solve(&l) + &spec.q));
    let delta = &p_w * (1.0 - p) + &p_p * p;
    Ok(RiccatiStep { k, p_w, p_p, delta, gamma, m, omega, l })
}

pub fn finite_horizon_recursion(spec: &AugmentedSpec) -> Result<RiccatiSchedule> {
    let horizon = spec.horizon;
    let terminal = spec.p_terminal.clone();
    let mut steps: Vec<RiccatiStep> = Vec::with_capacity(horizon + 1);
    let (mut p_w, mut p_p) = (terminal.clone(), terminal.clone());
    for k in (0..=horizon).rev() {
        let step = backward_step(spec, k, &p_w, &p_p)?;
        p_w = step.p_w.clone();
        p_p = step.p_p.clone();
        steps.push(step);
    }
    steps.reverse();
    Ok(RiccatiSchedule { p: spec.p, horizon, terminal, steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub p_w_pd: bool,
    pub delta_pd: bool,
    /// Reported, not gated on.
    pub p_p_pd: bool,
    /// `√p · ρ(A - B^P Ω^{-1} L)`.
    pub spectral_value: f64,
    pub spectral_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreSolution {
    pub p: f64,
    #[serde(rename = "P_W", with = "mat")]
    pub p_w: DMatrix<f64>,
    #[serde(rename = "P_P", with = "mat")]
    pub p_p: DMatrix<f64>,
    #[serde(rename = "Delta", with = "mat")]
    pub delta: DMatrix<f64>,
    #[serde(rename = "Gamma", with = "mat")]
    pub gamma: DMatrix<f64>,
    #[serde(rename = "M", with = "mat")]
    pub m: DMatrix<f64>,
    #[serde(rename = "Omega", with = "mat")]
    pub omega: DMatrix<f64>,
    #[serde(rename = "L", with = "mat")]
    pub l: DMatrix<f64>,
    pub iterations: usize,
    pub residual_w: f64,
    pub residual_p: f64,
    pub certificates: Certificates,
}

/// Frobenius defects of the algebraic equations at `(P^W, P^P)`.
pub fn are_residuals(spec: &AugmentedSpec, p_w: &DMatrix<f64>, p_p: &DMatrix<f64>) -> Result<(f64, f64)> {
    let rhs = backward_step(spec, 0, p_w, p_p)?;
    Ok(((&rhs.p_w - p_w).norm(), (&rhs.p_p - p_p).norm()))
}

pub fn certificates(spec: &ValidatedSpec, p_w: &DMatrix<f64>, p_p: &DMatrix<f64>, omega: &DMatrix<f64>, l: &DMatrix<f64>) -> Certificates {
    let delta = p_w * (1.0 - spec.p) + p_p * spec.p;
    let spectral_value = match SpdFactor::new(omega) {
        Some(f) => spec.p.sqrt() * linalg::spectral_radius(&(&spec.a - &spec.b_p * f.solve(l))),
        None => f64::INFINITY,
    };
    Certificates {
        p_w_pd: linalg::is_pd(p_w),
        delta_pd: linalg::is_pd(&delta),
        p_p_pd: linalg::is_pd(p_p),
        spectral_value,
        spectral_ok: spectral_value < 1.0,
    }
}

/// Value iteration for the coupled algebraic equations.
pub fn solve_are(spec: &AugmentedSpec, tol: f64, max_iter: usize) -> Result<AreSolution> {
    if !(tol > 0.0) {
        return Err(NcsError::Config(format!("ARE tolerance must be positive, got {tol}")));
    }
    let n = spec.n();
    let mut p_w = DMatrix::<f64>::zeros(n, n);
    let mut p_p = DMatrix::<f64>::zeros(n, n);
    for it in 1..=max_iter {
        let step = backward_step(spec, 0, &p_w, &p_p)?;
        if !linalg::all_finite(&step.p_w) || !linalg::all_finite(&step.p_p) {
            return Err(NcsError::NoConvergence(it));
        }
        let change = (&step.p_w - &p_w).norm().max((&step.p_p - &p_p).norm());
        p_w = step.p_w;
        p_p = step.p_p;
        if change < tol {
            // Fixed-point quantities are evaluated at the converged pair.
            let fp = backward_step(spec, 0, &p_w, &p_p)?;
            let (residual_w, residual_p) = ((&fp.p_w - &p_w).norm(), (&fp.p_p - &p_p).norm());
            let delta = &p_w * (1.0 - spec.p) + &p_p * spec.p;
            let certificates = certificates(spec, &p_w, &p_p, &fp.omega, &fp.l);
            return Ok(AreSolution {
                p: spec.p,
                p_w,
                p_p,
                delta,
                gamma: fp.gamma,
                m: fp.m,
                omega: fp.omega,
                l: fp.l,
                iterations: it,
                residual_w,
                residual_p,
                certificates,
            });
        }
    }
    Err(NcsError::NoConvergence(max_iter))
}

/// `Δ_0(N)` for `N = 0..=max_horizon` with zero terminal weight.
pub fn delta_sequence(spec: &AugmentedSpec, max_horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    let n = spec.n();
    let (mut p_w, mut p_p) = (DMatrix::zeros(n, n), DMatrix::zeros(n, n));
    let mut out = Vec::with_capacity(max_horizon + 1);
    for _ in 0..=max_horizon {
        let step = backward_step(spec, 0, &p_w, &p_p)?;
        out.push(step.delta.clone());
        p_w = step.p_w;
        p_p = step.p_p;
    }
    Ok(out)
}

/// Sufficient conditions for the algebraic pair to be the unique solution
/// with `P^W > 0`, `Δ > 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub assumptions: AssumptionReport,
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
    pub a4: bool,
    pub certified: bool,
}

pub fn uniqueness_check(spec: &ValidatedSpec, sol: &AreSolution) -> Result<UniquenessReport> {
    let assumptions = check_assumptions(spec, Some(&sol.p_w))?;
    let a4 = assumptions.a4()?;
    let (a1, a2, a3) = (
        assumptions.a1_weights_ok,
        assumptions.a2_observable_detectable,
        assumptions.a3_stabilizable_pair,
    );
    Ok(UniquenessReport { certified: a1 && a2 && a3 && a4, a1, a2, a3, a4, assumptions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    /// Noiseless plant: mean-square stabilizable.
    Stabilizable,
    /// Noisy plant: mean-square bounded.
    Bounded,
    Negative(String),
}

impl Verdict {
    pub fn is_positive(&self) -> bool {
        !matches!(self, Verdict::Negative(_))
    }
}

pub fn stabilization_verdict(outcome: &Result<AreSolution>, with_additive_noise: bool) -> Verdict {
    let sol = match outcome {
        Ok(sol) => sol,
        Err(e) => return Verdict::Negative(e.to_string()),
    };
    let c = &sol.certificates;
    if !c.p_w_pd {
        return Verdict::Negative("P_W not positive definite".into());
    }
    if !c.delta_pd {
        return Verdict::Negative("Delta not positive definite".into());
    }
    if !with_additive_noise {
        return Verdict::Stabilizable;
    }
    if !c.spectral_ok {
        return Verdict::Negative(format!("spectral certificate failed: sqrt(p)*rho = {}", c.spectral_value));
    }
    Verdict::Bounded
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{prepare, SystemSpec};

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_terminal_step() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let sched = finite_horizon_recursion(&aug).unwrap();
        assert_eq!(sched.steps.len(), 101);
        let last = &sched.steps[100];
        assert_eq!(last.k, 100);
        assert_eq!(last.m, DMatrix::zeros(2, 1));
        assert_eq!(last.l, DMatrix::zeros(1, 1));
        assert_eq!(last.gamma, aug.r);
        assert_eq!(last.omega, aug.r_p);
        assert_eq!(last.p_w, aug.q);
        assert_eq!(last.p_p, aug.q);
    }

    #[test]
    fn auuv_second_to_last_step() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let sched = finite_horizon_recursion(&aug).unwrap();
        let st = &sched.steps[99];
        assert!((st.m[(0, 0)] - 0.01).abs() < 1e-15);
        assert!((st.gamma[(0, 0)] - 5.01).abs() < 1e-15);
        assert!((st.gamma[(0, 1)] - 0.01).abs() < 1e-15);
        // 0.02 - M'Γ^{-1}M with Γ^{-1}M = 0.01/5.02 (both entries)
        let expected = 0.02 - 2.0 * 0.01 * 0.01 / 5.02;
        assert!((st.p_w[(0, 0)] - expected).abs() < 1e-15);
        assert!((st.p_w[(0, 0)] - 0.0199601).abs() < 1e-7);
    }

    #[test]
    fn nilpotent_plant_converges_immediately() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.a = s(0.0);
        let aug = prepare(&spec).unwrap();
        let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.iterations <= 2);
        assert_eq!(sol.p_w, aug.q);
        assert_eq!(sol.p_p, aug.q);
    }

    #[test]
    fn unstabilizable_plant_fails() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.a = s(2.0);
        spec.b_w = s(0.0);
        spec.b_p = s(0.0);
        let aug = prepare(&spec).unwrap();
        let out = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!(matches!(out, Err(NcsError::NoConvergence(_))));
        assert!(matches!(stabilization_verdict(&out, false), Verdict::Negative(_)));
    }

    #[test]
    fn auuv_fixed_point_matches_scalar_reduction() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let sol = solve_are(&aug, 1e-12, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.residual_w < 1e-10 && sol.residual_p < 1e-10);
        assert!(sol.certificates.p_w_pd && sol.certificates.delta_pd && sol.certificates.spectral_ok);
        // Δ = pA'ΔA - pA'ΔB^P Ω^{-1} B^P'ΔA + pQ + (1-p)P^W, scalar.
        let (p, d, pw) = (0.5, sol.delta[(0, 0)], sol.p_w[(0, 0)]);
        let rhs = p * d - p * d * d / (d + 5.0) + p * 0.01 + (1.0 - p) * pw;
        assert!((d - rhs).abs() < 1e-11);
    }

    #[test]
    fn verdicts_for_auuv() {
        let aug = prepare(&SystemSpec::auuv(0.5).noiseless()).unwrap();
        assert_eq!(stabilization_verdict(&solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER), false), Verdict::Stabilizable);
        let aug = prepare(&SystemSpec::auuv(0.6)).unwrap();
        assert_eq!(stabilization_verdict(&solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER), true), Verdict::Bounded);
    }

    #[test]
    fn spectral_failure_named() {
        let aug = prepare(&SystemSpec::auuv(0.6)).unwrap();
        let mut sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        sol.certificates.spectral_ok = false;
        match stabilization_verdict(&Ok(sol), true) {
            Verdict::Negative(reason) => assert!(reason.contains("spectral")),
            v => panic!("unexpected {v:?}"),
        }
    }

    #[test]
    fn uniqueness_for_auuv_and_degenerate_bp() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let rep = uniqueness_check(&aug, &sol).unwrap();
        assert!(rep.certified);

        let mut spec = SystemSpec::auuv(0.5);
        spec.b_p = s(0.0);
        let aug = prepare(&spec).unwrap();
        let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let rep = uniqueness_check(&aug, &sol).unwrap();
        assert!(!rep.a4);
        assert!(!rep.certified);
    }

    #[test]
    fn p_zero_uniqueness_reduces_to_pw_definiteness() {
        let aug = prepare(&SystemSpec::auuv(0.0)).unwrap();
        let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let rep = uniqueness_check(&aug, &sol).unwrap();
        assert_eq!(rep.a4, sol.certificates.p_w_pd);
        assert!(rep.a4);
    }

    #[test]
    fn p_one_delta_is_pp() {
        let aug = prepare(&SystemSpec::auuv(1.0)).unwrap();
        let sol = solve_are(&aug, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(sol.delta, sol.p_p);
    }

    #[test]
    fn schedule_accessors_reach_terminal() {
        let mut spec = SystemSpec::auuv(0.5).with_horizon(3);
        spec.p_terminal = s(2.0);
        let aug = prepare(&spec).unwrap();
        let sched = finite_horizon_recursion(&aug).unwrap();
        assert_eq!(sched.p_w(4), &s(2.0));
        assert_eq!(sched.delta(4), &s(2.0));
        assert_eq!(sched.p_w(3), &sched.steps[3].p_w);
    }
}
