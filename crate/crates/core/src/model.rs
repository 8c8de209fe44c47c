//! Problem instances: the raw two-controller plant, its validation, and the
//! augmented working form `x_{k+1} = A x_k + B u_k + B^P ũ^P_k + ω_k` with
//! `u_k = (u^W_k, û^P_k)`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::io::{mat, vector};
use crate::linalg::{self, PbhDiagnostic};

/// Relative Frobenius asymmetry above which a "symmetric" input is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Tolerance of the PSD eigenvalue test on input weights.
pub const PSD_TOL: f64 = 1e-10;

/// Plant, observation, noise, cost and channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "A", with = "mat")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B_W", with = "mat")]
    pub b_w: DMatrix<f64>,
    #[serde(rename = "B_P", with = "mat")]
    pub b_p: DMatrix<f64>,
    #[serde(rename = "H", with = "mat")]
    pub h: DMatrix<f64>,
    #[serde(rename = "Q", with = "mat")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R_W", with = "mat")]
    pub r_w: DMatrix<f64>,
    #[serde(rename = "R_P", with = "mat")]
    pub r_p: DMatrix<f64>,
    #[serde(rename = "Q_omega", with = "mat")]
    pub q_omega: DMatrix<f64>,
    #[serde(rename = "Q_v", with = "mat")]
    pub q_v: DMatrix<f64>,
    /// Dropout probability, `P(β_k = 0)`.
    pub p: f64,
    #[serde(with = "vector")]
    pub mu: DVector<f64>,
    #[serde(with = "mat")]
    pub sigma: DMatrix<f64>,
    #[serde(rename = "P_terminal", with = "mat")]
    pub p_terminal: DMatrix<f64>,
    #[serde(rename = "N")]
    pub horizon: usize,
}

impl SystemSpec {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Remote input dimension.
    pub fn w(&self) -> usize {
        self.b_w.ncols()
    }

    /// Embedded input dimension.
    pub fn q_dim(&self) -> usize {
        self.b_p.ncols()
    }

    /// Embedded observation dimension.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Drops the additive process noise (`Q_ω = 0`).
    pub fn noiseless(mut self) -> Self {
        self.q_omega.fill(0.0);
        self
    }

    /// The scalar vehicle-positioning instance: unit integrator, both inputs
    /// act directly on position, target 30 units ahead of a zero-mean start.
    pub fn auuv(p: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        SystemSpec {
            a: s(1.0),
            b_w: s(1.0),
            b_p: s(1.0),
            h: s(1.0),
            q: s(0.01),
            r_w: s(5.0),
            r_p: s(5.0),
            q_omega: s(1.0),
            q_v: s(1.0),
            p,
            mu: DVector::from_element(1, -30.0),
            sigma: s(1.0),
            p_terminal: s(0.0),
            horizon: 100,
        }
    }
}

/// A `SystemSpec` whose invariants have been checked and whose symmetric
/// fields have been symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec(SystemSpec);

impl ValidatedSpec {
    pub fn into_inner(self) -> SystemSpec {
        self.0
    }
}

impl Deref for ValidatedSpec {
    type Target = SystemSpec;

    fn deref(&self) -> &SystemSpec {
        &self.0
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(NcsError::DimensionMismatch(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !linalg::all_finite(m) {
        return Err(NcsError::NonFinite(name.into()));
    }
    Ok(())
}

fn symmetric_field(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if linalg::relative_asymmetry(m) > SYMMETRY_TOL {
        return Err(NcsError::NotSymmetric(name.into()));
    }
    Ok(linalg::symmetrize(m))
}

fn psd_field(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = symmetric_field(name, m)?;
    if !linalg::is_psd(&m, PSD_TOL) {
        return Err(NcsError::NotPsd(name.into()));
    }
    Ok(m)
}

fn pd_field(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = symmetric_field(name, m)?;
    if !linalg::is_pd(&m) {
        return Err(NcsError::NotPd(name.into()));
    }
    Ok(m)
}

pub fn validate_spec(spec: &SystemSpec) -> Result<ValidatedSpec> {
    let n = spec.a.nrows();
    let (w, q, m) = (spec.w(), spec.q_dim(), spec.m());
    check_shape("A", &spec.a, n, n)?;
    check_shape("B_W", &spec.b_w, n, w)?;
    check_shape("B_P", &spec.b_p, n, q)?;
    check_shape("H", &spec.h, m, n)?;
    check_shape("Q", &spec.q, n, n)?;
    check_shape("R_W", &spec.r_w, w, w)?;
    check_shape("R_P", &spec.r_p, q, q)?;
    check_shape("Q_omega", &spec.q_omega, n, n)?;
    check_shape("Q_v", &spec.q_v, m, m)?;
    check_shape("sigma", &spec.sigma, n, n)?;
    check_shape("P_terminal", &spec.p_terminal, n, n)?;
    if spec.mu.len() != n {
        return Err(NcsError::DimensionMismatch(format!("mu has length {}, expected {n}", spec.mu.len())));
    }
    if spec.mu.iter().any(|v| !v.is_finite()) {
        return Err(NcsError::NonFinite("mu".into()));
    }
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(NcsError::BadProbability(spec.p));
    }
    Ok(ValidatedSpec(SystemSpec {
        q: psd_field("Q", &spec.q)?,
        r_w: pd_field("R_W", &spec.r_w)?,
        r_p: pd_field("R_P", &spec.r_p)?,
        q_omega: psd_field("Q_omega", &spec.q_omega)?,
        q_v: pd_field("Q_v", &spec.q_v)?,
        sigma: psd_field("sigma", &spec.sigma)?,
        p_terminal: psd_field("P_terminal", &spec.p_terminal)?,
        ..spec.clone()
    }))
}

/// Working form with the remote input and the remote-measurable part of the
/// embedded input stacked into one control.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSpec {
    /// `[B^W B^P]`, n×(w+q).
    pub b: DMatrix<f64>,
    /// `blockdiag(R^W, R^P)`.
    pub r: DMatrix<f64>,
    pub base: ValidatedSpec,
}

impl Deref for AugmentedSpec {
    type Target = ValidatedSpec;

    fn deref(&self) -> &ValidatedSpec {
        &self.base
    }
}

pub fn augment(spec: &ValidatedSpec) -> AugmentedSpec {
    let (n, w, q) = (spec.n(), spec.w(), spec.q_dim());
    let mut b = DMatrix::zeros(n, w + q);
    b.view_mut((0, 0), (n, w)).copy_from(&spec.b_w);
    b.view_mut((0, w), (n, q)).copy_from(&spec.b_p);
    let mut r = DMatrix::zeros(w + q, w + q);
    r.view_mut((0, 0), (w, w)).copy_from(&spec.r_w);
    r.view_mut((w, w), (q, q)).copy_from(&spec.r_p);
    AugmentedSpec { b, r, base: spec.clone() }
}

/// Validates and augments in one go.
pub fn prepare(spec: &SystemSpec) -> Result<AugmentedSpec> {
    Ok(augment(&validate_spec(spec)?))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AssumptionDetails {
    pub q_observability: Vec<PbhDiagnostic>,
    pub h_detectability: Vec<PbhDiagnostic>,
    pub b_stabilizability: Vec<PbhDiagnostic>,
    pub bp_stabilizability: Vec<PbhDiagnostic>,
    pub d_observability: Vec<PbhDiagnostic>,
    /// Smallest eigenvalue of `pQ + (1-p)P^W`, when P^W was supplied.
    pub d_target_min_eigenvalue: Option<f64>,
}

/// Standing assumptions of the stabilization results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `R^W > 0`, `R^P > 0`, `Q >= 0`.
    pub a1_weights_ok: bool,
    /// `(A, Q^{1/2})` observable and `(A, H)` detectable.
    pub a2_observable_detectable: bool,
    /// `(A, [B^W B^P])` stabilizable.
    pub a3_stabilizable_pair: bool,
    /// `(A, B^P)` stabilizable and `(A, D)` observable with
    /// `pQ + (1-p)P^W = DD'`; `None` until a P^W is supplied.
    pub a4_bp_stabilizable_and_observable: Option<bool>,
    pub details: AssumptionDetails,
}

impl AssumptionReport {
    pub fn a4(&self) -> Result<bool> {
        self.a4_bp_stabilizable_and_observable.ok_or(NcsError::NeedPw)
    }

    pub fn a1_to_a3(&self) -> bool {
        self.a1_weights_ok && self.a2_observable_detectable && self.a3_stabilizable_pair
    }
}

/// Target of the assumption-4 factorization, `pQ + (1-p)P^W`.
pub fn d_target(spec: &ValidatedSpec, p_w: &DMatrix<f64>) -> DMatrix<f64> {
    &spec.q * spec.p + p_w * (1.0 - spec.p)
}

pub fn check_assumptions(spec: &ValidatedSpec, p_w: Option<&DMatrix<f64>>) -> Result<AssumptionReport> {
    let aug = augment(spec);
    let a = &spec.a;
    let a1 = linalg::is_pd(&spec.r_w) && linalg::is_pd(&spec.r_p) && linalg::is_psd(&spec.q, PSD_TOL);

    let q_half = linalg::sym_sqrt(&spec.q, PSD_TOL).ok_or_else(|| NcsError::NotPsd("Q".into()))?;
    let (q_obs, q_diag) = linalg::pbh_observable(a, &q_half, false);
    let (h_det, h_diag) = linalg::pbh_observable(a, &spec.h, true);
    let (b_stab, b_diag) = linalg::pbh_controllable(a, &aug.b, true);

    let mut details = AssumptionDetails {
        q_observability: q_diag,
        h_detectability: h_diag,
        b_stabilizability: b_diag,
        ..Default::default()
    };

    let a4 = match p_w {
        None => None,
        Some(p_w) => {
            if p_w.shape() != a.shape() {
                return Err(NcsError::DimensionMismatch("P_W shape differs from A".into()));
            }
            let (bp_stab, bp_diag) = linalg::pbh_controllable(a, &spec.b_p, true);
            details.bp_stabilizability = bp_diag;
            let target = d_target(spec, p_w);
            details.d_target_min_eigenvalue = Some(linalg::min_eigenvalue(&target));
            let d_obs = match linalg::psd_factor(&target, PSD_TOL) {
                Some(d) => {
                    let (ok, diag) = linalg::pbh_observable(a, &d.transpose(), false);
                    details.d_observability = diag;
                    ok
                }
                None => false,
            };
            Some(bp_stab && d_obs)
        }
    };

    Ok(AssumptionReport {
        a1_weights_ok: a1,
        a2_observable_detectable: q_obs && h_det,
        a3_stabilizable_pair: b_stab,
        a4_bp_stabilizable_and_observable: a4,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn auuv_is_valid() {
        let v = validate_spec(&SystemSpec::auuv(0.5)).unwrap();
        assert_eq!(v.n(), 1);
        assert_eq!(v.mu[0], -30.0);
        assert_eq!(v.horizon, 100);
    }

    #[test]
    fn probability_out_of_range() {
        let err = validate_spec(&SystemSpec::auuv(1.3)).unwrap_err();
        assert!(matches!(err, NcsError::BadProbability(p) if p == 1.3));
        assert!(validate_spec(&SystemSpec::auuv(-0.1)).is_err());
        assert!(validate_spec(&SystemSpec::auuv(0.0)).is_ok());
        assert!(validate_spec(&SystemSpec::auuv(1.0)).is_ok());
    }

    #[test]
    fn zero_remote_weight_rejected() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.r_w = s(0.0);
        assert!(matches!(validate_spec(&spec), Err(NcsError::NotPd(f)) if f == "R_W"));
    }

    #[test]
    fn zero_terminal_and_noise_allowed() {
        let spec = SystemSpec::auuv(0.5).noiseless();
        assert!(validate_spec(&spec).is_ok());
    }

    #[test]
    fn negative_q_rejected() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.q = s(-1.0);
        assert!(matches!(validate_spec(&spec), Err(NcsError::NotPsd(f)) if f == "Q"));
    }

    #[test]
    fn asymmetry_rejected_but_rounding_symmetrized() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.a = DMatrix::identity(2, 2);
        spec.b_w = DMatrix::from_element(2, 1, 1.0);
        spec.b_p = DMatrix::from_element(2, 1, 1.0);
        spec.h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        spec.q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-13, 1.0]);
        spec.q_omega = DMatrix::identity(2, 2);
        spec.sigma = DMatrix::identity(2, 2);
        spec.p_terminal = DMatrix::zeros(2, 2);
        spec.mu = DVector::zeros(2);
        let v = validate_spec(&spec).unwrap();
        assert_eq!(v.q[(0, 1)], v.q[(1, 0)]);
        spec.q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(validate_spec(&spec), Err(NcsError::NotSymmetric(_))));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.h = DMatrix::zeros(1, 2);
        assert!(matches!(validate_spec(&spec), Err(NcsError::DimensionMismatch(_))));
        let mut spec = SystemSpec::auuv(0.5);
        spec.mu = DVector::zeros(3);
        assert!(matches!(validate_spec(&spec), Err(NcsError::DimensionMismatch(_))));
    }

    #[test]
    fn augment_blocks() {
        let aug = prepare(&SystemSpec::auuv(0.5)).unwrap();
        assert_eq!(aug.b, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
        assert_eq!(aug.r, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 5.0]));
    }

    #[test]
    fn augment_shape_law() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        spec.b_w = DMatrix::from_row_slice(2, 1, &[0.3, 1.0]);
        spec.b_p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 1.0]);
        spec.h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        spec.q = DMatrix::identity(2, 2);
        spec.r_p = DMatrix::identity(2, 2) * 2.0;
        spec.q_omega = DMatrix::identity(2, 2);
        spec.sigma = DMatrix::identity(2, 2);
        spec.p_terminal = DMatrix::zeros(2, 2);
        spec.mu = DVector::zeros(2);
        let aug = prepare(&spec).unwrap();
        assert_eq!(aug.b.shape(), (2, 3));
        assert_eq!(aug.r.shape(), (3, 3));
        assert_eq!(aug.r[(0, 0)], 5.0);
        assert_eq!(aug.r[(2, 2)], 2.0);
        assert_eq!(aug.r[(0, 2)], 0.0);
    }

    #[test]
    fn scalar_assumptions() {
        let v = validate_spec(&SystemSpec::auuv(0.5)).unwrap();
        let rep = check_assumptions(&v, None).unwrap();
        assert!(rep.a1_weights_ok);
        assert!(rep.a2_observable_detectable);
        assert!(rep.a3_stabilizable_pair);
        assert!(matches!(rep.a4(), Err(NcsError::NeedPw)));
        let rep = check_assumptions(&v, Some(&s(0.2))).unwrap();
        assert_eq!(rep.a4().unwrap(), true);
    }

    #[test]
    fn jordan_block_detectable_from_first_state() {
        let mut spec = SystemSpec::auuv(0.5);
        spec.a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        spec.b_w = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        spec.b_p = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        spec.h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        spec.q = DMatrix::identity(2, 2);
        spec.q_omega = DMatrix::identity(2, 2);
        spec.sigma = DMatrix::identity(2, 2);
        spec.p_terminal = DMatrix::zeros(2, 2);
        spec.mu = DVector::zeros(2);
        let v = validate_spec(&spec).unwrap();
        let rep = check_assumptions(&v, None).unwrap();
        assert!(rep.a2_observable_detectable);
        assert!(rep.details.h_detectability.iter().all(|d| d.full_rank));

        spec.h = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let v = validate_spec(&spec).unwrap();
        assert!(!check_assumptions(&v, None).unwrap().a2_observable_detectable);
    }

    #[test]
    fn p_zero_target_is_pw() {
        let v = validate_spec(&SystemSpec::auuv(0.0)).unwrap();
        let pw = s(0.123);
        assert_eq!(d_target(&v, &pw), pw);
    }

    #[test]
    fn json_round_trip_uses_spec_field_names() {
        let spec = SystemSpec::auuv(0.5);
        let json = serde_json::to_value(&spec).unwrap();
        for key in ["A", "B_W", "B_P", "H", "Q", "R_W", "R_P", "Q_omega", "Q_v", "p", "mu", "sigma", "P_terminal", "N"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back: SystemSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
        let scalar: SystemSpec = serde_json::from_str(
            r#"{"A":1,"B_W":1,"B_P":1,"H":1,"Q":0.01,"R_W":5,"R_P":5,"Q_omega":1,"Q_v":1,
                "p":0.5,"mu":-30,"sigma":1,"P_terminal":0,"N":100}"#,
        )
        .unwrap();
        assert_eq!(scalar, spec);
    }
}
