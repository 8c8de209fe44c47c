//! Exact first- and second-moment propagation of the closed loop.
//!
//! The stacked vector `z = (x, e^W, e^P)` with `e^W = x - x̂^W_{k|k}` and
//! `e^P = x - x̂^P_{k|k}` evolves linearly given the delivery indicator, so
//! averaging its second moment over the two delivery outcomes gives
//! `E[x_k'x_k]` and the expected cost of any gain schedule without sampling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::GainSchedule;
use crate::error::{NcsError, Result};
use crate::estimator::covariance_schedule;
use crate::model::AugmentedSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTrajectory {
    /// `E[x_k'x_k]` for `k = 0..=steps`.
    pub msq: Vec<f64>,
    /// `E[x_k]` for `k = 0..=steps`.
    pub mean_x: Vec<Vec<f64>>,
    /// `E[u^W_k]` and `E[u^P_k]` for `k = 0..steps`.
    pub mean_u_w: Vec<Vec<f64>>,
    pub mean_u_p: Vec<Vec<f64>>,
    /// Expected stage cost for `k = 0..steps`.
    pub stage_costs: Vec<f64>,
    /// `E[x_steps' P_{N+1} x_steps]`.
    pub terminal_cost: f64,
    pub expected_cost: f64,
}

fn put(dst: &mut DMatrix<f64>, r: usize, c: usize, src: &DMatrix<f64>) {
    dst.view_mut((r, c), src.shape()).copy_from(src);
}

/// Propagates the moments through `steps` control steps, i.e. the state is
/// followed from `x_0` to `x_steps`.
pub fn propagate(spec: &AugmentedSpec, gains: &GainSchedule, steps: usize) -> Result<MomentTrajectory> {
    if steps > 0 && !gains.covers(steps - 1) {
        return Err(NcsError::ScheduleMismatch(format!(
            "gain schedule has {} steps, need {steps}",
            gains.steps.len()
        )));
    }
    let (n, m, p) = (spec.n(), spec.m(), spec.p);
    let cov = covariance_schedule(spec, steps)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let dim = 3 * n;

    // Initial draw: x_0 = μ + d, d ~ N(0, σ), v_0 ~ N(0, Q_v).
    let mut mean_part = DMatrix::zeros(dim, dim);
    put(&mut mean_part, 0, 0, &(&spec.mu * spec.mu.transpose()));
    let mut init_cov = DMatrix::zeros(n + m, n + m);
    put(&mut init_cov, 0, 0, &spec.sigma);
    put(&mut init_cov, n, n, &spec.q_v);
    let mut lost = DMatrix::zeros(dim, n + m);
    put(&mut lost, 0, 0, &eye);
    put(&mut lost, n, 0, &eye);
    let g0 = &cov[0].gain;
    put(&mut lost, 2 * n, 0, &(&eye - g0 * &spec.h));
    put(&mut lost, 2 * n, n, &(-g0));
    let mut delivered = DMatrix::zeros(dim, n + m);
    put(&mut delivered, 0, 0, &eye);
    let mut s = &mean_part + (&delivered * &init_cov * delivered.transpose()) * (1.0 - p) + (&lost * &init_cov * lost.transpose()) * p;

    let mut noise_cov = DMatrix::zeros(n + m, n + m);
    put(&mut noise_cov, 0, 0, &spec.q_omega);
    put(&mut noise_cov, n, n, &spec.q_v);

    let mut msq = Vec::with_capacity(steps + 1);
    let mut stage_costs = Vec::with_capacity(steps);
    let mut mean_x = Vec::with_capacity(steps + 1);
    let (mut mean_u_w, mut mean_u_p) = (Vec::with_capacity(steps), Vec::with_capacity(steps));
    // Both estimation errors have zero mean, so E[x] follows the certainty-
    // equivalent loop.
    let mut mx = spec.mu.clone();
    for k in 0..steps {
        msq.push(s.view((0, 0), (n, n)).trace());
        let g = gains.at(k);
        let stacked = g.stacked();
        // u^W = -K_W (x - e^W), u^P = -K_Phat (x - e^W) - K_Ptilde (e^W - e^P)
        let mut u_w = DMatrix::zeros(spec.w(), dim);
        put(&mut u_w, 0, 0, &(-&g.k_w));
        put(&mut u_w, 0, n, &g.k_w);
        let mut u_p = DMatrix::zeros(spec.q_dim(), dim);
        put(&mut u_p, 0, 0, &(-&g.k_phat));
        put(&mut u_p, 0, n, &(&g.k_phat - &g.k_ptilde));
        put(&mut u_p, 0, 2 * n, &g.k_ptilde);
        let mut weight = DMatrix::zeros(dim, dim);
        put(&mut weight, 0, 0, &spec.q);
        weight += u_w.transpose() * &spec.r_w * &u_w + u_p.transpose() * &spec.r_p * &u_p;
        stage_costs.push((&weight * &s).trace());
        mean_x.push(mx.as_slice().to_vec());
        mean_u_w.push((-(&g.k_w * &mx)).as_slice().to_vec());
        mean_u_p.push((-(&g.k_phat * &mx)).as_slice().to_vec());
        mx = (&spec.a - &spec.b * &stacked) * &mx;

        // x_{k+1} = (A - BK) x + BK e^W - B^P K̃ (e^W - e^P) + ω
        let bk = &spec.b * &stacked;
        let jt = &spec.b_p * &g.k_ptilde;
        let mut x_row = DMatrix::zeros(n, dim);
        put(&mut x_row, 0, 0, &(&spec.a - &bk));
        put(&mut x_row, 0, n, &(&bk - &jt));
        put(&mut x_row, 0, 2 * n, &jt);
        // remote innovation A e^W - J(e^W - e^P) + ω
        let mut w_row = DMatrix::zeros(n, dim);
        put(&mut w_row, 0, n, &(&spec.a - &jt));
        put(&mut w_row, 0, 2 * n, &jt);
        // embedded innovation (I - GH)(A e^P + ω) - G v
        let gk = &cov[k + 1].gain;
        let i_gh = &eye - gk * &spec.h;
        let mut p_row = DMatrix::zeros(n, dim);
        put(&mut p_row, 0, 2 * n, &(&i_gh * &spec.a));

        let mut t_lost = DMatrix::zeros(dim, dim);
        put(&mut t_lost, 0, 0, &x_row);
        put(&mut t_lost, n, 0, &w_row);
        put(&mut t_lost, 2 * n, 0, &p_row);
        let mut t_delivered = DMatrix::zeros(dim, dim);
        put(&mut t_delivered, 0, 0, &x_row);

        let mut n_lost = DMatrix::zeros(dim, n + m);
        put(&mut n_lost, 0, 0, &eye);
        put(&mut n_lost, n, 0, &eye);
        put(&mut n_lost, 2 * n, 0, &i_gh);
        put(&mut n_lost, 2 * n, n, &(-gk));
        let mut n_delivered = DMatrix::zeros(dim, n + m);
        put(&mut n_delivered, 0, 0, &eye);

        let next_lost = &t_lost * &s * t_lost.transpose() + &n_lost * &noise_cov * n_lost.transpose();
        let next_delivered = &t_delivered * &s * t_delivered.transpose() + &n_delivered * &noise_cov * n_delivered.transpose();
        s = next_lost * p + next_delivered * (1.0 - p);
        s = (&s + s.transpose()) * 0.5;
    }
    msq.push(s.view((0, 0), (n, n)).trace());
    mean_x.push(mx.as_slice().to_vec());
    let terminal_cost = (&spec.p_terminal * s.view((0, 0), (n, n))).trace();
    let expected_cost = stage_costs.iter().sum::<f64>() + terminal_cost;
    Ok(MomentTrajectory { msq, mean_x, mean_u_w, mean_u_p, stage_costs, terminal_cost, expected_cost })
}
