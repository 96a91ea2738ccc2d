//! The dual route: learn `q ~ Q^pi_te` against a weight discriminator, then
//! read off `J = (1 - gamma) E_d0[q(s, pi)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Kernel};
use crate::mdp::Policy;
use crate::measure::{next_value, PairMeasure, StateMeasure, TransitionMeasure};
use crate::model::{ModelKind, WeightModel};
use crate::weight::{flow_matrix, gram_quadratic, policy_features, ridge_solve, BoxQuadratic, LinearSolve, MinimaxFit, MinimaxFitConfig};

fn check_shapes(models: &[&WeightModel], real: &TransitionMeasure, sim: &PairMeasure, pi: &Policy, gamma: f64) -> Result<()> {
    for m in models {
        m.check_shape(real.n_states, real.n_actions)?;
    }
    sim.check_shape(real.n_states, real.n_actions)?;
    if pi.n_states() != real.n_states || pi.n_actions() != real.n_actions {
        return Err(Error::Shape("policy does not match the data".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} is outside [0, 1)")));
    }
    Ok(())
}

/// `|E_mu[w beta (q(s,a) - gamma q(s',pi))] - E_{d_tr}[w r]|`.
pub fn loss_lq(
    w: &WeightModel,
    beta: &WeightModel,
    q: &WeightModel,
    real: &TransitionMeasure,
    sim: &PairMeasure,
    pi: &Policy,
    gamma: f64,
) -> Result<f64> {
    check_shapes(&[w, beta, q], real, sim, pi, gamma)?;
    let (wt, bt, qt) = (w.table(), beta.table(), q.table());
    let a_n = real.n_actions;
    let flow: f64 = real
        .items
        .iter()
        .map(|it| {
            let x = it.s * a_n + it.a;
            it.weight * wt[x] * bt[x] * (qt[x] - gamma * next_value(&qt, pi, it.s_next))
        })
        .sum();
    let reward: f64 = sim.weight.iter().zip(&sim.reward).zip(&wt).map(|((p, r), w)| p * r * w).sum();
    Ok((flow - reward).abs())
}

fn reward_vector(sim: &PairMeasure) -> DVector<f64> {
    DVector::from_iterator(sim.weight.len(), sim.weight.iter().zip(&sim.reward).map(|(p, r)| p * r))
}

/// Closed-form `max_{|w|_H <= 1} L_q(w, beta, q)^2` over the kernel's unit ball.
pub fn rkhs_inner_max_w(
    q: &WeightModel,
    beta: &WeightModel,
    real: &TransitionMeasure,
    sim: &PairMeasure,
    pi: &Policy,
    gamma: f64,
    kernel: &Kernel,
) -> Result<f64> {
    check_shapes(&[q, beta], real, sim, pi, gamma)?;
    kernel.embedding.check_shape(real.n_states, real.n_actions)?;
    let a = flow_matrix(&beta.table(), real, pi, gamma);
    let c = a.transpose() * DVector::from_vec(q.table()) - reward_vector(sim);
    gram_quadratic(&c, &kernel.gram_table())
}

/// Closed-form `q = psi^T zeta` against a linear discriminator `w = phi^T alpha`.
/// The result is clamped to `[0, r_max / (1 - gamma)]`.
#[allow(clippy::too_many_arguments)]
pub fn linear_q_solve(
    phi: &FeatureMap,
    psi: &FeatureMap,
    beta: &WeightModel,
    real: &TransitionMeasure,
    sim: &PairMeasure,
    pi: &Policy,
    gamma: f64,
    ridge_eps: f64,
    r_max: f64,
) -> Result<LinearSolve> {
    check_shapes(&[beta], real, sim, pi, gamma)?;
    phi.check_shape(real.n_states, real.n_actions)?;
    psi.check_shape(real.n_states, real.n_actions)?;
    if phi.dim != psi.dim {
        return Err(Error::Shape(format!("phi has dim {} but psi has dim {}", phi.dim, psi.dim)));
    }
    let bt = beta.table();
    let a_n = real.n_actions;
    let mut m = DMatrix::zeros(phi.dim, psi.dim);
    for it in &real.items {
        let x = it.s * a_n + it.a;
        let f = DVector::from_column_slice(phi.row(x)) * (it.weight * bt[x]);
        let diff = DVector::from_column_slice(psi.row(x)) - policy_features(psi, pi, it.s_next) * gamma;
        m += f * diff.transpose();
    }
    let mut b = DVector::zeros(phi.dim);
    for (x, (p, r)) in sim.weight.iter().zip(&sim.reward).enumerate() {
        if *p != 0.0 {
            b += DVector::from_column_slice(phi.row(x)) * (p * r);
        }
    }
    let (zeta, condition) = ridge_solve(m, b, ridge_eps)?;
    let model =
        WeightModel::linear(psi.clone(), zeta.iter().copied().collect())?.with_clamp(Some(0.0), Some(q_bound(r_max, gamma)));
    let clamp_fraction = model.clamp_fraction(&sim.weight);
    Ok(LinearSolve { model, condition, clamp_fraction })
}

/// `C_Q = r_max / (1 - gamma)`.
pub fn q_bound(r_max: f64, gamma: f64) -> f64 {
    r_max / (1.0 - gamma)
}

/// `(1 - gamma) E_d0[sum_a pi(a|s) q(s, a)]`.
pub fn ope_from_q(q: &WeightModel, d0: &StateMeasure, pi: &Policy, gamma: f64) -> Result<f64> {
    q.check_shape(d0.n_states(), pi.n_actions())?;
    let qt = q.table();
    Ok((1.0 - gamma) * d0.weight.iter().enumerate().map(|(s, &p)| p * pi.state_expectation(s, &qt)).sum::<f64>())
}

/// Descends on the closed-form kernel sup over `w`, mirroring
/// [`crate::weight::rkhs_weight_fit`].
#[allow(clippy::too_many_arguments)]
pub fn rkhs_q_fit(
    q_class: &WeightModel,
    beta: &WeightModel,
    real: &TransitionMeasure,
    sim: &PairMeasure,
    pi: &Policy,
    gamma: f64,
    kernel: &Kernel,
    cfg: &MinimaxFitConfig,
) -> Result<MinimaxFit> {
    cfg.validate()?;
    check_shapes(&[q_class, beta], real, sim, pi, gamma)?;
    kernel.embedding.check_shape(real.n_states, real.n_actions)?;
    let design = match q_class.kind {
        ModelKind::Tabular => DMatrix::identity(q_class.n_state_actions(), q_class.n_state_actions()),
        ModelKind::Linear => q_class.features.as_ref().expect("linear models carry features").matrix(),
        ModelKind::RkhsCoeffs => return Err(Error::Invalid("minimax fits need a tabular or linear class".into())),
    };
    let m = flow_matrix(&beta.table(), real, pi, gamma).transpose() * design;
    let mut quad = BoxQuadratic::from_residual(&m, &reward_vector(sim), &kernel.gram_table());
    if q_class.kind == ModelKind::Tabular {
        quad.lower = q_class.lower;
        quad.upper = q_class.upper;
    }
    let (theta, trace, converged, iterations) =
        quad.minimize(q_class.params_vector(), cfg.learning_rate_w, cfg.max_iters, cfg.tol);
    let mut model = q_class.clone();
    model.params = theta.iter().copied().collect();
    let objective = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MinimaxFit { model, trace, objective, converged, iterations })
}
