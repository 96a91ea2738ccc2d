//! Correction-weight estimation: `w ~ d_te / d_tr` learned from real
//! transitions reweighted by a fitted `beta ~ d_tr / mu`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMap, Kernel};
use crate::mdp::Policy;
use crate::measure::{next_value, PairMeasure, StateMeasure, TransitionMeasure};
use crate::model::{ModelKind, WeightModel};

/// Conditioning beyond which a regularized linear solve is refused.
pub const MAX_CONDITION: f64 = 1e12;
/// Parameter magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxFitConfig {
    /// GradientDICE: raw step on the weight parameters. Kernel fits: fraction
    /// of the `1 / L` step for the quadratic objective, capped at 1.
    pub learning_rate_w: f64,
    /// GradientDICE: raw step on the discriminator `f` and on `eta`.
    pub learning_rate_inner: f64,
    pub max_iters: usize,
    pub ridge_eps: f64,
    pub gd_lambda: f64,
    /// Gradient-norm threshold for declaring convergence.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MinimaxFitConfig {
    fn default() -> Self {
        Self {
            learning_rate_w: 1e-2,
            learning_rate_inner: 1e-1,
            max_iters: 5000,
            ridge_eps: 1e-8,
            gd_lambda: 1.0,
            tol: 1e-10,
            seed: 0,
        }
    }
}

impl MinimaxFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.ridge_eps >= 0.0) {
            return Err(Error::Config("ridge_eps must be nonnegative".into()));
        }
        if !(self.learning_rate_w > 0.0 && self.learning_rate_inner > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.gd_lambda >= 0.0) {
            return Err(Error::Config("gd_lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

fn check_inputs(models: &[&WeightModel], real: &TransitionMeasure, pi: &Policy, gamma: f64) -> Result<()> {
    for m in models {
        m.check_shape(real.n_states, real.n_actions)?;
    }
    if pi.n_states() != real.n_states || pi.n_actions() != real.n_actions {
        return Err(Error::Shape("policy does not match the data".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} is outside [0, 1)")));
    }
    Ok(())
}

fn check_d0(d0: &StateMeasure, n_states: usize) -> Result<()> {
    if d0.n_states() != n_states {
        return Err(Error::Shape("initial-state measure does not match the data".into()));
    }
    Ok(())
}

/// `|E_mu[w beta (q(s,a) - gamma q(s',pi))] - (1 - gamma) E_d0[q(s,pi)]|`.
///
/// Population values come from passing population measures.
pub fn loss_lw(
    w: &WeightModel,
    beta: &WeightModel,
    q: &WeightModel,
    real: &TransitionMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
) -> Result<f64> {
    check_inputs(&[w, beta, q], real, pi, gamma)?;
    check_d0(d0, real.n_states)?;
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
    let start: f64 = d0.weight.iter().enumerate().map(|(s, &p)| p * pi.state_expectation(s, &qt)).sum();
    Ok((flow - (1.0 - gamma) * start).abs())
}

/// `A = sum_i wt_i beta(x_i) (e_{x_i} - gamma e_{(s'_i, pi)}) e_{x_i}^T`, so
/// that the flow functional of `w` against `q` is `q^T (A w - b)`.
pub(crate) fn flow_matrix(beta: &[f64], real: &TransitionMeasure, pi: &Policy, gamma: f64) -> DMatrix<f64> {
    let a_n = real.n_actions;
    let n = real.n_states * a_n;
    let mut a = DMatrix::zeros(n, n);
    for it in &real.items {
        let x = it.s * a_n + it.a;
        let c = it.weight * beta[x];
        a[(x, x)] += c;
        for (b, &p) in pi.row(it.s_next).iter().enumerate() {
            a[(it.s_next * a_n + b, x)] -= gamma * c * p;
        }
    }
    a
}

/// `(1 - gamma) sum_j wt_j e_{(s_j, pi)}`.
pub(crate) fn start_vector(d0: &StateMeasure, pi: &Policy, gamma: f64) -> DVector<f64> {
    DVector::from_vec(d0.policy_pushforward(pi)) * (1.0 - gamma)
}

/// `c^T K c`, with tiny negative round-off clamped to zero.
pub(crate) fn gram_quadratic(c: &DVector<f64>, gram: &DMatrix<f64>) -> Result<f64> {
    let v = c.dot(&(gram * c));
    if v < -1e-8 {
        return Err(Error::Numerical(format!("Gram quadratic form is {v}")));
    }
    Ok(v.max(0.0))
}

/// Closed-form `max_{|q|_H <= 1} L_w(w, beta, q)^2` over the kernel's unit ball.
pub fn rkhs_inner_max(
    w: &WeightModel,
    beta: &WeightModel,
    real: &TransitionMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
    kernel: &Kernel,
) -> Result<f64> {
    check_inputs(&[w, beta], real, pi, gamma)?;
    check_d0(d0, real.n_states)?;
    kernel.embedding.check_shape(real.n_states, real.n_actions)?;
    let a = flow_matrix(&beta.table(), real, pi, gamma);
    let c = a * DVector::from_vec(w.table()) - start_vector(d0, pi, gamma);
    gram_quadratic(&c, &kernel.gram_table())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSolve {
    pub model: WeightModel,
    pub condition: f64,
    /// Share of the data-side mass where the fitted function needed clamping.
    pub clamp_fraction: f64,
}

/// Solves `(M + eps I) theta = b` after a condition check.
pub(crate) fn ridge_solve(m: DMatrix<f64>, b: DVector<f64>, eps: f64) -> Result<(DVector<f64>, f64)> {
    let d = m.nrows();
    let reg = m + DMatrix::identity(d, d) * eps;
    let sv = reg.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular(format!("condition number {condition:e} exceeds {MAX_CONDITION:e}")));
    }
    let theta = reg.lu().solve(&b).ok_or_else(|| Error::Singular("LU factorization failed".into()))?;
    Ok((theta, condition))
}

/// Features of `(s', pi)`: `sum_a pi(a|s') psi(s', a)`.
pub(crate) fn policy_features(psi: &FeatureMap, pi: &Policy, s: usize) -> DVector<f64> {
    let a_n = pi.n_actions();
    let mut v = DVector::zeros(psi.dim);
    for (a, &p) in pi.row(s).iter().enumerate() {
        if p != 0.0 {
            v += DVector::from_column_slice(psi.row(s * a_n + a)) * p;
        }
    }
    v
}

/// Closed-form minimizer for `w = phi^T alpha` against `q = psi^T zeta`.
#[allow(clippy::too_many_arguments)]
pub fn linear_weight_solve(
    phi: &FeatureMap,
    psi: &FeatureMap,
    beta: &WeightModel,
    real: &TransitionMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
    ridge_eps: f64,
) -> Result<LinearSolve> {
    check_inputs(&[beta], real, pi, gamma)?;
    check_d0(d0, real.n_states)?;
    phi.check_shape(real.n_states, real.n_actions)?;
    psi.check_shape(real.n_states, real.n_actions)?;
    if phi.dim != psi.dim {
        return Err(Error::Shape(format!("phi has dim {} but psi has dim {}", phi.dim, psi.dim)));
    }
    let bt = beta.table();
    let a_n = real.n_actions;
    let mut m = DMatrix::zeros(psi.dim, phi.dim);
    for it in &real.items {
        let x = it.s * a_n + it.a;
        let diff = DVector::from_column_slice(psi.row(x)) - policy_features(psi, pi, it.s_next) * gamma;
        let f = DVector::from_column_slice(phi.row(x)) * (it.weight * bt[x]);
        m += diff * f.transpose();
    }
    let mut b = DVector::zeros(psi.dim);
    for (s, &p) in d0.weight.iter().enumerate() {
        if p != 0.0 {
            b += policy_features(psi, pi, s) * ((1.0 - gamma) * p);
        }
    }
    let (alpha, condition) = ridge_solve(m, b, ridge_eps)?;
    let model = WeightModel::linear(phi.clone(), alpha.iter().copied().collect())?.with_clamp(Some(0.0), None);
    let clamp_fraction = model.clamp_fraction(&real.pair_marginal());
    Ok(LinearSolve { model, condition, clamp_fraction })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxFit {
    pub model: WeightModel,
    /// Objective at every evaluated iterate, starting with the initial point.
    pub trace: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `theta^T Q theta - 2 g^T theta + c0` restricted to a coordinate box.
pub(crate) struct BoxQuadratic {
    pub q: DMatrix<f64>,
    pub g: DVector<f64>,
    pub c0: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl BoxQuadratic {
    /// Quadratic `(M theta - b)^T K (M theta - b)`.
    pub fn from_residual(m: &DMatrix<f64>, b: &DVector<f64>, gram: &DMatrix<f64>) -> Self {
        let km = gram * m;
        let kb = gram * b;
        Self { q: m.transpose() * km, g: m.transpose() * &kb, c0: b.dot(&kb), lower: None, upper: None }
    }

    fn value(&self, theta: &DVector<f64>) -> f64 {
        (theta.dot(&(&self.q * theta)) - 2.0 * self.g.dot(theta) + self.c0).max(0.0)
    }

    fn project(&self, theta: &mut DVector<f64>) {
        for v in theta.iter_mut() {
            if let Some(lo) = self.lower {
                *v = v.max(lo);
            }
            if let Some(hi) = self.upper {
                *v = v.min(hi);
            }
        }
    }

    fn projected_gradient_norm(&self, theta: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        theta
            .iter()
            .zip(grad.iter())
            .map(|(&t, &g)| {
                let blocked = (self.lower.is_some_and(|lo| t <= lo) && g > 0.0)
                    || (self.upper.is_some_and(|hi| t >= hi) && g < 0.0);
                if blocked {
                    0.0
                } else {
                    g * g
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Accelerated projected gradient descent with restarts. Returns the best
    /// iterate (earliest on ties) and the objective trace.
    pub fn minimize(&self, init: DVector<f64>, step_fraction: f64, max_iters: usize, tol: f64) -> (DVector<f64>, Vec<f64>, bool, usize) {
        let mut theta = init;
        self.project(&mut theta);
        let mut best = theta.clone();
        let mut best_value = self.value(&theta);
        let mut trace = vec![best_value];
        if best_value <= tol {
            return (best, trace, true, 0);
        }
        let curvature = 2.0 * SymmetricEigen::new(self.q.clone()).eigenvalues.max().max(0.0);
        if curvature <= 0.0 {
            return (best, trace, true, 0);
        }
        let step = step_fraction.min(1.0) / curvature;
        let mut prev = theta.clone();
        let mut momentum = 1.0_f64;
        let mut value = best_value;
        let mut converged = false;
        let mut iterations = 0;
        for _ in 0..max_iters {
            iterations += 1;
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let y = &theta + (&theta - &prev) * ((momentum - 1.0) / next_momentum);
            let grad_y = (&self.q * &y - &self.g) * 2.0;
            let mut candidate = &y - grad_y * step;
            self.project(&mut candidate);
            let cand_value = self.value(&candidate);
            if cand_value > value {
                // Restart the momentum from the current point.
                momentum = 1.0;
                prev = theta.clone();
                let grad = (&self.q * &theta - &self.g) * 2.0;
                candidate = &theta - grad * step;
                self.project(&mut candidate);
            } else {
                momentum = next_momentum;
                prev = theta.clone();
            }
            theta = candidate;
            value = self.value(&theta);
            trace.push(value);
            if value < best_value {
                best_value = value;
                best = theta.clone();
            }
            let grad = (&self.q * &theta - &self.g) * 2.0;
            if value <= tol || self.projected_gradient_norm(&theta, &grad) < tol {
                converged = true;
                break;
            }
        }
        (best, trace, converged, iterations)
    }
}

fn class_design(model: &WeightModel) -> Result<DMatrix<f64>> {
    match model.kind {
        ModelKind::Tabular => Ok(DMatrix::identity(model.n_state_actions(), model.n_state_actions())),
        ModelKind::Linear => Ok(model.features.as_ref().expect("linear models carry features").matrix()),
        ModelKind::RkhsCoeffs => Err(Error::Invalid("minimax fits need a tabular or linear class".into())),
    }
}

/// Descends on the closed-form kernel sup, starting from `w_class`'s params.
///
/// Tabular classes are projected onto the model's clamp box; linear classes
/// are left unconstrained and clamped when evaluated.
#[allow(clippy::too_many_arguments)]
pub fn rkhs_weight_fit(
    w_class: &WeightModel,
    beta: &WeightModel,
    real: &TransitionMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
    kernel: &Kernel,
    cfg: &MinimaxFitConfig,
) -> Result<MinimaxFit> {
    cfg.validate()?;
    check_inputs(&[w_class, beta], real, pi, gamma)?;
    check_d0(d0, real.n_states)?;
    kernel.embedding.check_shape(real.n_states, real.n_actions)?;
    let design = class_design(w_class)?;
    let m = flow_matrix(&beta.table(), real, pi, gamma) * &design;
    let b = start_vector(d0, pi, gamma);
    let mut quad = BoxQuadratic::from_residual(&m, &b, &kernel.gram_table());
    if w_class.kind == ModelKind::Tabular {
        quad.lower = w_class.lower;
        quad.upper = w_class.upper;
    }
    let (theta, trace, converged, iterations) =
        quad.minimize(w_class.params_vector(), cfg.learning_rate_w, cfg.max_iters, cfg.tol);
    let mut model = w_class.clone();
    model.params = theta.iter().copied().collect();
    let objective = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MinimaxFit { model, trace, objective, converged, iterations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceFit {
    pub tau: WeightModel,
    pub f: WeightModel,
    pub eta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lagrangian value after each iteration.
    pub trace: Vec<f64>,
}

/// Saddle-point fit of
/// `L(tau, eta, f) = (1-g) E_d0[f(s,pi)] + g E_mu[beta tau f(s',pi)]
///   - E_tr[tau f] - E_tr[f^2]/2 + lambda (E_tr[eta tau - eta] - eta^2/2)`,
/// ascending in `(f, eta)` and descending in `tau`, alternately.
///
/// Population gradients come from passing population measures.
#[allow(clippy::too_many_arguments)]
pub fn beta_gradient_dice_fit(
    tau_class: &WeightModel,
    f_class: &WeightModel,
    beta: &WeightModel,
    real: &TransitionMeasure,
    sim: &PairMeasure,
    d0: &StateMeasure,
    pi: &Policy,
    gamma: f64,
    cfg: &MinimaxFitConfig,
) -> Result<DiceFit> {
    cfg.validate()?;
    check_inputs(&[tau_class, f_class, beta], real, pi, gamma)?;
    check_d0(d0, real.n_states)?;
    sim.check_shape(real.n_states, real.n_actions)?;
    let phi = class_design(tau_class)?;
    let psi = class_design(f_class)?;
    let a_n = real.n_actions;
    let n = real.n_states * a_n;
    let bt = beta.table();

    // T[x, y] = g sum_i wt_i beta(x_i) [x_i = x] pi(a'|s'_i) [y = (s'_i, a')]
    let mut t = DMatrix::zeros(n, n);
    for it in &real.items {
        let x = it.s * a_n + it.a;
        for (b, &p) in pi.row(it.s_next).iter().enumerate() {
            t[(x, it.s_next * a_n + b)] += gamma * it.weight * bt[x] * p;
        }
    }
    let d_tr = DVector::from_column_slice(&sim.weight);
    let diag = DMatrix::from_diagonal(&d_tr);
    let cross = phi.transpose() * (&t - &diag) * &psi;
    let f_curv = psi.transpose() * &diag * &psi;
    let f_lin = psi.transpose() * start_vector(d0, pi, gamma);
    let mass = phi.transpose() * &d_tr;
    let lambda = cfg.gd_lambda;

    let lagrangian = |theta: &DVector<f64>, nu: &DVector<f64>, eta: f64| -> f64 {
        f_lin.dot(nu) + theta.dot(&(&cross * nu)) - 0.5 * nu.dot(&(&f_curv * nu))
            + lambda * (eta * mass.dot(theta) - eta - 0.5 * eta * eta)
    };

    let mut theta = tau_class.params_vector();
    let mut nu = f_class.params_vector();
    let mut eta = 0.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let grad_nu = &f_lin + cross.transpose() * &theta - &f_curv * &nu;
        let grad_eta = lambda * (mass.dot(&theta) - 1.0 - eta);
        nu += &grad_nu * cfg.learning_rate_inner;
        eta += cfg.learning_rate_inner * grad_eta;
        let grad_theta = &cross * &nu + &mass * (lambda * eta);
        theta -= &grad_theta * cfg.learning_rate_w;

        let size = theta.amax().max(nu.amax());
        if !(eta.abs() <= DIVERGENCE_LIMIT && size <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence(format!(
                "iteration {iterations}: |eta| = {:e}, max |param| = {:e}",
                eta.abs(),
                size
            )));
        }
        trace.push(lagrangian(&theta, &nu, eta));
        let residual = grad_theta.norm().max(grad_nu.norm()).max(grad_eta.abs());
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let mut tau = tau_class.clone();
    tau.params = theta.iter().copied().collect();
    let mut f = f_class.clone();
    f.params = nu.iter().copied().collect();
    Ok(DiceFit { tau, f, eta, iterations, converged, trace })
}

/// `E_{d_tr}[w r]` over simulator-occupancy samples (or the exact table).
pub fn ope_estimate(w_hat: &WeightModel, sim: &PairMeasure) -> Result<f64> {
    w_hat.check_shape(sim.n_states, sim.n_actions)?;
    Ok(w_hat.table().iter().zip(&sim.weight).zip(&sim.reward).map(|((w, p), r)| w * p * r).sum())
}

/// [`ope_estimate`] divided by `E_{d_tr}[w]`, so the weights average to one.
pub fn ope_estimate_normalized(w_hat: &WeightModel, sim: &PairMeasure) -> Result<f64> {
    let mass: f64 = w_hat.table().iter().zip(&sim.weight).map(|(w, p)| w * p).sum();
    if !(mass > 0.0) {
        return Err(Error::Numerical("weights have zero mass under the simulator occupancy".into()));
    }
    Ok(ope_estimate(w_hat, sim)? / mass)
}

/// `E_mu[w beta r]` on the real transitions themselves.
pub fn ope_estimate_real_rewards(w_hat: &WeightModel, beta: &WeightModel, real: &TransitionMeasure) -> Result<f64> {
    w_hat.check_shape(real.n_states, real.n_actions)?;
    beta.check_shape(real.n_states, real.n_actions)?;
    let (wt, bt) = (w_hat.table(), beta.table());
    Ok(real
        .items
        .iter()
        .map(|it| {
            let x = it.s * real.n_actions + it.a;
            it.weight * wt[x] * bt[x] * it.reward
        })
        .sum())
}
