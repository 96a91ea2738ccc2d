//! Density-ratio estimation through the KL dual:
//! `max_f E_p[ln f] - E_q[f] + 1`, maximized at `f = p / q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{TransitionDataset, NO_INDEX};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::mdp::Occupancy;
use crate::model::{Link, WeightModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioClassKind {
    /// One free log-value per state-action cell.
    TabularExp,
    /// `exp(phi(x)^T theta)`.
    LinearExp,
}

/// Positive functions with outputs clamped to `[c_min, c_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveFunctionClass {
    pub kind: RatioClassKind,
    pub features: Option<FeatureMap>,
    pub c_min: f64,
    pub c_max: f64,
}

impl PositiveFunctionClass {
    pub fn tabular() -> Self {
        Self { kind: RatioClassKind::TabularExp, features: None, c_min: 1e-3, c_max: 1e3 }
    }

    pub fn linear(features: FeatureMap) -> Self {
        Self { kind: RatioClassKind::LinearExp, features: Some(features), c_min: 1e-3, c_max: 1e3 }
    }

    pub fn with_bounds(mut self, c_min: f64, c_max: f64) -> Self {
        self.c_min = c_min;
        self.c_max = c_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_min > 0.0 && self.c_min <= self.c_max && self.c_max.is_finite()) {
            return Err(Error::Config(format!("need 0 < c_min <= c_max, got [{}, {}]", self.c_min, self.c_max)));
        }
        if self.kind == RatioClassKind::LinearExp && self.features.is_none() {
            return Err(Error::Config("linear_exp class needs a feature map".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFitConfig {
    /// Weight of the `(lambda / 2) |theta|^2` penalty.
    pub reg_lambda: f64,
    /// Initial step of each damped Newton line search.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the projected gradient norm drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for RatioFitConfig {
    fn default() -> Self {
        Self { reg_lambda: 1e-4, learning_rate: 1.0, max_iters: 200, tol: 1e-10, seed: 0 }
    }
}

impl RatioFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if !(self.reg_lambda >= 0.0) {
            return Err(Error::Config("reg_lambda must be nonnegative".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioFit {
    pub model: WeightModel,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Cells seen in the numerator sample but never in the denominator.
    pub support_holes: Vec<(usize, usize)>,
}

/// `sum p ln f - sum q f + 1` over exact tables.
pub fn population_ratio_objective(f: &WeightModel, p: &Occupancy, q: &Occupancy) -> Result<f64> {
    f.check_shape(p.n_states, p.n_actions)?;
    f.check_shape(q.n_states, q.n_actions)?;
    let mut total = 1.0;
    for (x, v) in f.table().into_iter().enumerate() {
        if p.dist[x] > 0.0 {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("f = {v} at cell {x} where p > 0")));
            }
            total += p.dist[x] * v.ln();
        }
        total -= q.dist[x] * v;
    }
    Ok(total)
}

fn frequencies(data: &TransitionDataset, n_states: usize, n_actions: usize) -> Result<Vec<f64>> {
    if data.n_states != n_states || data.n_actions != n_actions {
        return Err(Error::Shape("datasets disagree on the state-action space".into()));
    }
    let mut freq = vec![0.0; n_states * n_actions];
    for t in &data.tuples {
        if t.s == NO_INDEX || t.a == NO_INDEX || t.s >= n_states || t.a >= n_actions {
            return Err(Error::Invalid("ratio fitting needs (s, a) on every tuple".into()));
        }
        freq[t.s * n_actions + t.a] += 1.0;
    }
    let n = data.len() as f64;
    freq.iter_mut().for_each(|v| *v /= n);
    Ok(freq)
}

/// Fits `f ~ p / q` from samples of each.
pub fn fit_density_ratio(
    samples_p: &TransitionDataset,
    samples_q: &TransitionDataset,
    class: &PositiveFunctionClass,
    cfg: &RatioFitConfig,
) -> Result<RatioFit> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::Invalid("ratio fitting needs nonempty samples".into()));
    }
    let (s_n, a_n) = (samples_p.n_states, samples_p.n_actions);
    let p = frequencies(samples_p, s_n, a_n)?;
    let q = frequencies(samples_q, s_n, a_n)?;
    fit_density_ratio_weights(s_n, a_n, &p, &q, class, cfg)
}

/// Fits `f ~ p / q` given the weight each measure puts on every cell.
///
/// The objective is concave in the log-parameters; it is maximized by damped
/// Newton steps projected onto the box `[ln c_min, ln c_max]`.
pub fn fit_density_ratio_weights(
    n_states: usize,
    n_actions: usize,
    p: &[f64],
    q: &[f64],
    class: &PositiveFunctionClass,
    cfg: &RatioFitConfig,
) -> Result<RatioFit> {
    class.validate()?;
    cfg.validate()?;
    let cells = n_states * n_actions;
    if p.len() != cells || q.len() != cells {
        return Err(Error::Shape("weight vectors do not cover the state-action space".into()));
    }
    let phi = match (&class.kind, &class.features) {
        (RatioClassKind::TabularExp, _) => DMatrix::identity(cells, cells),
        (RatioClassKind::LinearExp, Some(f)) => {
            f.check_shape(n_states, n_actions)?;
            f.matrix()
        }
        (RatioClassKind::LinearExp, None) => unreachable!("validated above"),
    };
    let dim = phi.ncols();
    let (lo, hi) = (class.c_min.ln(), class.c_max.ln());
    let lambda = cfg.reg_lambda;
    let p_vec = DVector::from_column_slice(p);
    let q_vec = DVector::from_column_slice(q);
    let linear_term = phi.transpose() * &p_vec;

    let objective = |theta: &DVector<f64>| -> f64 {
        let score = &phi * theta;
        linear_term.dot(theta) - q_vec.iter().zip(score.iter()).map(|(w, s)| w * s.exp()).sum::<f64>()
            - 0.5 * lambda * theta.norm_squared()
    };
    let gradient = |theta: &DVector<f64>| -> DVector<f64> {
        let score = &phi * theta;
        let fq = DVector::from_iterator(cells, q_vec.iter().zip(score.iter()).map(|(w, s)| w * s.exp()));
        &linear_term - phi.transpose() * fq - lambda * theta
    };
    let project = |theta: &mut DVector<f64>| theta.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    let projected_grad = |theta: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            dim,
            theta.iter().zip(g.iter()).map(|(&t, &gi)| {
                if (t >= hi && gi > 0.0) || (t <= lo && gi < 0.0) {
                    0.0
                } else {
                    gi
                }
            }),
        )
    };

    let mut theta = DVector::from_element(dim, 0.0_f64.clamp(lo, hi));
    let mut value = objective(&theta);
    let mut grad = gradient(&theta);
    let mut pg_norm = projected_grad(&theta, &grad).norm();
    let mut iterations = 0;
    let mut converged = pg_norm < cfg.tol;
    while !converged && iterations < cfg.max_iters {
        iterations += 1;
        let pg = projected_grad(&theta, &grad);
        let free: Vec<usize> = (0..dim).filter(|&k| pg[k] != 0.0).collect();
        let score = &phi * &theta;
        let curvature = DVector::from_iterator(cells, q_vec.iter().zip(score.iter()).map(|(w, s)| w * s.exp()));
        let phi_free = phi.select_columns(&free);
        let weighted = DMatrix::from_fn(cells, free.len(), |x, j| curvature[x] * phi_free[(x, j)]);
        let mut neg_hess = phi_free.transpose() * weighted;
        let scale = neg_hess.diagonal().iter().cloned().fold(0.0, f64::max);
        for i in 0..free.len() {
            neg_hess[(i, i)] += lambda + 1e-12 * (1.0 + scale);
        }
        let rhs = DVector::from_iterator(free.len(), free.iter().map(|&k| grad[k]));
        let step_free = match neg_hess.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => neg_hess.lu().solve(&rhs).ok_or_else(|| Error::Numerical("Newton system is singular".into()))?,
        };
        let mut direction = DVector::zeros(dim);
        for (i, &k) in free.iter().enumerate() {
            direction[k] = step_free[i];
        }

        let mut t = cfg.learning_rate;
        let mut accepted = false;
        for _ in 0..60 {
            let mut candidate = &theta + t * &direction;
            project(&mut candidate);
            let gain = grad.dot(&(&candidate - &theta));
            let cand_value = objective(&candidate);
            if cand_value >= value + 1e-4 * gain && cand_value.is_finite() {
                accepted = cand_value > value || gain <= 0.0;
                theta = candidate;
                value = cand_value;
                break;
            }
            t *= 0.5;
        }
        grad = gradient(&theta);
        pg_norm = projected_grad(&theta, &grad).norm();
        converged = pg_norm < cfg.tol;
        if !accepted {
            break;
        }
    }

    let support_holes = (0..cells)
        .filter(|&x| p[x] > 0.0 && q[x] <= 0.0)
        .map(|x| (x / n_actions, x % n_actions))
        .collect();
    let params: Vec<f64> = theta.iter().copied().collect();
    let model = match class.kind {
        RatioClassKind::TabularExp => WeightModel::tabular(n_states, n_actions, params)?,
        RatioClassKind::LinearExp => WeightModel::linear(class.features.clone().expect("validated"), params)?,
    }
    .with_link(Link::Exp)
    .with_clamp(Some(class.c_min), Some(class.c_max));
    Ok(RatioFit { model, converged, grad_norm: pg_norm, iterations, support_holes })
}

/// `max |beta_hat - beta_star|` over the support.
pub fn sup_norm_error(beta_hat: &WeightModel, beta_star: &[f64], support: &[bool]) -> Result<f64> {
    let table = beta_hat.table();
    if table.len() != beta_star.len() || support.len() != beta_star.len() {
        return Err(Error::Shape("ratio tables disagree in size".into()));
    }
    Ok(table
        .iter()
        .zip(beta_star)
        .zip(support)
        .filter(|(_, &on)| on)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max))
}
