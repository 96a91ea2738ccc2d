//! Exact finite-MDP machinery.
//!
//! Occupancies and Q-functions are solved as dense linear systems over the
//! state-action simplex. These solves are the ground truth that every
//! estimator in the crate is checked against, so nothing here is
//! approximate except the Monte Carlo cross-checks at the bottom.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Categorical};

/// Largest state-action count accepted by the dense solvers.
pub const MAX_STATE_ACTIONS: usize = 10_000;

const ROW_TOL: f64 = 1e-12;

/// Occupancy entries at or below this are treated as outside the support.
pub const SUPPORT_TOL: f64 = 1e-12;

/// A finite discounted MDP `(S, A, P, R, gamma, d0)`.
///
/// Tables are stored flat: `transition[(s * A + a) * S + s_next]` and
/// `reward_mean[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward_mean: Vec<f64>,
    reward_noise_halfwidth: f64,
    gamma: f64,
    initial_dist: Vec<f64>,
    r_max: f64,
}

/// JSON form of a [`TabularMdp`]; nested arrays, validated on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_mean: Vec<Vec<f64>>,
    #[serde(default)]
    pub reward_noise_halfwidth: f64,
    pub initial_dist: Vec<f64>,
    pub r_max: f64,
}

fn check_distribution(row: &[f64], what: impl Fn() -> String) -> Result<()> {
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Invalid(format!("{} has entry {p} at index {i}", what())));
        }
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::Invalid(format!("{} sums to {total}", what())));
    }
    Ok(())
}

impl TabularMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        reward_noise_halfwidth: f64,
        gamma: f64,
        initial_dist: Vec<f64>,
        r_max: f64,
    ) -> Result<Self> {
        let mdp = Self {
            n_states,
            n_actions,
            transition,
            reward_mean,
            reward_noise_halfwidth,
            gamma,
            initial_dist,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every type invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n) = (self.n_states, self.n_actions);
        if s_n == 0 || a_n == 0 {
            return Err(Error::Invalid("MDP needs at least one state and one action".into()));
        }
        if s_n * a_n > MAX_STATE_ACTIONS {
            return Err(Error::Invalid(format!(
                "{} state-action pairs exceeds the dense-solver cap of {MAX_STATE_ACTIONS}",
                s_n * a_n
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Invalid(format!("gamma = {} is outside [0, 1)", self.gamma)));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::Invalid(format!("r_max = {} must be positive", self.r_max)));
        }
        if !(self.reward_noise_halfwidth >= 0.0 && self.reward_noise_halfwidth.is_finite()) {
            return Err(Error::Invalid(format!(
                "reward_noise_halfwidth = {} must be nonnegative",
                self.reward_noise_halfwidth
            )));
        }
        if self.transition.len() != s_n * a_n * s_n {
            return Err(Error::Shape(format!(
                "transition has {} entries, expected {}",
                self.transition.len(),
                s_n * a_n * s_n
            )));
        }
        if self.reward_mean.len() != s_n * a_n {
            return Err(Error::Shape(format!(
                "reward_mean has {} entries, expected {}",
                self.reward_mean.len(),
                s_n * a_n
            )));
        }
        if self.initial_dist.len() != s_n {
            return Err(Error::Shape(format!(
                "initial_dist has {} entries, expected {s_n}",
                self.initial_dist.len()
            )));
        }
        for s in 0..s_n {
            for a in 0..a_n {
                check_distribution(self.next_state_probs(s, a), || format!("transition[{s}][{a}]"))?;
                let r = self.reward_mean[s * a_n + a];
                if !(0.0..=self.r_max).contains(&r) {
                    return Err(Error::Invalid(format!(
                        "reward_mean[{s}][{a}] = {r} is outside [0, {}]",
                        self.r_max
                    )));
                }
            }
        }
        check_distribution(&self.initial_dist, || "initial_dist".to_string())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn reward_noise_halfwidth(&self) -> f64 {
        self.reward_noise_halfwidth
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward_mean(&self) -> &[f64] {
        &self.reward_mean
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Expected reward at `(s, a)` once the clipped uniform noise is
    /// accounted for. Equals `reward_mean` whenever the noise window stays
    /// inside `[0, r_max]`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        clipped_uniform_mean(self.reward_mean[self.index(s, a)], self.reward_noise_halfwidth, self.r_max)
    }

    pub fn expected_rewards(&self) -> Vec<f64> {
        (0..self.n_states)
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.expected_reward(s, a))
            .collect()
    }

    /// Draws one reward for `(s, a)`.
    pub fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.reward_mean[self.index(s, a)];
        if self.reward_noise_halfwidth == 0.0 {
            return mean;
        }
        let u: f64 = rng.random_range(-1.0..1.0);
        (mean + u * self.reward_noise_halfwidth).clamp(0.0, self.r_max)
    }

    /// Copy of `self` with a different transition kernel.
    pub fn with_transition(&self, transition: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.transition = transition;
        out.validate()?;
        Ok(out)
    }

    pub fn to_document(&self) -> MdpDocument {
        let (s_n, a_n) = (self.n_states, self.n_actions);
        MdpDocument {
            n_states: s_n,
            n_actions: a_n,
            gamma: self.gamma,
            transition: (0..s_n)
                .map(|s| (0..a_n).map(|a| self.next_state_probs(s, a).to_vec()).collect())
                .collect(),
            reward_mean: (0..s_n)
                .map(|s| self.reward_mean[s * a_n..(s + 1) * a_n].to_vec())
                .collect(),
            reward_noise_halfwidth: self.reward_noise_halfwidth,
            initial_dist: self.initial_dist.clone(),
            r_max: self.r_max,
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (s_n, a_n) = (doc.n_states, doc.n_actions);
        if doc.transition.len() != s_n {
            return Err(Error::Shape(format!("transition has {} rows, expected {s_n}", doc.transition.len())));
        }
        let mut transition = Vec::with_capacity(s_n * a_n * s_n);
        for (s, per_action) in doc.transition.iter().enumerate() {
            if per_action.len() != a_n {
                return Err(Error::Shape(format!(
                    "transition[{s}] has {} actions, expected {a_n}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != s_n {
                    return Err(Error::Shape(format!(
                        "transition[{s}][{a}] has {} entries, expected {s_n}",
                        row.len()
                    )));
                }
                transition.extend_from_slice(row);
            }
        }
        if doc.reward_mean.len() != s_n {
            return Err(Error::Shape(format!("reward_mean has {} rows, expected {s_n}", doc.reward_mean.len())));
        }
        let mut reward_mean = Vec::with_capacity(s_n * a_n);
        for (s, row) in doc.reward_mean.iter().enumerate() {
            if row.len() != a_n {
                return Err(Error::Shape(format!("reward_mean[{s}] has {} entries, expected {a_n}", row.len())));
            }
            reward_mean.extend_from_slice(row);
        }
        Self::new(
            s_n,
            a_n,
            transition,
            reward_mean,
            doc.reward_noise_halfwidth,
            doc.gamma,
            doc.initial_dist.clone(),
            doc.r_max,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }

    /// Checks that `other` shares states, actions, gamma, d0 and rewards.
    pub fn check_compatible(&self, other: &TabularMdp) -> Result<()> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(Error::Shape("MDPs differ in state or action count".into()));
        }
        if self.gamma != other.gamma {
            return Err(Error::Invalid("MDPs differ in gamma".into()));
        }
        Ok(())
    }
}

/// Mean of `clip(mean + U(-h, h), 0, r_max)`.
fn clipped_uniform_mean(mean: f64, h: f64, r_max: f64) -> f64 {
    if h == 0.0 {
        return mean;
    }
    let (lo, hi) = (mean - h, mean + h);
    if lo >= 0.0 && hi <= r_max {
        return mean;
    }
    // piecewise integral of the clipped identity over [lo, hi]
    let integral = |x0: f64, x1: f64| -> f64 {
        let mut total = 0.0;
        let a = x0.max(0.0).min(r_max);
        let b = x1.max(0.0).min(r_max);
        total += (b * b - a * a) / 2.0;
        if x1 > r_max {
            total += r_max * (x1 - x0.max(r_max));
        }
        total
    };
    integral(lo, hi) / (2.0 * h)
}

/// A stationary stochastic policy, `action_probs[s * A + a] = pi(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    action_probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub action_probs: Vec<Vec<f64>>,
}

impl TryFrom<PolicyDocument> for Policy {
    type Error = Error;

    fn try_from(doc: PolicyDocument) -> Result<Self> {
        if doc.action_probs.len() != doc.n_states {
            return Err(Error::Shape(format!(
                "action_probs has {} rows, expected {}",
                doc.action_probs.len(),
                doc.n_states
            )));
        }
        let mut flat = Vec::with_capacity(doc.n_states * doc.n_actions);
        for (s, row) in doc.action_probs.iter().enumerate() {
            if row.len() != doc.n_actions {
                return Err(Error::Shape(format!(
                    "action_probs[{s}] has {} entries, expected {}",
                    row.len(),
                    doc.n_actions
                )));
            }
            flat.extend_from_slice(row);
        }
        Policy::new(doc.n_states, doc.n_actions, flat)
    }
}

impl From<Policy> for PolicyDocument {
    fn from(pi: Policy) -> Self {
        PolicyDocument {
            n_states: pi.n_states,
            n_actions: pi.n_actions,
            action_probs: pi.action_probs.chunks(pi.n_actions).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, action_probs: Vec<f64>) -> Result<Self> {
        if action_probs.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy table has {} entries, expected {}",
                action_probs.len(),
                n_states * n_actions
            )));
        }
        if n_actions == 0 {
            return Err(Error::Invalid("policy needs at least one action".into()));
        }
        for (s, row) in action_probs.chunks(n_actions).enumerate() {
            check_distribution(row, || format!("policy row {s}"))?;
        }
        Ok(Self { n_states, n_actions, action_probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            action_probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Invalid(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.action_probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.action_probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn table(&self) -> &[f64] {
        &self.action_probs
    }

    /// `sum_a pi(a | s) f(s, a)` for a flat state-action table `f`.
    pub fn state_expectation(&self, s: usize, f: &[f64]) -> f64 {
        self.row(s)
            .iter()
            .zip(&f[s * self.n_actions..(s + 1) * self.n_actions])
            .map(|(p, v)| p * v)
            .sum()
    }
}

/// Normalized discounted state-action occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub n_states: usize,
    pub n_actions: usize,
    pub dist: Vec<f64>,
}

impl Occupancy {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.dist[s * self.n_actions + a]
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.dist.chunks(self.n_actions).map(|row| row.iter().sum()).collect()
    }

    pub fn total_variation(&self, other: &Occupancy) -> f64 {
        0.5 * self.dist.iter().zip(&other.dist).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// Action-value table `Q(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    /// `V(s) = sum_a pi(a | s) Q(s, a)`.
    pub fn state_values(&self, pi: &Policy) -> Vec<f64> {
        (0..self.n_states).map(|s| pi.state_expectation(s, &self.values)).collect()
    }
}

/// Solves `d = (1 - gamma) d0 x pi + gamma P_pi^T d` over the state-action
/// simplex.
pub fn state_action_occupancy(mdp: &TabularMdp, pi: &Policy) -> Result<Occupancy> {
    mdp.check_policy(pi)?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let n = s_n * a_n;
    let gamma = mdp.gamma;
    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..s_n {
        for a in 0..a_n {
            let col = s * a_n + a;
            for (s2, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..a_n {
                    let pa = pi.prob(s2, a2);
                    if pa != 0.0 {
                        system[(s2 * a_n + a2, col)] -= gamma * p * pa;
                    }
                }
            }
        }
    }
    let rhs = DVector::from_iterator(
        n,
        (0..s_n).flat_map(|s| (0..a_n).map(move |a| (s, a))).map(|(s, a)| (1.0 - gamma) * mdp.initial_dist[s] * pi.prob(s, a)),
    );
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("occupancy system".into()))?;
    let mut dist: Vec<f64> = solution.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = dist.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Singular(format!("occupancy mass {total}")));
    }
    dist.iter_mut().for_each(|v| *v /= total);
    Ok(Occupancy { n_states: s_n, n_actions: a_n, dist })
}

/// Max absolute Bellman-flow residual of `occ` under `(mdp, pi)`.
pub fn bellman_flow_residual(mdp: &TabularMdp, pi: &Policy, occ: &Occupancy) -> f64 {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.gamma;
    // inflow[s] = sum_{s', a'} d(s', a') P(s | s', a')
    let mut inflow = vec![0.0; s_n];
    for sp in 0..s_n {
        for ap in 0..a_n {
            let d = occ.get(sp, ap);
            for (s, &p) in mdp.next_state_probs(sp, ap).iter().enumerate() {
                inflow[s] += d * p;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for s in 0..s_n {
        for a in 0..a_n {
            let expected = (1.0 - gamma) * mdp.initial_dist[s] * pi.prob(s, a) + gamma * inflow[s] * pi.prob(s, a);
            worst = worst.max((occ.get(s, a) - expected).abs());
        }
    }
    worst
}

/// Normalized return `J(pi) = sum d(s, a) r(s, a)`.
pub fn policy_value(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let occ = state_action_occupancy(mdp, pi)?;
    Ok(occ.dist.iter().zip(mdp.expected_rewards()).map(|(d, r)| d * r).sum())
}

/// Solves `Q = R + gamma P (pi-weighted Q)`.
pub fn q_function(mdp: &TabularMdp, pi: &Policy) -> Result<QTable> {
    mdp.check_policy(pi)?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let n = s_n * a_n;
    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..s_n {
        for a in 0..a_n {
            let row = s * a_n + a;
            for (s2, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..a_n {
                    system[(row, s2 * a_n + a2)] -= mdp.gamma * p * pi.prob(s2, a2);
                }
            }
        }
    }
    let rhs = DVector::from_vec(mdp.expected_rewards());
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Bellman system".into()))?;
    let cap = mdp.r_max / (1.0 - mdp.gamma);
    Ok(QTable {
        n_states: s_n,
        n_actions: a_n,
        values: solution.iter().map(|&v| v.clamp(0.0, cap)).collect(),
    })
}

/// Max absolute Bellman residual of `q` under `(mdp, pi)`.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, q: &QTable) -> f64 {
    let v = q.state_values(pi);
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let next: f64 = mdp.next_state_probs(s, a).iter().zip(&v).map(|(p, v)| p * v).sum();
            let target = mdp.expected_reward(s, a) + mdp.gamma * next;
            worst = worst.max((q.get(s, a) - target).abs());
        }
    }
    worst
}

/// Exact ratio tables `beta* = d_tr / mu` and `w* = d_te / d_tr`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTables {
    pub beta_star: Vec<f64>,
    pub w_star: Vec<f64>,
    /// `true` where `d_tr(s, a) > 0`.
    pub support: Vec<bool>,
    pub d_tr: Occupancy,
    pub d_te: Occupancy,
}

pub fn exact_weight_tables(
    mdp_te: &TabularMdp,
    mdp_tr: &TabularMdp,
    pi: &Policy,
    mu: &Occupancy,
) -> Result<WeightTables> {
    mdp_te.check_compatible(mdp_tr)?;
    if mu.dist.len() != mdp_te.n_state_actions() {
        return Err(Error::Shape("mu does not match the MDP".into()));
    }
    let d_tr = state_action_occupancy(mdp_tr, pi)?;
    let d_te = state_action_occupancy(mdp_te, pi)?;
    let a_n = mdp_te.n_actions;
    let mut offending = Vec::new();
    for (x, ((&tr, &te), &m)) in d_tr.dist.iter().zip(&d_te.dist).zip(&mu.dist).enumerate() {
        if (tr > SUPPORT_TOL || te > SUPPORT_TOL) && m <= SUPPORT_TOL {
            offending.push((x / a_n, x % a_n));
        }
    }
    if !offending.is_empty() {
        return Err(Error::Coverage(offending));
    }
    let support: Vec<bool> = d_tr.dist.iter().map(|&v| v > SUPPORT_TOL).collect();
    let beta_star = support
        .iter()
        .zip(d_tr.dist.iter().zip(&mu.dist))
        .map(|(&on, (tr, m))| if on { tr / m } else { 0.0 })
        .collect();
    let w_star = support
        .iter()
        .zip(d_te.dist.iter().zip(&d_tr.dist))
        .map(|(&on, (te, tr))| if on { te / tr } else { 0.0 })
        .collect();
    Ok(WeightTables { beta_star, w_star, support, d_tr, d_te })
}

/// Smallest `H` with `gamma^H r_max / (1 - gamma) < tol`.
pub fn default_horizon(gamma: f64, r_max: f64, tol: f64) -> usize {
    if gamma == 0.0 {
        return 1;
    }
    let mut h = 0usize;
    let mut tail = r_max / (1.0 - gamma);
    while tail >= tol {
        tail *= gamma;
        h += 1;
    }
    h.max(1)
}

/// Trajectory sampler with precomputed categorical rows.
pub(crate) struct Simulator<'a> {
    mdp: &'a TabularMdp,
    start: Categorical,
    next: Vec<Categorical>,
    actions: Vec<Categorical>,
}

impl<'a> Simulator<'a> {
    pub(crate) fn new(mdp: &'a TabularMdp, pi: &Policy) -> Result<Self> {
        mdp.check_policy(pi)?;
        let next = (0..mdp.n_states)
            .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| Categorical::new(mdp.next_state_probs(s, a)))
            .collect::<Result<Vec<_>>>()?;
        let actions = (0..mdp.n_states).map(|s| Categorical::new(pi.row(s))).collect::<Result<Vec<_>>>()?;
        Ok(Self { mdp, start: Categorical::new(&mdp.initial_dist)?, next, actions })
    }

    pub(crate) fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.start.sample(rng)
    }

    pub(crate) fn action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        self.actions[s].sample(rng)
    }

    pub(crate) fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        self.next[self.mdp.index(s, a)].sample(rng)
    }
}

/// Truncated-rollout estimate of `J(pi)` and its standard error.
pub fn monte_carlo_return(
    mdp: &TabularMdp,
    pi: &Policy,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sim = Simulator::new(mdp, pi)?;
    let mut rng = rng::stream(seed);
    let gamma = mdp.gamma;
    let mut returns = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let mut s = sim.initial_state(&mut rng);
        let mut discount = 1.0;
        let mut ret = 0.0;
        for _ in 0..horizon {
            let a = sim.action(s, &mut rng);
            ret += discount * mdp.sample_reward(s, a, &mut rng);
            s = sim.step(s, a, &mut rng);
            discount *= gamma;
        }
        returns.push((1.0 - gamma) * ret);
    }
    if n_traj == 0 {
        return Ok((0.0, 0.0));
    }
    let n = n_traj as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = if n_traj > 1 { returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok((mean, (var / n).sqrt()))
}

/// Monte Carlo occupancy together with per-entry standard errors.
pub fn monte_carlo_occupancy_with_se(
    mdp: &TabularMdp,
    pi: &Policy,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<(Occupancy, Vec<f64>)> {
    let sim = Simulator::new(mdp, pi)?;
    let mut rng = rng::stream(seed);
    let n = mdp.n_state_actions();
    let gamma = mdp.gamma;
    let mass = 1.0 - gamma.powi(horizon as i32);
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut visit = vec![0.0; n];
    let mut touched = Vec::with_capacity(horizon);
    for _ in 0..n_traj {
        let mut s = sim.initial_state(&mut rng);
        let mut discount = 1.0 - gamma;
        for _ in 0..horizon {
            let a = sim.action(s, &mut rng);
            let x = mdp.index(s, a);
            if visit[x] == 0.0 {
                touched.push(x);
            }
            visit[x] += discount / mass;
            s = sim.step(s, a, &mut rng);
            discount *= gamma;
        }
        for &x in &touched {
            sum[x] += visit[x];
            sum_sq[x] += visit[x] * visit[x];
            visit[x] = 0.0;
        }
        touched.clear();
    }
    let t = n_traj.max(1) as f64;
    let dist: Vec<f64> = sum.iter().map(|v| v / t).collect();
    let se = sum_sq
        .iter()
        .zip(&dist)
        .map(|(sq, m)| if n_traj > 1 { ((sq / t - m * m).max(0.0) / (t - 1.0)).sqrt() } else { 0.0 })
        .collect();
    Ok((Occupancy { n_states: mdp.n_states, n_actions: mdp.n_actions, dist }, se))
}

/// Normalized discounted visitation frequencies from truncated rollouts.
pub fn monte_carlo_occupancy(
    mdp: &TabularMdp,
    pi: &Policy,
    horizon: usize,
    n_traj: usize,
    seed: u64,
) -> Result<Occupancy> {
    monte_carlo_occupancy_with_se(mdp, pi, horizon, n_traj, seed).map(|(occ, _)| occ)
}

/// Random MDP with dense transitions and full-support `d0`; used by the
/// property checks.
pub fn random_mdp<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<TabularMdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_simplex(n_states, rng));
    }
    let reward_mean = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward_mean,
        0.0,
        gamma,
        random_simplex(n_states, rng),
        1.0,
    )
}

/// Random policy with every action probability bounded away from zero.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Policy {
    let mut probs = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states {
        probs.extend(random_simplex(n_actions, rng));
    }
    Policy::new(n_states, n_actions, probs).expect("simplex rows are valid")
}

/// Point on the simplex with entries bounded below by `0.05 / n`.
pub fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // push the rounding residue onto the largest entry
    let residue = 1.0 - out.iter().sum::<f64>();
    if let Some(m) = out.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *m += residue;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> TabularMdp {
        // s0 -> s1 -> s1, one action
        TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 1.0], 0.0, 0.5, vec![1.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn single_state_occupancy_is_one() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.7], 0.0, 0.9, vec![1.0], 1.0).unwrap();
        let pi = Policy::uniform(1, 1);
        let occ = state_action_occupancy(&mdp, &pi).unwrap();
        assert_eq!(occ.dist, vec![1.0]);
        assert!((policy_value(&mdp, &pi).unwrap() - 0.7).abs() < 1e-12);
        let q = q_function(&mdp, &pi).unwrap();
        assert!((q.values[0] - 0.7 / 0.1).abs() < 1e-9);
    }

    #[test]
    fn deterministic_chain_splits_mass() {
        let mdp = chain();
        let pi = Policy::uniform(2, 1);
        let occ = state_action_occupancy(&mdp, &pi).unwrap();
        // (1 - g) g^0 = 0.5 on s0, the geometric tail on s1
        assert!((occ.dist[0] - 0.5).abs() < 1e-12);
        assert!((occ.dist[1] - 0.5).abs() < 1e-12);
        let mc = monte_carlo_occupancy(&mdp, &pi, 60, 10, 3).unwrap();
        assert!((mc.dist[0] - 0.5).abs() < 1e-12);
        assert!((mc.dist[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_reward_value() {
        let mut rng = rng::stream(11);
        let base = random_mdp(4, 3, 0.8, &mut rng).unwrap();
        let mdp = TabularMdp::new(4, 3, base.transition.clone(), vec![0.3; 12], 0.0, 0.8, base.initial_dist.clone(), 1.0)
            .unwrap();
        let pi = random_policy(4, 3, &mut rng);
        assert!((policy_value(&mdp, &pi).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_gives_zero_everything() {
        let mut rng = rng::stream(5);
        let base = random_mdp(3, 2, 0.9, &mut rng).unwrap();
        let mdp = TabularMdp::new(3, 2, base.transition.clone(), vec![0.0; 6], 0.0, 0.9, base.initial_dist.clone(), 1.0)
            .unwrap();
        let pi = random_policy(3, 2, &mut rng);
        assert!(q_function(&mdp, &pi).unwrap().values.iter().all(|&v| v == 0.0));
        assert_eq!(monte_carlo_return(&mdp, &pi, 20, 100, 1).unwrap().0, 0.0);
    }

    #[test]
    fn single_state_monte_carlo_is_truncated_geometric() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.4], 0.0, 0.9, vec![1.0], 1.0).unwrap();
        let (est, se) = monte_carlo_return(&mdp, &Policy::uniform(1, 1), 25, 7, 0).unwrap();
        assert!((est - 0.4 * (1.0 - 0.9f64.powi(25))).abs() < 1e-12);
        assert!(se < 1e-12);
    }

    #[test]
    fn q_consistent_with_value_on_random_mdp() {
        let mut rng = rng::stream(42);
        let mdp = random_mdp(3, 2, 0.85, &mut rng).unwrap();
        let pi = random_policy(3, 2, &mut rng);
        let q = q_function(&mdp, &pi).unwrap();
        let v = q.state_values(&pi);
        let via_q: f64 = (1.0 - 0.85) * mdp.initial_dist().iter().zip(&v).map(|(d, v)| d * v).sum::<f64>();
        assert!((via_q - policy_value(&mdp, &pi).unwrap()).abs() < 1e-9);
        assert!(bellman_residual(&mdp, &pi, &q) < 1e-10);
    }

    #[test]
    fn value_matches_rollouts() {
        let mut rng = rng::stream(9);
        let mdp = random_mdp(4, 2, 0.8, &mut rng).unwrap();
        let pi = random_policy(4, 2, &mut rng);
        let exact = policy_value(&mdp, &pi).unwrap();
        let h = default_horizon(0.8, 1.0, 1e-6);
        let (est, se) = monte_carlo_return(&mdp, &pi, h, 20_000, 17).unwrap();
        assert!((est - exact).abs() <= 3.0 * se + 1e-6, "{est} vs {exact} (se {se})");
    }

    #[test]
    fn occupancy_matches_rollouts() {
        let mut rng = rng::stream(77);
        let mdp = random_mdp(5, 3, 0.7, &mut rng).unwrap();
        let pi = random_policy(5, 3, &mut rng);
        let exact = state_action_occupancy(&mdp, &pi).unwrap();
        let h = default_horizon(0.7, 1.0, 1e-8);
        let (mc, se) = monte_carlo_occupancy_with_se(&mdp, &pi, h, 20_000, 8).unwrap();
        for x in 0..15 {
            assert!((mc.dist[x] - exact.dist[x]).abs() <= 3.0 * se[x] + 1e-6, "entry {x}");
        }
    }

    #[test]
    fn weight_tables_trivial_cases() {
        let mut rng = rng::stream(1);
        let mdp = random_mdp(4, 2, 0.9, &mut rng).unwrap();
        let pi = random_policy(4, 2, &mut rng);
        let d = state_action_occupancy(&mdp, &pi).unwrap();
        let t = exact_weight_tables(&mdp, &mdp, &pi, &d).unwrap();
        assert!(t.w_star.iter().all(|&w| (w - 1.0).abs() < 1e-12));
        assert!(t.beta_star.iter().all(|&b| (b - 1.0).abs() < 1e-12));
    }

    #[test]
    fn coverage_violation_lists_pairs() {
        let mut rng = rng::stream(2);
        let mdp = random_mdp(2, 2, 0.9, &mut rng).unwrap();
        let pi = random_policy(2, 2, &mut rng);
        let mu = Occupancy { n_states: 2, n_actions: 2, dist: vec![0.5, 0.0, 0.5, 0.0] };
        match exact_weight_tables(&mdp, &mdp, &pi, &mu) {
            Err(Error::Coverage(pairs)) => assert_eq!(pairs, vec![(0, 1), (1, 1)]),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn loader_reports_first_violation() {
        let mut doc = chain().to_document();
        doc.transition[1][0] = vec![0.5, 0.6];
        let err = TabularMdp::from_document(&doc).unwrap_err().to_string();
        assert!(err.contains("transition[1][0]"), "{err}");

        let mut doc = chain().to_document();
        doc.reward_mean[0][0] = 2.0;
        let err = TabularMdp::from_document(&doc).unwrap_err().to_string();
        assert!(err.contains("reward_mean[0][0]"), "{err}");

        let mut doc = chain().to_document();
        doc.initial_dist = vec![0.7, 0.2];
        assert!(TabularMdp::from_document(&doc).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = rng::stream(4);
        let mdp = random_mdp(3, 2, 0.9, &mut rng).unwrap();
        assert_eq!(TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap(), mdp);
        let pi = random_policy(3, 2, &mut rng);
        let text = serde_json::to_string(&pi).unwrap();
        assert_eq!(serde_json::from_str::<Policy>(&text).unwrap(), pi);
    }

    #[test]
    fn clipped_noise_mean() {
        // mean 0, halfwidth 1, clipped at 0: E = 1/4
        assert!((clipped_uniform_mean(0.0, 1.0, 1.0) - 0.25).abs() < 1e-12);
        // symmetric clip on both ends
        assert!((clipped_uniform_mean(0.5, 1.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(clipped_uniform_mean(0.5, 0.2, 1.0), 0.5);
    }

    #[test]
    fn horizon_default() {
        let h = default_horizon(0.9, 1.0, 1e-4);
        assert!(0.9f64.powi(h as i32) * 10.0 < 1e-4);
        assert!(0.9f64.powi(h as i32 - 1) * 10.0 >= 1e-4);
    }
}
