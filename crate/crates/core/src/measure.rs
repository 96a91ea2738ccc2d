//! Weighted measures that every loss and solver consumes.
//!
//! A measure is either the empirical distribution of a dataset (aggregated by
//! key, so each distinct tuple appears once with its frequency) or an exact
//! population table. Losses are written once against measures and give the
//! sample and population variants for free.

use std::collections::BTreeMap;

use crate::env::{DataSource, TransitionDataset, NO_INDEX};
use crate::error::{Error, Result};
use crate::mdp::{Occupancy, Policy, TabularMdp, SUPPORT_TOL};

fn check_indices(data: &TransitionDataset, need_action: bool, need_next: bool) -> Result<()> {
    for (i, t) in data.tuples.iter().enumerate() {
        if t.s >= data.n_states
            || (need_action && t.a >= data.n_actions)
            || (need_next && t.s_next >= data.n_states)
        {
            return Err(Error::Invalid(format!("tuple {i} has missing or out-of-range indices")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTransition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub weight: f64,
    /// Mean reward over the tuples that share this key.
    pub reward: f64,
}

/// Distribution of `(s, a, s')` under `mu x P_te`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub items: Vec<WeightedTransition>,
}

impl TransitionMeasure {
    /// Empirical measure of a `real_env` dataset.
    pub fn from_dataset(data: &TransitionDataset) -> Result<Self> {
        data.expect_source(DataSource::RealEnv)?;
        check_indices(data, true, true)?;
        let mut groups: BTreeMap<(usize, usize, usize), (usize, f64)> = BTreeMap::new();
        for t in &data.tuples {
            let g = groups.entry((t.s, t.a, t.s_next)).or_insert((0, 0.0));
            g.0 += 1;
            g.1 += t.r;
        }
        let n = data.len() as f64;
        let items = groups
            .into_iter()
            .map(|((s, a, s_next), (count, sum))| WeightedTransition {
                s,
                a,
                s_next,
                weight: count as f64 / n,
                reward: sum / count as f64,
            })
            .collect();
        Ok(Self { n_states: data.n_states, n_actions: data.n_actions, items })
    }

    /// Exact `mu(s, a) P_te(s' | s, a)` with expected rewards.
    pub fn population(mdp_te: &TabularMdp, mu: &Occupancy) -> Result<Self> {
        if mu.n_states != mdp_te.n_states() || mu.n_actions != mdp_te.n_actions() {
            return Err(Error::Shape("behavior occupancy does not match the MDP".into()));
        }
        let mut items = Vec::new();
        for s in 0..mdp_te.n_states() {
            for a in 0..mdp_te.n_actions() {
                let m = mu.get(s, a);
                if m <= 0.0 {
                    continue;
                }
                let reward = mdp_te.expected_reward(s, a);
                for (s_next, &p) in mdp_te.next_state_probs(s, a).iter().enumerate() {
                    if p > 0.0 {
                        items.push(WeightedTransition { s, a, s_next, weight: m * p, reward });
                    }
                }
            }
        }
        Ok(Self { n_states: mdp_te.n_states(), n_actions: mdp_te.n_actions(), items })
    }

    /// Marginal weight on each `(s, a)` cell.
    pub fn pair_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_states * self.n_actions];
        for it in &self.items {
            m[it.s * self.n_actions + it.a] += it.weight;
        }
        m
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "transition measure is over {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Distribution of `(s, a)` under `d_tr^pi`, with mean rewards per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasure {
    pub n_states: usize,
    pub n_actions: usize,
    pub weight: Vec<f64>,
    pub reward: Vec<f64>,
}

impl PairMeasure {
    /// Empirical measure of a `simulator_occupancy` dataset.
    pub fn from_dataset(data: &TransitionDataset) -> Result<Self> {
        data.expect_source(DataSource::SimulatorOccupancy)?;
        check_indices(data, true, false)?;
        let cells = data.n_states * data.n_actions;
        let mut count = vec![0usize; cells];
        let mut reward = vec![0.0; cells];
        for t in &data.tuples {
            let x = t.s * data.n_actions + t.a;
            count[x] += 1;
            reward[x] += t.r;
        }
        let n = data.len() as f64;
        let weight = count.iter().map(|&c| c as f64 / n).collect();
        for (r, &c) in reward.iter_mut().zip(&count) {
            if c > 0 {
                *r /= c as f64;
            }
        }
        Ok(Self { n_states: data.n_states, n_actions: data.n_actions, weight, reward })
    }

    /// Exact occupancy with the MDP's expected rewards attached.
    pub fn population(mdp: &TabularMdp, occ: &Occupancy) -> Result<Self> {
        if occ.n_states != mdp.n_states() || occ.n_actions != mdp.n_actions() {
            return Err(Error::Shape("occupancy does not match the MDP".into()));
        }
        Ok(Self {
            n_states: occ.n_states,
            n_actions: occ.n_actions,
            weight: occ.dist.clone(),
            reward: mdp.expected_rewards(),
        })
    }

    pub fn check_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states != n_states || self.n_actions != n_actions {
            return Err(Error::Shape(format!(
                "pair measure is over {}x{}, expected {}x{}",
                self.n_states, self.n_actions, n_states, n_actions
            )));
        }
        Ok(())
    }
}

/// Distribution of initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMeasure {
    pub weight: Vec<f64>,
}

impl StateMeasure {
    /// Empirical measure of an `initial_dist` dataset.
    pub fn from_dataset(data: &TransitionDataset) -> Result<Self> {
        data.expect_source(DataSource::InitialDist)?;
        check_indices(data, false, false)?;
        let mut weight = vec![0.0; data.n_states];
        let n = data.len() as f64;
        for t in &data.tuples {
            weight[t.s] += 1.0 / n;
        }
        Ok(Self { weight })
    }

    pub fn population(mdp: &TabularMdp) -> Self {
        Self { weight: mdp.initial_dist().to_vec() }
    }

    pub fn n_states(&self) -> usize {
        self.weight.len()
    }

    /// `sum_s weight(s) sum_a pi(a|s) e_(s,a)` as a vector over cells.
    pub fn policy_pushforward(&self, pi: &Policy) -> Vec<f64> {
        let a_n = pi.n_actions();
        let mut v = vec![0.0; self.weight.len() * a_n];
        for (s, &w) in self.weight.iter().enumerate() {
            if w != 0.0 {
                for (a, &p) in pi.row(s).iter().enumerate() {
                    v[s * a_n + a] = w * p;
                }
            }
        }
        v
    }
}

/// Cells where `weight` exceeds the support tolerance.
pub fn support_of(weight: &[f64]) -> Vec<bool> {
    weight.iter().map(|&w| w > SUPPORT_TOL).collect()
}

/// Expected value of `f` at `(s', pi)`: `sum_a pi(a|s') f(s', a)`.
pub fn next_value(f: &[f64], pi: &Policy, s_next: usize) -> f64 {
    debug_assert_ne!(s_next, NO_INDEX);
    pi.state_expectation(s_next, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_initial_states, sample_offline_dataset, sample_simulator_occupancy, GridworldSpec};
    use crate::mdp;

    #[test]
    fn aggregation_preserves_mass_and_reward_sums() {
        let mdp = GridworldSpec::default().build(0.2).unwrap();
        let pi = Policy::uniform(16, 4);
        let mu = mdp::state_action_occupancy(&mdp, &pi).unwrap();
        let data = sample_offline_dataset(&mdp, &mu, 3000, 1).unwrap();
        let m = TransitionMeasure::from_dataset(&data).unwrap();
        let mass: f64 = m.items.iter().map(|i| i.weight).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let direct: f64 = data.tuples.iter().map(|t| t.r).sum::<f64>() / 3000.0;
        let grouped: f64 = m.items.iter().map(|i| i.weight * i.reward).sum();
        assert!((direct - grouped).abs() < 1e-12);
    }

    #[test]
    fn wrong_source_is_rejected() {
        let mdp = GridworldSpec::default().build(0.2).unwrap();
        let pi = Policy::uniform(16, 4);
        let d0 = sample_initial_states(&mdp, 10, 1).unwrap();
        let sim = sample_simulator_occupancy(&mdp, &pi, 10, 1).unwrap();
        assert!(matches!(TransitionMeasure::from_dataset(&d0), Err(Error::SourceMismatch { .. })));
        assert!(matches!(PairMeasure::from_dataset(&d0), Err(Error::SourceMismatch { .. })));
        assert!(matches!(StateMeasure::from_dataset(&sim), Err(Error::SourceMismatch { .. })));
    }

    #[test]
    fn population_transition_marginal_is_mu() {
        let mdp = GridworldSpec::default().build(0.3).unwrap();
        let pi = Policy::uniform(16, 4);
        let mu = mdp::state_action_occupancy(&mdp, &pi).unwrap();
        let m = TransitionMeasure::population(&mdp, &mu).unwrap();
        for (a, b) in m.pair_marginal().iter().zip(&mu.dist) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
