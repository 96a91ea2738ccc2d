#![allow(dead_code)]

use offenv_core::mdp::{self, Occupancy, Policy, TabularMdp, WeightTables};
use offenv_core::measure::{PairMeasure, StateMeasure, TransitionMeasure};
use offenv_core::rng::{self, StreamRng};
use rand::Rng;

/// Simulator/real pair sharing rewards and `d0`, plus target and behavior.
pub struct Instance {
    pub tr: TabularMdp,
    pub te: TabularMdp,
    pub pi: Policy,
    pub behavior: Policy,
    pub mu: Occupancy,
    pub tables: WeightTables,
}

impl Instance {
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, rng: &mut StreamRng) -> Self {
        let tr = mdp::random_mdp(n_states, n_actions, gamma, rng).unwrap();
        let other = mdp::random_mdp(n_states, n_actions, gamma, rng).unwrap();
        let te = tr.with_transition(other.transition().to_vec()).unwrap();
        let pi = mdp::random_policy(n_states, n_actions, rng);
        let behavior = mdp::random_policy(n_states, n_actions, rng);
        let mu = mdp::state_action_occupancy(&te, &behavior).unwrap();
        let tables = mdp::exact_weight_tables(&te, &tr, &pi, &mu).unwrap();
        Self { tr, te, pi, behavior, mu, tables }
    }

    pub fn seeded(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self::random(n_states, n_actions, gamma, &mut rng::stream(seed))
    }

    pub fn s(&self) -> usize {
        self.te.n_states()
    }

    pub fn a(&self) -> usize {
        self.te.n_actions()
    }

    pub fn gamma(&self) -> f64 {
        self.te.gamma()
    }

    pub fn real(&self) -> TransitionMeasure {
        TransitionMeasure::population(&self.te, &self.mu).unwrap()
    }

    pub fn sim(&self) -> PairMeasure {
        PairMeasure::population(&self.tr, &self.tables.d_tr).unwrap()
    }

    pub fn d0(&self) -> StateMeasure {
        StateMeasure::population(&self.te)
    }

    pub fn j_te(&self) -> f64 {
        mdp::policy_value(&self.te, &self.pi).unwrap()
    }
}

pub fn uniform_vec(n: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
