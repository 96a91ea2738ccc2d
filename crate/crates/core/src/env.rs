//! Sim-to-sim experiment instances: an epsilon-perturbed gridworld pair,
//! mixed behavior/target policies, and seeded datasets.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{self, Occupancy, Policy, Simulator, TabularMdp, SUPPORT_TOL};
use crate::rng::{self, Categorical};

/// Sentinel index for fields a dataset row does not carry.
pub const NO_INDEX: usize = usize::MAX;

/// Grid moves, in action-index order.
pub const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// A `width x height` gridworld with an absorbing, rewarding goal cell.
///
/// Every move succeeds with probability `1 - eps`; with probability `eps`
/// one of the four moves is drawn uniformly instead. Moves into a wall leave
/// the agent in place. The goal cell is absorbing and pays `goal_reward` per
/// step; all other cells pay `step_reward`. Episodes start uniformly on the
/// non-goal cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
    pub step_reward: f64,
    pub goal_reward: f64,
    pub noise_eps: f64,
    pub gamma: f64,
    pub r_max: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            goal: (3, 3),
            step_reward: 0.0,
            goal_reward: 1.0,
            noise_eps: 0.0,
            gamma: 0.9,
            r_max: 1.0,
        }
    }
}

impl GridworldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must be at least 1x1".into()));
        }
        if self.width * self.height > 64 {
            return Err(Error::Config(format!("{}x{} grid exceeds 64 cells", self.width, self.height)));
        }
        if self.goal.0 >= self.width || self.goal.1 >= self.height {
            return Err(Error::Config(format!("goal {:?} lies outside the grid", self.goal)));
        }
        if !(0.0..=1.0).contains(&self.noise_eps) {
            return Err(Error::Config(format!("noise_eps = {} is outside [0, 1]", self.noise_eps)));
        }
        for (name, r) in [("step_reward", self.step_reward), ("goal_reward", self.goal_reward)] {
            if !(0.0..=self.r_max).contains(&r) {
                return Err(Error::Config(format!("{name} = {r} is outside [0, r_max]")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma = {} is outside [0, 1)", self.gamma)));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    fn moved(&self, s: usize, action: usize) -> usize {
        let (x, y) = self.cell(s);
        let (dx, dy) = MOVES[action];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            s
        } else {
            self.cell_index(nx as usize, ny as usize)
        }
    }

    /// Builds the MDP at noise level `eps`.
    pub fn build(&self, eps: f64) -> Result<TabularMdp> {
        self.validate()?;
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Config(format!("eps = {eps} is outside [0, 1]")));
        }
        let s_n = self.n_states();
        let a_n = MOVES.len();
        let goal = self.cell_index(self.goal.0, self.goal.1);
        let mut transition = vec![0.0; s_n * a_n * s_n];
        let mut reward = vec![self.step_reward; s_n * a_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let row = &mut transition[(s * a_n + a) * s_n..(s * a_n + a + 1) * s_n];
                if s == goal {
                    row[goal] = 1.0;
                    reward[s * a_n + a] = self.goal_reward;
                    continue;
                }
                row[self.moved(s, a)] += 1.0 - eps;
                for other in 0..a_n {
                    row[self.moved(s, other)] += eps / a_n as f64;
                }
            }
        }
        let mut d0 = vec![0.0; s_n];
        if s_n == 1 {
            d0[0] = 1.0;
        } else {
            let p = 1.0 / (s_n - 1) as f64;
            for (s, v) in d0.iter_mut().enumerate() {
                if s != goal {
                    *v = p;
                }
            }
        }
        TabularMdp::new(s_n, a_n, transition, reward, 0.0, self.gamma, d0, self.r_max)
    }
}

/// Simulator and "real" MDPs that differ only in their noise level.
pub fn build_gridworld_pair(spec: &GridworldSpec, eps_sim: f64, eps_real: f64) -> Result<(TabularMdp, TabularMdp)> {
    Ok((spec.build(eps_sim)?, spec.build(eps_real)?))
}

/// `(1 - rate) * base + rate * uniform`, row by row.
pub fn mix_policy(base: &Policy, rate: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("mix rate {rate} is outside [0, 1]")));
    }
    let a_n = base.n_actions();
    let uniform = 1.0 / a_n as f64;
    let mut probs: Vec<f64> = base.table().iter().map(|p| (1.0 - rate) * p + rate * uniform).collect();
    for row in probs.chunks_mut(a_n) {
        let residue = 1.0 - row.iter().sum::<f64>();
        if let Some(m) = row.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *m += residue;
        }
    }
    Policy::new(base.n_states(), a_n, probs)
}

/// Exact policy iteration; greedy ties go to the lowest action index.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<Policy> {
    let (s_n, a_n) = (mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; s_n];
    for _ in 0..10 * s_n * a_n + 10 {
        let pi = Policy::deterministic(a_n, &actions)?;
        let q = mdp::q_function(mdp, &pi)?;
        let mut changed = false;
        for (s, current) in actions.iter_mut().enumerate() {
            let row = &q.values[s * a_n..(s + 1) * a_n];
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if row[*current] < best - 1e-12 {
                *current = row.iter().position(|&v| v >= best - 1e-12).unwrap_or(0);
                changed = true;
            }
        }
        if !changed {
            return Policy::deterministic(a_n, &actions);
        }
    }
    Err(Error::Numerical("policy iteration did not stabilize".into()))
}

/// Where a dataset's tuples were drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// `(s, a) ~ mu`, `r ~ R(s, a)`, `s' ~ P_te(s, a)`.
    RealEnv,
    /// `(s, a) ~ d_tr^pi` with rewards attached.
    SimulatorOccupancy,
    /// `s ~ d0`.
    InitialDist,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::RealEnv => "real_env",
            DataSource::SimulatorOccupancy => "simulator_occupancy",
            DataSource::InitialDist => "initial_dist",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Seeded i.i.d. tuples. Indices only; featurization happens downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub tuples: Vec<Transition>,
    pub seed: u64,
    pub source: DataSource,
    pub n_states: usize,
    pub n_actions: usize,
    pub mdp_hash: String,
}

/// JSON sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub seed: u64,
    pub source: DataSource,
    pub n: usize,
    pub mdp_hash: String,
    pub n_states: usize,
    pub n_actions: usize,
    /// How injected transition noise is distributed.
    pub noise_kernel: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    s: i64,
    a: i64,
    r: f64,
    s_next: i64,
}

fn encode_index(i: usize) -> i64 {
    if i == NO_INDEX {
        -1
    } else {
        i as i64
    }
}

fn decode_index(i: i64, bound: usize, what: &str) -> Result<usize> {
    if i == -1 {
        return Ok(NO_INDEX);
    }
    if i < 0 || i as usize >= bound {
        return Err(Error::Invalid(format!("{what} index {i} out of range 0..{bound}")));
    }
    Ok(i as usize)
}

impl TransitionDataset {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn expect_source(&self, expected: DataSource) -> Result<()> {
        if self.source != expected {
            return Err(Error::SourceMismatch { expected: expected.to_string(), found: self.source.to_string() });
        }
        Ok(())
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            seed: self.seed,
            source: self.source,
            n: self.tuples.len(),
            mdp_hash: self.mdp_hash.clone(),
            n_states: self.n_states,
            n_actions: self.n_actions,
            noise_kernel: "uniform_over_moves".into(),
        }
    }

    /// Writes `s,a,r,s_next` rows; absent indices are written as `-1`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for t in &self.tuples {
            w.serialize(CsvRow { s: encode_index(t.s), a: encode_index(t.a), r: t.r, s_next: encode_index(t.s_next) })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, sidecar: &DatasetSidecar) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut tuples = Vec::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            tuples.push(Transition {
                s: decode_index(row.s, sidecar.n_states, "state")?,
                a: decode_index(row.a, sidecar.n_actions, "action")?,
                r: row.r,
                s_next: decode_index(row.s_next, sidecar.n_states, "next state")?,
            });
        }
        if tuples.len() != sidecar.n {
            return Err(Error::Invalid(format!("sidecar says n = {}, CSV has {} rows", sidecar.n, tuples.len())));
        }
        Ok(Self {
            tuples,
            seed: sidecar.seed,
            source: sidecar.source,
            n_states: sidecar.n_states,
            n_actions: sidecar.n_actions,
            mdp_hash: sidecar.mdp_hash.clone(),
        })
    }

    /// Writes `<stem>.csv` and `<stem>.json` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let sidecar: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        Self::read_csv(std::fs::File::open(dir.join(format!("{stem}.csv")))?, &sidecar)
    }
}

/// SHA-256 over the canonical JSON form of an MDP.
pub fn mdp_hash(mdp: &TabularMdp) -> String {
    let text = serde_json::to_string(&mdp.to_document()).expect("MDP documents always serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn check_occupancy(mdp: &TabularMdp, occ: &Occupancy) -> Result<()> {
    if occ.n_states != mdp.n_states() || occ.n_actions != mdp.n_actions() {
        return Err(Error::Shape("occupancy does not match the MDP".into()));
    }
    if occ.dist.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Invalid("occupancy has negative or non-finite entries".into()));
    }
    let total: f64 = occ.dist.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Invalid(format!("occupancy sums to {total}")));
    }
    Ok(())
}

/// Entries at or below the support tolerance are zeroed so sampling never
/// lands on a numerically-zero cell.
fn support_weights(occ: &Occupancy) -> Vec<f64> {
    occ.dist.iter().map(|&v| if v > SUPPORT_TOL { v } else { 0.0 }).collect()
}

/// `n` i.i.d. tuples with `(s, a) ~ mu`, `r ~ R_te`, `s' ~ P_te`.
pub fn sample_offline_dataset(mdp_te: &TabularMdp, mu: &Occupancy, n: usize, seed: u64) -> Result<TransitionDataset> {
    check_occupancy(mdp_te, mu)?;
    let sim = Simulator::new(mdp_te, &Policy::uniform(mdp_te.n_states(), mdp_te.n_actions()))?;
    let pairs = Categorical::new(&support_weights(mu))?;
    let mut rng = rng::stream(seed);
    let a_n = mdp_te.n_actions();
    let tuples = (0..n)
        .map(|_| {
            let x = pairs.sample(&mut rng);
            let (s, a) = (x / a_n, x % a_n);
            let r = mdp_te.sample_reward(s, a, &mut rng);
            let s_next = sim.step(s, a, &mut rng);
            Transition { s, a, r, s_next }
        })
        .collect();
    Ok(TransitionDataset {
        tuples,
        seed,
        source: DataSource::RealEnv,
        n_states: mdp_te.n_states(),
        n_actions: a_n,
        mdp_hash: mdp_hash(mdp_te),
    })
}

/// `n` i.i.d. `(s, a) ~ d_tr^pi` with simulator rewards attached.
pub fn sample_simulator_occupancy(mdp_tr: &TabularMdp, pi: &Policy, n: usize, seed: u64) -> Result<TransitionDataset> {
    let occ = mdp::state_action_occupancy(mdp_tr, pi)?;
    let pairs = Categorical::new(&support_weights(&occ))?;
    let mut rng = rng::stream(seed);
    let a_n = mdp_tr.n_actions();
    let tuples = (0..n)
        .map(|_| {
            let x = pairs.sample(&mut rng);
            let (s, a) = (x / a_n, x % a_n);
            let r = mdp_tr.sample_reward(s, a, &mut rng);
            Transition { s, a, r, s_next: NO_INDEX }
        })
        .collect();
    Ok(TransitionDataset {
        tuples,
        seed,
        source: DataSource::SimulatorOccupancy,
        n_states: mdp_tr.n_states(),
        n_actions: a_n,
        mdp_hash: mdp_hash(mdp_tr),
    })
}

/// `n` i.i.d. initial states `s ~ d0`.
pub fn sample_initial_states(mdp: &TabularMdp, n: usize, seed: u64) -> Result<TransitionDataset> {
    let start = Categorical::new(mdp.initial_dist())?;
    let mut rng = rng::stream(seed);
    let tuples = (0..n)
        .map(|_| Transition { s: start.sample(&mut rng), a: NO_INDEX, r: 0.0, s_next: NO_INDEX })
        .collect();
    Ok(TransitionDataset {
        tuples,
        seed,
        source: DataSource::InitialDist,
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        mdp_hash: mdp_hash(mdp),
    })
}

/// Empirical `(s, a)` frequencies of a dataset.
pub fn empirical_pair_frequencies(data: &TransitionDataset) -> Vec<f64> {
    let mut freq = vec![0.0; data.n_states * data.n_actions];
    let n = data.len().max(1) as f64;
    for t in &data.tuples {
        freq[t.s * data.n_actions + t.a] += 1.0 / n;
    }
    freq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridworldSpec {
        GridworldSpec::default()
    }

    #[test]
    fn equal_noise_gives_equal_mdps() {
        let (tr, te) = build_gridworld_pair(&spec(), 0.2, 0.2).unwrap();
        assert_eq!(tr, te);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let mdp = spec().build(0.0).unwrap();
        for row in mdp.transition().chunks(mdp.n_states()) {
            assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), row.len() - 1);
        }
    }

    #[test]
    fn noise_opens_a_value_gap() {
        let (tr, te) = build_gridworld_pair(&spec(), 0.0, 0.1).unwrap();
        let greedy = optimal_policy(&tr).unwrap();
        let j_tr = mdp::policy_value(&tr, &greedy).unwrap();
        let j_te = mdp::policy_value(&te, &greedy).unwrap();
        assert!((j_tr - j_te).abs() > 1e-3, "{j_tr} vs {j_te}");
    }

    #[test]
    fn gap_grows_with_noise() {
        let tr = spec().build(0.0).unwrap();
        let greedy = optimal_policy(&tr).unwrap();
        let j_tr = mdp::policy_value(&tr, &greedy).unwrap();
        let gaps: Vec<f64> = [0.1, 0.2, 0.3]
            .iter()
            .map(|&e| (j_tr - mdp::policy_value(&spec().build(e).unwrap(), &greedy).unwrap()).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[0] <= w[1]), "{gaps:?}");
    }

    #[test]
    fn mixing_arithmetic() {
        let base = Policy::deterministic(2, &[0, 1]).unwrap();
        assert_eq!(mix_policy(&base, 0.0).unwrap(), base);
        assert_eq!(mix_policy(&base, 1.0).unwrap(), Policy::uniform(2, 2));
        let half = mix_policy(&base, 0.5).unwrap();
        assert_eq!(half.row(0), &[0.75, 0.25]);
        assert!(mix_policy(&base, 1.5).is_err());
    }

    #[test]
    fn empty_and_point_mass_datasets() {
        let mdp = spec().build(0.0).unwrap();
        let pi = optimal_policy(&mdp).unwrap();
        let mu = mdp::state_action_occupancy(&mdp, &pi).unwrap();
        assert!(sample_offline_dataset(&mdp, &mu, 0, 1).unwrap().is_empty());
        assert!(sample_initial_states(&mdp, 0, 1).unwrap().is_empty());

        let mut point = vec![0.0; mdp.n_state_actions()];
        point[5] = 1.0;
        let mu = Occupancy { n_states: 16, n_actions: 4, dist: point };
        let data = sample_offline_dataset(&mdp, &mu, 50, 3).unwrap();
        assert!(data.tuples.iter().all(|t| *t == data.tuples[0]));
    }

    #[test]
    fn same_seed_same_bits() {
        let mdp = spec().build(0.1).unwrap();
        let pi = mix_policy(&optimal_policy(&mdp).unwrap(), 0.3).unwrap();
        let mu = mdp::state_action_occupancy(&mdp, &pi).unwrap();
        let a = sample_offline_dataset(&mdp, &mu, 500, 9).unwrap();
        let b = sample_offline_dataset(&mdp, &mu, 500, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_offline_dataset(&mdp, &mu, 500, 10).unwrap();
        assert_ne!(a.tuples, c.tuples);
    }

    #[test]
    fn samples_stay_on_support() {
        let mdp = spec().build(0.1).unwrap();
        let pi = optimal_policy(&mdp).unwrap();
        let occ = mdp::state_action_occupancy(&mdp, &pi).unwrap();
        let data = sample_simulator_occupancy(&mdp, &pi, 2000, 4).unwrap();
        assert!(data.tuples.iter().all(|t| occ.get(t.s, t.a) > 0.0));
    }

    #[test]
    fn csv_roundtrip_with_sidecar() {
        let mdp = spec().build(0.1).unwrap();
        let d0 = sample_initial_states(&mdp, 20, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d0.save(dir.path(), "d0").unwrap();
        let text = std::fs::read_to_string(dir.path().join("d0.csv")).unwrap();
        assert!(text.starts_with("s,a,r,s_next\n"));
        assert_eq!(TransitionDataset::load(dir.path(), "d0").unwrap(), d0);
    }
}
