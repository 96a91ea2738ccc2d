use offenv_core::env::{self, DataSource, GridworldSpec};
use offenv_core::mdp::{self, Policy};
use offenv_core::measure::{PairMeasure, StateMeasure, TransitionMeasure};
use offenv_core::Error;

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn setup() -> (offenv_core::mdp::TabularMdp, offenv_core::mdp::TabularMdp, Policy) {
    let spec = GridworldSpec::default();
    let (tr, te) = env::build_gridworld_pair(&spec, 0.0, 0.1).unwrap();
    let pi = env::mix_policy(&env::optimal_policy(&tr).unwrap(), 0.3).unwrap();
    (tr, te, pi)
}

#[test]
fn offline_pairs_follow_mu() {
    let (_, te, pi) = setup();
    let mu = mdp::state_action_occupancy(&te, &pi).unwrap();
    let data = env::sample_offline_dataset(&te, &mu, 50_000, 3).unwrap();
    assert!(tv(&env::empirical_pair_frequencies(&data), &mu.dist) <= 0.02);
}

#[test]
fn simulator_pairs_follow_d_tr() {
    let (tr, _, pi) = setup();
    let d_tr = mdp::state_action_occupancy(&tr, &pi).unwrap();
    let data = env::sample_simulator_occupancy(&tr, &pi, 50_000, 4).unwrap();
    assert!(tv(&env::empirical_pair_frequencies(&data), &d_tr.dist) <= 0.02);
}

#[test]
fn next_states_follow_the_real_kernel() {
    let (_, te, pi) = setup();
    let mu = mdp::state_action_occupancy(&te, &pi).unwrap();
    let data = env::sample_offline_dataset(&te, &mu, 50_000, 5).unwrap();
    let population = TransitionMeasure::population(&te, &mu).unwrap();
    let sampled = TransitionMeasure::from_dataset(&data).unwrap();
    let mut exact = std::collections::BTreeMap::new();
    for it in &population.items {
        *exact.entry((it.s, it.a, it.s_next)).or_insert(0.0) += it.weight;
    }
    let mut gap = 0.0;
    let mut seen = std::collections::BTreeMap::new();
    for it in &sampled.items {
        *seen.entry((it.s, it.a, it.s_next)).or_insert(0.0) += it.weight;
    }
    for key in exact.keys().chain(seen.keys()) {
        gap += (exact.get(key).copied().unwrap_or(0.0) - seen.get(key).copied().unwrap_or(0.0)).abs();
    }
    // Each key is visited at most twice, so this is at most 2 * L1.
    assert!(gap / 4.0 <= 0.02, "tv {}", gap / 4.0);
}

#[test]
fn initial_states_avoid_the_goal() {
    let spec = GridworldSpec::default();
    let m = spec.build(0.0).unwrap();
    let data = env::sample_initial_states(&m, 5000, 1).unwrap();
    let goal = spec.cell_index(spec.goal.0, spec.goal.1);
    assert!(data.tuples.iter().all(|t| t.s != goal));
    let d0 = StateMeasure::from_dataset(&data).unwrap();
    assert!(tv(&d0.weight, m.initial_dist()) <= 0.03);
}

#[test]
fn same_seed_same_data() {
    let (tr, _, pi) = setup();
    let a = env::sample_simulator_occupancy(&tr, &pi, 500, 9).unwrap();
    let b = env::sample_simulator_occupancy(&tr, &pi, 500, 9).unwrap();
    let c = env::sample_simulator_occupancy(&tr, &pi, 500, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.tuples, c.tuples);
}

#[test]
fn measures_check_the_source_tag() {
    let (tr, te, pi) = setup();
    let mu = mdp::state_action_occupancy(&te, &pi).unwrap();
    let real = env::sample_offline_dataset(&te, &mu, 10, 1).unwrap();
    let sim = env::sample_simulator_occupancy(&tr, &pi, 10, 1).unwrap();
    assert_eq!(real.source, DataSource::RealEnv);
    assert!(matches!(PairMeasure::from_dataset(&real), Err(Error::SourceMismatch { .. })));
    assert!(matches!(TransitionMeasure::from_dataset(&sim), Err(Error::SourceMismatch { .. })));
    assert!(matches!(StateMeasure::from_dataset(&sim), Err(Error::SourceMismatch { .. })));
}

#[test]
fn datasets_roundtrip_through_disk() {
    let (_, te, pi) = setup();
    let mu = mdp::state_action_occupancy(&te, &pi).unwrap();
    let data = env::sample_offline_dataset(&te, &mu, 200, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    data.save(dir.path(), "real").unwrap();
    let back = env::TransitionDataset::load(dir.path(), "real").unwrap();
    assert_eq!(back, data);
    assert_eq!(back.mdp_hash, env::mdp_hash(&te));
}
