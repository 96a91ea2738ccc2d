mod common;

use common::{uniform_vec, Instance};
use offenv_core::env;
use offenv_core::features::{FeatureMap, Kernel};
use offenv_core::mdp::{self, Policy};
use offenv_core::model::WeightModel;
use offenv_core::qest;
use offenv_core::ratio::{self, PositiveFunctionClass, RatioFitConfig};
use offenv_core::rng;
use offenv_core::weight;
use proptest::prelude::*;

fn sizes() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 1usize..=6, 1usize..=3, 0.0f64..0.95)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn occupancy_satisfies_flow((seed, s, a, gamma) in sizes()) {
        let mut r = rng::stream(seed);
        let m = mdp::random_mdp(s, a, gamma, &mut r).unwrap();
        let pi = mdp::random_policy(s, a, &mut r);
        let occ = mdp::state_action_occupancy(&m, &pi).unwrap();
        prop_assert!(mdp::bellman_flow_residual(&m, &pi, &occ) <= 1e-10);
        prop_assert!((occ.dist.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(occ.dist.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn value_equals_reward_under_occupancy((seed, s, a, gamma) in sizes()) {
        let mut r = rng::stream(seed);
        let m = mdp::random_mdp(s, a, gamma, &mut r).unwrap();
        let pi = mdp::random_policy(s, a, &mut r);
        let occ = mdp::state_action_occupancy(&m, &pi).unwrap();
        let via_occ: f64 = occ.dist.iter().zip(m.reward_mean()).map(|(d, r)| d * r).sum();
        prop_assert!((mdp::policy_value(&m, &pi).unwrap() - via_occ).abs() <= 1e-9);
    }

    #[test]
    fn q_function_has_zero_bellman_residual((seed, s, a, gamma) in sizes()) {
        let mut r = rng::stream(seed);
        let m = mdp::random_mdp(s, a, gamma, &mut r).unwrap();
        let pi = mdp::random_policy(s, a, &mut r);
        let q = mdp::q_function(&m, &pi).unwrap();
        prop_assert!(mdp::bellman_residual(&m, &pi, &q) <= 1e-9);
    }

    #[test]
    fn mixed_policies_are_stochastic(rate in 0.0f64..=1.0) {
        let spec = env::GridworldSpec::default();
        let m = spec.build(0.1).unwrap();
        let mixed = env::mix_policy(&env::optimal_policy(&m).unwrap(), rate).unwrap();
        for st in 0..mixed.n_states() {
            let row = mixed.row(st);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p >= rate / 4.0 - 1e-12));
        }
    }

    #[test]
    fn clamped_models_stay_in_bounds(values in prop::collection::vec(-1e3f64..1e3, 6), lo in -5.0f64..0.0, width in 0.0f64..10.0) {
        let m = WeightModel::tabular(3, 2, values).unwrap().with_clamp(Some(lo), Some(lo + width));
        prop_assert!(m.table().iter().all(|&v| v >= lo && v <= lo + width));
    }

    #[test]
    fn truth_zeroes_both_losses(seed in any::<u64>()) {
        let inst = Instance::seeded(seed, 3, 2, 0.8);
        let (s, a, g) = (inst.s(), inst.a(), inst.gamma());
        let mut r = rng::stream(seed ^ 1);
        let w_star = WeightModel::tabular(s, a, inst.tables.w_star.clone()).unwrap();
        let beta_star = WeightModel::tabular(s, a, inst.tables.beta_star.clone()).unwrap();
        let q = WeightModel::tabular(s, a, uniform_vec(s * a, -3.0, 3.0, &mut r)).unwrap();
        prop_assert!(weight::loss_lw(&w_star, &beta_star, &q, &inst.real(), &inst.d0(), &inst.pi, g).unwrap() <= 1e-10);
        let q_te = WeightModel::tabular(s, a, mdp::q_function(&inst.te, &inst.pi).unwrap().values).unwrap();
        prop_assert!(qest::loss_lq(&q, &beta_star, &q_te, &inst.real(), &inst.sim(), &inst.pi, g).unwrap() <= 1e-9);
    }

    #[test]
    fn kernel_sups_are_nonnegative(seed in any::<u64>(), h in 0.05f64..2.0) {
        let inst = Instance::seeded(seed, 3, 2, 0.9);
        let (s, a, g) = (inst.s(), inst.a(), inst.gamma());
        let mut r = rng::stream(seed ^ 2);
        let kernel = Kernel::gaussian(h, FeatureMap::one_hot(s, a)).unwrap();
        let w = WeightModel::tabular(s, a, uniform_vec(s * a, 0.0, 4.0, &mut r)).unwrap();
        let beta = WeightModel::tabular(s, a, uniform_vec(s * a, 0.1, 4.0, &mut r)).unwrap();
        prop_assert!(weight::rkhs_inner_max(&w, &beta, &inst.real(), &inst.d0(), &inst.pi, g, &kernel).unwrap() >= 0.0);
        prop_assert!(qest::rkhs_inner_max_w(&w, &beta, &inst.real(), &inst.sim(), &inst.pi, g, &kernel).unwrap() >= 0.0);
    }

    #[test]
    fn ratio_fits_respect_the_box(seed in any::<u64>(), lo in 0.01f64..0.5, hi in 2.0f64..50.0) {
        let mut r = rng::stream(seed);
        let p = mdp::random_simplex(8, &mut r);
        let q = mdp::random_simplex(8, &mut r);
        let class = PositiveFunctionClass::tabular().with_bounds(lo, hi);
        let cfg = RatioFitConfig { reg_lambda: 0.0, ..Default::default() };
        let fit = ratio::fit_density_ratio_weights(4, 2, &p, &q, &class, &cfg).unwrap();
        for (v, (pv, qv)) in fit.model.table().iter().zip(p.iter().zip(&q)) {
            prop_assert!(*v >= lo * (1.0 - 1e-12) && *v <= hi * (1.0 + 1e-12));
            prop_assert!((v - (pv / qv).clamp(lo, hi)).abs() <= 1e-6 * hi);
        }
    }
}

#[test]
fn deterministic_policy_rows_are_indicators() {
    let pi = Policy::deterministic(3, &[2, 0, 1]).unwrap();
    assert_eq!(pi.row(0), &[0.0, 0.0, 1.0]);
    assert_eq!(pi.prob(1, 0), 1.0);
}
