use persuasion::mdp::{
    effort_to_reward, estimate_model, evaluate_policy, extract_policy, uniform_policy, value_iteration,
    IterationLimits, MdpModel, Mode, Policy,
};
use persuasion::synth::{generate_mdp, sample_transitions, StructureSpec};
use proptest::prelude::*;

fn model_from_seed(seed: u64, bits: usize, actions: usize) -> MdpModel {
    let spec = StructureSpec {
        base_spread: 1.0,
        ..StructureSpec::default()
    };
    generate_mdp(bits, actions, &spec, seed).unwrap().model
}

fn max_row_l1(a: &MdpModel, b: &MdpModel) -> f64 {
    let mut worst = 0.0f64;
    for s in 0..a.n_states() {
        for act in 0..a.n_actions() {
            let l1: f64 = a.row(s, act).iter().zip(b.row(s, act)).map(|(x, y)| (x - y).abs()).sum();
            worst = worst.max(l1);
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reward_bounded_and_monotone(mean in 0.01f64..9.99, e1 in 0.0f64..=10.0, e2 in 0.0f64..=10.0) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (r_lo, r_hi) = (effort_to_reward(lo, mean).unwrap(), effort_to_reward(hi, mean).unwrap());
        prop_assert!((-1.0..=1.0).contains(&r_lo) && (-1.0..=1.0).contains(&r_hi));
        prop_assert!(r_lo <= r_hi);
        prop_assert_eq!(effort_to_reward(lo, mean).unwrap().signum() >= 0.0, lo >= mean);
    }

    #[test]
    fn policy_values_are_ordered(seed in any::<u64>(), bits in 1usize..4, actions in 1usize..6) {
        let m = model_from_seed(seed, bits, actions);
        let limits = IterationLimits::default();
        let best = value_iteration(&m, Mode::Optimal, limits).unwrap().values;
        let worst = value_iteration(&m, Mode::Worst, limits).unwrap().values;
        let avg = evaluate_policy(&m, &uniform_policy(actions), limits).unwrap();
        for s in 0..m.n_states() {
            prop_assert!(best[s] + 1e-9 >= avg[s] && avg[s] + 1e-9 >= worst[s]);
            prop_assert!(best[s].abs() <= 1.0 / (1.0 - m.gamma()) + 1e-9);
        }
    }

    #[test]
    fn greedy_policy_reproduces_values(seed in any::<u64>()) {
        let m = model_from_seed(seed, 3, 5);
        let limits = IterationLimits::default();
        for mode in [Mode::Optimal, Mode::Worst] {
            let vf = value_iteration(&m, mode, limits).unwrap();
            let v = evaluate_policy(&m, &extract_policy(&vf, mode), limits).unwrap();
            for (a, b) in v.iter().zip(&vf.values) {
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn json_round_trip_is_exact(seed in any::<u64>()) {
        let m = model_from_seed(seed, 2, 3);
        let back = MdpModel::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json(), m.to_json());
    }
}

#[test]
fn estimates_tighten_with_more_samples() {
    let gt = generate_mdp(3, 5, &StructureSpec::default(), 21).unwrap();
    let small = estimate_model(&sample_transitions(&gt, 1_000, 1).unwrap(), 8, 5, 0.85).unwrap();
    let large = estimate_model(&sample_transitions(&gt, 100_000, 2).unwrap(), 8, 5, 0.85).unwrap();
    let (e_small, e_large) = (max_row_l1(&small, &gt.model), max_row_l1(&large, &gt.model));
    assert!(e_large < e_small / 3.0, "{e_small} vs {e_large}");
    let reward_err = (0..8)
        .flat_map(|s| (0..5).map(move |a| (s, a)))
        .map(|(s, a)| (large.reward(s, a) - gt.model.reward(s, a)).abs())
        .fold(0.0, f64::max);
    assert!(reward_err < 0.03, "{reward_err}");
}

#[test]
fn recovered_policy_matches_truth_with_clear_gaps() {
    let spec = StructureSpec {
        base_spread: 0.8,
        min_q_gap: Some(0.05),
        ..StructureSpec::default()
    };
    for seed in 0..5 {
        let gt = generate_mdp(3, 5, &spec, seed).unwrap();
        let est = estimate_model(&sample_transitions(&gt, 100_000, seed).unwrap(), 8, 5, 0.85).unwrap();
        let vf = value_iteration(&est, Mode::Optimal, IterationLimits::default()).unwrap();
        assert_eq!(extract_policy(&vf, Mode::Optimal), gt.optimal_policy().unwrap(), "seed {seed}");
    }
}

#[test]
fn non_convergence_is_reported() {
    let m = model_from_seed(3, 3, 5);
    let limits = IterationLimits {
        tolerance: 1e-9,
        max_iterations: 5,
    };
    let err = value_iteration(&m, Mode::Optimal, limits).unwrap_err();
    assert!(matches!(err, persuasion::Error::NoConvergence { iterations: 5, .. }));
    assert!(matches!(
        evaluate_policy(&m, &Policy::Deterministic(vec![0; 7]), IterationLimits::default()),
        Err(persuasion::Error::InvalidModel(_))
    ));
}
