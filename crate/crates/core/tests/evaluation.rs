use persuasion::abstraction::{
    characteristic_candidates, select_characteristic_features, CharacteristicMode, FeatureSet, FeatureSource,
    SelectionOptions,
};
use persuasion::dataset::{Dataset, INVOLVEMENT};
use persuasion::evaluation::{
    compare_intervals, loocv_next_state, loocv_reward, next_state_report, reward_report, CiMethod, Grouping,
    IntervalOrder, LoocvOptions, NextStateApproach, Predictor, REPORT_HEADER,
};
use persuasion::pipeline;
use persuasion::synth::{generate_mdp, sample_dataset, CharacteristicResponse, StructureSpec};

fn state_features() -> FeatureSet {
    FeatureSet::new(
        FeatureSource::StateAnswers,
        vec!["q1".into(), "q2".into(), "q3".into()],
        vec![3.0; 3],
    )
    .unwrap()
}

fn informative_corpus(seed: u64) -> Dataset {
    let spec = StructureSpec {
        informative_bits: vec![(0, 1.0)],
        reward_noise: 0.1,
        ..StructureSpec::default()
    };
    let gt = generate_mdp(3, 5, &spec, seed).unwrap();
    sample_dataset(&gt, 150, 5, seed + 1).unwrap()
}

#[test]
fn states_beat_overall_mean_on_informative_data() {
    let ds = informative_corpus(1);
    let options = LoocvOptions::default();
    let overall = loocv_reward(&ds, &Predictor::OverallMean, &state_features(), &options).unwrap();
    let states = loocv_reward(&ds, &Predictor::PerActionState, &state_features(), &options).unwrap();
    assert_eq!(overall.outcomes.len(), 600);
    assert_eq!(
        compare_intervals(&states.overall.interval(), &overall.overall.interval()),
        IntervalOrder::ACrediblyLower
    );
}

#[test]
fn loocv_is_deterministic_and_user_ordered() {
    let ds = informative_corpus(2);
    let options = LoocvOptions::default();
    let a = loocv_reward(&ds, &Predictor::PerAction, &state_features(), &options).unwrap();
    let b = loocv_reward(&ds, &Predictor::PerAction, &state_features(), &options).unwrap();
    assert_eq!(a, b);
    let users: Vec<&str> = a.outcomes.iter().map(|o| o.user_id.as_str()).collect();
    let mut sorted = users.clone();
    sorted.sort();
    assert_eq!(users, sorted);
}

#[test]
fn groupings_and_bootstrap_agree_on_means() {
    let ds = informative_corpus(3);
    let pooled = loocv_reward(&ds, &Predictor::PerActionState, &state_features(), &LoocvOptions::default()).unwrap();
    let boot = LoocvOptions {
        ci: CiMethod::Bootstrap { resamples: 2000, seed: 1 },
        ..LoocvOptions::default()
    };
    let bootstrapped = loocv_reward(&ds, &Predictor::PerActionState, &state_features(), &boot).unwrap();
    assert_eq!(pooled.overall.mean, bootstrapped.overall.mean);
    assert!((pooled.overall.ci_high - bootstrapped.overall.ci_high).abs() < 0.02);
    let per_user = LoocvOptions {
        grouping: Grouping::PerUserMean,
        ..LoocvOptions::default()
    };
    let users = loocv_reward(&ds, &Predictor::PerActionState, &state_features(), &per_user).unwrap();
    assert_eq!(users.overall.n, 150);
}

#[test]
fn transition_function_beats_uniform() {
    let ds = informative_corpus(4);
    let options = LoocvOptions::default();
    let uniform = loocv_next_state(&ds, NextStateApproach::Uniform, &state_features(), &options).unwrap();
    let fitted = loocv_next_state(&ds, NextStateApproach::TransitionFunction, &state_features(), &options).unwrap();
    assert!(fitted.overall.mean > 0.0 && fitted.overall.mean <= 1.0);
    let report = next_state_report(&[uniform, fitted], 3);
    assert!(report.starts_with(REPORT_HEADER));
    assert_eq!(report.lines().filter(|l| l.starts_with("uniform\t")).count(), 9);
}

#[test]
fn characteristic_with_response_is_selected() {
    let spec = StructureSpec {
        characteristic_response: Some(CharacteristicResponse {
            name: "c03".into(),
            effect: 0.4,
        }),
        ..StructureSpec::default()
    };
    let gt = generate_mdp(3, 5, &spec, 6).unwrap();
    let ds = sample_dataset(&gt, 400, 5, 7).unwrap();
    let fit = pipeline::fit(&ds, ds.answer_names(), &SelectionOptions::default()).unwrap();
    let cands = characteristic_candidates(&ds, CharacteristicMode::PreOnly);
    assert!(!cands.iter().any(|c| c == INVOLVEMENT));
    let sel = select_characteristic_features(&ds, &fit.transitions, &cands, 2).unwrap();
    assert_eq!(sel.features.selected()[0], "c03");
    let all = characteristic_candidates(&ds, CharacteristicMode::All);
    assert_eq!(all.last().map(String::as_str), Some(INVOLVEMENT));

    let options = LoocvOptions::default();
    let chars = loocv_reward(&ds, &Predictor::PerActionCharState(sel.features), &fit.selection.features, &options).unwrap();
    let baseline = loocv_reward(&ds, &Predictor::PerAction, &fit.selection.features, &options).unwrap();
    assert!(chars.overall.mean < baseline.overall.mean);
    let report = reward_report(&[chars, baseline], 3);
    assert!(report.contains("per_action_charstate[c03+"));
}
