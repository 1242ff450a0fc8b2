use std::collections::BTreeMap;

use persuasion::abstraction::{FeatureSet, FeatureSource};
use persuasion::evaluation::LoocvOptions;
use persuasion::similarity::{
    config_search, default_grid, parse_grid, ranking_report, similarity_weight, weighted_reward_predict, Kernel,
    Similarity, SimilarityConfig,
};
use persuasion::synth::{generate_mdp, sample_dataset, CharacteristicResponse, StructureSpec};
use persuasion::{Action, StateId, TransitionSample, UserProfile};
use proptest::prelude::*;

fn profile(id: &str, values: &[f64]) -> UserProfile {
    UserProfile {
        user_id: id.into(),
        characteristics: values.iter().enumerate().map(|(i, v)| (format!("c{i}"), *v)).collect::<BTreeMap<_, _>>(),
        involvement: None,
    }
}

fn config(kernel: Kernel, sharpness: f64) -> SimilarityConfig {
    SimilarityConfig::new(vec!["c0".into(), "c1".into()], kernel, sharpness).unwrap()
}

proptest! {
    #[test]
    fn distance_is_symmetric_and_bounded(
        a in prop::array::uniform2(-5.0f64..5.0),
        b in prop::array::uniform2(-5.0f64..5.0),
        c in prop::array::uniform2(-5.0f64..5.0),
        sharpness in 0.01f64..10.0,
    ) {
        let users = [profile("a", &a), profile("b", &b), profile("c", &c)];
        for kernel in [Kernel::Linear, Kernel::Exponential] {
            let sim = Similarity::fit(&config(kernel, sharpness), users.iter()).unwrap();
            let (ab, ba) = (sim.distance(&users[0], &users[1]).unwrap(), sim.distance(&users[1], &users[0]).unwrap());
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(sim.distance(&users[0], &users[0]).unwrap(), 0.0);
            let w = similarity_weight(&users[0], &users[1], &sim).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }

    #[test]
    fn vanishing_sharpness_gives_plain_mean(rewards in prop::collection::vec(-1.0f64..1.0, 2..20)) {
        let users: Vec<UserProfile> = (0..rewards.len()).map(|i| profile(&format!("u{i}"), &[i as f64, (i * i) as f64 * 0.1])).collect();
        let samples: Vec<TransitionSample> = users
            .iter()
            .zip(&rewards)
            .map(|(u, r)| TransitionSample {
                user_id: u.user_id.clone(),
                state: StateId::new(0),
                action: Action::Authority,
                reward: *r,
                next_state: StateId::new(0),
            })
            .collect();
        let pairs: Vec<(&TransitionSample, &UserProfile)> = samples.iter().zip(&users).collect();
        let target = profile("t", &[0.5, 0.5]);
        let sim = Similarity::fit(&config(Kernel::Exponential, 1e-9), users.iter()).unwrap();
        let p = weighted_reward_predict(&target, &pairs, StateId::new(0), Action::Authority, &sim).unwrap();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        prop_assert!((p - mean).abs() < 1e-6);
        prop_assert!(weighted_reward_predict(&target, &pairs, StateId::new(1), Action::Authority, &sim).is_none());
    }
}

#[test]
fn missing_characteristic_excludes_user() {
    let a = profile("a", &[1.0, 2.0]);
    let mut b = profile("b", &[3.0, 4.0]);
    b.characteristics.remove("c1");
    let sim = Similarity::fit(&config(Kernel::Linear, 1.0), [&a, &profile("c", &[0.0, 0.0])].into_iter()).unwrap();
    assert_eq!(sim.distance(&a, &b), None);
    assert_eq!(similarity_weight(&a, &b, &sim), None);
}

#[test]
fn grid_parsing_and_validation() {
    let grid = parse_grid(
        r#"
[[config]]
characteristics = ["involvement"]
kernel = "linear"
sharpness = 2.0

[[config]]
id = "custom"
characteristics = ["c01", "c02"]
kernel = "exponential"
sharpness = 0.5
"#,
    )
    .unwrap();
    assert_eq!(grid.len(), 2);
    assert_eq!(grid[1].id, "custom");
    assert!(parse_grid("[[config]]\ncharacteristics = []\nkernel = \"linear\"\nsharpness = 1.0\n").is_err());
    assert!(parse_grid("[[config]]\ncharacteristics = [\"x\"]\nkernel = \"cosine\"\nsharpness = 1.0\n").is_err());
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    assert_eq!(default_grid(&names, &names, &names).len(), 40);
}

#[test]
fn search_ranks_the_responsive_characteristic_first() {
    let spec = StructureSpec {
        characteristic_response: Some(CharacteristicResponse {
            name: "c02".into(),
            effect: 0.6,
        }),
        reward_noise: 0.05,
        ..StructureSpec::default()
    };
    let gt = generate_mdp(2, 3, &spec, 31).unwrap();
    let ds = sample_dataset(&gt, 120, 5, 32).unwrap();
    let features = FeatureSet::new(FeatureSource::StateAnswers, vec!["q1".into(), "q2".into()], vec![3.0; 2]).unwrap();
    let grid: Vec<SimilarityConfig> = ["c01", "c02", "c03"]
        .iter()
        .map(|c| SimilarityConfig::new(vec![c.to_string()], Kernel::Exponential, 8.0).unwrap())
        .collect();
    let ranked = config_search(&ds, &features, &grid, &LoocvOptions::default()).unwrap();
    assert_eq!(ranked[0].config.characteristics, vec!["c02".to_string()]);
    let report = ranking_report(&ranked);
    assert!(report.starts_with("rank\tconfig\tmean\tci_low\tci_high\tn\n"));
    assert_eq!(report.lines().count(), 4);
    let unknown = vec![SimilarityConfig::new(vec!["nope".into()], Kernel::Linear, 1.0).unwrap()];
    assert!(config_search(&ds, &features, &unknown, &LoocvOptions::default()).is_err());
}
