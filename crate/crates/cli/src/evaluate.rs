use std::fmt::Write as _;

use anyhow::{Context, Result};

use persuasion::abstraction::{
    characteristic_candidates, select_characteristic_features, select_state_features, CharacteristicMode,
    FeatureSet, Selection,
};
use persuasion::dataset::pair_transitions;
use persuasion::evaluation::{
    loocv_next_state, loocv_reward, next_state_report, reward_report, state_reward_report, CiMethod, Grouping,
    LoocvOptions, NextStateApproach, Predictor,
};
use persuasion::mdp::EffortReward;
use persuasion::similarity::{config_search, default_grid, parse_grid, ranking_report};
use persuasion::{Dataset, TransitionSample};

use crate::args::{AnalysisArg, CiArg, EvaluateArgs, GroupingArg, PredictorArg};
use crate::output::{load, Run};

struct Study<'a> {
    ds: &'a Dataset,
    features: FeatureSet,
    transitions: Vec<TransitionSample>,
    char_k: usize,
}

impl Study<'_> {
    fn characteristic_selection(&self, mode: CharacteristicMode) -> Result<Selection> {
        let candidates = characteristic_candidates(self.ds, mode);
        Ok(select_characteristic_features(self.ds, &self.transitions, &candidates, self.char_k)?)
    }
}

fn mode_name(mode: CharacteristicMode) -> &'static str {
    match mode {
        CharacteristicMode::PreOnly => "pre",
        CharacteristicMode::All => "all",
    }
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let mut run = Run::new(&args.out.out_dir)?;
    let ds = load(&args.input, &mut run)?;
    let features = match &args.features {
        Some(path) => {
            run.input(path)?;
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            FeatureSet::from_json(&text)?
        }
        None => {
            let candidates = args.select.candidates(ds.answer_names());
            select_state_features(&ds, &candidates, &args.select.options(&args.solver))?.features
        }
    };
    let reward = EffortReward::new(
        ds.mean_effort()
            .ok_or_else(|| persuasion::Error::EmptyInput("no effort reports".into()))?,
    )?;
    let transitions = pair_transitions(&ds, &features, &reward)?;
    let ctx = Study {
        ds: &ds,
        features,
        transitions,
        char_k: args.char_k,
    };
    let options = LoocvOptions {
        ci: match args.ci {
            CiArg::StudentT => CiMethod::StudentT,
            CiArg::Bootstrap => CiMethod::Bootstrap {
                resamples: args.resamples,
                seed: args.seed,
            },
        },
        level: args.level,
        grouping: match args.grouping {
            GroupingArg::Pooled => Grouping::PooledSamples,
            GroupingArg::PerUser => Grouping::PerUserMean,
        },
        gamma: args.solver.gamma,
    };
    let k = ctx.features.k();

    let mut selections: Vec<(CharacteristicMode, Selection)> = Vec::new();
    let mut selection_for = |mode: CharacteristicMode| -> Result<Selection> {
        if let Some((_, s)) = selections.iter().find(|(m, _)| *m == mode) {
            return Ok(s.clone());
        }
        let s = ctx.characteristic_selection(mode)?;
        selections.push((mode, s.clone()));
        Ok(s)
    };

    let mut reward_evals = Vec::new();
    if args.analyses.contains(&AnalysisArg::StateRewards) {
        run.write("state_rewards.tsv", &state_reward_report(&ctx.transitions, k, &options)?)?;
    }
    if args.analyses.contains(&AnalysisArg::Reward) {
        for p in &args.predictors {
            let predictor = match p {
                PredictorArg::OverallMean => Predictor::OverallMean,
                PredictorArg::PerAction => Predictor::PerAction,
                PredictorArg::PerActionState => Predictor::PerActionState,
                PredictorArg::CharstatePre => {
                    Predictor::PerActionCharState(selection_for(CharacteristicMode::PreOnly)?.features)
                }
                PredictorArg::CharstateAll => {
                    Predictor::PerActionCharState(selection_for(CharacteristicMode::All)?.features)
                }
            };
            let mut eval = loocv_reward(&ds, &predictor, &ctx.features, &options)?;
            if let Predictor::PerActionCharState(fs) = &predictor {
                // both pools may pick the same characteristics
                let pool = if *p == PredictorArg::CharstatePre { "pre" } else { "all" };
                eval.approach = format!("charstate_{pool}[{}]", fs.selected().join("+"));
            }
            reward_evals.push(eval);
        }
    }
    if args.analyses.contains(&AnalysisArg::Similarity) {
        let grid = match &args.similarity_grid {
            Some(path) => {
                run.input(path)?;
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
                parse_grid(&text)?
            }
            None => {
                let pre = selection_for(CharacteristicMode::PreOnly)?;
                let all = selection_for(CharacteristicMode::All)?;
                default_grid(pre.features.selected(), all.features.selected(), ds.characteristic_names())
            }
        };
        let ranked = config_search(&ds, &ctx.features, &grid, &options)?;
        run.write("similarity_ranking.tsv", &ranking_report(&ranked))?;
        let best = Predictor::SimilarityWeighted(ranked[0].config.clone());
        reward_evals.push(loocv_reward(&ds, &best, &ctx.features, &options)?);
    }
    if !reward_evals.is_empty() {
        let report = reward_report(&reward_evals, k);
        run.write("reward_l1.tsv", &report)?;
        for e in &reward_evals {
            println!("{}\tL1 {:.4}\t[{:.4}, {:.4}]", e.approach, e.overall.mean, e.overall.ci_low, e.overall.ci_high);
        }
    }
    if !selections.is_empty() {
        run.write("characteristic_selection.tsv", &selection_report(&selections))?;
    }
    if args.analyses.contains(&AnalysisArg::NextState) {
        let evals = NextStateApproach::ALL
            .iter()
            .map(|&a| loocv_next_state(&ds, a, &ctx.features, &options))
            .collect::<persuasion::Result<Vec<_>>>()?;
        run.write("next_state.tsv", &next_state_report(&evals, k))?;
    }
    run.write("feature_set.json", &(ctx.features.to_json() + "\n"))?;
    run.finish("evaluate", args)
}

fn selection_report(selections: &[(CharacteristicMode, Selection)]) -> String {
    let mut out = String::from("candidates\tround\tcharacteristic\tscore\tselected\n");
    for (mode, sel) in selections {
        let chosen = sel.features.selected();
        for (i, round) in sel.rounds.iter().enumerate() {
            for (name, score) in round {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{name}\t{score:.6}\t{}",
                    mode_name(*mode),
                    i + 1,
                    u8::from(chosen[i] == *name)
                );
            }
        }
    }
    out
}
