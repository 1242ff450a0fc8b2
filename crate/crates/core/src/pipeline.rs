//! Selection, estimation and solving in one call.

use crate::abstraction::{select_state_features, Selection, SelectionOptions};
use crate::action::Action;
use crate::dataset::{pair_transitions, Dataset, TransitionSample};
use crate::error::{Error, Result};
use crate::mdp::{estimate_model, extract_policy, value_iteration, EffortReward, MdpModel, Mode, Policy, ValueFunctions};

#[derive(Debug, Clone)]
pub struct Fit {
    pub selection: Selection,
    pub reward: EffortReward,
    pub transitions: Vec<TransitionSample>,
    pub model: MdpModel,
    pub optimal: ValueFunctions,
    pub worst: ValueFunctions,
    pub optimal_policy: Policy,
    pub worst_policy: Policy,
}

/// Selects `options.k` state features from `candidates`, estimates the model
/// from every transition and solves it in both modes.
pub fn fit(dataset: &Dataset, candidates: &[String], options: &SelectionOptions) -> Result<Fit> {
    let selection = select_state_features(dataset, candidates, options)?;
    let reward = EffortReward::new(
        dataset
            .mean_effort()
            .ok_or_else(|| Error::EmptyInput("no effort reports".into()))?,
    )?;
    let transitions = pair_transitions(dataset, &selection.features, &reward)?;
    let model = estimate_model(&transitions, selection.features.n_states(), Action::COUNT, options.gamma)?;
    let optimal = value_iteration(&model, Mode::Optimal, options.limits)?;
    let worst = value_iteration(&model, Mode::Worst, options.limits)?;
    Ok(Fit {
        optimal_policy: extract_policy(&optimal, Mode::Optimal),
        worst_policy: extract_policy(&worst, Mode::Worst),
        selection,
        reward,
        transitions,
        model,
        optimal,
        worst,
    })
}
