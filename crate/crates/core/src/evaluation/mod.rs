//! Leave-one-person-out evaluation of reward and next-state predictions.
//!
//! Every fold holds out all samples of one user. The mean effort, the
//! feature thresholds, and every fitted table are recomputed from the
//! remaining users only; the selected feature names stay fixed so that
//! per-state results line up across folds.

mod interval;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use interval::{
    bayesian_mean_ci, bootstrap_mean_ci, compare_intervals, CiMethod, Interval, IntervalOrder,
    DEFAULT_BOOTSTRAP_RESAMPLES, DEFAULT_LEVEL,
};

use crate::abstraction::{answer_thresholds, compute_thresholds, FeatureSet, StateId};
use crate::action::Action;
use crate::dataset::{mean, project_transitions, Dataset, RawTransition, TransitionSample, UserProfile};
use crate::error::{Error, Result};
use crate::mdp::{EffortReward, ModelCounts, DEFAULT_GAMMA};
use crate::similarity::{SimilarityConfig, WeightedPredictor};

/// What an [`EvalResult`] aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    State(StateId),
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub group: Group,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl EvalResult {
    /// Aggregates `values`. A single value gets an unbounded interval.
    pub fn from_values(group: Group, values: &[f64], ci: &CiMethod, level: f64) -> Result<Self> {
        let n = values.len();
        let iv = match n {
            0 => return Err(Error::TooFewValues(0)),
            1 => Interval {
                mean: values[0],
                low: f64::NEG_INFINITY,
                high: f64::INFINITY,
            },
            _ => ci.interval(values, level)?,
        };
        Ok(EvalResult {
            group,
            mean: iv.mean,
            ci_low: iv.low,
            ci_high: iv.high,
            n,
        })
    }

    pub fn interval(&self) -> Interval {
        Interval {
            mean: self.mean,
            low: self.ci_low,
            high: self.ci_high,
        }
    }
}

/// How held-out values are pooled before computing an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One value per held-out sample.
    #[default]
    PooledSamples,
    /// One value per user: the mean over that user's samples in the group.
    PerUserMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoocvOptions {
    pub ci: CiMethod,
    pub level: f64,
    pub grouping: Grouping,
    pub gamma: f64,
}

impl Default for LoocvOptions {
    fn default() -> Self {
        LoocvOptions {
            ci: CiMethod::StudentT,
            level: DEFAULT_LEVEL,
            grouping: Grouping::PooledSamples,
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// Reward predictors compared under cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    OverallMean,
    PerAction,
    PerActionState,
    /// Mean per action and characteristic state; the feature set's
    /// thresholds are refit in every fold.
    PerActionCharState(FeatureSet),
    SimilarityWeighted(SimilarityConfig),
}

impl Predictor {
    pub fn name(&self) -> String {
        match self {
            Predictor::OverallMean => "overall_mean".into(),
            Predictor::PerAction => "per_action".into(),
            Predictor::PerActionState => "per_action_state".into(),
            Predictor::PerActionCharState(fs) => format!("per_action_charstate[{}]", fs.selected().join("+")),
            Predictor::SimilarityWeighted(c) => format!("similarity[{}]", c.id),
        }
    }
}

/// Mean rewards per `(context, action)` with the fallback chain
/// context+action, then action, then overall.
#[derive(Debug, Clone)]
pub struct CellMeans {
    n_contexts: usize,
    sum: Vec<f64>,
    count: Vec<u64>,
    action_sum: [f64; Action::COUNT],
    action_count: [u64; Action::COUNT],
    total_sum: f64,
    total_count: u64,
}

impl CellMeans {
    pub fn new(n_contexts: usize) -> Self {
        CellMeans {
            n_contexts,
            sum: vec![0.0; n_contexts * Action::COUNT],
            count: vec![0; n_contexts * Action::COUNT],
            action_sum: [0.0; Action::COUNT],
            action_count: [0; Action::COUNT],
            total_sum: 0.0,
            total_count: 0,
        }
    }

    pub fn add(&mut self, context: Option<usize>, action: Action, reward: f64) {
        if let Some(c) = context {
            assert!(c < self.n_contexts, "context {c} out of range");
            let cell = c * Action::COUNT + action.index();
            self.sum[cell] += reward;
            self.count[cell] += 1;
        }
        self.action_sum[action.index()] += reward;
        self.action_count[action.index()] += 1;
        self.total_sum += reward;
        self.total_count += 1;
    }

    pub fn overall(&self) -> Option<f64> {
        (self.total_count > 0).then(|| self.total_sum / self.total_count as f64)
    }

    pub fn action_mean(&self, action: Action) -> Option<f64> {
        let n = self.action_count[action.index()];
        (n > 0).then(|| self.action_sum[action.index()] / n as f64)
    }

    pub fn cell_mean(&self, context: usize, action: Action) -> Option<f64> {
        let cell = context * Action::COUNT + action.index();
        let n = self.count[cell];
        (n > 0).then(|| self.sum[cell] / n as f64)
    }

    /// Most specific available mean. `None` only when nothing was added.
    pub fn predict(&self, context: Option<usize>, action: Action) -> Option<f64> {
        context
            .and_then(|c| self.cell_mean(c, action))
            .or_else(|| self.action_mean(action))
            .or_else(|| self.overall())
    }
}

/// Everything fitted from the training users of one fold.
pub(crate) struct Fold<'a> {
    pub held_out: &'a str,
    pub features: FeatureSet,
    pub training: Vec<TransitionSample>,
    pub test: Vec<TransitionSample>,
}

/// Users with at least one transition, and their raw pairs.
pub(crate) struct FoldPlan<'a> {
    dataset: &'a Dataset,
    raw: Vec<RawTransition>,
    users: Vec<&'a str>,
}

impl<'a> FoldPlan<'a> {
    pub fn new(dataset: &'a Dataset) -> Result<Self> {
        let raw = dataset.raw_transitions();
        let mut users: Vec<&'a str> = dataset
            .session_users()
            .filter(|u| raw.iter().any(|t| t.user_id == *u))
            .collect();
        users.sort_unstable();
        if users.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "cross-validation needs at least two users with transitions, found {}",
                users.len()
            )));
        }
        Ok(FoldPlan { dataset, raw, users })
    }

    pub fn fold(&self, held_out: &'a str, features: &FeatureSet) -> Result<Fold<'a>> {
        let training_sessions = || {
            self.dataset
                .sessions()
                .iter()
                .filter(move |s| s.user_id != held_out)
        };
        let mean_effort = mean(training_sessions().filter_map(|s| s.effort.map(f64::from)))
            .ok_or_else(|| Error::EmptyInput(format!("no effort reports outside `{held_out}`")))?;
        let reward = EffortReward::new(mean_effort)?;
        let thresholds = answer_thresholds(
            training_sessions().map(|s| &s.answers),
            self.dataset.answer_names(),
            features.selected(),
        )?;
        let features = features.with_thresholds(thresholds)?;
        let (test_raw, train_raw): (Vec<RawTransition>, Vec<RawTransition>) =
            self.raw.iter().cloned().partition(|t| t.user_id == held_out);
        let names = self.dataset.answer_names();
        Ok(Fold {
            held_out,
            training: project_transitions(&train_raw, names, &features, &reward)?,
            test: project_transitions(&test_raw, names, &features, &reward)?,
            features,
        })
    }

    /// Runs `f` on every fold in parallel; results come back in user order.
    pub fn run<T, F>(&self, features: &FeatureSet, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&Fold<'a>) -> Result<T> + Sync,
    {
        self.users
            .par_iter()
            .map(|u| f(&self.fold(u, features)?))
            .collect()
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }
}

/// Prediction for one held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardOutcome {
    pub user_id: String,
    pub state: StateId,
    pub action: Action,
    pub predicted: f64,
    pub actual: f64,
}

impl RewardOutcome {
    pub fn l1(&self) -> f64 {
        (self.predicted - self.actual).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardEvaluation {
    pub approach: String,
    pub per_state: Vec<EvalResult>,
    pub overall: EvalResult,
    pub outcomes: Vec<RewardOutcome>,
}

/// Characteristic state of `profile`, or `None` if it lacks a feature.
fn char_state(features: &FeatureSet, profile: Option<&UserProfile>) -> Option<usize> {
    profile.and_then(|p| features.project(p).ok()).map(StateId::index)
}

fn fit_char_features(fold: &Fold<'_>, dataset: &Dataset, features: &FeatureSet) -> Result<FeatureSet> {
    let mut users: Vec<&str> = fold.training.iter().map(|t| t.user_id.as_str()).collect();
    users.dedup();
    let profiles: Vec<&UserProfile> = users
        .iter()
        .filter_map(|u| dataset.profile(u))
        .filter(|p| features.selected().iter().all(|c| p.characteristic(c).is_some()))
        .collect();
    features.with_thresholds(compute_thresholds(profiles.iter().copied(), features.selected())?)
}

fn predict_fold(fold: &Fold<'_>, dataset: &Dataset, predictor: &Predictor) -> Result<Vec<RewardOutcome>> {
    let outcome = |t: &TransitionSample, predicted: f64| RewardOutcome {
        user_id: t.user_id.clone(),
        state: t.state,
        action: t.action,
        predicted,
        actual: t.reward,
    };
    let empty = || Error::EmptyInput(format!("no training samples outside `{}`", fold.held_out));
    match predictor {
        Predictor::OverallMean | Predictor::PerAction | Predictor::PerActionState => {
            let use_state = *predictor == Predictor::PerActionState;
            let mut cells = CellMeans::new(fold.features.n_states());
            for t in &fold.training {
                cells.add(use_state.then_some(t.state.index()), t.action, t.reward);
            }
            fold.test
                .iter()
                .map(|t| {
                    let p = match predictor {
                        Predictor::OverallMean => cells.overall(),
                        _ => cells.predict(use_state.then_some(t.state.index()), t.action),
                    };
                    p.map(|p| outcome(t, p)).ok_or_else(empty)
                })
                .collect()
        }
        Predictor::PerActionCharState(features) => {
            let features = fit_char_features(fold, dataset, features)?;
            let mut cells = CellMeans::new(features.n_states());
            for t in &fold.training {
                cells.add(char_state(&features, dataset.profile(&t.user_id)), t.action, t.reward);
            }
            let ctx = char_state(&features, dataset.profile(fold.held_out));
            fold.test
                .iter()
                .map(|t| cells.predict(ctx, t.action).map(|p| outcome(t, p)).ok_or_else(empty))
                .collect()
        }
        Predictor::SimilarityWeighted(config) => {
            let wp = WeightedPredictor::fit(config, dataset, &fold.training, fold.features.n_states())?;
            let target = dataset
                .profile(fold.held_out)
                .ok_or_else(|| Error::InvalidDataset(format!("no profile for `{}`", fold.held_out)))?;
            let weights = wp.weights_for(target);
            fold.test
                .iter()
                .map(|t| wp.predict(weights.as_deref(), t.state, t.action).map(|p| outcome(t, p)).ok_or_else(empty))
                .collect()
        }
    }
}

/// Per-state and overall aggregation of `(user, state, value)` triples that
/// are ordered by user.
fn aggregate(
    items: &[(&str, StateId, f64)],
    n_states: usize,
    options: &LoocvOptions,
) -> Result<(Vec<EvalResult>, EvalResult)> {
    let values_for = |keep: &dyn Fn(StateId) -> bool| -> Vec<f64> {
        let selected = items.iter().filter(|(_, s, _)| keep(*s));
        match options.grouping {
            Grouping::PooledSamples => selected.map(|(_, _, v)| *v).collect(),
            Grouping::PerUserMean => {
                let mut out = Vec::new();
                let mut current: Option<(&str, f64, usize)> = None;
                for &(u, _, v) in selected {
                    match &mut current {
                        Some((cu, sum, n)) if *cu == u => {
                            *sum += v;
                            *n += 1;
                        }
                        _ => {
                            if let Some((_, sum, n)) = current {
                                out.push(sum / n as f64);
                            }
                            current = Some((u, v, 1));
                        }
                    }
                }
                if let Some((_, sum, n)) = current {
                    out.push(sum / n as f64);
                }
                out
            }
        }
    };
    let mut per_state = Vec::new();
    for s in 0..n_states as u32 {
        let id = StateId::new(s);
        let values = values_for(&|x| x == id);
        if !values.is_empty() {
            per_state.push(EvalResult::from_values(Group::State(id), &values, &options.ci, options.level)?);
        }
    }
    let overall = EvalResult::from_values(Group::Overall, &values_for(&|_| true), &options.ci, options.level)?;
    Ok((per_state, overall))
}

/// Leave-one-person-out L1 error of `predictor`, grouped by the held-out
/// sample's state under `features` (thresholds refit per fold).
pub fn loocv_reward(
    dataset: &Dataset,
    predictor: &Predictor,
    features: &FeatureSet,
    options: &LoocvOptions,
) -> Result<RewardEvaluation> {
    let plan = FoldPlan::new(dataset)?;
    loocv_reward_with_plan(&plan, predictor, features, options)
}

pub(crate) fn loocv_reward_with_plan(
    plan: &FoldPlan<'_>,
    predictor: &Predictor,
    features: &FeatureSet,
    options: &LoocvOptions,
) -> Result<RewardEvaluation> {
    let outcomes: Vec<RewardOutcome> = plan
        .run(features, |fold| predict_fold(fold, plan.dataset(), predictor))?
        .into_iter()
        .flatten()
        .collect();
    let items: Vec<(&str, StateId, f64)> = outcomes
        .iter()
        .map(|o| (o.user_id.as_str(), o.state, o.l1()))
        .collect();
    let (per_state, overall) = aggregate(&items, features.n_states(), options)?;
    Ok(RewardEvaluation {
        approach: predictor.name(),
        per_state,
        overall,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NextStateApproach {
    /// Probability `1 / |S|` for every state.
    Uniform,
    /// Probability 1 for staying in the current state.
    Stay,
    /// The transition function estimated on the training users.
    TransitionFunction,
}

impl NextStateApproach {
    pub const ALL: [NextStateApproach; 3] = [
        NextStateApproach::Uniform,
        NextStateApproach::Stay,
        NextStateApproach::TransitionFunction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NextStateApproach::Uniform => "uniform",
            NextStateApproach::Stay => "stay",
            NextStateApproach::TransitionFunction => "transition_fn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NextStateOutcome {
    pub user_id: String,
    pub state: StateId,
    pub action: Action,
    pub next_state: StateId,
    pub likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NextStateEvaluation {
    pub approach: NextStateApproach,
    pub per_state: Vec<EvalResult>,
    pub overall: EvalResult,
    pub outcomes: Vec<NextStateOutcome>,
}

/// Leave-one-person-out likelihood of the realized next state.
pub fn loocv_next_state(
    dataset: &Dataset,
    approach: NextStateApproach,
    features: &FeatureSet,
    options: &LoocvOptions,
) -> Result<NextStateEvaluation> {
    let plan = FoldPlan::new(dataset)?;
    let n_states = features.n_states();
    let outcomes: Vec<NextStateOutcome> = plan
        .run(features, |fold| {
            let model = match approach {
                NextStateApproach::TransitionFunction => {
                    let mut counts = ModelCounts::new(n_states, Action::COUNT);
                    for t in &fold.training {
                        counts.add(t.state.index(), t.action.index(), t.reward, t.next_state.index())?;
                    }
                    Some(counts.into_model(options.gamma)?)
                }
                _ => None,
            };
            Ok(fold
                .test
                .iter()
                .map(|t| NextStateOutcome {
                    user_id: t.user_id.clone(),
                    state: t.state,
                    action: t.action,
                    next_state: t.next_state,
                    likelihood: match (&model, approach) {
                        (_, NextStateApproach::Uniform) => 1.0 / n_states as f64,
                        (_, NextStateApproach::Stay) => f64::from(u8::from(t.next_state == t.state)),
                        (Some(m), _) => m.transition(t.state.index(), t.action.index(), t.next_state.index()),
                        (None, _) => unreachable!("model is fitted for the transition-function approach"),
                    },
                })
                .collect::<Vec<_>>())
        })?
        .into_iter()
        .flatten()
        .collect();
    let items: Vec<(&str, StateId, f64)> = outcomes
        .iter()
        .map(|o| (o.user_id.as_str(), o.state, o.likelihood))
        .collect();
    let (per_state, overall) = aggregate(&items, n_states, options)?;
    Ok(NextStateEvaluation {
        approach,
        per_state,
        overall,
        outcomes,
    })
}

/// Mean observed reward per state, with sample counts.
pub fn mean_reward_by_state(transitions: &[TransitionSample], n_states: usize) -> Vec<Option<(f64, usize)>> {
    let mut acc = vec![(0.0, 0usize); n_states];
    for t in transitions {
        let slot = &mut acc[t.state.index()];
        slot.0 += t.reward;
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|(sum, n)| (n > 0).then(|| (sum / n as f64, n)))
        .collect()
}

pub const REPORT_HEADER: &str = "approach\tgroup\tmean\tci_low\tci_high\tn";

fn group_label(group: Group, k: usize) -> String {
    match group {
        Group::State(s) => s.label(k),
        Group::Overall => "overall".into(),
    }
}

fn push_row(out: &mut String, approach: &str, r: &EvalResult, k: usize) {
    let _ = writeln!(
        out,
        "{approach}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
        group_label(r.group, k),
        r.mean,
        r.ci_low,
        r.ci_high,
        r.n
    );
}

/// One row per `(approach, state)` plus an overall row per approach.
pub fn reward_report(evaluations: &[RewardEvaluation], k: usize) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for e in evaluations {
        for r in e.per_state.iter().chain(std::iter::once(&e.overall)) {
            push_row(&mut out, &e.approach, r, k);
        }
    }
    out
}

/// Mean observed reward per state and overall, labeled `reward`.
pub fn state_reward_report(transitions: &[TransitionSample], k: usize, options: &LoocvOptions) -> Result<String> {
    let mut out = format!("{REPORT_HEADER}\n");
    for s in 0..1u32 << k {
        let id = StateId::new(s);
        let values: Vec<f64> = transitions.iter().filter(|t| t.state == id).map(|t| t.reward).collect();
        if !values.is_empty() {
            push_row(&mut out, "reward", &EvalResult::from_values(Group::State(id), &values, &options.ci, options.level)?, k);
        }
    }
    let all: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
    push_row(&mut out, "reward", &EvalResult::from_values(Group::Overall, &all, &options.ci, options.level)?, k);
    Ok(out)
}

pub fn next_state_report(evaluations: &[NextStateEvaluation], k: usize) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for e in evaluations {
        for r in e.per_state.iter().chain(std::iter::once(&e.overall)) {
            push_row(&mut out, e.approach.name(), r, k);
        }
    }
    out
}
