//! Binary state abstraction.
//!
//! Every raw feature is binarized against its mean: `1` if the value is at
//! or above the mean, `0` otherwise. A [`FeatureSet`] picks `k` such features
//! and packs their bits into a [`StateId`] in `0..2^k`. The first selected
//! feature is the most significant bit, so the state written as `011` has
//! its first feature at `0` and the other two at `1`.
//!
//! Two greedy selectors choose the features:
//!
//! * [`select_state_features`] scores questionnaire items by how far apart
//!   the Q-values of the estimated MDP are when the item is `0` versus `1`.
//! * [`select_characteristic_features`] scores user characteristics by the
//!   gap in mean reward between users on either side of the mean.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::dataset::{mean, Dataset, RawTransition, TransitionSample, UserProfile, INVOLVEMENT, N_ANSWERS};
use crate::error::{Error, Result};
use crate::mdp::{value_iteration, EffortReward, IterationLimits, ModelCounts, Mode};

/// Largest supported number of selected features.
pub const MAX_FEATURES: usize = 16;

/// Index of an abstract state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(u32);

impl StateId {
    pub const fn new(index: u32) -> Self {
        StateId(index)
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Packs bits given in feature order (first feature most significant).
    pub fn from_bits(bits: &[bool]) -> Self {
        StateId(bits.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b)))
    }

    /// Bit of the `j`-th feature in a `k`-feature space.
    pub fn bit(self, j: usize, k: usize) -> bool {
        (self.0 >> (k - 1 - j)) & 1 == 1
    }

    /// Binary string with the first feature leftmost, e.g. `"011"`.
    pub fn label(self, k: usize) -> String {
        format!("{:0width$b}", self.0, width = k)
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[inline]
pub fn binarize(value: f64, threshold: f64) -> bool {
    value >= threshold
}

/// Anything that can report a named raw feature value.
pub trait FeatureLookup {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureLookup for UserProfile {
    fn feature(&self, name: &str) -> Option<f64> {
        self.characteristic(name)
    }
}

/// Questionnaire answers viewed through their column names.
#[derive(Debug, Clone, Copy)]
pub struct AnswerView<'a> {
    pub names: &'a [String],
    pub answers: &'a [u8; N_ANSWERS],
}

impl FeatureLookup for AnswerView<'_> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|j| f64::from(self.answers[j]))
    }
}

/// Arithmetic mean of each named feature over the records that carry it.
pub fn compute_thresholds<'a, T, I>(records: I, names: &[String]) -> Result<Vec<f64>>
where
    T: FeatureLookup + 'a,
    I: IntoIterator<Item = &'a T>,
    I::IntoIter: Clone,
{
    let records = records.into_iter();
    names
        .iter()
        .map(|name| {
            mean(records.clone().filter_map(|r| r.feature(name)))
                .ok_or_else(|| Error::EmptyInput(format!("no values for feature `{name}`")))
        })
        .collect()
}

/// Mean of each answer column over the given sessions' answer vectors.
pub fn answer_thresholds<'a>(
    answers: impl Iterator<Item = &'a [u8; N_ANSWERS]> + Clone,
    answer_names: &[String],
    names: &[String],
) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|name| {
            let j = answer_index(answer_names, name)?;
            mean(answers.clone().map(|a| f64::from(a[j])))
                .ok_or_else(|| Error::EmptyInput(format!("no values for feature `{name}`")))
        })
        .collect()
}

fn answer_index(answer_names: &[String], name: &str) -> Result<usize> {
    answer_names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::MissingFeature(name.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    StateAnswers,
    UserCharacteristics,
}

/// An ordered selection of binarized features defining a `2^k` state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureSetRepr", into = "FeatureSetRepr")]
pub struct FeatureSet {
    source: FeatureSource,
    selected: Vec<String>,
    thresholds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FeatureSetRepr {
    source: FeatureSource,
    k: usize,
    selected: Vec<String>,
    thresholds: Vec<f64>,
}

impl TryFrom<FeatureSetRepr> for FeatureSet {
    type Error = Error;

    fn try_from(r: FeatureSetRepr) -> Result<Self> {
        if r.k != r.selected.len() {
            return Err(Error::InvalidFeatureSet(format!(
                "k = {} but {} features listed",
                r.k,
                r.selected.len()
            )));
        }
        FeatureSet::new(r.source, r.selected, r.thresholds)
    }
}

impl From<FeatureSet> for FeatureSetRepr {
    fn from(f: FeatureSet) -> Self {
        FeatureSetRepr {
            source: f.source,
            k: f.selected.len(),
            selected: f.selected,
            thresholds: f.thresholds,
        }
    }
}

impl FeatureSet {
    pub fn new(source: FeatureSource, selected: Vec<String>, thresholds: Vec<f64>) -> Result<Self> {
        if selected.is_empty() || selected.len() > MAX_FEATURES {
            return Err(Error::InvalidFeatureSet(format!(
                "need 1..={MAX_FEATURES} features, got {}",
                selected.len()
            )));
        }
        if selected.len() != thresholds.len() {
            return Err(Error::InvalidFeatureSet("one threshold per feature".into()));
        }
        for (i, name) in selected.iter().enumerate() {
            if selected[..i].contains(name) {
                return Err(Error::InvalidFeatureSet(format!("`{name}` selected twice")));
            }
        }
        if thresholds.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidFeatureSet("thresholds must be finite".into()));
        }
        Ok(FeatureSet {
            source,
            selected,
            thresholds,
        })
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn selected(&self) -> &[String] {
        &self.selected
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn n_states(&self) -> usize {
        1 << self.k()
    }

    /// Same features, new thresholds.
    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        FeatureSet::new(self.source, self.selected.clone(), thresholds)
    }

    pub fn project(&self, input: &impl FeatureLookup) -> Result<StateId> {
        let bits = self
            .selected
            .iter()
            .zip(&self.thresholds)
            .map(|(name, &t)| {
                input
                    .feature(name)
                    .map(|v| binarize(v, t))
                    .ok_or_else(|| Error::MissingFeature(name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StateId::from_bits(&bits))
    }

    /// Index-resolved projector for questionnaire answers.
    pub fn answer_projector(&self, answer_names: &[String]) -> Result<AnswerProjector> {
        if self.source != FeatureSource::StateAnswers {
            return Err(Error::InvalidFeatureSet(
                "characteristic feature sets cannot project answers".into(),
            ));
        }
        let indices = self
            .selected
            .iter()
            .map(|n| answer_index(answer_names, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(AnswerProjector {
            indices,
            thresholds: self.thresholds.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feature set serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct AnswerProjector {
    indices: Vec<usize>,
    thresholds: Vec<f64>,
}

impl AnswerProjector {
    pub fn project(&self, answers: &[u8; N_ANSWERS]) -> StateId {
        let mut index = 0u32;
        for (&j, &t) in self.indices.iter().zip(&self.thresholds) {
            index = (index << 1) | u32::from(binarize(f64::from(answers[j]), t));
        }
        StateId(index)
    }
}

/// How a candidate's Q-value gap is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Split every context of the already-selected features.
    #[default]
    Conditional,
    /// Score each candidate on its own two-state abstraction.
    Marginal,
}

/// How per-context Q gaps are combined into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Support-weighted mean.
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOptions {
    pub k: usize,
    pub gamma: f64,
    pub scoring: Scoring,
    pub aggregation: Aggregation,
    pub limits: IterationLimits,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            k: 3,
            gamma: crate::mdp::DEFAULT_GAMMA,
            scoring: Scoring::default(),
            aggregation: Aggregation::default(),
            limits: IterationLimits::default(),
        }
    }
}

/// Selected features plus every candidate's score in every round.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub features: FeatureSet,
    pub rounds: Vec<Vec<(String, f64)>>,
}

/// Index of the best score; ties (within 1e-12 relative) go to the
/// lexicographically smallest name.
fn pick_best(scores: &[(String, f64)]) -> usize {
    let max = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max.abs().max(1.0);
    scores
        .iter()
        .enumerate()
        .filter(|(_, (_, s))| *s >= max - tol)
        .min_by(|a, b| a.1 .0.cmp(&b.1 .0))
        .map(|(i, _)| i)
        .expect("at least one candidate")
}

/// Bits of every candidate for one transition.
struct BinarizedTransition {
    from: Vec<bool>,
    to: Vec<bool>,
    action: usize,
    reward: f64,
}

/// Greedy Q-difference feature selection over questionnaire items.
///
/// Thresholds come from every session in `dataset` and the reward from its
/// overall mean effort.
pub fn select_state_features(
    dataset: &Dataset,
    candidates: &[String],
    options: &SelectionOptions,
) -> Result<Selection> {
    let reward = EffortReward::new(
        dataset
            .mean_effort()
            .ok_or_else(|| Error::EmptyInput("no effort reports".into()))?,
    )?;
    let thresholds = answer_thresholds(
        dataset.sessions().iter().map(|s| &s.answers),
        dataset.answer_names(),
        candidates,
    )?;
    let features = FeatureSet::new(FeatureSource::StateAnswers, candidates.to_vec(), thresholds)?;
    select_state_features_from(
        &dataset.raw_transitions(),
        dataset.answer_names(),
        &features,
        &reward,
        options,
    )
}

/// Selection over pre-paired transitions; `candidates` carries the
/// candidate names with their thresholds.
pub fn select_state_features_from(
    raw: &[RawTransition],
    answer_names: &[String],
    candidates: &FeatureSet,
    reward: &EffortReward,
    options: &SelectionOptions,
) -> Result<Selection> {
    if options.k == 0 || options.k > candidates.k() {
        return Err(Error::InvalidConfig(format!(
            "cannot select {} of {} candidates",
            options.k,
            candidates.k()
        )));
    }
    if raw.is_empty() {
        return Err(Error::EmptyInput("no transitions to select features from".into()));
    }
    let indices = candidates
        .selected()
        .iter()
        .map(|n| answer_index(answer_names, n))
        .collect::<Result<Vec<_>>>()?;
    let bits = |answers: &[u8; N_ANSWERS]| -> Vec<bool> {
        indices
            .iter()
            .zip(candidates.thresholds())
            .map(|(&j, &t)| binarize(f64::from(answers[j]), t))
            .collect()
    };
    let data = raw
        .iter()
        .map(|t| {
            Ok(BinarizedTransition {
                from: bits(&t.answers),
                to: bits(&t.next_answers),
                action: t.action.index(),
                reward: reward.reward(f64::from(t.effort))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chosen: Vec<usize> = Vec::new();
    let mut rounds = Vec::new();
    for _ in 0..options.k {
        let remaining: Vec<usize> = (0..candidates.k()).filter(|c| !chosen.contains(c)).collect();
        let scored = remaining
            .par_iter()
            .map(|&c| {
                let context: &[usize] = match options.scoring {
                    Scoring::Conditional => &chosen,
                    Scoring::Marginal => &[],
                };
                q_gap_score(&data, context, c, options).map(|s| (candidates.selected()[c].clone(), s))
            })
            .collect::<Result<Vec<_>>>()?;
        let best = pick_best(&scored);
        chosen.push(remaining[best]);
        rounds.push(scored);
    }
    let features = FeatureSet::new(
        FeatureSource::StateAnswers,
        chosen.iter().map(|&c| candidates.selected()[c].clone()).collect(),
        chosen.iter().map(|&c| candidates.thresholds()[c]).collect(),
    )?;
    Ok(Selection { features, rounds })
}

/// Score of `candidate` given the `context` features: the gap
/// `|Q(b, 0, a) - Q(b, 1, a)|` over every context assignment `b` and action
/// `a` in which both values of the candidate were observed.
fn q_gap_score(
    data: &[BinarizedTransition],
    context: &[usize],
    candidate: usize,
    options: &SelectionOptions,
) -> Result<f64> {
    let state_of = |bits: &[bool]| -> usize {
        let ctx = context.iter().fold(0usize, |acc, &c| (acc << 1) | usize::from(bits[c]));
        (ctx << 1) | usize::from(bits[candidate])
    };
    let n_states = 1usize << (context.len() + 1);
    let mut counts = ModelCounts::new(n_states, Action::COUNT);
    for t in data {
        counts.add(state_of(&t.from), t.action, t.reward, state_of(&t.to))?;
    }
    let model = counts.into_model(options.gamma)?;
    let vf = value_iteration(&model, Mode::Optimal, options.limits)?;

    let mut weighted = 0.0;
    let mut total_weight = 0.0;
    let mut max_gap: f64 = 0.0;
    for b in 0..n_states / 2 {
        let (s0, s1) = (b << 1, (b << 1) | 1);
        for a in 0..Action::COUNT {
            let (n0, n1) = (model.support(s0, a), model.support(s1, a));
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let gap = (vf.q(s0, a) - vf.q(s1, a)).abs();
            let w = (n0 + n1) as f64;
            weighted += w * gap;
            total_weight += w;
            max_gap = max_gap.max(gap);
        }
    }
    Ok(match options.aggregation {
        _ if total_weight == 0.0 => 0.0,
        Aggregation::Mean => weighted / total_weight,
        Aggregation::Max => max_gap,
    })
}

/// Which characteristics may be selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacteristicMode {
    /// Only characteristics measured before any persuasive attempt.
    PreOnly,
    /// Pre-characteristics plus involvement.
    All,
}

pub fn characteristic_candidates(dataset: &Dataset, mode: CharacteristicMode) -> Vec<String> {
    let mut names = dataset.characteristic_names().to_vec();
    if mode == CharacteristicMode::All {
        names.push(INVOLVEMENT.to_string());
    }
    names
}

/// Greedy reward-gap selection over user characteristics.
///
/// Users missing any candidate are dropped. Thresholds are means over the
/// remaining users that have at least one transition. Each candidate is
/// scored marginally by `|mean reward(c = 1) - mean reward(c = 0)|`.
pub fn select_characteristic_features(
    dataset: &Dataset,
    transitions: &[TransitionSample],
    candidates: &[String],
    k: usize,
) -> Result<Selection> {
    if k == 0 || k > candidates.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot select {k} of {} candidates",
            candidates.len()
        )));
    }
    let has_all = |p: &UserProfile| candidates.iter().all(|c| p.characteristic(c).is_some());
    let mut users: Vec<&str> = transitions.iter().map(|t| t.user_id.as_str()).collect();
    users.dedup();
    users.sort_unstable();
    users.dedup();
    let eligible: Vec<&UserProfile> = users
        .iter()
        .filter_map(|u| dataset.profile(u))
        .filter(|p| has_all(p))
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptyInput("no user carries every candidate characteristic".into()));
    }
    let thresholds = compute_thresholds(eligible.iter().copied(), candidates)?;

    let samples: Vec<(&UserProfile, f64)> = transitions
        .iter()
        .filter_map(|t| {
            dataset
                .profile(&t.user_id)
                .filter(|p| has_all(p))
                .map(|p| (p, t.reward))
        })
        .collect();

    let scores: Vec<(String, f64)> = candidates
        .iter()
        .zip(&thresholds)
        .map(|(c, &t)| {
            let side = |high: bool| {
                mean(
                    samples
                        .iter()
                        .filter(|(p, _)| binarize(p.characteristic(c).unwrap_or(f64::NAN), t) == high)
                        .map(|(_, r)| *r),
                )
            };
            let score = match (side(true), side(false)) {
                (Some(hi), Some(lo)) => (hi - lo).abs(),
                _ => 0.0,
            };
            (c.clone(), score)
        })
        .collect();

    let mut remaining: Vec<usize> = (0..candidates.len()).collect();
    let mut chosen = Vec::new();
    let mut rounds = Vec::new();
    for _ in 0..k {
        let round: Vec<(String, f64)> = remaining.iter().map(|&i| scores[i].clone()).collect();
        let best = pick_best(&round);
        chosen.push(remaining.remove(best));
        rounds.push(round);
    }
    let features = FeatureSet::new(
        FeatureSource::UserCharacteristics,
        chosen.iter().map(|&i| candidates[i].clone()).collect(),
        chosen.iter().map(|&i| thresholds[i]).collect(),
    )?;
    Ok(Selection { features, rounds })
}
