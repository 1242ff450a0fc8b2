//! Similarity-weighted reward prediction.
//!
//! Samples from users who resemble the target user in selected
//! characteristics count more. The distance between two users is the mean
//! range-normalized absolute difference over the configured
//! characteristics, and a kernel turns it into a weight in `[0, 1]`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{FeatureSet, StateId};
use crate::action::Action;
use crate::dataset::{Dataset, TransitionSample, UserProfile, INVOLVEMENT};
use crate::error::{Error, Result};
use crate::evaluation::{loocv_reward_with_plan, CellMeans, EvalResult, FoldPlan, LoocvOptions, Predictor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `(1 - d)^sharpness`
    Linear,
    /// `exp(-sharpness * d)`
    Exponential,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Exponential => "exponential",
        }
    }

    pub fn weight(self, distance: f64, sharpness: f64) -> f64 {
        match self {
            Kernel::Linear => (1.0 - distance).powf(sharpness),
            Kernel::Exponential => (-sharpness * distance).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub id: String,
    pub characteristics: Vec<String>,
    pub kernel: Kernel,
    pub sharpness: f64,
}

impl SimilarityConfig {
    pub fn new(characteristics: Vec<String>, kernel: Kernel, sharpness: f64) -> Result<Self> {
        let id = format!("{}/{}/{}", characteristics.join("+"), kernel.name(), sharpness);
        let config = SimilarityConfig {
            id,
            characteristics,
            kernel,
            sharpness,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.characteristics.is_empty() {
            return Err(Error::InvalidConfig(format!("config `{}` uses no characteristics", self.id)));
        }
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "config `{}` has non-positive sharpness {}",
                self.id, self.sharpness
            )));
        }
        Ok(())
    }

    /// Fails if the config references a characteristic the dataset lacks.
    pub fn check_against(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        for c in &self.characteristics {
            if c != INVOLVEMENT && !dataset.characteristic_names().contains(c) {
                return Err(Error::InvalidConfig(format!(
                    "config `{}` references unknown characteristic `{c}`",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A config with per-characteristic ranges fitted on a population.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    config: SimilarityConfig,
    /// `(min, max - min)` per characteristic.
    ranges: Vec<(f64, f64)>,
}

impl Similarity {
    pub fn fit<'a>(config: &SimilarityConfig, profiles: impl Iterator<Item = &'a UserProfile> + Clone) -> Result<Self> {
        config.validate()?;
        let ranges = config
            .characteristics
            .iter()
            .map(|c| {
                let (lo, hi) = profiles
                    .clone()
                    .filter_map(|p| p.characteristic(c))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                if lo > hi {
                    Err(Error::InvalidConfig(format!("no profile carries `{c}`")))
                } else {
                    Ok((lo, hi - lo))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Similarity {
            config: config.clone(),
            ranges,
        })
    }

    pub fn config(&self) -> &SimilarityConfig {
        &self.config
    }

    /// Mean normalized distance, or `None` if either user lacks a characteristic.
    pub fn distance(&self, a: &UserProfile, b: &UserProfile) -> Option<f64> {
        let mut total = 0.0;
        for (c, &(_, span)) in self.config.characteristics.iter().zip(&self.ranges) {
            let diff = (a.characteristic(c)? - b.characteristic(c)?).abs();
            total += if span > 0.0 { (diff / span).min(1.0) } else { 0.0 };
        }
        Some(total / self.ranges.len() as f64)
    }
}

/// Kernel weight in `[0, 1]`; `None` means one of the users is excluded.
pub fn similarity_weight(target: &UserProfile, other: &UserProfile, similarity: &Similarity) -> Option<f64> {
    similarity
        .distance(target, other)
        .map(|d| similarity.config.kernel.weight(d, similarity.config.sharpness))
}

/// Weighted mean reward of the `(state, action)` samples. `None` when the
/// total weight is zero.
pub fn weighted_reward_predict(
    target: &UserProfile,
    samples: &[(&TransitionSample, &UserProfile)],
    state: StateId,
    action: Action,
    similarity: &Similarity,
) -> Option<f64> {
    let (num, den) = samples
        .iter()
        .filter(|(t, _)| t.state == state && t.action == action)
        .filter_map(|(t, p)| similarity_weight(target, p, similarity).map(|w| (w * t.reward, w)))
        .fold((0.0, 0.0), |(n, d), (wr, w)| (n + wr, d + w));
    (den > 0.0).then(|| num / den)
}

/// Fold-level predictor: weighted cells with an unweighted fallback chain.
pub(crate) struct WeightedPredictor<'a> {
    similarity: Similarity,
    users: Vec<&'a UserProfile>,
    /// `(user index, reward)` per `(state, action)` cell.
    cells: Vec<Vec<(usize, f64)>>,
    fallback: CellMeans,
}

impl<'a> WeightedPredictor<'a> {
    pub fn fit(
        config: &SimilarityConfig,
        dataset: &'a Dataset,
        training: &[TransitionSample],
        n_states: usize,
    ) -> Result<Self> {
        let mut users: Vec<&'a UserProfile> = Vec::new();
        let mut cells = vec![Vec::new(); n_states * Action::COUNT];
        let mut fallback = CellMeans::new(n_states);
        for t in training {
            fallback.add(Some(t.state.index()), t.action, t.reward);
            if users.last().is_none_or(|p| p.user_id != t.user_id) {
                let profile = dataset
                    .profile(&t.user_id)
                    .ok_or_else(|| Error::InvalidDataset(format!("no profile for `{}`", t.user_id)))?;
                users.push(profile);
            }
            cells[t.state.index() * Action::COUNT + t.action.index()].push((users.len() - 1, t.reward));
        }
        let similarity = Similarity::fit(config, users.iter().copied())?;
        Ok(WeightedPredictor {
            similarity,
            users,
            cells,
            fallback,
        })
    }

    /// Weight of every training user for `target`, or `None` when the target
    /// itself lacks a configured characteristic.
    pub fn weights_for(&self, target: &UserProfile) -> Option<Vec<f64>> {
        let probe = self.similarity.config.characteristics.iter();
        if probe.clone().any(|c| target.characteristic(c).is_none()) {
            return None;
        }
        Some(
            self.users
                .iter()
                .map(|u| similarity_weight(target, u, &self.similarity).unwrap_or(0.0))
                .collect(),
        )
    }

    pub fn predict(&self, weights: Option<&[f64]>, state: StateId, action: Action) -> Option<f64> {
        if let Some(weights) = weights {
            let (num, den) = self.cells[state.index() * Action::COUNT + action.index()]
                .iter()
                .fold((0.0, 0.0), |(n, d), &(u, r)| (n + weights[u] * r, d + weights[u]));
            if den > 0.0 {
                return Some(num / den);
            }
        }
        self.fallback.predict(Some(state.index()), action)
    }
}

/// The stand-in search grid: four characteristic sets, both kernels, and
/// sharpness values 0.5 through 8.
pub fn default_grid(pre_triple: &[String], all_triple: &[String], pre_characteristics: &[String]) -> Vec<SimilarityConfig> {
    let mut everything = pre_characteristics.to_vec();
    everything.push(INVOLVEMENT.to_string());
    let sets: [(&str, Vec<String>); 4] = [
        (INVOLVEMENT, vec![INVOLVEMENT.to_string()]),
        ("pre_triple", pre_triple.to_vec()),
        ("all_triple", all_triple.to_vec()),
        ("everything", everything),
    ];
    let mut grid = Vec::new();
    for (label, chars) in sets {
        if chars.is_empty() {
            continue;
        }
        for kernel in [Kernel::Linear, Kernel::Exponential] {
            for sharpness in [0.5, 1.0, 2.0, 4.0, 8.0] {
                grid.push(SimilarityConfig {
                    id: format!("{label}/{}/{sharpness}", kernel.name()),
                    characteristics: chars.clone(),
                    kernel,
                    sharpness,
                });
            }
        }
    }
    grid
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    config: Vec<GridEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    id: Option<String>,
    characteristics: Vec<String>,
    kernel: Kernel,
    sharpness: f64,
}

/// Parses a TOML grid made of `[[config]]` tables.
pub fn parse_grid(text: &str) -> Result<Vec<SimilarityConfig>> {
    let file: GridFile = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
    if file.config.is_empty() {
        return Err(Error::InvalidConfig("similarity grid is empty".into()));
    }
    file.config
        .into_iter()
        .map(|e| {
            let mut c = SimilarityConfig::new(e.characteristics, e.kernel, e.sharpness)?;
            if let Some(id) = e.id {
                c.id = id;
            }
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedConfig {
    pub config: SimilarityConfig,
    pub overall: EvalResult,
}

/// Full cross-validation per config, ranked by overall mean L1 error.
/// Equal errors keep grid order.
pub fn config_search(
    dataset: &Dataset,
    features: &FeatureSet,
    grid: &[SimilarityConfig],
    options: &LoocvOptions,
) -> Result<Vec<RankedConfig>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("similarity grid is empty".into()));
    }
    for c in grid {
        c.check_against(dataset)?;
    }
    let plan = FoldPlan::new(dataset)?;
    let mut ranked = grid
        .par_iter()
        .map(|c| {
            let eval = loocv_reward_with_plan(&plan, &Predictor::SimilarityWeighted(c.clone()), features, options)?;
            Ok(RankedConfig {
                config: c.clone(),
                overall: eval.overall,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.overall.mean.total_cmp(&b.overall.mean));
    Ok(ranked)
}

pub fn ranking_report(ranked: &[RankedConfig]) -> String {
    let mut out = String::from("rank\tconfig\tmean\tci_low\tci_high\tn\n");
    for (i, r) in ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            i + 1,
            r.config.id,
            r.overall.mean,
            r.overall.ci_low,
            r.overall.ci_high,
            r.overall.n
        );
    }
    out
}
