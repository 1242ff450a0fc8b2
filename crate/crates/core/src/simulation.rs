//! Population-level propagation of state distributions under a policy.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::{FeatureSet, StateId};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{EffortReward, MdpModel, Policy, ValueFunctions};

/// Slack accepted on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidConfig("distribution entries must be finite and non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidConfig(format!("distribution sums to {total}")));
        }
        Ok(StateDistribution(probabilities))
    }

    pub fn uniform(n_states: usize) -> Self {
        StateDistribution(vec![1.0 / n_states as f64; n_states])
    }

    pub fn point(n_states: usize, state: usize) -> Self {
        let mut p = vec![0.0; n_states];
        p[state] = 1.0;
        StateDistribution(p)
    }

    /// Normalized histogram of `states`.
    pub fn empirical(states: impl IntoIterator<Item = StateId>, n_states: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_states];
        let mut total = 0usize;
        for s in states {
            counts[s.index()] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyInput("empty population".into()));
        }
        Ok(StateDistribution(counts.into_iter().map(|c| c as f64 / total as f64).collect()))
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn n_states(&self) -> usize {
        self.0.len()
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().sum()
    }

    /// One step: `d'(s') = Σ_s d(s) Σ_a π(a|s) T(s, a, s')`.
    pub fn step(&self, policy: &Policy, model: &MdpModel) -> StateDistribution {
        let mut next = vec![0.0; self.0.len()];
        for (s, &mass) in self.0.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (a, p) in policy.distribution(s, model.n_actions()) {
                let w = mass * p;
                for (slot, t) in next.iter_mut().zip(model.row(s, a)) {
                    *slot += w * t;
                }
            }
        }
        StateDistribution(next)
    }

    /// Expected immediate reward `Σ_s d(s) Σ_a π(a|s) R(s, a)`.
    pub fn expected_reward(&self, policy: &Policy, model: &MdpModel) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(s, &mass)| {
                mass * policy
                    .distribution(s, model.n_actions())
                    .into_iter()
                    .map(|(a, p)| p * model.reward(s, a))
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    /// Equal mass in every state.
    Uniform,
    /// States of every session-1 record.
    Session1All,
    /// Session-1 states of users whose first reward is at or below the
    /// nearest-rank 25th percentile of first rewards.
    Session1LowReward,
}

impl Population {
    pub const ALL: [Population; 3] = [Population::Uniform, Population::Session1All, Population::Session1LowReward];

    pub fn name(self) -> &'static str {
        match self {
            Population::Uniform => "uniform",
            Population::Session1All => "session1_all",
            Population::Session1LowReward => "session1_low_reward",
        }
    }
}

/// Nearest-rank percentile of `values` (`p` in `(0, 100]`).
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn initial_distribution(
    dataset: &Dataset,
    features: &FeatureSet,
    reward: &EffortReward,
    population: Population,
) -> Result<StateDistribution> {
    let n_states = features.n_states();
    if population == Population::Uniform {
        return Ok(StateDistribution::uniform(n_states));
    }
    let projector = features.answer_projector(dataset.answer_names())?;
    match population {
        Population::Uniform => unreachable!(),
        Population::Session1All => StateDistribution::empirical(
            dataset
                .sessions()
                .iter()
                .filter(|s| s.session_index == 1)
                .map(|s| projector.project(&s.answers)),
            n_states,
        ),
        Population::Session1LowReward => {
            let firsts = dataset
                .raw_transitions()
                .into_iter()
                .filter(|t| t.from_session == 1)
                .map(|t| Ok((projector.project(&t.answers), reward.reward(f64::from(t.effort))?)))
                .collect::<Result<Vec<_>>>()?;
            let rewards: Vec<f64> = firsts.iter().map(|(_, r)| *r).collect();
            let cut = nearest_rank_percentile(&rewards, 25.0)
                .ok_or_else(|| Error::EmptyInput("no first rewards".into()))?;
            StateDistribution::empirical(firsts.iter().filter(|(_, r)| *r <= cut).map(|(s, _)| *s), n_states)
        }
    }
}

/// Distributions after each step and the mean reward of each transition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: StateDistribution,
    /// `d_1 ..= d_horizon`.
    pub distributions: Vec<StateDistribution>,
    /// Entry `t` is the expected reward of transition `t + 1`, taken from `d_t`.
    pub mean_rewards: Vec<f64>,
}

fn check_dims(d0: &StateDistribution, policy: &Policy, model: &MdpModel, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if d0.n_states() != model.n_states() || !policy.is_compatible(model) {
        return Err(Error::InvalidConfig("distribution, policy and model dimensions disagree".into()));
    }
    Ok(())
}

/// Exact propagation for `horizon` steps.
pub fn simulate(d0: &StateDistribution, policy: &Policy, model: &MdpModel, horizon: usize) -> Result<Trajectory> {
    check_dims(d0, policy, model, horizon)?;
    let mut distributions = Vec::with_capacity(horizon);
    let mut mean_rewards = Vec::with_capacity(horizon);
    let mut current = d0.clone();
    for _ in 0..horizon {
        mean_rewards.push(current.expected_reward(policy, model));
        current = current.step(policy, model);
        distributions.push(current.clone());
    }
    Ok(Trajectory {
        initial: d0.clone(),
        distributions,
        mean_rewards,
    })
}

pub fn evolve(d0: &StateDistribution, policy: &Policy, model: &MdpModel, horizon: usize) -> Result<Vec<StateDistribution>> {
    simulate(d0, policy, model, horizon).map(|t| t.distributions)
}

pub fn reward_trajectory(d0: &StateDistribution, policy: &Policy, model: &MdpModel, horizon: usize) -> Result<Vec<f64>> {
    simulate(d0, policy, model, horizon).map(|t| t.mean_rewards)
}

/// Agent-level sampling of the same process; returns the empirical state
/// distribution after every step.
pub fn monte_carlo(
    d0: &StateDistribution,
    policy: &Policy,
    model: &MdpModel,
    horizon: usize,
    n_agents: usize,
    seed: u64,
) -> Result<Vec<StateDistribution>> {
    check_dims(d0, policy, model, horizon)?;
    if n_agents == 0 {
        return Err(Error::InvalidConfig("need at least one agent".into()));
    }
    let (ns, na) = (model.n_states(), model.n_actions());
    let weighted = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::InvalidModel(e.to_string()));
    let start = weighted(d0.probabilities())?;
    let rows = (0..ns * na)
        .map(|cell| weighted(model.row(cell / na, cell % na)))
        .collect::<Result<Vec<_>>>()?;
    let actions = (0..ns)
        .map(|s| {
            let probs: Vec<f64> = (0..na).map(|a| policy.probability(s, a)).collect();
            weighted(&probs)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents: Vec<usize> = (0..n_agents).map(|_| start.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        for s in agents.iter_mut() {
            let a = actions[*s].sample(&mut rng);
            *s = rows[*s * na + a].sample(&mut rng);
        }
        out.push(StateDistribution::empirical(
            agents.iter().map(|&s| StateId::new(s as u32)),
            ns,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeClass {
    /// Toward a higher-valued state, or staying in the best one.
    Better,
    /// Toward a lower-valued state, or staying in the worst one.
    Worse,
    Same,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub from: StateId,
    pub to: StateId,
    pub action: usize,
    pub probability: f64,
    pub class: EdgeClass,
}

/// Edges `s -> s'` with `T(s, π(s), s') >= threshold`, classified by `V*`.
pub fn transition_graph(
    policy: &Policy,
    model: &MdpModel,
    values: &ValueFunctions,
    threshold: f64,
) -> Result<Vec<Edge>> {
    let Policy::Deterministic(actions) = policy else {
        return Err(Error::InvalidConfig("transition graphs need a deterministic policy".into()));
    };
    if !policy.is_compatible(model) || values.n_states() != model.n_states() {
        return Err(Error::InvalidConfig("policy, model and values dimensions disagree".into()));
    }
    let v = &values.values;
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut edges = Vec::new();
    for (s, &a) in actions.iter().enumerate() {
        for (next, &p) in model.row(s, a).iter().enumerate() {
            if p < threshold {
                continue;
            }
            let class = if v[next] > v[s] || (next == s && v[s] == best) {
                EdgeClass::Better
            } else if v[next] < v[s] || (next == s && v[s] == worst) {
                EdgeClass::Worse
            } else {
                EdgeClass::Same
            };
            edges.push(Edge {
                from: StateId::new(s as u32),
                to: StateId::new(next as u32),
                action: a,
                probability: p,
                class,
            });
        }
    }
    Ok(edges)
}

pub fn graph_report(edges: &[Edge], k: usize) -> String {
    let mut out = String::from("from\tto\taction\tprobability\tclass\n");
    for e in edges {
        let class = match e.class {
            EdgeClass::Better => "better",
            EdgeClass::Worse => "worse",
            EdgeClass::Same => "same",
        };
        let action = crate::action::Action::from_index(e.action).map_or_else(|| e.action.to_string(), |a| a.name().to_string());
        let _ = writeln!(out, "{}\t{}\t{action}\t{:.6}\t{class}", e.from.label(k), e.to.label(k), e.probability);
    }
    out
}

/// One row per step `t = 1..=horizon`, one column per state.
pub fn distribution_report(trajectory: &Trajectory, policy_id: &str, population_id: &str, k: usize) -> String {
    let mut out = String::from("policy\tpopulation\tt");
    for s in 0..trajectory.initial.n_states() {
        let _ = write!(out, "\t{}", StateId::new(s as u32).label(k));
    }
    out.push('\n');
    for (t, d) in (1..).zip(&trajectory.distributions) {
        let _ = write!(out, "{policy_id}\t{population_id}\t{t}");
        for p in d.probabilities() {
            let _ = write!(out, "\t{p:.6}");
        }
        out.push('\n');
    }
    out
}

/// Mean reward per transition, one column per labeled trajectory.
pub fn reward_report(columns: &[(String, &Trajectory)]) -> String {
    let mut out = String::from("t");
    for (label, _) in columns {
        let _ = write!(out, "\t{label}");
    }
    out.push('\n');
    let horizon = columns.iter().map(|(_, t)| t.mean_rewards.len()).max().unwrap_or(0);
    for t in 0..horizon {
        let _ = write!(out, "{}", t + 1);
        for (_, tr) in columns {
            match tr.mean_rewards.get(t) {
                Some(r) => {
                    let _ = write!(out, "\t{r:.6}");
                }
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}
