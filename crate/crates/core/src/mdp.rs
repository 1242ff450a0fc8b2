//! Reward mapping, tabular model estimation and value iteration.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{TransitionSample, MAX_EFFORT};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.85;
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

/// Row-sum slack accepted when validating a transition tensor.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Maps effort `e` in `0..=10` to a reward in `[-1, 1]`, piecewise linear
/// around the mean effort: efforts below the mean map onto `[-1, 0)`,
/// efforts above it onto `(0, 1]`, and the mean itself to `0`.
pub fn effort_to_reward(effort: f64, mean_effort: f64) -> Result<f64> {
    EffortReward::new(mean_effort)?.reward(effort)
}

/// The reward mapping for a fixed mean effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortReward {
    mean_effort: f64,
}

impl EffortReward {
    pub fn new(mean_effort: f64) -> Result<Self> {
        let max = f64::from(MAX_EFFORT);
        if !(mean_effort > 0.0 && mean_effort < max) {
            return Err(Error::DegenerateMeanEffort(mean_effort));
        }
        Ok(EffortReward { mean_effort })
    }

    pub fn mean_effort(&self) -> f64 {
        self.mean_effort
    }

    pub fn reward(&self, effort: f64) -> Result<f64> {
        let max = f64::from(MAX_EFFORT);
        if !(0.0..=max).contains(&effort) {
            return Err(Error::EffortOutOfRange(effort));
        }
        let m = self.mean_effort;
        Ok(if effort < m {
            -1.0 + effort / m
        } else if effort > m {
            1.0 - (max - effort) / (max - m)
        } else {
            0.0
        })
    }
}

/// Estimated tabular dynamics `⟨S, A, R, T, γ⟩` with per-cell sample support.
///
/// The reward table is `R(s, a)`: the observed reward depends only on the
/// reported effort, so the next-state argument is taken in expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct MdpModel {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// `[s][a][s']`, flattened.
    transitions: Vec<f64>,
    /// `[s][a]`, flattened.
    rewards: Vec<f64>,
    support: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// One row per `(s, a)`, `s`-major.
    transitions: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    support: Vec<Vec<u64>>,
}

impl TryFrom<ModelRepr> for MdpModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.transitions.len() != r.n_states * r.n_actions
            || r.rewards.len() != r.n_states
            || r.support.len() != r.n_states
        {
            return Err(Error::InvalidModel("table dimensions disagree".into()));
        }
        MdpModel::new(
            r.n_states,
            r.n_actions,
            r.gamma,
            r.transitions.concat(),
            r.rewards.concat(),
            r.support.concat(),
        )
    }
}

impl From<MdpModel> for ModelRepr {
    fn from(m: MdpModel) -> Self {
        ModelRepr {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            transitions: m.transitions.chunks(m.n_states).map(<[f64]>::to_vec).collect(),
            rewards: m.rewards.chunks(m.n_actions).map(<[f64]>::to_vec).collect(),
            support: m.support.chunks(m.n_actions).map(<[u64]>::to_vec).collect(),
        }
    }
}

impl MdpModel {
    /// Validates and assembles a model from flat `[s][a][s']`, `[s][a]` and `[s][a]` tables.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        support: Vec<u64>,
    ) -> Result<Self> {
        let model = MdpModel {
            n_states,
            n_actions,
            gamma,
            transitions,
            rewards,
            support,
        };
        model.check_invariants()?;
        Ok(model)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidModel("empty state or action space".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidModel(format!("gamma {} is not in [0, 1)", self.gamma)));
        }
        if self.transitions.len() != ns * na * ns
            || self.rewards.len() != ns * na
            || self.support.len() != ns * na
        {
            return Err(Error::InvalidModel("table dimensions disagree".into()));
        }
        for (i, row) in self.transitions.chunks(ns).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::InvalidModel(format!("row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!("row {i} sums to {sum}")));
            }
        }
        if let Some(r) = self.rewards.iter().find(|r| !(-1.0..=1.0).contains(*r)) {
            return Err(Error::InvalidModel(format!("reward {r} is outside [-1, 1]")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.check_invariants()?;
        Ok(self)
    }

    /// `T[s][a][·]`
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn support(&self, s: usize, a: usize) -> u64 {
        self.support[s * self.n_actions + a]
    }

    /// One Bellman expectation backup: `R(s,a) + γ Σ T(s,a,s') V(s')`.
    pub fn backup(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        let future: f64 = self.row(s, a).iter().zip(values).map(|(p, v)| p * v).sum();
        self.reward(s, a) + self.gamma * future
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Running counts for maximum-likelihood estimation.
#[derive(Debug, Clone)]
pub struct ModelCounts {
    n_states: usize,
    n_actions: usize,
    next: Vec<u64>,
    reward_sum: Vec<f64>,
    support: Vec<u64>,
}

impl ModelCounts {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        ModelCounts {
            n_states,
            n_actions,
            next: vec![0; n_states * n_actions * n_states],
            reward_sum: vec![0.0; n_states * n_actions],
            support: vec![0; n_states * n_actions],
        }
    }

    pub fn add(&mut self, state: usize, action: usize, reward: f64, next_state: usize) -> Result<()> {
        if state >= self.n_states || next_state >= self.n_states || action >= self.n_actions {
            return Err(Error::InvalidModel(format!(
                "sample ({state}, {action}, {next_state}) outside {}x{} model",
                self.n_states, self.n_actions
            )));
        }
        let cell = state * self.n_actions + action;
        self.next[cell * self.n_states + next_state] += 1;
        self.reward_sum[cell] += reward;
        self.support[cell] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.support.iter().sum()
    }

    /// Maximum-likelihood rows for observed cells, uniform rows for unobserved
    /// ones. Unobserved rewards fall back to the action mean, then the overall mean.
    pub fn into_model(self, gamma: f64) -> Result<MdpModel> {
        let (ns, na) = (self.n_states, self.n_actions);
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyInput("no transitions to estimate from".into()));
        }
        let overall = self.reward_sum.iter().sum::<f64>() / total as f64;
        let action_mean: Vec<Option<f64>> = (0..na)
            .map(|a| {
                let (sum, n) = (0..ns).fold((0.0, 0u64), |(sum, n), s| {
                    (sum + self.reward_sum[s * na + a], n + self.support[s * na + a])
                });
                (n > 0).then(|| sum / n as f64)
            })
            .collect();

        let mut transitions = vec![0.0; ns * na * ns];
        let mut rewards = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                let cell = s * na + a;
                let n = self.support[cell];
                let row = &mut transitions[cell * ns..(cell + 1) * ns];
                if n == 0 {
                    row.fill(1.0 / ns as f64);
                    rewards[cell] = action_mean[a].unwrap_or(overall);
                } else {
                    for (p, c) in row.iter_mut().zip(&self.next[cell * ns..(cell + 1) * ns]) {
                        *p = *c as f64 / n as f64;
                    }
                    rewards[cell] = self.reward_sum[cell] / n as f64;
                }
                // means of values in [-1, 1] can drift by an ulp
                rewards[cell] = rewards[cell].clamp(-1.0, 1.0);
            }
        }
        MdpModel::new(ns, na, gamma, transitions, rewards, self.support)
    }
}

pub fn estimate_model(
    transitions: &[TransitionSample],
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<MdpModel> {
    let mut counts = ModelCounts::new(n_states, n_actions);
    for t in transitions {
        counts.add(t.state.index(), t.action.index(), t.reward, t.next_state.index())?;
    }
    counts.into_model(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Maximize the discounted return.
    Optimal,
    /// Minimize it.
    Worst,
}

impl Mode {
    fn pick(self, a: f64, b: f64) -> f64 {
        match self {
            Mode::Optimal => a.max(b),
            Mode::Worst => a.min(b),
        }
    }

    fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Mode::Optimal => candidate > incumbent,
            Mode::Worst => candidate < incumbent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationLimits {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IterationLimits {
    fn default() -> Self {
        IterationLimits {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    pub mode: Mode,
    pub n_actions: usize,
    /// `V(s) = max_a Q(s, a)` (or `min_a` in worst mode).
    pub values: Vec<f64>,
    /// `[s][a]`, flattened.
    pub q: Vec<f64>,
    /// Sup-norm change of the final sweep.
    pub residual: f64,
    pub iterations: usize,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

impl ValueFunctions {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }
}

/// Synchronous value iteration from `V = 0` until the sup-norm change drops
/// below `limits.tolerance`.
pub fn value_iteration(model: &MdpModel, mode: Mode, limits: IterationLimits) -> Result<ValueFunctions> {
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut values = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut history = Vec::new();

    for iteration in 1..=limits.max_iterations {
        for s in 0..ns {
            let mut v = f64::NAN;
            for a in 0..na {
                let qa = model.backup(s, a, &values);
                q[s * na + a] = qa;
                v = if a == 0 { qa } else { mode.pick(v, qa) };
            }
            next[s] = v;
        }
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        history.push(residual);
        std::mem::swap(&mut values, &mut next);
        if residual < limits.tolerance {
            return Ok(ValueFunctions {
                mode,
                n_actions: na,
                values,
                q,
                residual,
                iterations: iteration,
                residual_history: history,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: limits.max_iterations,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// A per-state action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// One action index per state.
    Deterministic(Vec<usize>),
    /// Every action with probability `1 / n_actions`.
    Uniform { n_actions: usize },
}

impl Policy {
    pub fn probability(&self, state: usize, action: usize) -> f64 {
        match self {
            Policy::Deterministic(actions) => {
                if actions[state] == action {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Uniform { n_actions } => 1.0 / *n_actions as f64,
        }
    }

    /// Action of a deterministic policy, `None` for stochastic ones.
    pub fn action(&self, state: usize) -> Option<usize> {
        match self {
            Policy::Deterministic(actions) => actions.get(state).copied(),
            Policy::Uniform { .. } => None,
        }
    }

    /// `(action, probability)` pairs with non-zero probability.
    pub fn distribution(&self, state: usize, n_actions: usize) -> Vec<(usize, f64)> {
        match self {
            Policy::Deterministic(actions) => vec![(actions[state], 1.0)],
            Policy::Uniform { .. } => (0..n_actions).map(|a| (a, self.probability(state, a))).collect(),
        }
    }

    pub fn is_compatible(&self, model: &MdpModel) -> bool {
        match self {
            Policy::Deterministic(actions) => {
                actions.len() == model.n_states() && actions.iter().all(|&a| a < model.n_actions())
            }
            Policy::Uniform { n_actions } => *n_actions == model.n_actions(),
        }
    }
}

/// Greedy policy over `Q`; ties go to the lowest action index.
pub fn extract_policy(vf: &ValueFunctions, mode: Mode) -> Policy {
    let actions = (0..vf.n_states())
        .map(|s| {
            let row = vf.q_row(s);
            let mut best = 0;
            for (a, &qa) in row.iter().enumerate().skip(1) {
                if mode.improves(qa, row[best]) {
                    best = a;
                }
            }
            best
        })
        .collect();
    Policy::Deterministic(actions)
}

pub fn uniform_policy(n_actions: usize) -> Policy {
    Policy::Uniform { n_actions }
}

/// Iterative policy evaluation: `V(s) = Σ_a π(a|s) [R(s,a) + γ Σ T V]`.
pub fn evaluate_policy(model: &MdpModel, policy: &Policy, limits: IterationLimits) -> Result<Vec<f64>> {
    if !policy.is_compatible(model) {
        return Err(Error::InvalidModel("policy does not match model dimensions".into()));
    }
    let ns = model.n_states();
    let mut values = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..limits.max_iterations {
        for (s, v) in next.iter_mut().enumerate() {
            *v = policy
                .distribution(s, model.n_actions())
                .into_iter()
                .map(|(a, p)| p * model.backup(s, a, &values))
                .sum();
        }
        residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        if residual < limits.tolerance {
            return Ok(values);
        }
    }
    Err(Error::NoConvergence {
        iterations: limits.max_iterations,
        residual,
    })
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Optimal => "optimal",
            Mode::Worst => "worst",
        })
    }
}
