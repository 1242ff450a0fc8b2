//! Ground-truth MDPs and synthetic corpora with known structure.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::abstraction::StateId;
use crate::action::Action;
use crate::dataset::{Dataset, SessionRecord, SessionSchema, TransitionSample, UserProfile, MAX_EFFORT, MAX_SESSION, N_ANSWERS};
use crate::error::{Error, Result};
use crate::mdp::{extract_policy, value_iteration, IterationLimits, MdpModel, Mode, Policy, DEFAULT_GAMMA};

/// Attempts made to satisfy [`StructureSpec::min_q_gap`].
pub const MAX_ATTEMPTS: usize = 10_000;

/// Reward shift `effect * (2x - 1)` for a user whose characteristic `name` is `x` in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicResponse {
    pub name: String,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructureSpec {
    /// `(bit, gap)`: states with the bit set earn `gap` more reward.
    pub informative_bits: Vec<(usize, f64)>,
    /// Half-width of the uniform per-`(s, a)` reward offset.
    pub base_spread: f64,
    /// Concentration of the Gamma draws behind each transition row.
    pub dirichlet_alpha: f64,
    /// Required gap between the best and second-best action in every state.
    pub min_q_gap: Option<f64>,
    pub characteristic_response: Option<CharacteristicResponse>,
    /// Number of synthetic pre-characteristics `c01, c02, ...`.
    pub n_characteristics: usize,
    /// Probability that a user's involvement score is present.
    pub involvement_coverage: f64,
    /// Half-width of the uniform noise added to sampled rewards.
    pub reward_noise: f64,
    pub gamma: f64,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec {
            informative_bits: Vec::new(),
            base_spread: 0.2,
            dirichlet_alpha: 1.0,
            min_q_gap: None,
            characteristic_response: None,
            n_characteristics: 4,
            involvement_coverage: 1.0,
            reward_noise: 0.2,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl StructureSpec {
    fn validate(&self, n_state_bits: usize, n_actions: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if n_state_bits == 0 || n_state_bits > N_ANSWERS {
            return bad(format!("state bits must be in 1..={N_ANSWERS}, got {n_state_bits}"));
        }
        if n_actions == 0 {
            return bad("need at least one action".into());
        }
        let mut seen = vec![false; n_state_bits];
        for &(bit, gap) in &self.informative_bits {
            if bit >= n_state_bits || std::mem::replace(&mut seen[bit], true) {
                return bad(format!("informative bit {bit} is out of range or repeated"));
            }
            if !(-2.0..=2.0).contains(&gap) {
                return bad(format!("gap {gap} on bit {bit} is outside [-2, 2]"));
            }
        }
        let shift: f64 = self.informative_bits.iter().map(|(_, g)| g.abs() / 2.0).sum();
        if !(self.base_spread >= 0.0) || shift + self.base_spread > 1.0 {
            return bad("gaps and base spread push rewards outside [-1, 1]".into());
        }
        if !(self.dirichlet_alpha > 0.0) {
            return bad("dirichlet_alpha must be positive".into());
        }
        if self.min_q_gap.is_some_and(|g| !(g >= 0.0)) {
            return bad("min_q_gap must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.involvement_coverage) || !(self.reward_noise >= 0.0) {
            return bad("involvement_coverage must be in [0, 1] and reward_noise non-negative".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} is not in [0, 1)", self.gamma));
        }
        if let Some(resp) = &self.characteristic_response {
            let known = (1..=self.n_characteristics).any(|i| characteristic_name(i) == resp.name);
            if !known || !(-1.0..=1.0).contains(&resp.effect) {
                return bad(format!("characteristic response on `{}` is not usable", resp.name));
            }
        }
        Ok(())
    }
}

pub fn characteristic_name(i: usize) -> String {
    format!("c{i:02}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: MdpModel,
    pub n_state_bits: usize,
    pub spec: StructureSpec,
    pub seed: u64,
}

impl GroundTruth {
    pub fn informative_bits(&self) -> Vec<usize> {
        self.spec.informative_bits.iter().filter(|(_, g)| *g != 0.0).map(|(b, _)| *b).collect()
    }

    pub fn optimal_policy(&self) -> Result<Policy> {
        let vf = value_iteration(&self.model, Mode::Optimal, IterationLimits::default())?;
        Ok(extract_policy(&vf, Mode::Optimal))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }
}

fn draw_model(n_state_bits: usize, n_actions: usize, spec: &StructureSpec, rng: &mut ChaCha8Rng) -> Result<MdpModel> {
    let ns = 1usize << n_state_bits;
    let gamma_dist = Gamma::new(spec.dirichlet_alpha, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut transitions = Vec::with_capacity(ns * n_actions * ns);
    let mut rewards = Vec::with_capacity(ns * n_actions);
    for s in 0..ns {
        let state = StateId::new(s as u32);
        let shift: f64 = spec
            .informative_bits
            .iter()
            .map(|&(bit, gap)| gap * (f64::from(u8::from(state.bit(bit, n_state_bits))) - 0.5))
            .sum();
        for _ in 0..n_actions {
            let offset = if spec.base_spread > 0.0 {
                rng.random_range(-spec.base_spread..=spec.base_spread)
            } else {
                0.0
            };
            rewards.push((shift + offset).clamp(-1.0, 1.0));
            let mut row: Vec<f64> = (0..ns).map(|_| gamma_dist.sample(rng).max(f64::MIN_POSITIVE)).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            transitions.extend(row);
        }
    }
    MdpModel::new(ns, n_actions, spec.gamma, transitions, rewards, vec![0; ns * n_actions])
}

fn min_action_gap(model: &MdpModel) -> Result<f64> {
    let vf = value_iteration(model, Mode::Optimal, IterationLimits::default())?;
    Ok((0..model.n_states())
        .map(|s| {
            let mut q = vf.q_row(s).to_vec();
            q.sort_by(|a, b| b.total_cmp(a));
            if q.len() > 1 {
                q[0] - q[1]
            } else {
                f64::INFINITY
            }
        })
        .fold(f64::INFINITY, f64::min))
}

/// Draws a model whose rewards carry the declared per-bit gaps. With
/// `min_q_gap`, models are redrawn until every state has a clear best action.
pub fn generate_mdp(n_state_bits: usize, n_actions: usize, spec: &StructureSpec, seed: u64) -> Result<GroundTruth> {
    spec.validate(n_state_bits, n_actions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let model = draw_model(n_state_bits, n_actions, spec, &mut rng)?;
        if let Some(gap) = spec.min_q_gap {
            if min_action_gap(&model)? < gap {
                continue;
            }
        }
        return Ok(GroundTruth {
            model,
            n_state_bits,
            spec: spec.clone(),
            seed,
        });
    }
    Err(Error::InvalidConfig(format!(
        "no model with minimum Q-gap {:?} after {MAX_ATTEMPTS} draws",
        spec.min_q_gap
    )))
}

/// Reward noise that keeps `mean + noise` inside `[-1, 1]` without clamping,
/// so the sample mean stays unbiased.
fn noisy_reward(mean: f64, half_width: f64, rng: &mut impl Rng) -> f64 {
    let w = half_width.min(1.0 - mean.abs());
    if w > 0.0 {
        mean + rng.random_range(-w..=w)
    } else {
        mean
    }
}

fn samplers(model: &MdpModel) -> Vec<WeightedIndex<f64>> {
    let (ns, na) = (model.n_states(), model.n_actions());
    (0..ns * na)
        .map(|cell| WeightedIndex::new(model.row(cell / na, cell % na)).expect("model rows are distributions"))
        .collect()
}

/// `n` independent samples with uniformly drawn state and action.
pub fn sample_transitions(gt: &GroundTruth, n: usize, seed: u64) -> Result<Vec<TransitionSample>> {
    let model = &gt.model;
    let (ns, na) = (model.n_states(), model.n_actions());
    if na > Action::COUNT {
        return Err(Error::InvalidConfig(format!("{na} actions exceed the {} known actions", Action::COUNT)));
    }
    let rows = samplers(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let s = rng.random_range(0..ns);
            let a = rng.random_range(0..na);
            TransitionSample {
                user_id: "synthetic".into(),
                state: StateId::new(s as u32),
                action: Action::from_index(a).expect("checked above"),
                reward: noisy_reward(model.reward(s, a), gt.spec.reward_noise, &mut rng),
                next_state: StateId::new(rows[s * na + a].sample(&mut rng) as u32),
            }
        })
        .collect())
}

/// Effort whose reward is close to `reward` under a mean effort of 5.
pub fn reward_to_effort(reward: f64) -> u8 {
    (5.0 * (1.0 + reward)).round().clamp(0.0, f64::from(MAX_EFFORT)) as u8
}

/// Answers consistent with `state`: a set bit becomes 5 and a clear bit 1 on
/// the leading items; the remaining items are uniform noise.
fn synth_answers(state: StateId, n_state_bits: usize, rng: &mut impl Rng) -> [u8; N_ANSWERS] {
    std::array::from_fn(|j| {
        if j < n_state_bits {
            if state.bit(j, n_state_bits) {
                5
            } else {
                1
            }
        } else {
            rng.random_range(1..=5)
        }
    })
}

/// Session trajectories under uniformly random actions.
pub fn sample_dataset(gt: &GroundTruth, n_users: usize, sessions_per_user: u8, seed: u64) -> Result<Dataset> {
    if n_users == 0 {
        return Err(Error::InvalidConfig("need at least one user".into()));
    }
    if !(1..=MAX_SESSION).contains(&sessions_per_user) {
        return Err(Error::InvalidConfig(format!("sessions per user must be in 1..={MAX_SESSION}")));
    }
    let model = &gt.model;
    let (ns, na) = (model.n_states(), model.n_actions());
    if na > Action::COUNT {
        return Err(Error::InvalidConfig(format!("{na} actions exceed the {} known actions", Action::COUNT)));
    }
    let spec = &gt.spec;
    let char_names: Vec<String> = (1..=spec.n_characteristics).map(characteristic_name).collect();
    let rows = samplers(model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n_users.to_string().len();
    let mut sessions = Vec::with_capacity(n_users * usize::from(sessions_per_user));
    let mut profiles = Vec::with_capacity(n_users);

    for u in 0..n_users {
        let user_id = format!("u{u:0width$}");
        let characteristics: BTreeMap<String, f64> =
            char_names.iter().map(|n| (n.clone(), rng.random::<f64>())).collect();
        let involvement = rng.random_bool(spec.involvement_coverage).then(|| rng.random::<f64>());
        let shift = spec
            .characteristic_response
            .as_ref()
            .map_or(0.0, |r| r.effect * (2.0 * characteristics[&r.name] - 1.0));

        let mut state = rng.random_range(0..ns);
        let mut effort = None;
        for session in 1..=sessions_per_user {
            let answers = synth_answers(StateId::new(state as u32), gt.n_state_bits, &mut rng);
            let action = (session < sessions_per_user).then(|| rng.random_range(0..na));
            sessions.push(SessionRecord {
                user_id: user_id.clone(),
                session_index: session,
                answers,
                action: action.map(|a| Action::from_index(a).expect("checked above")),
                effort,
            });
            if let Some(a) = action {
                let mean = (model.reward(state, a) + shift).clamp(-1.0, 1.0);
                effort = Some(reward_to_effort(noisy_reward(mean, spec.reward_noise, &mut rng)));
                state = rows[state * na + a].sample(&mut rng);
            }
        }
        profiles.push(UserProfile {
            user_id,
            characteristics,
            involvement,
        });
    }
    Dataset::new(SessionSchema::default().answers, sessions, char_names, profiles)
}

/// Writes `sessions.csv` and `profiles.csv` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sessions = dir.join("sessions.csv");
    let profiles = dir.join("profiles.csv");
    dataset.write_sessions(File::create(&sessions).map_err(|e| Error::io(&sessions, e))?, &SessionSchema::default())?;
    dataset.write_profiles(File::create(&profiles).map_err(|e| Error::io(&profiles, e))?)
}
