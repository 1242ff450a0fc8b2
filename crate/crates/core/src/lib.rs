//! Tabular reinforcement learning for persuasive coaching data.
//!
//! The pipeline reads per-session questionnaire answers and reported
//! effort, abstracts answers into a small binary state space, estimates a
//! Markov decision process, solves it with value iteration, and evaluates
//! or simulates the resulting policies.
//!
//! ```
//! use persuasion::mdp::{effort_to_reward, value_iteration, IterationLimits, MdpModel, Mode};
//!
//! assert_eq!(effort_to_reward(5.0, 5.0).unwrap(), 0.0);
//!
//! let model = MdpModel::new(1, 1, 0.85, vec![1.0], vec![1.0], vec![1]).unwrap();
//! let vf = value_iteration(&model, Mode::Optimal, IterationLimits::default()).unwrap();
//! assert!((vf.values[0] - 1.0 / 0.15).abs() < 1e-6);
//! ```

pub mod abstraction;
pub mod action;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod mdp;
pub mod pipeline;
pub mod similarity;
pub mod simulation;
pub mod synth;

pub use abstraction::{FeatureSet, FeatureSource, StateId};
pub use action::Action;
pub use dataset::{Dataset, SessionRecord, TransitionSample, UserProfile};
pub use error::{Error, RejectedRow, Result};
pub use mdp::{MdpModel, Mode, Policy, ValueFunctions};
