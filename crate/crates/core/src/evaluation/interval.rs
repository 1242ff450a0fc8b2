//! Credible intervals for a mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Mean with an equal-tailed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Student-t posterior of the mean under the noninformative prior.
    StudentT,
    /// Percentile bootstrap.
    Bootstrap { resamples: usize, seed: u64 },
}

impl Default for CiMethod {
    fn default() -> Self {
        CiMethod::StudentT
    }
}

impl CiMethod {
    pub fn interval(&self, values: &[f64], level: f64) -> Result<Interval> {
        match *self {
            CiMethod::StudentT => bayesian_mean_ci(values, level),
            CiMethod::Bootstrap { resamples, seed } => bootstrap_mean_ci(values, level, resamples, seed),
        }
    }
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Posterior of the mean with unknown variance and the `p(μ, σ) ∝ 1/σ`
/// prior: Student-t with `n - 1` degrees of freedom, location `x̄` and
/// scale `s / √n`.
pub fn bayesian_mean_ci(values: &[f64], level: f64) -> Result<Interval> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues(n));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("credible level {level} is not in (0, 1)")));
    }
    let (mean, sd) = mean_and_sd(values);
    if sd == 0.0 {
        return Ok(Interval {
            mean,
            low: mean,
            high: mean,
        });
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * sd / (n as f64).sqrt();
    Ok(Interval {
        mean,
        low: mean - half,
        high: mean + half,
    })
}

/// Percentile interval of `resamples` bootstrap means.
pub fn bootstrap_mean_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<Interval> {
    let n = values.len();
    if n < 2 {
        return Err(Error::TooFewValues(n));
    }
    if resamples == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one resample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * resamples as f64).floor() as usize).min(resamples - 1)];
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(Interval {
        mean,
        low: at(tail).min(mean),
        high: at(1.0 - tail).max(mean),
    })
}

/// Outcome of comparing two intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalOrder {
    ACrediblyLower,
    BCrediblyLower,
    Overlapping,
}

/// Non-overlapping intervals count as a credible difference. Touching
/// endpoints overlap.
pub fn compare_intervals(a: &Interval, b: &Interval) -> IntervalOrder {
    if a.high < b.low {
        IntervalOrder::ACrediblyLower
    } else if b.high < a.low {
        IntervalOrder::BCrediblyLower
    } else {
        IntervalOrder::Overlapping
    }
}
