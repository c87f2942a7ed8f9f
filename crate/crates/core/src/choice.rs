//! Multinomial logit with an outside option.
//!
//! A labeller facing candidates `y_1..y_J` plus the option to reject all of
//! them picks the largest of `R(x, y_i) + eps_i`, with i.i.d. standard Gumbel
//! noise and the outside option's normalized reward fixed at zero. The
//! resulting choice probabilities are
//!
//! ```text
//! P(0) = 1 / (1 + sum_j exp(r_j))
//! P(i) = exp(r_i) / (1 + sum_j exp(r_j))
//! ```
//!
//! and the normalized reward is recovered from probabilities as the log-odds
//! against the outside option.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized rewards of the generated candidates. The outside option's
/// reward is implicitly zero and is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("reward vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reward vector"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Number of generated candidates `J`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// Choice probabilities over `J + 1` options; index 0 is the outside option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChoiceDistribution(Vec<f64>);

impl ChoiceDistribution {
    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn outside(&self) -> f64 {
        self.0[0]
    }

    /// Probability of option `i` (0 = outside option).
    pub fn get(&self, i: usize) -> Option<f64> {
        self.0.get(i).copied()
    }

    pub fn num_options(&self) -> usize {
        self.0.len()
    }
}

/// Logit choice probabilities with the outside option anchored at zero.
///
/// Exponentials are shifted by `max(0, max_i r_i)` so rewards of magnitude
/// up to ~700 neither overflow nor underflow to an all-zero denominator.
pub fn choice_probabilities(rewards: &RewardVector) -> ChoiceDistribution {
    let r = rewards.values();
    let shift = r.iter().copied().fold(0.0_f64, f64::max);
    let mut weights = Vec::with_capacity(r.len() + 1);
    weights.push((-shift).exp());
    weights.extend(r.iter().map(|v| (v - shift).exp()));
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    ChoiceDistribution(weights)
}

/// Normalized reward recovered from choice probabilities: `ln p_i - ln p_0`.
pub fn log_odds_reward(p_i: f64, p_0: f64) -> Result<f64> {
    for (name, p) in [("p_i", p_i), ("p_0", p_0)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "{name} must lie in (0, 1), got {p}"
            )));
        }
    }
    Ok(p_i.ln() - p_0.ln())
}

/// Probability that a response with normalized reward `r` is acceptable,
/// `sigma(r) = 1 / (1 + exp(-r))`.
pub fn acceptability_probability(r: f64) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    Ok(sigmoid(r))
}

pub(crate) fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}
