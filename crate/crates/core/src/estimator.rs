//! Maximum-likelihood fitting of a linear reward model on choice data.
//!
//! The model is `R(x, y) = w . f(y) + b` over response features. The
//! per-observation log-likelihood is
//!
//! ```text
//! log P(d | x, Y) = R(x, y_d) - ln(1 + sum_j exp R(x, y_j))
//! ```
//!
//! with `R(x, y_0) = 0` for the outside option. The objective is concave in
//! `(w, b)`, so plain gradient ascent from zero reaches the global optimum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::seed;
use crate::world::{ChoiceObservation, SyntheticPrompt, SyntheticResponse};

/// Scores a response for a prompt. Implemented by the fitted linear model
/// and by the ground-truth oracles used in analysis.
pub trait RewardModel: Sync {
    fn score(&self, prompt: &SyntheticPrompt, response: &SyntheticResponse) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RewardModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Parameters as one vector, bias last.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_slice(theta: &[f64]) -> Self {
        let (w, b) = theta.split_at(theta.len() - 1);
        Self {
            weights: w.to_vec(),
            bias: b[0],
        }
    }

    fn eval(&self, features: &[f64]) -> f64 {
        dot(&self.weights, features) + self.bias
    }
}

impl RewardModel for RewardModelParams {
    fn score(&self, _prompt: &SyntheticPrompt, response: &SyntheticResponse) -> f64 {
        assert_eq!(
            response.features.len(),
            self.weights.len(),
            "reward model dimension mismatch"
        );
        self.eval(&response.features)
    }
}

/// `R(x, y) = w . f(y) + b`.
pub fn predict_reward(
    params: &RewardModelParams,
    _prompt: &SyntheticPrompt,
    response: &SyntheticResponse,
) -> Result<f64> {
    check_dim(params.dim(), response.features.len())?;
    Ok(params.eval(&response.features))
}

/// Scores with the ground-truth normalized reward.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReward;

impl RewardModel for OracleReward {
    fn score(&self, _prompt: &SyntheticPrompt, response: &SyntheticResponse) -> f64 {
        response.true_normalized_reward
    }
}

/// Ground truth plus Gaussian noise with standard deviation `noise_std`.
///
/// The noise is a deterministic function of the response (its feature bits)
/// and `seed`, so scoring the same response twice gives the same value.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracleReward {
    pub noise_std: f64,
    pub seed: u64,
}

impl RewardModel for NoisyOracleReward {
    fn score(&self, _prompt: &SyntheticPrompt, response: &SyntheticResponse) -> f64 {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut key: Vec<u64> = response.features.iter().map(|f| f.to_bits()).collect();
        key.push(response.true_utility.to_bits());
        let mut rng = seed::stream_rng(self.seed ^ seed::tag::REWARD_NOISE, &key);
        let z: f64 = rng.sample(StandardNormal);
        response.true_normalized_reward + self.noise_std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Step on the per-observation (mean) log-likelihood.
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop when the norm of the mean gradient falls to this value.
    pub gradient_tolerance: f64,
    pub l2_penalty: f64,
    /// Halve the step whenever a step would lower the likelihood.
    pub backtracking: bool,
    /// Echoed into outputs; full-batch ascent draws no randomness.
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            max_iterations: 20_000,
            gradient_tolerance: 1e-6,
            l2_penalty: 0.0,
            backtracking: true,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument("step_size must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be positive".into(),
            ));
        }
        if self.gradient_tolerance.is_nan() || self.gradient_tolerance <= 0.0 {
            return Err(Error::InvalidArgument(
                "gradient_tolerance must be positive".into(),
            ));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidArgument(
                "l2_penalty must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: RewardModelParams,
    pub initial_log_likelihood: f64,
    pub final_log_likelihood: f64,
    pub iterations_used: usize,
    pub converged: bool,
    /// Norm of the gradient of the mean objective at `params`.
    pub gradient_norm: f64,
    /// Total (penalized) log-likelihood after each accepted iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Per-observation log-probability of the recorded choice.
pub fn observation_log_prob(params: &RewardModelParams, obs: &ChoiceObservation) -> Result<f64> {
    obs.validate()?;
    for c in &obs.candidates {
        check_dim(params.dim(), c.features.len())?;
    }
    let rewards: Vec<f64> = obs
        .candidates
        .iter()
        .map(|c| params.eval(&c.features))
        .collect();
    Ok(log_prob_from_rewards(&rewards, obs.chosen))
}

fn log_prob_from_rewards(rewards: &[f64], chosen: usize) -> f64 {
    let shift = rewards.iter().copied().fold(0.0_f64, f64::max);
    let tail: f64 = rewards.iter().map(|r| (r - shift).exp()).sum();
    let log_denominator = shift + ((-shift).exp() + tail).ln();
    let chosen_reward = if chosen == 0 {
        0.0
    } else {
        rewards[chosen - 1]
    };
    chosen_reward - log_denominator
}

/// Flattened dataset: candidate features stored contiguously.
struct Design {
    dim: usize,
    features: Vec<f64>,
    offsets: Vec<usize>,
    chosen: Vec<usize>,
}

const CHUNK: usize = 2048;

impl Design {
    fn new(dataset: &[ChoiceObservation]) -> Result<Self> {
        let first = dataset.first().ok_or(Error::Empty("dataset"))?;
        first.validate()?;
        let dim = first.candidates[0].features.len();
        let mut features = Vec::new();
        let mut offsets = vec![0];
        let mut chosen = Vec::with_capacity(dataset.len());
        for obs in dataset {
            obs.validate()?;
            for c in &obs.candidates {
                check_dim(dim, c.features.len())?;
                features.extend_from_slice(&c.features);
            }
            offsets.push(offsets.last().unwrap() + obs.candidates.len());
            chosen.push(obs.chosen);
        }
        Ok(Self {
            dim,
            features,
            offsets,
            chosen,
        })
    }

    fn len(&self) -> usize {
        self.chosen.len()
    }

    fn candidate(&self, row: usize) -> &[f64] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    /// Unpenalized log-likelihood and, optionally, its gradient in
    /// `[w.., b]` order. Chunks are fixed-size and merged in order, so the
    /// result does not depend on the thread count.
    fn evaluate(&self, params: &RewardModelParams, want_grad: bool) -> (f64, Vec<f64>) {
        let p = self.dim + 1;
        let partials: Vec<(CompensatedSum, Vec<CompensatedSum>)> = (0..self.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut ll = CompensatedSum::new();
                let mut grad = vec![CompensatedSum::new(); if want_grad { p } else { 0 }];
                let mut rewards = Vec::new();
                let mut local = vec![0.0; p];
                for &k in chunk {
                    let rows = self.offsets[k]..self.offsets[k + 1];
                    rewards.clear();
                    rewards.extend(rows.clone().map(|r| params.eval(self.candidate(r))));
                    let chosen = self.chosen[k];
                    ll.add(log_prob_from_rewards(&rewards, chosen));
                    if !want_grad {
                        continue;
                    }
                    // d/dtheta = f_chosen - sum_j P(j) f_j (outside option has f = 0).
                    let shift = rewards.iter().copied().fold(0.0_f64, f64::max);
                    let outside = (-shift).exp();
                    let exps: Vec<f64> = rewards.iter().map(|r| (r - shift).exp()).collect();
                    let z = outside + exps.iter().sum::<f64>();
                    local.iter_mut().for_each(|v| *v = 0.0);
                    if chosen > 0 {
                        let f = self.candidate(rows.start + chosen - 1);
                        local[..self.dim].copy_from_slice(f);
                        local[self.dim] = 1.0;
                    }
                    for (j, e) in exps.iter().enumerate() {
                        let prob = e / z;
                        let f = self.candidate(rows.start + j);
                        for (l, fv) in local[..self.dim].iter_mut().zip(f) {
                            *l -= prob * fv;
                        }
                        local[self.dim] -= prob;
                    }
                    for (g, l) in grad.iter_mut().zip(&local) {
                        g.add(*l);
                    }
                }
                (ll, grad)
            })
            .collect();

        let mut ll = CompensatedSum::new();
        let mut grad = vec![CompensatedSum::new(); if want_grad { p } else { 0 }];
        for (l, g) in &partials {
            ll.merge(l);
            for (a, b) in grad.iter_mut().zip(g) {
                a.merge(b);
            }
        }
        (ll.value(), grad.iter().map(CompensatedSum::value).collect())
    }
}

fn penalty(params: &RewardModelParams, l2: f64) -> f64 {
    l2 * params.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Sum of per-observation log-probabilities minus `l2 * |w|^2`.
pub fn total_log_likelihood(
    params: &RewardModelParams,
    dataset: &[ChoiceObservation],
    l2_penalty: f64,
) -> Result<f64> {
    let design = Design::new(dataset)?;
    check_dim(design.dim, params.dim())?;
    Ok(design.evaluate(params, false).0 - penalty(params, l2_penalty))
}

/// Analytic gradient of [`total_log_likelihood`] in `[w.., b]` order.
pub fn log_likelihood_gradient(
    params: &RewardModelParams,
    dataset: &[ChoiceObservation],
    l2_penalty: f64,
) -> Result<Vec<f64>> {
    let design = Design::new(dataset)?;
    check_dim(design.dim, params.dim())?;
    let mut grad = design.evaluate(params, true).1;
    for (g, w) in grad.iter_mut().zip(&params.weights) {
        *g -= 2.0 * l2_penalty * w;
    }
    Ok(grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-batch gradient ascent from `theta = 0`.
///
/// Steps are taken on the mean objective so `step_size` does not depend on
/// dataset size. With backtracking on, a step that lowers the likelihood is
/// halved (persistently) until it does not, so the trace is monotone.
pub fn fit_mle(dataset: &[ChoiceObservation], config: &TrainingConfig) -> Result<FitResult> {
    config.validate()?;
    let design = Design::new(dataset)?;
    let n = design.len() as f64;
    let l2 = config.l2_penalty;

    let objective = |params: &RewardModelParams, want_grad: bool| {
        let (ll, mut grad) = design.evaluate(params, want_grad);
        for (g, w) in grad.iter_mut().zip(&params.weights) {
            *g -= 2.0 * l2 * w;
        }
        (ll - penalty(params, l2), grad)
    };

    let mut params = RewardModelParams::zeros(design.dim);
    let (mut value, mut grad) = objective(&params, true);
    let initial = value;
    let mut grad_norm = norm(&grad) / n;
    let mut step = config.step_size;
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < config.max_iterations && grad_norm > config.gradient_tolerance {
        iterations += 1;
        let current = params.to_vec();
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = current
                .iter()
                .zip(&grad)
                .map(|(t, g)| t + step * g / n)
                .collect();
            let candidate = RewardModelParams::from_slice(&trial);
            let (trial_value, trial_grad) = objective(&candidate, true);
            if !trial_value.is_finite() && !config.backtracking {
                return Err(Error::Diverged {
                    iteration: iterations,
                });
            }
            let worse = !trial_value.is_finite() || trial_value < value;
            if config.backtracking && worse && halvings < 60 {
                step *= 0.5;
                halvings += 1;
                continue;
            }
            if !trial_value.is_finite() {
                return Err(Error::Diverged {
                    iteration: iterations,
                });
            }
            params = candidate;
            value = trial_value;
            grad = trial_grad;
            break;
        }
        grad_norm = norm(&grad) / n;
        history.push(value);
        if halvings == 60 {
            // No representable step improves the objective.
            break;
        }
    }

    Ok(FitResult {
        params,
        initial_log_likelihood: initial,
        final_log_likelihood: value,
        iterations_used: iterations,
        converged: grad_norm <= config.gradient_tolerance,
        gradient_norm: grad_norm,
        history,
    })
}
