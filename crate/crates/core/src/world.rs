//! Synthetic generator, ground truth and labeller.
//!
//! Stands in for a language model, a ground-truth scorer and human
//! labellers. Each prompt carries a rejection threshold `C(x)`; each response
//! has a linear ground-truth utility over its features plus bounded noise,
//! and its normalized reward is `utility - C(x)`.
//!
//! Response features are `[q_1, .., q_{d_y-1}, c]`: `q` are response-quality
//! coordinates whose mean depends on the prompt, and `c` is the prompt's
//! rejection threshold as exposed to the reward model. A reward model sees
//! prompt and response jointly, so a linear head over these features is
//! well specified for the normalized reward.

use rand::distr::{Open01, Uniform};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::RewardVector;
use crate::error::{Error, Result};
use crate::seed::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPrompt {
    pub id: u64,
    pub features: Vec<f64>,
    /// Ground-truth utility of the outside option, `C(x)`.
    pub rejection_threshold: f64,
    /// `None` for prompts read back from a dataset file.
    pub difficulty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticResponse {
    pub features: Vec<f64>,
    pub true_utility: f64,
    pub true_normalized_reward: f64,
}

impl SyntheticResponse {
    /// Builds a response, deriving the normalized reward from the prompt.
    pub fn new(prompt: &SyntheticPrompt, features: Vec<f64>, true_utility: f64) -> Self {
        Self {
            features,
            true_utility,
            true_normalized_reward: true_utility - prompt.rejection_threshold,
        }
    }

    pub fn is_acceptable(&self) -> bool {
        self.true_normalized_reward > 0.0
    }
}

/// One labelled choice: a prompt, its candidate set, and the chosen index
/// (0 = outside option, `i` = candidate `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation {
    pub prompt: SyntheticPrompt,
    pub candidates: Vec<SyntheticResponse>,
    pub chosen: usize,
}

impl ChoiceObservation {
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        if self.chosen > self.candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "chosen index {} out of range for {} candidates",
                self.chosen,
                self.candidates.len()
            )));
        }
        let d = self.candidates[0].features.len();
        if let Some(c) = self.candidates.iter().find(|c| c.features.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: c.features.len(),
            });
        }
        Ok(())
    }

    pub fn true_rewards(&self) -> RewardVector {
        RewardVector::new(
            self.candidates
                .iter()
                .map(|c| c.true_normalized_reward)
                .collect(),
        )
        .expect("observation rewards are finite and non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub d_x: usize,
    pub d_y: usize,
    /// Ground-truth utility weights, one per response feature. The last
    /// entry weights the threshold coordinate and must be below 1.
    pub true_weights: Vec<f64>,
    /// Inclusive `[low, high]` difficulty interval. Target acceptance
    /// probability is `sigmoid(-difficulty)`.
    pub difficulty_range: [f64; 2],
    /// Candidates per labelled prompt, `J`.
    pub candidates_per_prompt: usize,
    pub rng_seed: u64,
    /// Half-width of the uniform noise added to every utility.
    pub noise_amplitude: f64,
    /// Strength of the prompt-to-response-mean coupling.
    pub prompt_loading: f64,
    /// Responses drawn per prompt when calibrating `C(x)`.
    pub calibration_samples: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            d_x: 4,
            d_y: 6,
            true_weights: vec![0.6, -0.4, 0.5, 0.3, -0.35, 0.0],
            difficulty_range: [-4.0, 5.5],
            candidates_per_prompt: 2,
            rng_seed: 20_251_018,
            noise_amplitude: 0.5,
            prompt_loading: 0.5,
            calibration_samples: 10_000,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d_x == 0 {
            return bad("d_x must be at least 1".into());
        }
        if self.d_y < 2 {
            return bad("d_y must be at least 2 (quality features plus threshold)".into());
        }
        if self.true_weights.len() != self.d_y {
            return Err(Error::DimensionMismatch {
                expected: self.d_y,
                actual: self.true_weights.len(),
            });
        }
        if self.true_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("true_weights"));
        }
        if self.true_weights[self.d_y - 1] >= 1.0 {
            return bad("threshold-coordinate weight must be < 1".into());
        }
        let [lo, hi] = self.difficulty_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("difficulty_range [{lo}, {hi}] is not an interval"));
        }
        if self.candidates_per_prompt == 0 {
            return bad("candidates_per_prompt must be at least 1".into());
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return bad("noise_amplitude must be finite and non-negative".into());
        }
        if !self.prompt_loading.is_finite() {
            return Err(Error::NonFinite("prompt_loading"));
        }
        if self.calibration_samples == 0 {
            return bad("calibration_samples must be at least 1".into());
        }
        Ok(())
    }
}

/// Target per-response acceptance probability for a difficulty level.
pub fn target_acceptance(difficulty: f64) -> f64 {
    crate::choice::sigmoid(-difficulty)
}

/// Standard Gumbel via inverse CDF of a uniform on the open interval.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    gumbel_from_uniform(u)
}

/// Gumbel-max labeller: argmax of `r_i + eps_i` over the outside option
/// (reward 0) and every candidate. Ties go to the lowest index.
pub fn simulate_labeller_choice<R: Rng + ?Sized>(rewards: &RewardVector, rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_value = sample_gumbel(rng);
    for (i, r) in rewards.values().iter().enumerate() {
        let v = r + sample_gumbel(rng);
        if v > best_value {
            best = i + 1;
            best_value = v;
        }
    }
    best
}

/// Anything that can draw responses for a prompt.
pub trait ResponsePolicy: Sync {
    fn generate(&self, prompt: &SyntheticPrompt, rng: &mut StreamRng) -> SyntheticResponse;

    fn generate_many(
        &self,
        prompt: &SyntheticPrompt,
        count: usize,
        rng: &mut StreamRng,
    ) -> Vec<SyntheticResponse> {
        (0..count).map(|_| self.generate(prompt, rng)).collect()
    }
}

/// A configured synthetic world.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: WorldConfig,
    /// `(d_y - 1) x d_x` coupling of prompt features into response means.
    loading: Vec<Vec<f64>>,
    noise: Option<Uniform<f64>>,
}

impl SyntheticWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let scale = config.prompt_loading / (config.d_x as f64).sqrt();
        let loading = (0..config.d_y - 1)
            .map(|k| {
                (0..config.d_x)
                    .map(|j| scale * (1.0 + (k * config.d_x + j) as f64).sin())
                    .collect()
            })
            .collect();
        let a = config.noise_amplitude;
        let noise = (a > 0.0).then(|| Uniform::new_inclusive(-a, a).expect("valid noise bounds"));
        Ok(Self {
            config,
            loading,
            noise,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn quality_dims(&self) -> usize {
        self.config.d_y - 1
    }

    fn quality_weights(&self) -> &[f64] {
        &self.config.true_weights[..self.quality_dims()]
    }

    fn threshold_weight(&self) -> f64 {
        self.config.true_weights[self.quality_dims()]
    }

    fn quality_mean(&self, prompt_features: &[f64]) -> Vec<f64> {
        self.loading
            .iter()
            .map(|row| row.iter().zip(prompt_features).map(|(a, x)| a * x).sum())
            .collect()
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.noise.map_or(0.0, |u| rng.sample(u))
    }

    /// Draws a prompt at the given difficulty and calibrates `C(x)` so that
    /// a fraction `sigmoid(-difficulty)` of its responses is acceptable.
    ///
    /// Calibration samples the scalar quality part of the utility,
    /// `w_q . q + noise`, which has the same law as for full responses.
    pub fn generate_prompt<R: Rng + ?Sized>(
        &self,
        id: u64,
        difficulty: f64,
        rng: &mut R,
    ) -> SyntheticPrompt {
        let features: Vec<f64> = (0..self.config.d_x)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mean = self.quality_mean(&features);
        let wq = self.quality_weights();
        let centre: f64 = wq.iter().zip(&mean).map(|(w, m)| w * m).sum();
        let spread = wq.iter().map(|w| w * w).sum::<f64>().sqrt();

        let m = self.config.calibration_samples;
        let mut samples: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                centre + spread * z + self.noise(rng)
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        let p_g = target_acceptance(difficulty);
        // Bar at the empirical (1 - p_g) quantile: a fraction p_g lies above.
        let rank = ((1.0 - p_g) * m as f64).ceil() as usize;
        let bar = samples[rank.clamp(1, m) - 1];
        let rejection_threshold = bar / (1.0 - self.threshold_weight());

        SyntheticPrompt {
            id,
            features,
            rejection_threshold,
            difficulty: Some(difficulty),
        }
    }

    pub fn generate_response<R: Rng + ?Sized>(
        &self,
        prompt: &SyntheticPrompt,
        rng: &mut R,
    ) -> SyntheticResponse {
        let mean = self.quality_mean(&prompt.features);
        let mut features: Vec<f64> = mean
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        features.push(prompt.rejection_threshold);
        let utility = features
            .iter()
            .zip(&self.config.true_weights)
            .map(|(f, w)| f * w)
            .sum::<f64>()
            + self.noise(rng);
        SyntheticResponse::new(prompt, features, utility)
    }

    pub fn generate_responses<R: Rng + ?Sized>(
        &self,
        prompt: &SyntheticPrompt,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<SyntheticResponse>> {
        if count == 0 {
            return Err(Error::InvalidArgument(
                "response count must be at least 1".into(),
            ));
        }
        Ok((0..count)
            .map(|_| self.generate_response(prompt, rng))
            .collect())
    }

    /// Random stream for prompt `id` within stage `tag`.
    pub fn prompt_rng(&self, tag: u64, id: u64) -> StreamRng {
        seed::stream_rng(self.config.rng_seed, &[tag, id])
    }

    /// Prompt `id` of stage `tag`, with difficulty uniform over the range.
    pub fn sample_prompt(&self, tag: u64, id: u64) -> SyntheticPrompt {
        let mut rng = self.prompt_rng(tag, id);
        self.sample_prompt_with(id, &mut rng)
    }

    fn sample_prompt_with<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> SyntheticPrompt {
        let [lo, hi] = self.config.difficulty_range;
        let difficulty = if lo == hi {
            lo
        } else {
            rng.sample(Uniform::new_inclusive(lo, hi).expect("valid difficulty range"))
        };
        self.generate_prompt(id, difficulty, rng)
    }

    /// Prompts with ids `0..count` of stage `tag`.
    pub fn sample_prompts(&self, tag: u64, count: usize) -> Vec<SyntheticPrompt> {
        (0..count as u64)
            .into_par_iter()
            .map(|id| self.sample_prompt(tag, id))
            .collect()
    }

    /// Labelled dataset: one prompt, `J` candidates and one simulated choice
    /// per observation. Each prompt uses its own derived stream.
    pub fn build_choice_dataset(
        &self,
        tag: u64,
        num_prompts: usize,
    ) -> Result<Vec<ChoiceObservation>> {
        if num_prompts == 0 {
            return Err(Error::InvalidArgument(
                "num_prompts must be at least 1".into(),
            ));
        }
        let j = self.config.candidates_per_prompt;
        Ok((0..num_prompts as u64)
            .into_par_iter()
            .map(|id| {
                let mut rng = self.prompt_rng(tag, id);
                let prompt = self.sample_prompt_with(id, &mut rng);
                let candidates: Vec<_> = (0..j)
                    .map(|_| self.generate_response(&prompt, &mut rng))
                    .collect();
                let rewards = RewardVector::new(
                    candidates
                        .iter()
                        .map(|c| c.true_normalized_reward)
                        .collect(),
                )
                .expect("finite synthetic rewards");
                let chosen = simulate_labeller_choice(&rewards, &mut rng);
                ChoiceObservation {
                    prompt,
                    candidates,
                    chosen,
                }
            })
            .collect())
    }
}

impl ResponsePolicy for SyntheticWorld {
    fn generate(&self, prompt: &SyntheticPrompt, rng: &mut StreamRng) -> SyntheticResponse {
        self.generate_response(prompt, rng)
    }
}

/// Fraction of responses with positive true normalized reward.
pub fn acceptable_fraction(responses: &[SyntheticResponse]) -> f64 {
    responses.iter().filter(|r| r.is_acceptable()).count() as f64 / responses.len() as f64
}
