#![allow(dead_code)]

use outside_option::estimator::RewardModelParams;
use outside_option::seed::StreamRng;
use outside_option::world::{ResponsePolicy, SyntheticPrompt, SyntheticResponse};
use rand::Rng;

/// Discrete world of response types `(probability, model score, true reward)`.
/// A response carries its score as its only feature, so [`identity_model`]
/// reads it back.
pub struct TypedWorld {
    pub types: Vec<(f64, f64, f64)>,
}

impl TypedWorld {
    pub fn three_types() -> Self {
        Self {
            types: vec![(0.3, 0.5, 1.0), (0.2, 0.8, -1.0), (0.5, -0.2, -0.5)],
        }
    }

    pub fn p_good(&self) -> f64 {
        self.types.iter().filter(|t| t.2 > 0.0).map(|t| t.0).sum()
    }

    /// Exact false-acceptance probability of Best-of-`n` by enumerating
    /// every ordered draw.
    pub fn enumerate_pfa(&self, n: usize) -> f64 {
        let k = self.types.len();
        let mut total = 0.0;
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            let mut prob = 1.0;
            let mut best: Option<(f64, f64)> = None;
            for _ in 0..n {
                let (p, score, truth) = self.types[c % k];
                c /= k;
                prob *= p;
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, truth));
                }
            }
            let (s, t) = best.expect("n >= 1");
            if s > 0.0 && t < 0.0 {
                total += prob;
            }
        }
        total
    }
}

impl ResponsePolicy for TypedWorld {
    fn generate(&self, prompt: &SyntheticPrompt, rng: &mut StreamRng) -> SyntheticResponse {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.types.len() - 1;
        for (i, t) in self.types.iter().enumerate() {
            acc += t.0;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let (_, score, truth) = self.types[chosen];
        SyntheticResponse::new(prompt, vec![score], truth)
    }
}

pub fn identity_model() -> RewardModelParams {
    RewardModelParams {
        weights: vec![1.0],
        bias: 0.0,
    }
}

pub fn bare_prompt(id: u64) -> SyntheticPrompt {
    SyntheticPrompt {
        id,
        features: vec![],
        rejection_threshold: 0.0,
        difficulty: None,
    }
}
