//! Guardrail threshold calibration.
//!
//! Two steps: find prompts on which the generator is reliably bad with a
//! one-sided binomial test on the count of responses the reward model
//! accepts, then pool every reward score from those prompts into one
//! empirical CDF `F`. For a total sample size `N`, the guardrail threshold is
//!
//! ```text
//! tau_N = max(F^-1(F(0)^(1/N)), 0)
//! ```
//!
//! which is the level the maximum of `N` hard-prompt rewards stays below with
//! the same probability `F(0)` that a single reward stays at or below zero.
//!
//! The binomial test uses `P(Bin(B, p_min) <= T)`. The null hypothesis is
//! composite (`p_g > p_min`); evaluating at the boundary `p_g = p_min` gives
//! the largest p-value over the null, so the test is conservative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::RewardModel;
use crate::numeric::log_sum_exp;
use crate::seed;
use crate::world::{ResponsePolicy, SyntheticPrompt};

/// `P(Bin(trials, p_min) <= successes)`, summed exactly in log space.
pub fn binomial_p_value(trials: u64, p_min: f64, successes: u64) -> Result<f64> {
    if successes > trials {
        return Err(Error::InvalidArgument(format!(
            "success count {successes} exceeds trials {trials}"
        )));
    }
    if !(p_min > 0.0 && p_min < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p_min must lie in (0, 1), got {p_min}"
        )));
    }
    if successes == trials {
        return Ok(1.0);
    }
    let log_p = p_min.ln();
    let log_q = (-p_min).ln_1p();
    let mut log_pmf = trials as f64 * log_q;
    let mut terms = Vec::with_capacity(successes as usize + 1);
    terms.push(log_pmf);
    for k in 0..successes {
        log_pmf += ((trials - k) as f64).ln() - ((k + 1) as f64).ln() + log_p - log_q;
        terms.push(log_pmf);
    }
    Ok(log_sum_exp(&terms).exp().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardPromptReport {
    pub prompt_id: u64,
    /// Responses the reward model scores above zero, `T(x)`.
    pub success_count: u64,
    pub trials: u64,
    pub p_value: f64,
    pub is_hard: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardPromptScan {
    pub reports: Vec<HardPromptReport>,
    /// All reward scores from prompts flagged hard, pooled.
    pub hard_scores: Vec<f64>,
}

impl HardPromptScan {
    pub fn hard_count(&self) -> usize {
        self.reports.iter().filter(|r| r.is_hard).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardPromptTest {
    /// Responses per prompt, `B`.
    pub trials: u64,
    pub p_min: f64,
    pub alpha: f64,
}

impl Default for HardPromptTest {
    fn default() -> Self {
        Self {
            trials: 150,
            p_min: 0.05,
            alpha: 0.01,
        }
    }
}

/// Runs the binomial test on every prompt in the pool. Prompt `i` draws its
/// `B` responses from stream `(seed, CALIBRATION, prompt id)`.
pub fn identify_hard_prompts<P, M>(
    prompts: &[SyntheticPrompt],
    policy: &P,
    reward_model: &M,
    test: HardPromptTest,
    seed: u64,
) -> Result<HardPromptScan>
where
    P: ResponsePolicy,
    M: RewardModel,
{
    if test.trials == 0 {
        return Err(Error::InvalidArgument("B must be at least 1".into()));
    }
    if !(test.alpha > 0.0 && test.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {}",
            test.alpha
        )));
    }
    let per_prompt: Vec<(HardPromptReport, Vec<f64>)> = prompts
        .par_iter()
        .map(|prompt| {
            let mut rng = seed::stream_rng(seed, &[seed::tag::CALIBRATION, prompt.id]);
            let scores: Vec<f64> = policy
                .generate_many(prompt, test.trials as usize, &mut rng)
                .iter()
                .map(|r| reward_model.score(prompt, r))
                .collect();
            let successes = scores.iter().filter(|&&s| s > 0.0).count() as u64;
            let p_value = binomial_p_value(test.trials, test.p_min, successes)?;
            let report = HardPromptReport {
                prompt_id: prompt.id,
                success_count: successes,
                trials: test.trials,
                p_value,
                is_hard: p_value < test.alpha,
            };
            Ok((report, scores))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(per_prompt.len());
    let mut hard_scores = Vec::new();
    for (report, scores) in per_prompt {
        if report.is_hard {
            hard_scores.extend(scores);
        }
        reports.push(report);
    }
    Ok(HardPromptScan {
        reports,
        hard_scores,
    })
}

/// Right-continuous empirical CDF over a sorted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted_samples: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("score sample"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("score sample"));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self {
            sorted_samples: scores,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted_samples
    }

    pub fn len(&self) -> usize {
        self.sorted_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted_samples.is_empty()
    }

    fn fraction(&self, count: usize) -> f64 {
        count as f64 / self.len() as f64
    }

    /// `F(r) = #{s <= r} / n`.
    pub fn cdf(&self, r: f64) -> f64 {
        self.fraction(self.sorted_samples.partition_point(|&s| s <= r))
    }

    /// Smallest sample `s` with `F(s) >= q`; `q <= 0` gives the minimum.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.len();
        // Smallest count k with k/n >= q, computed with the same division
        // `cdf` uses so q = F(s) maps back to s exactly.
        let mut k = ((q * n as f64).ceil().max(1.0) as usize).min(n);
        while k > 1 && self.fraction(k - 1) >= q {
            k -= 1;
        }
        while k < n && self.fraction(k) < q {
            k += 1;
        }
        self.sorted_samples[k - 1]
    }

    /// True when no sample is acceptable (`F(0) = 1`); every threshold then
    /// collapses to the largest sample.
    pub fn is_degenerate(&self) -> bool {
        self.cdf(0.0) >= 1.0
    }
}

pub fn build_empirical_cdf(scores: Vec<f64>) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(scores)
}

/// Guardrail threshold for a total sample size `n_total`.
pub fn threshold_for_n(cdf: &EmpiricalCdf, n_total: usize) -> Result<f64> {
    if n_total == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let level = cdf.cdf(0.0).powf(1.0 / n_total as f64);
    Ok(cdf.quantile(level).max(0.0))
}

/// Thresholds `tau_{n*l}` for `l = 1..=loops`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub n: usize,
    #[serde(rename = "L")]
    pub loops: usize,
    pub taus: Vec<f64>,
}

impl ThresholdSchedule {
    /// Constant zero threshold (accelerator configuration).
    pub fn accelerator(n: usize, loops: usize) -> Self {
        Self {
            n,
            loops,
            taus: vec![0.0; loops],
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.taus.iter().all(|&t| t == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.loops == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs n >= 1 and L >= 1".into(),
            ));
        }
        if self.taus.len() != self.loops {
            return Err(Error::ScheduleMismatch {
                expected: self.loops,
                actual: self.taus.len(),
            });
        }
        if self.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument(
                "thresholds must be finite and non-negative".into(),
            ));
        }
        if self.taus.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "thresholds must be non-decreasing".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_schedule(cdf: &EmpiricalCdf, n: usize, loops: usize) -> Result<ThresholdSchedule> {
    if n == 0 || loops == 0 {
        return Err(Error::InvalidArgument(
            "schedule needs n >= 1 and L >= 1".into(),
        ));
    }
    let taus = (1..=loops)
        .map(|l| threshold_for_n(cdf, n * l))
        .collect::<Result<_>>()?;
    Ok(ThresholdSchedule { n, loops, taus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::OracleReward;
    use crate::seed::StreamRng;
    use crate::world::SyntheticResponse;
    use proptest::prelude::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    #[test]
    fn p_value_examples() {
        assert_eq!(binomial_p_value(150, 0.05, 150).unwrap(), 1.0);
        assert!((binomial_p_value(10, 0.5, 0).unwrap() - 2f64.powi(-10)).abs() < 1e-15);
        let p = binomial_p_value(150, 0.05, 2).unwrap();
        assert!((p - 0.018).abs() < 1e-3, "{p}");
        assert!((binomial_p_value(150, 0.05, 0).unwrap() - 0.95f64.powi(150)).abs() < 1e-15);
    }

    #[test]
    fn p_value_agrees_with_reference_cdf() {
        for &(b, p, t) in &[
            (150u64, 0.05, 2u64),
            (40, 0.3, 11),
            (1000, 0.01, 3),
            (7, 0.9, 6),
        ] {
            let reference = Binomial::new(p, b).unwrap().cdf(t);
            let ours = binomial_p_value(b, p, t).unwrap();
            assert!(
                (ours - reference).abs() < 1e-12,
                "{b} {p} {t}: {ours} vs {reference}"
            );
        }
    }

    #[test]
    fn p_value_rejects_out_of_range() {
        assert!(binomial_p_value(5, 0.5, 6).is_err());
        assert!(binomial_p_value(5, 0.0, 1).is_err());
        assert!(binomial_p_value(5, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn p_value_monotone(b in 1u64..200, p in 0.01f64..0.99, dp in 0.0f64..0.2) {
            let mut prev = 0.0;
            for t in 0..=b {
                let v = binomial_p_value(b, p, t).unwrap();
                prop_assert!(v * (1.0 + 1e-12) >= prev);
                prev = v;
            }
            let p2 = (p + dp).min(0.999);
            for t in 0..b {
                prop_assert!(binomial_p_value(b, p2, t).unwrap() <= binomial_p_value(b, p, t).unwrap() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn cdf_examples() {
        let cdf = build_empirical_cdf(vec![1.0, -1.0, 0.0]).unwrap();
        assert!((cdf.cdf(0.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cdf.cdf(-1.5), 0.0);
        assert_eq!(cdf.cdf(1.0), 1.0);
        assert_eq!(cdf.cdf(7.0), 1.0);
        for (i, &s) in cdf.samples().iter().enumerate() {
            assert_eq!(cdf.cdf(s), (i + 1) as f64 / 3.0);
        }
        assert!(build_empirical_cdf(vec![]).is_err());
        assert!(build_empirical_cdf(vec![f64::NAN]).is_err());
    }

    fn four() -> EmpiricalCdf {
        build_empirical_cdf(vec![-2.0, -1.0, -0.5, 1.0]).unwrap()
    }

    #[test]
    fn quantile_examples() {
        let cdf = four();
        assert_eq!(cdf.quantile(0.75), -0.5);
        assert_eq!(cdf.quantile(1.0), 1.0);
        assert_eq!(cdf.quantile(0.8660), 1.0);
        assert_eq!(cdf.quantile(0.0), -2.0);
        assert_eq!(cdf.quantile(0.25), -2.0);
        assert_eq!(cdf.quantile(0.2500001), -1.0);
    }

    #[test]
    fn threshold_examples() {
        let cdf = four();
        assert_eq!(threshold_for_n(&cdf, 1).unwrap(), 0.0);
        assert_eq!(threshold_for_n(&cdf, 2).unwrap(), 1.0);
        assert!(threshold_for_n(&cdf, 0).is_err());
        let s = build_schedule(&cdf, 1, 1).unwrap();
        assert_eq!(s.taus, vec![threshold_for_n(&cdf, 1).unwrap()]);
        assert!(build_schedule(&cdf, 0, 2).is_err());
    }

    #[test]
    fn degenerate_cdf_pins_threshold_to_max() {
        let cdf = build_empirical_cdf(vec![-3.0, -2.0, -0.1]).unwrap();
        assert!(cdf.is_degenerate());
        for n in [1, 4, 32] {
            assert_eq!(threshold_for_n(&cdf, n).unwrap(), 0.0);
        }
        let cdf = build_empirical_cdf(vec![-3.0, 0.0]).unwrap();
        assert!(cdf.is_degenerate());
    }

    #[test]
    fn schedule_json_shape() {
        let s = ThresholdSchedule {
            n: 16,
            loops: 2,
            taus: vec![0.38, 0.748],
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"n":16,"L":2,"taus":[0.38,0.748]}"#);
        assert_eq!(serde_json::from_str::<ThresholdSchedule>(&json).unwrap(), s);
        assert!(ThresholdSchedule::accelerator(16, 2).is_all_zero());
        assert!(ThresholdSchedule {
            n: 1,
            loops: 2,
            taus: vec![0.5, 0.1]
        }
        .validate()
        .is_err());
        assert!(ThresholdSchedule {
            n: 1,
            loops: 3,
            taus: vec![0.5]
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_non_negative(
            samples in prop::collection::vec(-3.0f64..3.0, 1..200),
            n in 1usize..20,
            loops in 1usize..8,
        ) {
            let cdf = build_empirical_cdf(samples).unwrap();
            let s = build_schedule(&cdf, n, loops).unwrap();
            prop_assert!(s.validate().is_ok());
        }

        #[test]
        fn quantile_is_generalized_inverse(
            samples in prop::collection::vec(-3.0f64..3.0, 1..100),
            q in 0.0f64..=1.0,
        ) {
            let cdf = build_empirical_cdf(samples).unwrap();
            let x = cdf.quantile(q);
            prop_assert!(cdf.cdf(x) >= q);
            // No smaller sample reaches q.
            for &s in cdf.samples() {
                if s < x {
                    prop_assert!(cdf.cdf(s) < q);
                }
            }
        }
    }

    /// Emits responses whose true reward is fixed per prompt.
    struct ConstantPolicy;

    impl ResponsePolicy for ConstantPolicy {
        fn generate(&self, prompt: &SyntheticPrompt, _rng: &mut StreamRng) -> SyntheticResponse {
            SyntheticResponse::new(prompt, vec![0.0], 0.0)
        }
    }

    fn prompt(id: u64, threshold: f64) -> SyntheticPrompt {
        SyntheticPrompt {
            id,
            features: vec![],
            rejection_threshold: threshold,
            difficulty: None,
        }
    }

    #[test]
    fn hard_prompt_detection() {
        // Threshold 1 => every response scores -1 (p_g = 0); threshold -1 => all good.
        let prompts = vec![prompt(0, 1.0), prompt(1, -1.0)];
        let scan = identify_hard_prompts(
            &prompts,
            &ConstantPolicy,
            &OracleReward,
            HardPromptTest::default(),
            3,
        )
        .unwrap();
        assert_eq!(scan.reports.len(), 2);
        let hard = &scan.reports[0];
        assert!(hard.is_hard);
        assert_eq!(hard.success_count, 0);
        assert!((hard.p_value - 0.95f64.powi(150)).abs() < 1e-12);
        assert!((hard.p_value - 4.5e-4).abs() < 1e-5);
        assert!(!scan.reports[1].is_hard);
        assert_eq!(scan.hard_scores, vec![-1.0; 150]);
        assert_eq!(scan.hard_count(), 1);
    }
}
