//! Best-of-N, best-of-mini-N in-loop, and false-acceptance analysis.
//!
//! A false acceptance is a winner the reward model scores above zero while
//! its true normalized reward is below zero. All Monte Carlo routines draw
//! trial `t` on prompt `x` from the stream `(seed, x.id, t)` regardless of
//! `N` or mode, so different budgets and modes see nested, common samples.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ThresholdSchedule;
use crate::error::{Error, Result};
use crate::estimator::RewardModel;
use crate::evaluation::ConfusionMetrics;
use crate::numeric::{mean, std_dev};
use crate::seed::{self, StreamRng};
use crate::world::{ResponsePolicy, SyntheticPrompt, SyntheticResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Guardrail,
    Accelerator,
    #[serde(rename = "bon", alias = "standard_bon")]
    StandardBon,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Guardrail => "guardrail",
            Mode::Accelerator => "accelerator",
            Mode::StandardBon => "bon",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to do when no loop clears its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhaustion {
    Abstain,
    ReturnBest,
}

impl OnExhaustion {
    /// Guardrail refuses, accelerator hands back its best candidate.
    pub fn default_for(mode: Mode) -> Self {
        match mode {
            Mode::Guardrail => OnExhaustion::Abstain,
            Mode::Accelerator | Mode::StandardBon => OnExhaustion::ReturnBest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub mode: Mode,
    /// `None` when the run abstained.
    pub selected: Option<SyntheticResponse>,
    /// Model score of the best candidate seen, `R_max`.
    pub estimated_reward_of_winner: f64,
    /// Ground-truth normalized reward of that candidate (analysis only).
    pub true_normalized_reward_of_winner: f64,
    pub generations_consumed: usize,
    pub loops_used: usize,
    pub found_acceptable: bool,
    /// Running `R_max` after each completed loop.
    pub loop_maxima: Vec<f64>,
}

impl InferenceOutcome {
    pub fn abstained(&self) -> bool {
        self.selected.is_none()
    }

    /// Approved by the model but truly unacceptable.
    pub fn is_false_acceptance(&self) -> bool {
        self.estimated_reward_of_winner > 0.0 && self.true_normalized_reward_of_winner < 0.0
    }

    /// `(predicted acceptable, truly acceptable)` for confusion counting.
    ///
    /// An abstention predicts "unacceptable": it is a true negative when the
    /// best candidate seen was truly unacceptable and a false negative when
    /// it was acceptable.
    pub fn classification(&self) -> (bool, bool) {
        (
            self.found_acceptable,
            self.true_normalized_reward_of_winner > 0.0,
        )
    }
}

/// Running argmax of model scores; ties keep the earlier candidate.
struct Best {
    response: Option<SyntheticResponse>,
    score: f64,
}

impl Best {
    fn new() -> Self {
        Self {
            response: None,
            score: f64::NEG_INFINITY,
        }
    }

    fn offer(&mut self, response: SyntheticResponse, score: f64) {
        if self.response.is_none() || score > self.score {
            self.response = Some(response);
            self.score = score;
        }
    }
}

/// Standard Best-of-N: draw `n_total` responses and keep the top-scored one.
pub fn best_of_n<P: ResponsePolicy, M: RewardModel>(
    prompt: &SyntheticPrompt,
    n_total: usize,
    policy: &P,
    reward_model: &M,
    rng: &mut StreamRng,
) -> Result<InferenceOutcome> {
    if n_total == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut best = Best::new();
    for _ in 0..n_total {
        let r = policy.generate(prompt, rng);
        let s = reward_model.score(prompt, &r);
        best.offer(r, s);
    }
    let winner = best.response.expect("at least one response");
    Ok(InferenceOutcome {
        mode: Mode::StandardBon,
        estimated_reward_of_winner: best.score,
        true_normalized_reward_of_winner: winner.true_normalized_reward,
        selected: Some(winner),
        generations_consumed: n_total,
        loops_used: 1,
        found_acceptable: best.score > 0.0,
        loop_maxima: vec![best.score],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiniNConfig {
    /// Mini-batch size `n`.
    pub n: usize,
    /// Number of loops `L`; the total budget is `n * L`.
    pub loops: usize,
    pub mode: Mode,
    pub on_exhaustion: OnExhaustion,
}

impl MiniNConfig {
    pub fn new(n: usize, loops: usize, mode: Mode) -> Self {
        Self {
            n,
            loops,
            mode,
            on_exhaustion: OnExhaustion::default_for(mode),
        }
    }

    pub fn budget(&self) -> usize {
        self.n * self.loops
    }
}

/// Best-of-mini-N in-loop.
///
/// Each loop adds `n` fresh responses and compares the best score so far
/// against that loop's threshold `tau_{n*l}`; the first loop with
/// `R_max > tau` (strictly) ends the search.
pub fn best_of_mini_n<P: ResponsePolicy, M: RewardModel>(
    prompt: &SyntheticPrompt,
    config: &MiniNConfig,
    schedule: &ThresholdSchedule,
    policy: &P,
    reward_model: &M,
    rng: &mut StreamRng,
) -> Result<InferenceOutcome> {
    if config.n == 0 || config.loops == 0 {
        return Err(Error::InvalidArgument("n and L must be at least 1".into()));
    }
    if schedule.taus.len() != config.loops || schedule.loops != config.loops {
        return Err(Error::ScheduleMismatch {
            expected: config.loops,
            actual: schedule.taus.len(),
        });
    }
    if schedule.n != config.n {
        return Err(Error::InvalidArgument(format!(
            "schedule built for n = {} but mini-batch is {}",
            schedule.n, config.n
        )));
    }
    match config.mode {
        Mode::StandardBon => {
            return Err(Error::InvalidArgument(
                "standard Best-of-N has no loops; use best_of_n".into(),
            ))
        }
        Mode::Accelerator if !schedule.is_all_zero() => {
            return Err(Error::InvalidArgument(
                "accelerator mode runs on an all-zero schedule".into(),
            ))
        }
        _ => {}
    }

    let mut best = Best::new();
    let mut loop_maxima = Vec::with_capacity(config.loops);
    let mut found = false;
    for &tau in &schedule.taus {
        for _ in 0..config.n {
            let r = policy.generate(prompt, rng);
            let s = reward_model.score(prompt, &r);
            best.offer(r, s);
        }
        loop_maxima.push(best.score);
        if best.score > tau {
            found = true;
            break;
        }
    }

    let loops_used = loop_maxima.len();
    let best_response = best.response.expect("at least one response");
    let true_reward = best_response.true_normalized_reward;
    let selected = if found || config.on_exhaustion == OnExhaustion::ReturnBest {
        Some(best_response)
    } else {
        None
    };
    Ok(InferenceOutcome {
        mode: config.mode,
        selected,
        estimated_reward_of_winner: best.score,
        true_normalized_reward_of_winner: true_reward,
        generations_consumed: config.n * loops_used,
        loops_used,
        found_acceptable: found,
        loop_maxima,
    })
}

/// Random stream of trial `trial` on `prompt`.
pub fn trial_rng(seed: u64, prompt: &SyntheticPrompt, trial: usize) -> StreamRng {
    seed::stream_rng(seed, &[seed::tag::INFERENCE, prompt.id, trial as u64])
}

fn bon_trials<P: ResponsePolicy, M: RewardModel>(
    prompt: &SyntheticPrompt,
    n_total: usize,
    trials: usize,
    policy: &P,
    reward_model: &M,
    seed: u64,
) -> Result<Vec<InferenceOutcome>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, prompt, t);
            best_of_n(prompt, n_total, policy, reward_model, &mut rng)
        })
        .collect()
}

/// Proportion estimate with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalseAcceptanceEstimate {
    pub pfa: f64,
    pub half_width: f64,
    pub false_acceptances: u64,
    pub trials: u64,
}

impl FalseAcceptanceEstimate {
    fn from_counts(false_acceptances: u64, trials: u64) -> Self {
        let p = false_acceptances as f64 / trials as f64;
        Self {
            pfa: p,
            half_width: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
            false_acceptances,
            trials,
        }
    }
}

/// Monte Carlo estimate of `P_FA(N)` for one prompt.
pub fn estimate_false_acceptance<P: ResponsePolicy, M: RewardModel>(
    prompt: &SyntheticPrompt,
    n_total: usize,
    trials: usize,
    policy: &P,
    reward_model: &M,
    seed: u64,
) -> Result<FalseAcceptanceEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let outcomes = bon_trials(prompt, n_total, trials, policy, reward_model, seed)?;
    let fa = outcomes.iter().filter(|o| o.is_false_acceptance()).count() as u64;
    Ok(FalseAcceptanceEstimate::from_counts(fa, trials as u64))
}

/// Runs grouped by the number `k` of truly acceptable candidates drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub k: usize,
    pub runs: u64,
    pub false_acceptances: u64,
    /// Empirical `q_N(k)`.
    pub q_hat: f64,
    /// `Bin(N, p_g)` mass at `k`.
    pub q_binomial: f64,
    /// Conditional rate `a_{k,N}`; `None` for an empty stratum.
    pub a_hat: Option<f64>,
    /// Fewer than [`MIN_STRATUM_RUNS`] runs.
    pub sparse: bool,
}

pub const MIN_STRATUM_RUNS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseAcceptanceDecomposition {
    pub n_total: usize,
    pub trials: u64,
    pub p_g: f64,
    pub strata: Vec<Stratum>,
    pub estimate: FalseAcceptanceEstimate,
    /// `sum_k a_hat(k) * q_hat(k)`, equal to `estimate.pfa` up to rounding.
    pub recombined: f64,
    /// Total-variation distance between `q_hat` and the binomial law.
    pub tv_to_binomial: f64,
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    // Recurrence from k = 0; exact enough for the small N used here.
    let mut out = Vec::with_capacity(n + 1);
    if p >= 1.0 {
        out.resize(n + 1, 0.0);
        out[n] = 1.0;
        return out;
    }
    let mut v = (1.0 - p).powi(n as i32);
    for k in 0..=n {
        out.push(v);
        v *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    out
}

/// Law-of-total-probability view of `P_FA(N)`: stratify trials by the
/// realized count of acceptable candidates.
pub fn false_acceptance_decomposition<P: ResponsePolicy, M: RewardModel>(
    prompt: &SyntheticPrompt,
    n_total: usize,
    trials: usize,
    p_g: f64,
    policy: &P,
    reward_model: &M,
    seed: u64,
) -> Result<FalseAcceptanceDecomposition> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p_g) {
        return Err(Error::InvalidArgument(format!(
            "p_g must lie in [0, 1], got {p_g}"
        )));
    }
    if n_total == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let runs: Vec<(usize, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, prompt, t);
            let mut best = Best::new();
            let mut good = 0;
            for _ in 0..n_total {
                let r = policy.generate(prompt, &mut rng);
                if r.is_acceptable() {
                    good += 1;
                }
                let s = reward_model.score(prompt, &r);
                best.offer(r, s);
            }
            let winner = best.response.expect("N >= 1");
            (
                good,
                best.score > 0.0 && winner.true_normalized_reward < 0.0,
            )
        })
        .collect();

    let mut counts = vec![(0u64, 0u64); n_total + 1];
    for &(k, fa) in &runs {
        counts[k].0 += 1;
        counts[k].1 += fa as u64;
    }
    let t = trials as f64;
    let pmf = binomial_pmf(n_total, p_g);
    let strata: Vec<Stratum> = counts
        .iter()
        .enumerate()
        .map(|(k, &(r, fa))| Stratum {
            k,
            runs: r,
            false_acceptances: fa,
            q_hat: r as f64 / t,
            q_binomial: pmf[k],
            a_hat: (r > 0).then(|| fa as f64 / r as f64),
            sparse: r < MIN_STRATUM_RUNS,
        })
        .collect();
    let total_fa: u64 = counts.iter().map(|c| c.1).sum();
    let recombined = strata
        .iter()
        .filter_map(|s| s.a_hat.map(|a| a * s.q_hat))
        .sum();
    let tv = strata
        .iter()
        .map(|s| (s.q_hat - s.q_binomial).abs())
        .sum::<f64>()
        / 2.0;
    Ok(FalseAcceptanceDecomposition {
        n_total,
        trials: trials as u64,
        p_g,
        strata,
        estimate: FalseAcceptanceEstimate::from_counts(total_fa, trials as u64),
        recombined,
        tv_to_binomial: tv,
    })
}

/// Data behind a false-positives-versus-N plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseAcceptanceCurve {
    pub n_values: Vec<usize>,
    pub pfa_estimates: Vec<f64>,
    pub fp_counts: Vec<u64>,
    /// Runs per point (prompts times trials per prompt).
    pub trials_per_point: u64,
    pub half_widths: Vec<f64>,
    pub mean_true_reward: Vec<f64>,
    /// Standard error of `mean_true_reward`.
    pub true_reward_se: Vec<f64>,
    pub mean_estimated_reward: Vec<f64>,
    /// Confusion counts of the winners at each budget.
    pub metrics: Vec<ConfusionMetrics>,
}

impl FalseAcceptanceCurve {
    pub fn len(&self) -> usize {
        self.n_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_values.is_empty()
    }
}

/// Standard Best-of-N over a prompt set at each budget in `n_values`.
pub fn false_acceptance_curve<P: ResponsePolicy, M: RewardModel>(
    prompts: &[SyntheticPrompt],
    n_values: &[usize],
    trials_per_prompt: usize,
    policy: &P,
    reward_model: &M,
    seed: u64,
) -> Result<FalseAcceptanceCurve> {
    if n_values.is_empty() {
        return Err(Error::Empty("n_values"));
    }
    if n_values.windows(2).any(|w| w[1] <= w[0]) || n_values[0] == 0 {
        return Err(Error::InvalidArgument(
            "n_values must be positive and ascending".into(),
        ));
    }
    if prompts.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    if trials_per_prompt == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let runs = (prompts.len() * trials_per_prompt) as u64;
    let mut curve = FalseAcceptanceCurve {
        n_values: n_values.to_vec(),
        pfa_estimates: Vec::new(),
        fp_counts: Vec::new(),
        trials_per_point: runs,
        half_widths: Vec::new(),
        mean_true_reward: Vec::new(),
        true_reward_se: Vec::new(),
        mean_estimated_reward: Vec::new(),
        metrics: Vec::new(),
    };
    for &n_total in n_values {
        let outcomes: Vec<InferenceOutcome> = prompts
            .par_iter()
            .map(|p| bon_trials(p, n_total, trials_per_prompt, policy, reward_model, seed))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let fp = outcomes.iter().filter(|o| o.is_false_acceptance()).count() as u64;
        let est = FalseAcceptanceEstimate::from_counts(fp, runs);
        let true_rewards: Vec<f64> = outcomes
            .iter()
            .map(|o| o.true_normalized_reward_of_winner)
            .collect();
        let est_rewards: Vec<f64> = outcomes
            .iter()
            .map(|o| o.estimated_reward_of_winner)
            .collect();
        curve.pfa_estimates.push(est.pfa);
        curve.fp_counts.push(fp);
        curve.half_widths.push(est.half_width);
        curve.mean_true_reward.push(mean(&true_rewards));
        curve
            .true_reward_se
            .push(std_dev(&true_rewards) / (true_rewards.len() as f64).sqrt());
        curve.mean_estimated_reward.push(mean(&est_rewards));
        curve.metrics.push(ConfusionMetrics::from_pairs(
            outcomes.iter().map(InferenceOutcome::classification),
        ));
    }
    Ok(curve)
}

/// Aggregate of one inference configuration over a prompt set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub n_total: usize,
    pub n: usize,
    pub loops: usize,
    pub metrics: ConfusionMetrics,
    /// Mean true reward of the best candidate seen, abstentions included.
    pub mean_true_reward: f64,
    pub mean_generations: f64,
    pub abstain_count: u64,
    pub false_acceptances: u64,
    pub runs: u64,
}

impl ModeSummary {
    fn from_outcomes(
        mode: Mode,
        n_total: usize,
        n: usize,
        loops: usize,
        outcomes: &[InferenceOutcome],
    ) -> Self {
        let rewards: Vec<f64> = outcomes
            .iter()
            .map(|o| o.true_normalized_reward_of_winner)
            .collect();
        let gens: Vec<f64> = outcomes
            .iter()
            .map(|o| o.generations_consumed as f64)
            .collect();
        Self {
            mode,
            n_total,
            n,
            loops,
            metrics: ConfusionMetrics::from_pairs(
                outcomes.iter().map(InferenceOutcome::classification),
            ),
            mean_true_reward: mean(&rewards),
            mean_generations: mean(&gens),
            abstain_count: outcomes.iter().filter(|o| o.abstained()).count() as u64,
            false_acceptances: outcomes.iter().filter(|o| o.is_false_acceptance()).count() as u64,
            runs: outcomes.len() as u64,
        }
    }
}

/// Runs standard Best-of-`n*L`, the guardrail and the accelerator on the
/// same prompts and random streams.
#[allow(clippy::too_many_arguments)]
pub fn compare_modes<P: ResponsePolicy, M: RewardModel>(
    prompts: &[SyntheticPrompt],
    n: usize,
    loops: usize,
    guardrail_schedule: &ThresholdSchedule,
    guardrail_on_exhaustion: OnExhaustion,
    accelerator_on_exhaustion: OnExhaustion,
    trials_per_prompt: usize,
    policy: &P,
    reward_model: &M,
    seed: u64,
) -> Result<Vec<ModeSummary>> {
    if prompts.is_empty() {
        return Err(Error::Empty("prompt set"));
    }
    let guard = MiniNConfig {
        on_exhaustion: guardrail_on_exhaustion,
        ..MiniNConfig::new(n, loops, Mode::Guardrail)
    };
    let accel = MiniNConfig {
        on_exhaustion: accelerator_on_exhaustion,
        ..MiniNConfig::new(n, loops, Mode::Accelerator)
    };
    let zero = ThresholdSchedule::accelerator(n, loops);
    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..trials_per_prompt).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<[InferenceOutcome; 3]> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let prompt = &prompts[p];
            let bon = best_of_n(
                prompt,
                n * loops,
                policy,
                reward_model,
                &mut trial_rng(seed, prompt, t),
            )?;
            let g = best_of_mini_n(
                prompt,
                &guard,
                guardrail_schedule,
                policy,
                reward_model,
                &mut trial_rng(seed, prompt, t),
            )?;
            let a = best_of_mini_n(
                prompt,
                &accel,
                &zero,
                policy,
                reward_model,
                &mut trial_rng(seed, prompt, t),
            )?;
            Ok([bon, g, a])
        })
        .collect::<Result<_>>()?;
    let column = |i: usize| outcomes.iter().map(|o| o[i].clone()).collect::<Vec<_>>();
    Ok(vec![
        ModeSummary::from_outcomes(Mode::StandardBon, n * loops, n * loops, 1, &column(0)),
        ModeSummary::from_outcomes(Mode::Guardrail, n * loops, n, loops, &column(1)),
        ModeSummary::from_outcomes(Mode::Accelerator, n * loops, n, loops, &column(2)),
    ])
}

/// Deterministic stub generator for trace tests.
///
/// Replays `(score, true_reward)` pairs in order, cycling. Each response has
/// a single feature equal to its score, so a linear model with weight 1 and
/// bias 0 reads the score back. The cursor is shared, so use one instance per
/// sequential run.
#[derive(Debug)]
pub struct ScriptedPolicy {
    script: Vec<(f64, f64)>,
    cursor: AtomicUsize,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<(f64, f64)>) -> Self {
        assert!(!script.is_empty(), "empty script");
        Self {
            script,
            cursor: AtomicUsize::new(0),
        }
    }

    /// Scores double as true rewards.
    pub fn from_scores(scores: &[f64]) -> Self {
        Self::new(scores.iter().map(|&s| (s, s)).collect())
    }

    pub fn drawn(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }
}

impl ResponsePolicy for ScriptedPolicy {
    fn generate(&self, prompt: &SyntheticPrompt, _rng: &mut StreamRng) -> SyntheticResponse {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        let (score, truth) = self.script[i % self.script.len()];
        SyntheticResponse {
            features: vec![score],
            true_utility: truth + prompt.rejection_threshold,
            true_normalized_reward: truth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{OracleReward, RewardModelParams};
    use crate::seed::stream_rng;

    fn prompt() -> SyntheticPrompt {
        SyntheticPrompt {
            id: 0,
            features: vec![],
            rejection_threshold: 0.0,
            difficulty: None,
        }
    }

    fn e1() -> RewardModelParams {
        RewardModelParams {
            weights: vec![1.0],
            bias: 0.0,
        }
    }

    fn scripted(scores: &[f64]) -> ScriptedPolicy {
        ScriptedPolicy::from_scores(scores)
    }

    #[test]
    fn best_of_one_returns_sole_response() {
        let out = best_of_n(
            &prompt(),
            1,
            &scripted(&[-0.3]),
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert_eq!(out.estimated_reward_of_winner, -0.3);
        assert_eq!(out.generations_consumed, 1);
        assert!(!out.found_acceptable && !out.abstained());
        assert!(best_of_n(
            &prompt(),
            0,
            &scripted(&[0.0]),
            &e1(),
            &mut stream_rng(1, &[])
        )
        .is_err());
    }

    #[test]
    fn best_of_three_picks_argmax() {
        let out = best_of_n(
            &prompt(),
            3,
            &scripted(&[0.1, 0.9, 0.5]),
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert_eq!(out.estimated_reward_of_winner, 0.9);
        assert_eq!(out.generations_consumed, 3);
    }

    #[test]
    fn ties_keep_first_candidate() {
        let policy = ScriptedPolicy::new(vec![(0.5, -1.0), (0.5, 1.0)]);
        let out = best_of_n(&prompt(), 2, &policy, &e1(), &mut stream_rng(1, &[])).unwrap();
        assert_eq!(out.true_normalized_reward_of_winner, -1.0);
    }

    #[test]
    fn immediate_exit() {
        let schedule = ThresholdSchedule {
            n: 4,
            loops: 2,
            taus: vec![0.38, 0.748],
        };
        let policy = scripted(&[0.1, 0.48, -0.2, 0.0]);
        let cfg = MiniNConfig::new(4, 2, Mode::Guardrail);
        let out = best_of_mini_n(
            &prompt(),
            &cfg,
            &schedule,
            &policy,
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert_eq!(
            (
                out.loops_used,
                out.found_acceptable,
                out.generations_consumed
            ),
            (1, true, 4)
        );
        assert_eq!(out.estimated_reward_of_winner, 0.48);
    }

    #[test]
    fn exhaustion_abstains_or_returns_best() {
        let schedule = ThresholdSchedule {
            n: 3,
            loops: 2,
            taus: vec![0.2, 0.4],
        };
        let policy = scripted(&[-1.0]);
        let cfg = MiniNConfig::new(3, 2, Mode::Guardrail);
        let out = best_of_mini_n(
            &prompt(),
            &cfg,
            &schedule,
            &policy,
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert_eq!(
            (
                out.loops_used,
                out.found_acceptable,
                out.generations_consumed
            ),
            (2, false, 6)
        );
        assert!(out.abstained());
        let cfg = MiniNConfig {
            on_exhaustion: OnExhaustion::ReturnBest,
            ..cfg
        };
        let out = best_of_mini_n(
            &prompt(),
            &cfg,
            &schedule,
            &policy,
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert!(!out.abstained() && !out.found_acceptable);
    }

    #[test]
    fn ties_at_threshold_do_not_exit() {
        let schedule = ThresholdSchedule {
            n: 1,
            loops: 2,
            taus: vec![0.5, 0.5],
        };
        let cfg = MiniNConfig::new(1, 2, Mode::Guardrail);
        let out = best_of_mini_n(
            &prompt(),
            &cfg,
            &schedule,
            &scripted(&[0.5]),
            &e1(),
            &mut stream_rng(1, &[]),
        )
        .unwrap();
        assert_eq!(out.loops_used, 2);
        assert!(!out.found_acceptable);
    }

    #[test]
    fn schedule_mismatches_are_errors() {
        let policy = scripted(&[0.0]);
        let cfg = MiniNConfig::new(2, 3, Mode::Guardrail);
        let short = ThresholdSchedule {
            n: 2,
            loops: 2,
            taus: vec![0.1, 0.2],
        };
        assert!(matches!(
            best_of_mini_n(
                &prompt(),
                &cfg,
                &short,
                &policy,
                &e1(),
                &mut stream_rng(1, &[])
            ),
            Err(Error::ScheduleMismatch { .. })
        ));
        let accel = MiniNConfig::new(2, 2, Mode::Accelerator);
        assert!(best_of_mini_n(
            &prompt(),
            &accel,
            &short,
            &policy,
            &e1(),
            &mut stream_rng(1, &[])
        )
        .is_err());
        let bon = MiniNConfig::new(2, 2, Mode::StandardBon);
        assert!(best_of_mini_n(
            &prompt(),
            &bon,
            &ThresholdSchedule::accelerator(2, 2),
            &policy,
            &e1(),
            &mut stream_rng(1, &[])
        )
        .is_err());
    }

    #[test]
    fn perfect_model_never_falsely_accepts() {
        let world = crate::world::SyntheticWorld::new(Default::default()).unwrap();
        let p = world.generate_prompt(0, 3.0, &mut stream_rng(2, &[]));
        let est = estimate_false_acceptance(&p, 8, 500, &world, &OracleReward, 3).unwrap();
        assert_eq!(est.pfa, 0.0);
        assert_eq!(est.half_width, 0.0);
    }

    #[test]
    fn binomial_pmf_sums_to_one() {
        for p in [0.0, 0.1, 0.5, 1.0] {
            let pmf = binomial_pmf(7, p);
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_rejects_bad_budgets() {
        let ps = vec![prompt()];
        let pol = scripted(&[0.0]);
        assert!(false_acceptance_curve(&ps, &[], 1, &pol, &e1(), 0).is_err());
        assert!(false_acceptance_curve(&ps, &[4, 2], 1, &pol, &e1(), 0).is_err());
        let c = false_acceptance_curve(&ps, &[3], 2, &pol, &e1(), 0).unwrap();
        assert_eq!(c.len(), 1);
    }
}
