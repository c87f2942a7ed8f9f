//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fail.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use outside_option::calibration::{
    build_empirical_cdf, build_schedule, identify_hard_prompts, threshold_for_n, EmpiricalCdf,
    HardPromptTest, ThresholdSchedule,
};
use outside_option::choice::{choice_probabilities, RewardVector};
use outside_option::estimator::{
    fit_mle, log_likelihood_gradient, total_log_likelihood, RewardModel, RewardModelParams,
    TrainingConfig,
};
use outside_option::evaluation::{
    choice_proportions, resampling_bias_experiment, ConfusionMetrics,
};
use outside_option::inference::{
    best_of_mini_n, compare_modes, estimate_false_acceptance, false_acceptance_curve,
    false_acceptance_decomposition, MiniNConfig, Mode, ModeSummary, OnExhaustion, ScriptedPolicy,
};
use outside_option::numeric::{pearson, spearman};
use outside_option::seed::{stream_rng, tag};
use outside_option::world::{
    simulate_labeller_choice, ChoiceObservation, SyntheticResponse, SyntheticWorld, WorldConfig,
};
use rand::Rng;
use rand_distr::StandardNormal;

use common::{bare_prompt, identity_model, TypedWorld};

struct Check {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Check {
    Check { passed, detail }
}

struct Fixture {
    world: SyntheticWorld,
    train: Vec<ChoiceObservation>,
    heldout: Vec<ChoiceObservation>,
    params: RewardModelParams,
}

/// 50,000 training observations, 2,000 held out, and the fitted model.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let world = SyntheticWorld::new(WorldConfig::default()).unwrap();
        let train = world
            .build_choice_dataset(tag::TRAIN_PROMPTS, 50_000)
            .unwrap();
        let heldout = world
            .build_choice_dataset(tag::HELDOUT_PROMPTS, 2_000)
            .unwrap();
        let fit = fit_mle(&train, &TrainingConfig::default()).unwrap();
        assert!(fit.converged, "fixture fit did not converge");
        Fixture {
            world,
            train,
            heldout,
            params: fit.params,
        }
    })
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

fn criterion_1() -> Check {
    let m = ConfusionMetrics::from_counts(1539, 210, 177, 74);
    let p = 100.0 * m.precision.unwrap();
    let r = 100.0 * m.recall.unwrap();
    let f = 100.0 * m.fpr.unwrap();
    check(
        within(p, 88.0, 0.5) && within(r, 95.4, 0.5) && within(f, 54.1, 0.5),
        format!("precision {p:.2}, recall {r:.2}, fpr {f:.2} against 88.0/95.4/54.1 (tol 0.5)"),
    )
}

fn criterion_2() -> Check {
    let rewards = RewardVector::new(vec![1.0, -1.0]).unwrap();
    let exact = choice_probabilities(&rewards);
    let draws = 1_000_000;
    let mut rng = stream_rng(2, &[]);
    let mut counts = [0u64; 3];
    for _ in 0..draws {
        counts[simulate_labeller_choice(&rewards, &mut rng)] += 1;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(exact.probabilities())
            .map(|(&c, p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>();
    check(
        tv < 0.005,
        format!("TV {tv:.5} over {draws} draws (limit 0.005)"),
    )
}

fn criterion_3() -> Check {
    let mut rng = stream_rng(3, &[]);
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let dim = 2 + instance % 4;
        let j = 1 + instance % 3;
        let obs_count = 5 + instance;
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let dataset: Vec<ChoiceObservation> = (0..obs_count)
            .map(|i| {
                let prompt = bare_prompt(i as u64);
                let candidates = (0..j)
                    .map(|_| {
                        SyntheticResponse::new(&prompt, (0..dim).map(|_| normal()).collect(), 0.0)
                    })
                    .collect();
                ChoiceObservation {
                    prompt,
                    candidates,
                    chosen: i % (j + 1),
                }
            })
            .collect();
        let theta: Vec<f64> = (0..=dim).map(|_| 0.5 * normal()).collect();
        let l2 = if instance % 2 == 0 { 0.0 } else { 0.1 };
        let params = RewardModelParams::from_slice(&theta);
        let analytic = log_likelihood_gradient(&params, &dataset, l2).unwrap();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let f_up =
                total_log_likelihood(&RewardModelParams::from_slice(&up), &dataset, l2).unwrap();
            let f_down =
                total_log_likelihood(&RewardModelParams::from_slice(&down), &dataset, l2).unwrap();
            let numeric = (f_up - f_down) / (2.0 * h);
            let rel = (analytic[k] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    check(
        worst <= 1e-6,
        format!("worst relative error {worst:.2e} over 20 instances (limit 1e-6)"),
    )
}

fn criterion_4() -> Check {
    let fx = fixture();
    let (mut fitted, mut truth) = (Vec::new(), Vec::new());
    for obs in &fx.heldout {
        for c in &obs.candidates {
            fitted.push(fx.params.score(&obs.prompt, c));
            truth.push(c.true_normalized_reward);
        }
    }
    let r = pearson(&fitted, &truth);
    let confident: Vec<(f64, f64)> = fitted
        .iter()
        .zip(&truth)
        .filter(|(_, t)| t.abs() > 0.25)
        .map(|(f, t)| (*f, *t))
        .collect();
    let agree = confident
        .iter()
        .filter(|(f, t)| (*f > 0.0) == (*t > 0.0))
        .count() as f64
        / confident.len() as f64;
    check(
        r >= 0.95 && agree >= 0.90,
        format!(
            "train {} obs; held-out pearson {r:.4} (>= 0.95), sign agreement {:.2}% on {} candidates with |R| > 0.25 (>= 90%)",
            fx.train.len(),
            100.0 * agree,
            confident.len()
        ),
    )
}

fn criterion_5() -> Check {
    let fx = fixture();
    let config = TrainingConfig::default();
    let q = choice_proportions(&fx.train).unwrap();
    let halved = q.rescale_class(0, 0.5).unwrap();
    let half = resampling_bias_experiment(&fx.train, &fx.heldout, &halved, &config, 5).unwrap();
    let identity = resampling_bias_experiment(&fx.train, &fx.heldout, &q, &config, 5).unwrap();
    let half_ok = half
        .shift_by_candidate
        .iter()
        .zip(&half.closed_form_bias)
        .all(|(s, b)| within(*s, *b, 0.1))
        && within(half.mean_shift, half.closed_form_bias[0], 0.1);
    let identity_ok = identity.mean_shift.abs() < 0.05
        && identity.shift_by_candidate.iter().all(|s| s.abs() < 0.05);
    check(
        half_ok && identity_ok,
        format!(
            "halving: shift {:.4?} vs closed form {:.4?} (tol 0.1); identity: shift {:.2e} (< 0.05)",
            half.shift_by_candidate, half.closed_form_bias, identity.mean_shift
        ),
    )
}

fn criterion_6() -> Check {
    let fx = fixture();
    // Difficulty at least logit(0.95) gives target acceptance at most 0.05.
    let min_difficulty = (0.95f64 / 0.05).ln();
    let max_difficulty = fx.world.config().difficulty_range[1];
    let mut rng = stream_rng(6, &[]);
    let prompts: Vec<_> = (0..100)
        .map(|id| {
            let d = rng.random_range(min_difficulty..=max_difficulty);
            fx.world.generate_prompt(id, d, &mut rng)
        })
        .collect();
    let n_values = [1, 2, 4, 8, 16, 32];
    let curve = false_acceptance_curve(&prompts, &n_values, 100, &fx.world, &fx.params, 6).unwrap();
    let ns: Vec<f64> = n_values.iter().map(|&n| n as f64).collect();
    let fps: Vec<f64> = curve.fp_counts.iter().map(|&c| c as f64).collect();
    let rho = spearman(&ns, &fps);
    let ratio = fps[5] / fps[0].max(1.0);
    check(
        rho >= 0.9 && fps[5] >= 1.5 * fps[0],
        format!(
            "{} runs per point; fp counts {:?}; spearman {rho:.3} (>= 0.9); fp(32)/fp(1) = {ratio:.2} (>= 1.5)",
            curve.trials_per_point, curve.fp_counts
        ),
    )
}

fn criterion_7() -> Check {
    let toy = TypedWorld::three_types();
    let prompt = bare_prompt(0);
    let model = identity_model();
    let exact = toy.enumerate_pfa(2);
    let trials = 100_000;
    let est = estimate_false_acceptance(&prompt, 2, trials, &toy, &model, 7).unwrap();
    let d =
        false_acceptance_decomposition(&prompt, 2, trials, toy.p_good(), &toy, &model, 7).unwrap();
    let mc_ok = (est.pfa - exact).abs() <= 3.0 * est.half_width;
    let recombine_ok = (d.recombined - d.estimate.pfa).abs() <= 1e-12;
    let tv_ok = d.tv_to_binomial < 0.02;
    check(
        mc_ok && recombine_ok && tv_ok,
        format!(
            "P_FA {:.5} +/- {:.5} vs enumeration {exact:.5}; recombination gap {:.1e} (<= 1e-12); q_hat TV {:.4} (< 0.02)",
            est.pfa,
            est.half_width,
            (d.recombined - d.estimate.pfa).abs(),
            d.tv_to_binomial
        ),
    )
}

fn criterion_8() -> Check {
    let mut rng = stream_rng(8, &[]);
    let n_values = [1usize, 2, 3, 4, 8, 16, 32, 64];
    let mut failures = Vec::new();
    for set in 0..100 {
        let size = rng.random_range(1..=300usize);
        let shift: f64 = rng.random_range(-2.0..2.0);
        let scale: f64 = rng.random_range(0.1..3.0);
        let samples: Vec<f64> = (0..size)
            .map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cdf = EmpiricalCdf::new(samples).unwrap();
        let step = 1.0 / cdf.len() as f64;
        let f0 = cdf.cdf(0.0);
        let mut prev = f64::NEG_INFINITY;
        for &n in &n_values {
            let tau = threshold_for_n(&cdf, n).unwrap();
            let covered = cdf.cdf(tau).powi(n as i32) >= f0 - step;
            if !(tau >= 0.0 && tau >= prev && covered) {
                failures.push((set, n));
            }
            prev = tau;
        }
    }
    let example = EmpiricalCdf::new(vec![-2.0, -1.0, -0.5, 1.0]).unwrap();
    let tau = threshold_for_n(&example, 2).unwrap();
    check(
        failures.is_empty() && tau == 1.0,
        format!(
            "100 random sample sets, {} violations; hand example tau_2 = {tau} (exactly 1.0)",
            failures.len()
        ),
    )
}

/// Calibrated guardrail schedule and the three-mode comparison on 1,000
/// evaluation prompts, shared by criteria 9 and 10.
fn comparison() -> &'static (ThresholdSchedule, Vec<ModeSummary>) {
    static CMP: OnceLock<(ThresholdSchedule, Vec<ModeSummary>)> = OnceLock::new();
    CMP.get_or_init(|| {
        let fx = fixture();
        let pool = fx.world.sample_prompts(tag::POOL_PROMPTS, 500);
        let scan =
            identify_hard_prompts(&pool, &fx.world, &fx.params, HardPromptTest::default(), 9)
                .unwrap();
        let cdf = build_empirical_cdf(scan.hard_scores).unwrap();
        let schedule = build_schedule(&cdf, 16, 2).unwrap();
        let eval = fx.world.sample_prompts(tag::EVAL_PROMPTS, 1_000);
        let table = compare_modes(
            &eval,
            16,
            2,
            &schedule,
            OnExhaustion::Abstain,
            OnExhaustion::ReturnBest,
            2,
            &fx.world,
            &fx.params,
            9,
        )
        .unwrap();
        (schedule, table)
    })
}

fn summary(mode: Mode) -> &'static ModeSummary {
    comparison().1.iter().find(|s| s.mode == mode).unwrap()
}

fn criterion_9() -> Check {
    let (schedule, _) = comparison();
    let bon = summary(Mode::StandardBon);
    let guard = summary(Mode::Guardrail);
    let fp_cut = 1.0 - guard.metrics.fp as f64 / bon.metrics.fp as f64;
    let reward_drop = (bon.mean_true_reward - guard.mean_true_reward) / bon.mean_true_reward.abs();
    check(
        bon.metrics.fp > 0 && fp_cut >= 0.5 && reward_drop <= 0.10,
        format!(
            "taus {:.3?}; fp {} -> {} ({:.1}% fewer, >= 50%); mean true reward {:.4} -> {:.4} ({:.1}% drop, <= 10%); {} abstentions",
            schedule.taus,
            bon.metrics.fp,
            guard.metrics.fp,
            100.0 * fp_cut,
            bon.mean_true_reward,
            guard.mean_true_reward,
            100.0 * reward_drop,
            guard.abstain_count
        ),
    )
}

fn criterion_10() -> Check {
    let bon = summary(Mode::StandardBon);
    let acc = summary(Mode::Accelerator);
    let saving = 1.0 - acc.mean_generations / bon.mean_generations;
    let recall_gap = 100.0 * (acc.metrics.recall.unwrap() - bon.metrics.recall.unwrap()).abs();
    check(
        saving >= 0.20 && recall_gap <= 1.5,
        format!(
            "mean generations {:.2} vs {:.2} ({:.1}% fewer, >= 20%); recall {:.2}% vs {:.2}% (gap {recall_gap:.2} points, <= 1.5)",
            acc.mean_generations,
            bon.mean_generations,
            100.0 * saving,
            100.0 * acc.metrics.recall.unwrap(),
            100.0 * bon.metrics.recall.unwrap()
        ),
    )
}

fn criterion_11() -> Check {
    let prompt = bare_prompt(0);
    let model = identity_model();
    let guard_taus = ThresholdSchedule {
        n: 16,
        loops: 2,
        taus: vec![0.38, 0.748],
    };
    let zero = ThresholdSchedule::accelerator(16, 2);
    let run = |scores: &[f64], schedule: &ThresholdSchedule, mode: Mode| {
        let policy = ScriptedPolicy::from_scores(scores);
        let outcome = best_of_mini_n(
            &prompt,
            &MiniNConfig::new(16, 2, mode),
            schedule,
            &policy,
            &model,
            &mut stream_rng(11, &[]),
        )
        .unwrap();
        (
            outcome.loops_used,
            outcome.found_acceptable,
            outcome.generations_consumed,
            outcome.abstained(),
            policy.drawn(),
        )
    };

    let mut first = vec![0.0; 32];
    first[7] = 0.38 + 0.1;
    let immediate = run(&first, &guard_taus, Mode::Guardrail);
    let exhausted = run(&[-1.0], &guard_taus, Mode::Guardrail);
    let mut rising = vec![0.1; 32];
    rising[3] = 0.3;
    rising[16 + 9] = 0.6;
    let rising_guard = run(&rising, &guard_taus, Mode::Guardrail);
    let rising_accel = run(&rising, &zero, Mode::Accelerator);

    let ok = immediate == (1, true, 16, false, 16)
        && exhausted == (2, false, 32, true, 32)
        && rising_guard == (2, false, 32, true, 32)
        && rising_accel == (1, true, 16, false, 16);
    check(
        ok,
        format!(
            "(loops, found, generations, abstained, drawn): immediate {immediate:?}, all -1 {exhausted:?}, maxima [0.3, 0.6] guardrail {rising_guard:?}, accelerator {rising_accel:?}"
        ),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 11] = [
        ("metric formulas", criterion_1),
        ("gumbel-max vs logit", criterion_2),
        ("gradient vs finite differences", criterion_3),
        ("reward recovery", criterion_4),
        ("choice-based sampling bias", criterion_5),
        ("best-of-n false positives grow with N", criterion_6),
        ("false-acceptance oracle", criterion_7),
        ("threshold calibration", criterion_8),
        ("guardrail effectiveness", criterion_9),
        ("accelerator effectiveness", criterion_10),
        ("mini-N trace conformance", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        if !outcome.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<40} {} [{:.1}s] {}",
            i + 1,
            name,
            if outcome.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
