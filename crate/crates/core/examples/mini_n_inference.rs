//! Best-of-mini-N with early exit. Scripted traces show the control flow;
//! a synthetic evaluation compares the guardrail and accelerator with
//! standard Best-of-N at the same budget.

use outside_option::calibration::{
    build_empirical_cdf, build_schedule, identify_hard_prompts, HardPromptTest, ThresholdSchedule,
};
use outside_option::estimator::{fit_mle, RewardModelParams, TrainingConfig};
use outside_option::inference::{
    best_of_mini_n, compare_modes, MiniNConfig, Mode, OnExhaustion, ScriptedPolicy,
};
use outside_option::seed::{stream_rng, tag};
use outside_option::world::{SyntheticPrompt, SyntheticWorld, WorldConfig};

fn trace(label: &str, scores: &[f64], taus: &[f64], mode: Mode) -> outside_option::Result<()> {
    let prompt = SyntheticPrompt {
        id: 0,
        features: vec![],
        rejection_threshold: 0.0,
        difficulty: None,
    };
    let identity = RewardModelParams {
        weights: vec![1.0],
        bias: 0.0,
    };
    let schedule = ThresholdSchedule {
        n: 16,
        loops: taus.len(),
        taus: taus.to_vec(),
    };
    let policy = ScriptedPolicy::from_scores(scores);
    let config = MiniNConfig::new(16, taus.len(), mode);
    let out = best_of_mini_n(
        &prompt,
        &config,
        &schedule,
        &policy,
        &identity,
        &mut stream_rng(0, &[]),
    )?;
    println!(
        "{label:<28} loops {} generations {} found {} abstained {} maxima {:?}",
        out.loops_used,
        out.generations_consumed,
        out.found_acceptable,
        out.abstained(),
        out.loop_maxima
    );
    Ok(())
}

fn main() -> outside_option::Result<()> {
    // Two loops of 16: the first peaks at 0.3, the second at 0.6.
    let mut rising = vec![0.1; 32];
    rising[5] = 0.3;
    rising[20] = 0.6;
    let mut strong = vec![0.1; 32];
    strong[3] = 0.48;
    trace(
        "guardrail, exit in loop 1",
        &strong,
        &[0.38, 0.748],
        Mode::Guardrail,
    )?;
    trace(
        "guardrail, all scores -1",
        &[-1.0],
        &[0.38, 0.748],
        Mode::Guardrail,
    )?;
    trace(
        "guardrail, maxima 0.3, 0.6",
        &rising,
        &[0.38, 0.748],
        Mode::Guardrail,
    )?;
    trace(
        "accelerator, maxima 0.3, 0.6",
        &rising,
        &[0.0, 0.0],
        Mode::Accelerator,
    )?;

    let world = SyntheticWorld::new(WorldConfig::default())?;
    let train = world.build_choice_dataset(tag::TRAIN_PROMPTS, 10_000)?;
    let model = fit_mle(&train, &TrainingConfig::default())?.params;
    let pool = world.sample_prompts(tag::POOL_PROMPTS, 500);
    let scan = identify_hard_prompts(&pool, &world, &model, HardPromptTest::default(), 3)?;
    let schedule = build_schedule(&build_empirical_cdf(scan.hard_scores)?, 16, 2)?;

    let eval = world.sample_prompts(tag::EVAL_PROMPTS, 300);
    let table = compare_modes(
        &eval,
        16,
        2,
        &schedule,
        OnExhaustion::Abstain,
        OnExhaustion::ReturnBest,
        2,
        &world,
        &model,
        5,
    )?;
    println!("\nmode         fp  recall  mean reward  generations  abstained");
    for s in table {
        println!(
            "{:<11} {:>3}  {:>6.3}  {:>11.4}  {:>11.2}  {:>9}",
            s.mode.to_string(),
            s.metrics.fp,
            s.metrics.recall.unwrap_or(f64::NAN),
            s.mean_true_reward,
            s.mean_generations,
            s.abstain_count
        );
    }
    Ok(())
}
