//! Hard-prompt detection with a one-sided binomial test, and the guardrail
//! threshold schedule built from the pooled scores of hard prompts.

use outside_option::calibration::{
    binomial_p_value, build_empirical_cdf, build_schedule, identify_hard_prompts, threshold_for_n,
    HardPromptTest,
};
use outside_option::estimator::{fit_mle, TrainingConfig};
use outside_option::seed::tag;
use outside_option::world::{SyntheticWorld, WorldConfig};

fn main() -> outside_option::Result<()> {
    println!(
        "P(Bin(150, 0.05) <= 1) = {:.3e}",
        binomial_p_value(150, 0.05, 1)?
    );

    let world = SyntheticWorld::new(WorldConfig::default())?;
    let train = world.build_choice_dataset(tag::TRAIN_PROMPTS, 10_000)?;
    let model = fit_mle(&train, &TrainingConfig::default())?.params;

    let pool = world.sample_prompts(tag::POOL_PROMPTS, 500);
    let scan = identify_hard_prompts(&pool, &world, &model, HardPromptTest::default(), 3)?;
    println!(
        "{} of {} pool prompts are hard; {} pooled scores",
        scan.hard_count(),
        pool.len(),
        scan.hard_scores.len()
    );

    let cdf = build_empirical_cdf(scan.hard_scores)?;
    println!("F(0) = {:.4}", cdf.cdf(0.0));
    println!("{:>4}  {:>8}", "N", "tau_N");
    for n in [1, 2, 4, 8, 16, 32] {
        println!("{n:>4}  {:>8.4}", threshold_for_n(&cdf, n)?);
    }
    let schedule = build_schedule(&cdf, 16, 2)?;
    println!("mini-16, 2 loops: {}", serde_json::to_string(&schedule)?);
    Ok(())
}
