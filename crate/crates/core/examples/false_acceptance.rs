//! False acceptance grows with N on hard prompts. The decomposition splits
//! the rate by how many acceptable candidates a run happened to draw.

use outside_option::calibration::{identify_hard_prompts, HardPromptTest};
use outside_option::estimator::{fit_mle, TrainingConfig};
use outside_option::inference::{false_acceptance_curve, false_acceptance_decomposition};
use outside_option::seed::{stream_rng, tag};
use outside_option::world::{target_acceptance, SyntheticWorld, WorldConfig};

fn main() -> outside_option::Result<()> {
    let world = SyntheticWorld::new(WorldConfig::default())?;
    let train = world.build_choice_dataset(tag::TRAIN_PROMPTS, 10_000)?;
    let model = fit_mle(&train, &TrainingConfig::default())?.params;

    let pool = world.sample_prompts(tag::POOL_PROMPTS, 500);
    let scan = identify_hard_prompts(&pool, &world, &model, HardPromptTest::default(), 3)?;
    let hard: Vec<_> = pool
        .iter()
        .zip(&scan.reports)
        .filter(|(_, r)| r.is_hard)
        .map(|(p, _)| p.clone())
        .collect();
    let n_values = [1, 2, 4, 8, 16, 32];
    let curve = false_acceptance_curve(&hard, &n_values, 20, &world, &model, 9)?;
    println!(
        "{} hard prompts, {} runs per point",
        hard.len(),
        curve.trials_per_point
    );
    println!("   N   false acceptances   P_FA      mean true reward");
    for i in 0..curve.len() {
        println!(
            "{:>4}   {:>17}   {:.4}    {:+.4}",
            curve.n_values[i],
            curve.fp_counts[i],
            curve.pfa_estimates[i],
            curve.mean_true_reward[i]
        );
    }

    let difficulty = 3.0;
    let prompt = world.generate_prompt(10_000, difficulty, &mut stream_rng(4, &[]));
    let p_g = target_acceptance(difficulty);
    let d = false_acceptance_decomposition(&prompt, 8, 20_000, p_g, &world, &model, 9)?;
    println!(
        "\nsingle prompt, p_g = {p_g:.4}, N = 8: P_FA = {:.4} +/- {:.4}, recombined {:.4}, TV to binomial {:.4}",
        d.estimate.pfa, d.estimate.half_width, d.recombined, d.tv_to_binomial
    );
    println!("  k   q_hat    Bin(N,p_g)   a_hat");
    for s in d.strata.iter().filter(|s| s.runs > 0) {
        println!(
            "{:>3}   {:.4}   {:.4}       {}",
            s.k,
            s.q_hat,
            s.q_binomial,
            s.a_hat.map_or("NA".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}
