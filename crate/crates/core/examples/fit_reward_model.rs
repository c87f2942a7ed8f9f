//! Maximum-likelihood fit of a linear reward model on labelled choices, and
//! recovery of the ground-truth normalized reward on held-out candidates.

use outside_option::estimator::{fit_mle, RewardModel, TrainingConfig};
use outside_option::numeric::pearson;
use outside_option::seed::tag;
use outside_option::world::{SyntheticWorld, WorldConfig};

fn main() -> outside_option::Result<()> {
    let world = SyntheticWorld::new(WorldConfig::default())?;
    let train = world.build_choice_dataset(tag::TRAIN_PROMPTS, 10_000)?;
    let heldout = world.build_choice_dataset(tag::HELDOUT_PROMPTS, 1_000)?;

    let fit = fit_mle(&train, &TrainingConfig::default())?;
    println!(
        "converged: {} after {} iterations, log-likelihood {:.2} -> {:.2}",
        fit.converged, fit.iterations_used, fit.initial_log_likelihood, fit.final_log_likelihood
    );
    println!("true weights   {:+.3?}", world.config().true_weights);
    println!(
        "fitted weights {:+.3?}, bias {:+.3}",
        fit.params.weights, fit.params.bias
    );

    let (mut fitted, mut truth) = (Vec::new(), Vec::new());
    for obs in &heldout {
        for c in &obs.candidates {
            fitted.push(fit.params.score(&obs.prompt, c));
            truth.push(c.true_normalized_reward);
        }
    }
    let agree = fitted
        .iter()
        .zip(&truth)
        .filter(|(f, t)| (**f > 0.0) == (**t > 0.0))
        .count();
    println!(
        "held-out: pearson {:.4}, sign agreement {:.3}",
        pearson(&fitted, &truth),
        agree as f64 / truth.len() as f64
    );
    Ok(())
}
