//! Choice-based resampling distorts fitted rewards by a closed-form amount.
//! Halving the outside-option class inflates every reward by about log 2.

use outside_option::estimator::TrainingConfig;
use outside_option::evaluation::{choice_proportions, manski_bias, resampling_bias_experiment};
use outside_option::seed::tag;
use outside_option::world::{SyntheticWorld, WorldConfig};

fn main() -> outside_option::Result<()> {
    let world = SyntheticWorld::new(WorldConfig::default())?;
    let data = world.build_choice_dataset(tag::TRAIN_PROMPTS, 20_000)?;
    let holdout = world.build_choice_dataset(tag::HELDOUT_PROMPTS, 500)?;
    let q = choice_proportions(&data)?;
    println!("population shares Q = {:.4?}", q.q);

    let halved = q.rescale_class(0, 0.5)?;
    println!(
        "target shares H = {:.4?}, closed-form bias {:.4} (log 2 = {:.4})",
        halved.q,
        manski_bias(&halved, &q, 1)?,
        std::f64::consts::LN_2
    );

    let config = TrainingConfig::default();
    for (label, target) in [("identity", q.clone()), ("halve class 0", halved)] {
        let report = resampling_bias_experiment(&data, &holdout, &target, &config, 11)?;
        println!(
            "{label:<14} kept {:>6} of {:>6}; closed form {:+.4?}; measured shift {:+.4} (sd {:.4})",
            report.observations_after,
            report.observations_before,
            report.closed_form_bias,
            report.mean_shift,
            report.shift_std
        );
    }
    Ok(())
}
