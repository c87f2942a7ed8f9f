//! The synthetic generator/labeller world: prompt difficulty, calibrated
//! rejection thresholds, and Gumbel-max labelling.

use outside_option::choice::{choice_probabilities, RewardVector};
use outside_option::evaluation::choice_proportions;
use outside_option::seed::{stream_rng, tag};
use outside_option::world::{
    acceptable_fraction, simulate_labeller_choice, target_acceptance, SyntheticWorld, WorldConfig,
};

fn main() -> outside_option::Result<()> {
    let world = SyntheticWorld::new(WorldConfig::default())?;

    println!("difficulty  target p_g  realized p_g");
    let mut rng = stream_rng(1, &[]);
    for (id, d) in [-2.0, 0.0, 2.0, 4.0].into_iter().enumerate() {
        let prompt = world.generate_prompt(id as u64, d, &mut rng);
        let responses = world.generate_responses(&prompt, 5_000, &mut rng)?;
        println!(
            "{d:>10.1}  {:>10.3}  {:>12.3}",
            target_acceptance(d),
            acceptable_fraction(&responses)
        );
    }

    // The labeller's empirical choice shares match the logit probabilities.
    let rewards = RewardVector::new(vec![1.0, -1.0])?;
    let exact = choice_probabilities(&rewards);
    let mut counts = [0usize; 3];
    let draws = 200_000;
    for _ in 0..draws {
        counts[simulate_labeller_choice(&rewards, &mut rng)] += 1;
    }
    println!("\nclass  logit   simulated");
    for (k, c) in counts.iter().enumerate() {
        println!(
            "{k:>5}  {:.4}  {:.4}",
            exact.probabilities()[k],
            *c as f64 / draws as f64
        );
    }

    let data = world.build_choice_dataset(tag::TRAIN_PROMPTS, 2_000)?;
    let q = choice_proportions(&data)?;
    println!(
        "\nlabelled dataset of {} prompts, choice shares {:.3?}",
        data.len(),
        q.q
    );
    Ok(())
}
