//! Choice probabilities with an outside option, and the rewards implied by
//! observed choice shares.

use outside_option::choice::{
    acceptability_probability, choice_probabilities, log_odds_reward, RewardVector,
};

fn main() -> outside_option::Result<()> {
    let rewards = RewardVector::new(vec![1.0, -1.0, 0.5])?;
    let dist = choice_probabilities(&rewards);
    println!("rewards      {:?}", rewards.values());
    println!("P(reject)    {:.4}", dist.outside());
    for (i, p) in dist.probabilities().iter().enumerate().skip(1) {
        println!("P(option {i})  {p:.4}");
    }

    // Shares identify rewards only relative to the outside option.
    for i in 1..dist.num_options() {
        let r = log_odds_reward(dist.get(i).expect("in range"), dist.outside())?;
        println!("recovered r_{i} = {r:+.6}");
    }

    // With one candidate the model reduces to a sigmoid acceptance curve.
    for r in [-2.0, 0.0, 2.0] {
        println!("accept({r:+}) = {:.4}", acceptability_probability(r)?);
    }

    // Shifting every reward down moves mass to rejection.
    let shifted = RewardVector::new(rewards.values().iter().map(|r| r - 2.0).collect())?;
    println!(
        "P(reject) after shifting all rewards by -2: {:.4}",
        choice_probabilities(&shifted).outside()
    );
    Ok(())
}
