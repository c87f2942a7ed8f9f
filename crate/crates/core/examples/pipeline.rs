//! The full pipeline at reduced scale, written to a temporary directory.

use outside_option::experiment::{self, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("outside-option-pipeline-example");
    let mut config = ExperimentConfig {
        output_dir: dir.clone(),
        ..ExperimentConfig::default()
    };
    config.data.num_prompts = 3_000;
    config.data.train_size = 2_500;
    config.calibration.pool_size = 200;
    config.inference.eval_prompts = 200;

    let (fit, calibration, run) = experiment::full(&config)?;
    println!(
        "fit: {} iterations, held-out mean log-likelihood {:.4}",
        fit.fit.iterations_used,
        fit.heldout_mean_log_likelihood.unwrap_or(f64::NAN)
    );
    println!(
        "calibration: {} hard prompts, taus {:.4?}",
        calibration.hard_count, calibration.schedule.taus
    );
    for s in &run.modes {
        println!(
            "{:<11} fp {:>3}  mean reward {:+.4}  generations {:.2}",
            s.mode.to_string(),
            s.metrics.fp,
            s.mean_true_reward,
            s.mean_generations
        );
    }
    let manifest: experiment::Manifest = experiment::read_json(&dir.join("manifest.json"))?;
    println!("artifacts in {}: {:?}", dir.display(), manifest.files());
    Ok(())
}
