use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::HardPromptTest;
use crate::error::{Error, Result};
use crate::estimator::TrainingConfig;
use crate::inference::{Mode, OnExhaustion};
use crate::world::WorldConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataParams {
    /// Labelled prompts generated in total.
    pub num_prompts: usize,
    /// The first `train_size` observations train; the rest are held out.
    pub train_size: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            num_prompts: 12_000,
            train_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationParams {
    /// Candidate prompts screened for hardness.
    pub pool_size: usize,
    #[serde(flatten)]
    pub test: HardPromptTest,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            pool_size: 500,
            test: HardPromptTest::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceParams {
    /// Mini-batch size.
    pub n: usize,
    /// Loops; `n * loops` must equal the largest entry of `n_values`.
    pub loops: usize,
    /// Budgets for the standard Best-of-N curve.
    pub n_values: Vec<usize>,
    pub eval_prompts: usize,
    pub trials_per_prompt: usize,
    /// Restrict the comparison table to one mode; all three when absent.
    pub mode: Option<Mode>,
    pub guardrail_on_exhaustion: OnExhaustion,
    pub accelerator_on_exhaustion: OnExhaustion,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            n: 16,
            loops: 2,
            n_values: vec![1, 2, 4, 8, 16, 32],
            eval_prompts: 1_000,
            trials_per_prompt: 2,
            mode: None,
            guardrail_on_exhaustion: OnExhaustion::Abstain,
            accelerator_on_exhaustion: OnExhaustion::ReturnBest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Every field but `schema_version` may be omitted and takes its default.
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed; overrides `world.rng_seed` and `training.rng_seed`.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub data: DataParams,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub calibration: CalibrationParams,
    #[serde(default)]
    pub inference: InferenceParams,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_seed() -> u64 {
    WorldConfig::default().rng_seed
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            world,
            data: DataParams::default(),
            training: TrainingConfig::default(),
            calibration: CalibrationParams::default(),
            inference: InferenceParams::default(),
            output_dir: default_output_dir(),
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(config)
    }

    /// Copy with the master seed pushed into the sub-configs.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.world.rng_seed = c.seed;
        c.training.rng_seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.world.validate()?;
        self.training.validate()?;
        if self.data.num_prompts == 0 {
            return bad("data.num_prompts must be at least 1");
        }
        if self.data.train_size == 0 || self.data.train_size > self.data.num_prompts {
            return bad("data.train_size must lie in 1..=num_prompts");
        }
        let t = &self.calibration.test;
        if self.calibration.pool_size == 0 || t.trials == 0 {
            return bad("calibration needs pool_size >= 1 and trials >= 1");
        }
        if !(t.p_min > 0.0 && t.p_min < 1.0 && t.alpha > 0.0 && t.alpha < 1.0) {
            return bad("calibration p_min and alpha must lie in (0, 1)");
        }
        let inf = &self.inference;
        if inf.n == 0 || inf.loops == 0 || inf.eval_prompts == 0 || inf.trials_per_prompt == 0 {
            return bad("inference n, loops, eval_prompts and trials_per_prompt must be positive");
        }
        if inf.n_values.is_empty()
            || inf.n_values[0] == 0
            || inf.n_values.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("inference.n_values must be positive and strictly ascending");
        }
        if inf.n * inf.loops != *inf.n_values.last().expect("non-empty") {
            return bad("inference n * loops must equal the largest entry of n_values");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        Ok(())
    }
}
