use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::io::{read_dataset, read_json, write_dataset, write_json};
use crate::calibration::{
    build_empirical_cdf, build_schedule, identify_hard_prompts, threshold_for_n, HardPromptReport,
    ThresholdSchedule,
};
use crate::error::{Error, Result};
use crate::estimator::{fit_mle, total_log_likelihood, FitResult, TrainingConfig};
use crate::evaluation::{
    binarize, confusion_metrics, format_ratio, oracle_confusion_metrics, ConfusionMetrics,
};
use crate::inference::{compare_modes, false_acceptance_curve, Mode, ModeSummary};
use crate::seed::tag;
use crate::world::{ChoiceObservation, SyntheticWorld, WorldConfig};

/// File names written by the pipeline, relative to the output directory.
pub const ARTIFACTS: &[&str] = &[
    "world.json",
    "train.jsonl",
    "heldout.jsonl",
    "fit.json",
    "heldout_metrics.csv",
    "schedule.json",
    "hard_prompts.csv",
    "thresholds.csv",
    "modes.csv",
    "bon_curve.csv",
    "bon_curve_hard.csv",
];

const MANIFEST: &str = "manifest.json";

/// Why a stage stopped. Non-convergence still leaves `fit.json` on disk.
#[derive(Debug)]
pub enum StageError {
    Failed(Error),
    NotConverged(Box<FitOutput>),
}

impl From<Error> for StageError {
    fn from(e: Error) -> Self {
        StageError::Failed(e)
    }
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageError::Failed(e) => e.fmt(f),
            StageError::NotConverged(out) => write!(
                f,
                "fit did not converge after {} iterations (gradient norm {:e})",
                out.fit.iterations_used, out.fit.gradient_norm
            ),
        }
    }
}

impl std::error::Error for StageError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub status: String,
    pub files: Vec<String>,
}

/// Record of one output directory. Durations are the only fields that
/// vary between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl Manifest {
    fn open(config: &ExperimentConfig) -> Self {
        let path = config.output_dir.join(MANIFEST);
        let fresh = Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            stages: Vec::new(),
            warnings: Vec::new(),
        };
        match read_json::<Manifest>(&path) {
            Ok(old) if old.seed == config.seed && old.config == *config => Self {
                stages: old.stages,
                warnings: old.warnings,
                ..fresh
            },
            _ => fresh,
        }
    }

    /// Every file listed by any recorded stage, manifest included.
    pub fn files(&self) -> Vec<String> {
        let mut files: Vec<String> = self
            .stages
            .iter()
            .flat_map(|s| s.files.iter().cloned())
            .collect();
        files.push(MANIFEST.to_string());
        files.sort();
        files.dedup();
        files
    }

    fn record(&mut self, dir: &Path, record: StageRecord, warnings: Vec<String>) -> Result<()> {
        self.stages.retain(|s| s.name != record.name);
        self.stages.push(record);
        for w in warnings {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
        write_json(&dir.join(MANIFEST), self)
    }
}

/// Runs `body` as a named stage and records it in the manifest whether or
/// not it succeeds.
fn stage<T>(
    config: &ExperimentConfig,
    name: &str,
    files: &[&str],
    body: impl FnOnce(&Path, &mut Vec<String>) -> Result<T, StageError>,
) -> Result<T, StageError> {
    config.validate()?;
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::open(config);
    let mut warnings = Vec::new();
    let start = Instant::now();
    let result = body(dir, &mut warnings);
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("failed: {e}"),
    };
    let written = files
        .iter()
        .filter(|f| dir.join(f).exists())
        .map(|f| f.to_string())
        .collect();
    let record = StageRecord {
        name: name.to_string(),
        seconds: start.elapsed().as_secs_f64(),
        status,
        files: written,
    };
    manifest.record(dir, record, warnings)?;
    result
}

fn world(config: &ExperimentConfig) -> Result<SyntheticWorld> {
    SyntheticWorld::new(config.world.clone())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenDataOutput {
    pub train_path: PathBuf,
    pub heldout_path: PathBuf,
    pub train: Vec<ChoiceObservation>,
    pub heldout: Vec<ChoiceObservation>,
}

/// Generates the labelled dataset and splits it into training and held-out
/// files.
pub fn gen_data(config: &ExperimentConfig) -> Result<GenDataOutput, StageError> {
    let config = config.effective();
    let files = ["world.json", "train.jsonl", "heldout.jsonl"];
    stage(&config, "gen-data", &files, |dir, _| {
        let world = world(&config)?;
        let mut train = world.build_choice_dataset(tag::TRAIN_PROMPTS, config.data.num_prompts)?;
        let heldout = train.split_off(config.data.train_size);
        let out = GenDataOutput {
            train_path: dir.join("train.jsonl"),
            heldout_path: dir.join("heldout.jsonl"),
            train,
            heldout,
        };
        write_json::<WorldConfig>(&dir.join("world.json"), world.config())?;
        write_dataset(&out.train_path, &out.train)?;
        write_dataset(&out.heldout_path, &out.heldout)?;
        Ok(out)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub seed: u64,
    pub training: TrainingConfig,
    pub train_observations: usize,
    pub heldout_observations: usize,
    pub fit: FitResult,
    pub train_log_likelihood: f64,
    /// `None` when the held-out file is empty.
    pub heldout_log_likelihood: Option<f64>,
    pub heldout_mean_log_likelihood: Option<f64>,
    pub heldout_metrics: Option<ConfusionMetrics>,
    pub heldout_oracle_metrics: Option<ConfusionMetrics>,
}

/// Fits the reward model on `train.jsonl`, scores `heldout.jsonl`, and
/// writes `fit.json`. A fit that stops short of the gradient tolerance is
/// written and then reported as [`StageError::NotConverged`].
pub fn fit(config: &ExperimentConfig) -> Result<FitOutput, StageError> {
    let config = config.effective();
    let files = ["fit.json", "heldout_metrics.csv"];
    stage(&config, "fit", &files, |dir, _| {
        let train = read_dataset(&dir.join("train.jsonl"))?;
        let heldout = read_dataset(&dir.join("heldout.jsonl"))?;
        if train.is_empty() {
            return Err(Error::Empty("training dataset").into());
        }
        let result = fit_mle(&train, &config.training)?;
        let params = &result.params;
        let train_ll = total_log_likelihood(params, &train, 0.0)?;
        let (heldout_ll, metrics, oracle) = if heldout.is_empty() {
            (None, None, None)
        } else {
            let instances = binarize(&heldout, params);
            (
                Some(total_log_likelihood(params, &heldout, 0.0)?),
                Some(confusion_metrics(&instances, 0.0)?),
                Some(oracle_confusion_metrics(&instances, 0.0)?),
            )
        };
        let out = FitOutput {
            seed: config.seed,
            training: config.training.clone(),
            train_observations: train.len(),
            heldout_observations: heldout.len(),
            train_log_likelihood: train_ll,
            heldout_mean_log_likelihood: heldout_ll.map(|ll| ll / heldout.len() as f64),
            heldout_log_likelihood: heldout_ll,
            heldout_metrics: metrics,
            heldout_oracle_metrics: oracle,
            fit: result,
        };
        write_json(&dir.join("fit.json"), &out)?;
        let mut rows = Vec::new();
        for (labels, m) in [("observed", metrics), ("oracle", oracle)] {
            if let Some(m) = m {
                let mut row = vec!["reward_model".into(), labels.into(), "1".into(), "0".into()];
                row.extend(metric_cells(&m));
                rows.push(row);
            }
        }
        write_csv(
            &dir.join("heldout_metrics.csv"),
            &[
                "method",
                "labels",
                "N",
                "threshold",
                "tp",
                "fp",
                "tn",
                "fn",
                "precision",
                "recall",
                "fpr",
            ],
            &rows,
        )?;
        if !out.fit.converged {
            return Err(StageError::NotConverged(Box::new(out)));
        }
        Ok(out)
    })
}

fn metric_cells(m: &ConfusionMetrics) -> Vec<String> {
    vec![
        m.tp.to_string(),
        m.fp.to_string(),
        m.tn.to_string(),
        m.fn_.to_string(),
        format_ratio(m.precision),
        format_ratio(m.recall),
        format_ratio(m.fpr),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutput {
    pub reports: Vec<HardPromptReport>,
    pub schedule: ThresholdSchedule,
    /// `(N, tau_N)` for each budget in the configured curve.
    pub thresholds: Vec<(usize, f64)>,
    pub hard_count: usize,
}

/// Screens the candidate pool for hard prompts and derives the guardrail
/// schedule. With no hard prompts the schedule is all zeros and a warning
/// is recorded.
pub fn calibrate(config: &ExperimentConfig) -> Result<CalibrationOutput, StageError> {
    let config = config.effective();
    let files = ["schedule.json", "hard_prompts.csv", "thresholds.csv"];
    stage(&config, "calibrate", &files, |dir, warnings| {
        let fit: FitOutput = read_json(&dir.join("fit.json"))?;
        let world = world(&config)?;
        let pool = world.sample_prompts(tag::POOL_PROMPTS, config.calibration.pool_size);
        let scan = identify_hard_prompts(
            &pool,
            &world,
            &fit.fit.params,
            config.calibration.test,
            config.seed,
        )?;
        let inf = &config.inference;
        let (schedule, thresholds) = if scan.hard_scores.is_empty() {
            let msg = "calibrate: no hard prompts found; guardrail schedule falls back to all-zero thresholds";
            eprintln!("warning: {msg}");
            warnings.push(msg.to_string());
            let zeros = inf.n_values.iter().map(|&n| (n, 0.0)).collect();
            (ThresholdSchedule::accelerator(inf.n, inf.loops), zeros)
        } else {
            let cdf = build_empirical_cdf(scan.hard_scores.clone())?;
            let schedule = build_schedule(&cdf, inf.n, inf.loops)?;
            let thresholds = inf
                .n_values
                .iter()
                .map(|&n| Ok((n, threshold_for_n(&cdf, n)?)))
                .collect::<Result<Vec<_>>>()?;
            (schedule, thresholds)
        };
        write_json(&dir.join("schedule.json"), &schedule)?;
        let rows: Vec<Vec<String>> = scan
            .reports
            .iter()
            .map(|r| {
                vec![
                    r.prompt_id.to_string(),
                    r.success_count.to_string(),
                    r.trials.to_string(),
                    format!("{:e}", r.p_value),
                    r.is_hard.to_string(),
                ]
            })
            .collect();
        write_csv(
            &dir.join("hard_prompts.csv"),
            &["prompt_id", "success_count", "trials", "p_value", "is_hard"],
            &rows,
        )?;
        let rows: Vec<Vec<String>> = thresholds
            .iter()
            .map(|(n, t)| vec![n.to_string(), format!("{t:.6}")])
            .collect();
        write_csv(&dir.join("thresholds.csv"), &["N", "tau"], &rows)?;
        Ok(CalibrationOutput {
            hard_count: scan.hard_count(),
            reports: scan.reports,
            schedule,
            thresholds,
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub modes: Vec<ModeSummary>,
    pub bon_curve: Vec<ModeSummary>,
    pub hard_curve: Vec<ModeSummary>,
}

const TABLE_HEADER: &[&str] = &[
    "mode",
    "N",
    "n",
    "L",
    "tp",
    "fp",
    "tn",
    "fn",
    "precision",
    "recall",
    "fpr",
    "mean_true_reward",
    "mean_generations",
    "abstain_count",
];

fn table_row(s: &ModeSummary) -> Vec<String> {
    let mut row = vec![
        s.mode.to_string(),
        s.n_total.to_string(),
        s.n.to_string(),
        s.loops.to_string(),
    ];
    row.extend(metric_cells(&s.metrics));
    row.push(format!("{:.6}", s.mean_true_reward));
    row.push(format!("{:.6}", s.mean_generations));
    row.push(s.abstain_count.to_string());
    row
}

fn curve_rows(
    prompts: &[crate::world::SyntheticPrompt],
    config: &ExperimentConfig,
    world: &SyntheticWorld,
    fit: &FitOutput,
) -> Result<Vec<ModeSummary>> {
    if prompts.is_empty() {
        return Ok(Vec::new());
    }
    let inf = &config.inference;
    let curve = false_acceptance_curve(
        prompts,
        &inf.n_values,
        inf.trials_per_prompt,
        world,
        &fit.fit.params,
        config.seed,
    )?;
    Ok((0..curve.len())
        .map(|i| ModeSummary {
            mode: Mode::StandardBon,
            n_total: curve.n_values[i],
            n: curve.n_values[i],
            loops: 1,
            metrics: curve.metrics[i],
            mean_true_reward: curve.mean_true_reward[i],
            mean_generations: curve.n_values[i] as f64,
            abstain_count: 0,
            false_acceptances: curve.fp_counts[i],
            runs: curve.trials_per_point,
        })
        .collect())
}

/// Compares standard Best-of-N, the guardrail and the accelerator on the
/// evaluation slice, and traces the Best-of-N curve on the evaluation slice
/// and on the hard prompts found by `calibrate`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, StageError> {
    let config = config.effective();
    let files = ["modes.csv", "bon_curve.csv", "bon_curve_hard.csv"];
    stage(&config, "run", &files, |dir, _| {
        let fit: FitOutput = read_json(&dir.join("fit.json"))?;
        let schedule: ThresholdSchedule = read_json(&dir.join("schedule.json"))?;
        schedule.validate()?;
        let hard_ids = read_hard_ids(&dir.join("hard_prompts.csv"))?;
        let world = world(&config)?;
        let inf = &config.inference;
        if schedule.n != inf.n || schedule.taus.len() != inf.loops {
            return Err(Error::InvalidArgument(format!(
                "schedule.json is for n = {}, L = {} but the config asks for n = {}, L = {}",
                schedule.n,
                schedule.taus.len(),
                inf.n,
                inf.loops
            ))
            .into());
        }
        let eval = world.sample_prompts(tag::EVAL_PROMPTS, inf.eval_prompts);
        let modes: Vec<ModeSummary> = compare_modes(
            &eval,
            inf.n,
            inf.loops,
            &schedule,
            inf.guardrail_on_exhaustion,
            inf.accelerator_on_exhaustion,
            inf.trials_per_prompt,
            &world,
            &fit.fit.params,
            config.seed,
        )?
        .into_iter()
        .filter(|s| inf.mode.is_none_or(|m| m == s.mode))
        .collect();
        let bon_curve = curve_rows(&eval, &config, &world, &fit)?;
        let hard: Vec<_> = hard_ids
            .iter()
            .map(|&id| world.sample_prompt(tag::POOL_PROMPTS, id))
            .collect();
        let hard_curve = curve_rows(&hard, &config, &world, &fit)?;
        for (name, rows) in [
            ("modes.csv", &modes),
            ("bon_curve.csv", &bon_curve),
            ("bon_curve_hard.csv", &hard_curve),
        ] {
            let rows: Vec<Vec<String>> = rows.iter().map(table_row).collect();
            write_csv(&dir.join(name), TABLE_HEADER, &rows)?;
        }
        Ok(RunOutput {
            modes,
            bon_curve,
            hard_curve,
        })
    })
}

fn read_hard_ids(path: &Path) -> Result<Vec<u64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    })?;
    let mut ids = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let record = record.map_err(|e| parse_error(e.to_string()))?;
        let (Some(id), Some(hard)) = (record.get(0), record.get(4)) else {
            return Err(parse_error("expected 5 columns".into()));
        };
        if hard == "true" {
            ids.push(
                id.parse()
                    .map_err(|e| parse_error(format!("prompt_id: {e}")))?,
            );
        }
    }
    Ok(ids)
}

/// Every stage in order, stopping at the first failure.
pub fn full(
    config: &ExperimentConfig,
) -> Result<(FitOutput, CalibrationOutput, RunOutput), StageError> {
    gen_data(config)?;
    let fitted = fit(config)?;
    let calibration = calibrate(config)?;
    let results = run(config)?;
    Ok((fitted, calibration, results))
}
