//! Acceptability evaluation and choice-proportion diagnostics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_mle, FitResult, RewardModel, TrainingConfig};
use crate::numeric::{mean, std_dev};
use crate::seed;
use crate::world::ChoiceObservation;

/// One binary acceptability example derived from a labelled choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryInstance {
    pub prompt_id: u64,
    /// 1-based candidate index within the observation.
    pub candidate: usize,
    /// Label implied by the observed choice.
    pub label: bool,
    /// Sign of the true normalized reward; not observable in practice.
    pub oracle_label: bool,
    pub model_score: f64,
}

/// A chosen candidate becomes one positive; choosing the outside option makes
/// every candidate a negative. Non-chosen candidates next to a chosen one
/// carry no acceptability information and are dropped.
pub fn binarize<M: RewardModel>(dataset: &[ChoiceObservation], model: &M) -> Vec<BinaryInstance> {
    let mut out = Vec::new();
    for obs in dataset {
        let make = |idx: usize, label: bool| {
            let c = &obs.candidates[idx - 1];
            BinaryInstance {
                prompt_id: obs.prompt.id,
                candidate: idx,
                label,
                oracle_label: c.is_acceptable(),
                model_score: model.score(&obs.prompt, c),
            }
        };
        if obs.chosen > 0 {
            out.push(make(obs.chosen, true));
        } else {
            out.extend((1..=obs.candidates.len()).map(|i| make(i, false)));
        }
    }
    out
}

/// Confusion counts with ratios; a ratio whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            fpr: ratio(fp, fp + tn),
        }
    }

    /// Tallies `(predicted, actual)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (predicted, actual) in pairs {
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Text form of an optional ratio for CSV output.
pub fn format_ratio(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// Metrics against the observed-choice labels. Positive prediction is
/// `model_score > threshold`, strictly.
pub fn confusion_metrics(instances: &[BinaryInstance], threshold: f64) -> Result<ConfusionMetrics> {
    if instances.is_empty() {
        return Err(Error::Empty("binary instances"));
    }
    Ok(ConfusionMetrics::from_pairs(
        instances
            .iter()
            .map(|i| (i.model_score > threshold, i.label)),
    ))
}

/// Same as [`confusion_metrics`] but against the ground-truth sign.
pub fn oracle_confusion_metrics(
    instances: &[BinaryInstance],
    threshold: f64,
) -> Result<ConfusionMetrics> {
    if instances.is_empty() {
        return Err(Error::Empty("binary instances"));
    }
    Ok(ConfusionMetrics::from_pairs(
        instances
            .iter()
            .map(|i| (i.model_score > threshold, i.oracle_label)),
    ))
}

/// Choice shares `Q(0..=J)`, index 0 being the outside option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceProportions {
    pub q: Vec<f64>,
}

impl ChoiceProportions {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least the outside option and one candidate".into(),
            ));
        }
        if q.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(
                "proportions must be finite and non-negative".into(),
            ));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "proportions sum to {total}, not 1"
            )));
        }
        Ok(Self { q })
    }

    fn from_counts(counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        Self {
            q: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        }
    }

    /// Multiplies one class's share by `factor` and renormalizes.
    pub fn rescale_class(&self, class: usize, factor: f64) -> Result<Self> {
        let mut q = self.q.clone();
        let slot = q
            .get_mut(class)
            .ok_or_else(|| Error::InvalidArgument(format!("no class {class}")))?;
        *slot *= factor;
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|v| *v /= total);
        Ok(Self { q })
    }
}

fn class_counts(dataset: &[ChoiceObservation], j: usize) -> Vec<usize> {
    let mut counts = vec![0; j + 1];
    for obs in dataset {
        counts[obs.chosen] += 1;
    }
    counts
}

/// Observed choice shares for a dataset with a single choice-set size.
pub fn choice_proportions(dataset: &[ChoiceObservation]) -> Result<ChoiceProportions> {
    let groups = choice_proportions_by_size(dataset)?;
    if groups.len() > 1 {
        return Err(Error::MixedChoiceSetSizes(groups.keys().copied().collect()));
    }
    Ok(groups.into_values().next().expect("non-empty dataset"))
}

/// Choice shares per choice-set size `J`.
pub fn choice_proportions_by_size(
    dataset: &[ChoiceObservation],
) -> Result<BTreeMap<usize, ChoiceProportions>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for obs in dataset {
        obs.validate()?;
        let j = obs.num_candidates();
        groups.entry(j).or_insert_with(|| vec![0; j + 1])[obs.chosen] += 1;
    }
    Ok(groups
        .into_iter()
        .map(|(j, counts)| (j, ChoiceProportions::from_counts(&counts)))
        .collect())
}

/// Additive distortion of candidate `i`'s fitted reward when the model is
/// estimated on shares `h` instead of the population shares `q`:
/// `ln(H(i)/Q(i)) - ln(H(0)/Q(0))`.
pub fn manski_bias(h: &ChoiceProportions, q: &ChoiceProportions, i: usize) -> Result<f64> {
    if h.q.len() != q.q.len() {
        return Err(Error::DimensionMismatch {
            expected: q.q.len(),
            actual: h.q.len(),
        });
    }
    if i == 0 || i >= q.q.len() {
        return Err(Error::InvalidArgument(format!(
            "candidate index {i} out of range"
        )));
    }
    for idx in [0, i] {
        if !(h.q[idx] > 0.0 && q.q[idx] > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "zero proportion for class {idx}"
            )));
        }
    }
    Ok((h.q[i] / q.q[i]).ln() - (h.q[0] / q.q[0]).ln())
}

/// Draws a subsample whose chosen-class shares match `target` as closely as
/// the available counts allow: the largest total `M` with
/// `M * H(c) <= n_c` for all classes, then `round(M * H(c))` per class.
/// The original observation order is kept.
pub fn resample_by_choice(
    dataset: &[ChoiceObservation],
    target: &ChoiceProportions,
    seed: u64,
) -> Result<Vec<ChoiceObservation>> {
    let empirical = choice_proportions(dataset)?;
    let j = empirical.q.len() - 1;
    if target.q.len() != j + 1 {
        return Err(Error::DimensionMismatch {
            expected: j + 1,
            actual: target.q.len(),
        });
    }
    let counts = class_counts(dataset, j);
    let mut total = f64::INFINITY;
    for (class, (&n, &h)) in counts.iter().zip(&target.q).enumerate() {
        if h <= 0.0 || n == 0 {
            return Err(Error::EmptyClass { class });
        }
        total = total.min(n as f64 / h);
    }
    let mut rng = seed::stream_rng(seed, &[seed::tag::RESAMPLE]);
    let mut keep = vec![false; dataset.len()];
    for (class, (&n, &h)) in counts.iter().zip(&target.q).enumerate() {
        let wanted = ((total * h).round() as usize).min(n);
        if wanted == 0 {
            return Err(Error::EmptyClass { class });
        }
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&k| dataset[k].chosen == class)
            .collect();
        if wanted < n {
            members.shuffle(&mut rng);
        }
        for &k in &members[..wanted] {
            keep[k] = true;
        }
    }
    Ok(dataset
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(o, _)| o.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingReport {
    pub empirical_q: Vec<f64>,
    pub target_h: Vec<f64>,
    /// Shares actually realized by the subsample.
    pub realized_h: Vec<f64>,
    pub observations_before: usize,
    pub observations_after: usize,
    /// Closed-form bias for candidates `1..=J` under the realized shares.
    pub closed_form_bias: Vec<f64>,
    /// Mean of (resampled fit - full fit) over held-out candidates.
    pub mean_shift: f64,
    pub shift_std: f64,
    /// Mean shift per candidate position `1..=J`.
    pub shift_by_candidate: Vec<f64>,
    pub baseline: FitResult,
    pub resampled: FitResult,
}

/// Refits the reward model on a choice-resampled copy of `dataset` and
/// measures how far the fitted rewards move on `holdout` candidates,
/// next to the closed-form prediction.
pub fn resampling_bias_experiment(
    dataset: &[ChoiceObservation],
    holdout: &[ChoiceObservation],
    target_h: &ChoiceProportions,
    config: &TrainingConfig,
    seed: u64,
) -> Result<ResamplingReport> {
    if holdout.is_empty() {
        return Err(Error::Empty("holdout"));
    }
    let empirical = choice_proportions(dataset)?;
    let resampled = resample_by_choice(dataset, target_h, seed)?;
    let realized = choice_proportions(&resampled)?;
    let j = empirical.q.len() - 1;
    let closed_form_bias = (1..=j)
        .map(|i| manski_bias(&realized, &empirical, i))
        .collect::<Result<Vec<_>>>()?;

    let baseline = fit_mle(dataset, config)?;
    let refit = fit_mle(&resampled, config)?;

    let mut shifts = Vec::new();
    let mut by_position: Vec<Vec<f64>> = vec![Vec::new(); j];
    for obs in holdout {
        for (pos, c) in obs.candidates.iter().enumerate() {
            let d = refit.params.score(&obs.prompt, c) - baseline.params.score(&obs.prompt, c);
            shifts.push(d);
            if pos < j {
                by_position[pos].push(d);
            }
        }
    }

    Ok(ResamplingReport {
        empirical_q: empirical.q,
        target_h: target_h.q.clone(),
        realized_h: realized.q,
        observations_before: dataset.len(),
        observations_after: resampled.len(),
        closed_form_bias,
        mean_shift: mean(&shifts),
        shift_std: std_dev(&shifts),
        shift_by_candidate: by_position.iter().map(|v| mean(v)).collect(),
        baseline,
        resampled: refit,
    })
}
