use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{ChoiceObservation, SyntheticPrompt, SyntheticResponse};

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub prompt_id: u64,
    pub prompt_features: Vec<f64>,
    pub rejection_threshold: f64,
    pub candidates: Vec<CandidateRecord>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub features: Vec<f64>,
    pub true_utility: f64,
}

impl From<&ChoiceObservation> for ObservationRecord {
    fn from(obs: &ChoiceObservation) -> Self {
        Self {
            prompt_id: obs.prompt.id,
            prompt_features: obs.prompt.features.clone(),
            rejection_threshold: obs.prompt.rejection_threshold,
            candidates: obs
                .candidates
                .iter()
                .map(|c| CandidateRecord {
                    features: c.features.clone(),
                    true_utility: c.true_utility,
                })
                .collect(),
            chosen: obs.chosen,
        }
    }
}

impl ObservationRecord {
    pub fn into_observation(self) -> Result<ChoiceObservation> {
        let prompt = SyntheticPrompt {
            id: self.prompt_id,
            features: self.prompt_features,
            rejection_threshold: self.rejection_threshold,
            difficulty: None,
        };
        let candidates = self
            .candidates
            .into_iter()
            .map(|c| SyntheticResponse::new(&prompt, c.features, c.true_utility))
            .collect();
        let obs = ChoiceObservation {
            prompt,
            candidates,
            chosen: self.chosen,
        };
        obs.validate()?;
        Ok(obs)
    }
}

/// Writes one JSON object per line.
pub fn write_dataset(path: &Path, dataset: &[ChoiceObservation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for obs in dataset {
        serde_json::to_writer(&mut out, &ObservationRecord::from(obs))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file; errors carry the 1-based line number.
/// Blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<ChoiceObservation>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dataset = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: ObservationRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(e.to_string()))?;
        dataset.push(
            record
                .into_observation()
                .map_err(|e| parse_error(e.to_string()))?,
        );
    }
    Ok(dataset)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
