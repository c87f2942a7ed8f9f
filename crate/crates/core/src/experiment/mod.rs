//! End-to-end experiment pipeline: data generation, fitting, calibration
//! and inference comparison, with every artifact written to one directory.

mod config;
mod io;
mod stages;

pub use config::{
    CalibrationParams, DataParams, ExperimentConfig, InferenceParams, SCHEMA_VERSION,
};
pub use io::{
    read_dataset, read_json, write_dataset, write_json, CandidateRecord, ObservationRecord,
};
pub use stages::{
    calibrate, fit, full, gen_data, run, CalibrationOutput, FitOutput, GenDataOutput, Manifest,
    RunOutput, StageError, StageRecord, ARTIFACTS,
};
