//! Outside-option discrete-choice reward modelling.
//!
//! The crate covers the whole loop of an acceptability-aware reward model:
//!
//! * [`choice`]: multinomial-logit probabilities with an explicit outside
//!   option whose normalized reward is pinned at zero.
//! * [`world`]: a synthetic generator/labeller world with known ground truth,
//!   including the prompt-dependent rejection threshold.
//! * [`estimator`]: maximum-likelihood fitting of a linear reward model.
//! * [`evaluation`]: binary acceptability metrics, choice-proportion
//!   diagnostics and the choice-based-sampling bias.
//! * [`calibration`]: hard-prompt detection and guardrail thresholds from an
//!   empirical CDF.
//! * [`inference`]: Best-of-N, best-of-mini-N in-loop and false-acceptance
//!   analysis.
//! * [`experiment`]: the end-to-end pipeline behind the `outside-option` binary.

pub mod calibration;
pub mod choice;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod experiment;
pub mod inference;
pub mod numeric;
pub mod seed;
pub mod world;

pub use error::{Error, Result};
