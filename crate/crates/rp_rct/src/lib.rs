//! Toolkit for randomized controlled trials whose binary outcomes are
//! collected through a forced-response privatization mechanism.
//!
//! Respondents are split at random into two groups, each answering through a
//! randomizing device with different forcing rates. The split makes the rate
//! of protocol non-compliance ("cheating") identifiable, and the treatment
//! effect among compliant respondents can then be recovered from the
//! privatized responses alone.
//!
//! The crate is organized around the trial life cycle:
//!
//! * [`mechanism`]: the forced-response device and its privacy loss.
//! * [`design`]: choosing forcing rates for a privacy budget, efficiency
//!   quotes, and sample-size calculations.
//! * [`simulate`]: synthetic populations, protocol simulation, and Monte
//!   Carlo replication.
//! * [`estimate`]: cheater-rate and treatment-effect estimators with
//!   analytic and bootstrap uncertainty.
//! * [`glm`]: self-contained logistic regression used for covariate
//!   adjustment.
//! * [`dataio`]: CSV schemas, validation, and report rendering.
//! * [`cli`]: the `rp-rct` command-line interface.

pub mod cli;
pub mod dataio;
pub mod design;
pub mod error;
pub mod estimate;
pub mod glm;
pub mod mechanism;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
