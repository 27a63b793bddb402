//! Stat-kNNAD: k-nearest-neighbor anomaly detection with exactly valid
//! selective p-values.
//!
//! Detection runs in two stages. Stage 1 screens a test instance with the
//! classical kNN anomaly score. Stage 2 assigns the screened instance a
//! p-value computed from the Gaussian distribution of the test statistic
//! *conditioned on the screening outcome*: the chosen neighbors, the
//! threshold exceedance, the coordinate signs of the statistic, and (when a
//! piecewise-linear feature extractor is used) the activation patterns of
//! every instance. The conditional law is a normal truncated to a union of
//! intervals that this crate computes in closed form.

pub mod events;
pub mod harness;
pub mod inference;
pub mod knnad;
pub mod model;
pub mod plnet;
pub mod truncation;

pub use events::{EventTag, QuadIneq};
pub use inference::PValueReport;
pub use knnad::{KSpec, ScreeningConfig, ScreeningResult};
pub use model::{ConcatVector, Dataset, LineParam, SelectionOutcome, StatisticDirection, StatisticKind};
pub use plnet::PLNetwork;
pub use truncation::IntervalUnion;
