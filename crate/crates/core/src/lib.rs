//! Exact and Monte Carlo tools for the elephant random walk with delays.
//!
//! The walk takes steps in `{+1, -1, 0}`. With probability `theta` the next
//! step repeats (w.p. `p`), flips (w.p. `q`) or mutes (w.p. `r`) a uniformly
//! chosen past step; otherwise it is drawn afresh from `(p, q, r)`.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod experiment;
pub mod model;
pub mod montecarlo;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Step, StepDistribution, TrajectoryPoint, WalkState};
pub use montecarlo::{EnsembleConfig, EnsembleResult, MomentAccumulator, SnapshotStats};
pub use oracle::{ExactDistribution, ExactMoments};
pub use params::{DerivedConstants, ModelParams, Regime};
pub use rng::RngStream;
pub use stats::{FiniteCdf, KsResult, SlopeFit};
