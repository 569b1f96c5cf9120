//! Seeded ensembles, martingale diagnostics and the estimators built on them.

mod accumulator;
mod diagnostics;
mod ensemble;

pub use accumulator::{tree_merge, MomentAccumulator};
pub use diagnostics::{
    bootstrap_variance_ci, estimate_w, lil_diagnostic, martingale_track, median,
    residual_clt_sample, residuals_from_samples, w_estimate_from_sample, LilTrace,
    MartingaleSnapshot, ResidualSample, WEstimate, BOOTSTRAP_RESAMPLES, DEFAULT_HORIZON_FACTOR,
    MIN_HORIZON_FACTOR,
};
pub use ensemble::{
    dyadic_grid, run_ensemble, EnsembleConfig, EnsembleResult, SnapshotStats, DEFAULT_RESERVOIR,
};
