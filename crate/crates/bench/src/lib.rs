//! Benchmarks for `erw-core`; see `benches/`. Run with
//! `cargo bench -p erw-bench`.

use erw_core::ModelParams;

/// Parameter sets shared by the benchmarks, one per regime.
pub fn regime_params() -> [(&'static str, ModelParams); 3] {
    [
        ("diffusive", ModelParams::new(0.6, 0.2, 0.2, 0.5).unwrap()),
        (
            "critical",
            ModelParams::new(0.75, 0.125, 0.125, 0.8).unwrap(),
        ),
        (
            "superdiffusive",
            ModelParams::new(0.85, 0.05, 0.1, 0.9375).unwrap(),
        ),
    ]
}
