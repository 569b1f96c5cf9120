//! Martingale diagnostics on top of [`run_ensemble`]: the variance clock
//! of `M_n`, the superdiffusive limit `W`, the residual fluctuations around
//! `W a_n`, and running iterated-logarithm ratios.

use serde::{Deserialize, Serialize};

use super::accumulator::MomentAccumulator;
use super::ensemble::{dyadic_grid, run_ensemble, EnsembleConfig, EnsembleResult};
use crate::analytic::{
    a_and_v_at, a_values_at, expected_s_at, lil_envelope, regime_prediction,
    v_limit_superdiffusive, RegimePrediction,
};
use crate::error::{Error, Result};
use crate::oracle::exact_moments_at;
use crate::params::{ModelParams, Regime};
use crate::rng::RngStream;

/// Default ratio between the horizon used as a proxy for `W` and the time
/// at which residuals are taken.
pub const DEFAULT_HORIZON_FACTOR: u64 = 16;
pub const MIN_HORIZON_FACTOR: u64 = 16;

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Relative tolerance for the `3F2` series behind `phi * v_infinity`.
const V_LIMIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSnapshot {
    pub n: u64,
    pub acc_m: MomentAccumulator,
    pub a_n: f64,
    pub v_n: f64,
    /// `Var(S_n) / a_n^2` from the moment recursion.
    pub exact_var_m: f64,
    /// `exact_var_m / (phi v_n)`; tends to 1 unless superdiffusive.
    pub exact_ratio: Option<f64>,
    /// Sample variance of `M_n` over `phi v_n`.
    pub sample_ratio: Option<f64>,
}

/// Per-snapshot statistics of `M_n = (S_n - E[S_n]) / a_n` for an ensemble,
/// next to the exact `Var(M_n)` and `phi v_n`.
pub fn martingale_track(
    params: &ModelParams,
    ensemble: &EnsembleResult,
) -> Result<Vec<MartingaleSnapshot>> {
    let pred = regime_prediction(params)?;
    let times: Vec<u64> = ensemble.snapshots.iter().map(|s| s.n).collect();
    let av = a_and_v_at(pred.constants.alpha, &times)?;
    let exact = exact_moments_at(params, &times)?;
    let phi = pred.constants.phi;
    ensemble
        .snapshots
        .iter()
        .zip(av)
        .zip(exact)
        .map(|((snap, (a_n, v_n)), ex)| {
            let acc_m = snap
                .acc_m
                .ok_or_else(|| Error::OutOfDomain("ensemble has no martingale track".into()))?;
            let exact_var_m = ex.var_s / (a_n * a_n);
            let ratio = |x: f64| (phi > 0.0).then(|| x / (phi * v_n));
            Ok(MartingaleSnapshot {
                n: snap.n,
                acc_m,
                a_n,
                v_n,
                exact_var_m,
                exact_ratio: ratio(exact_var_m),
                sample_ratio: ratio(acc_m.variance()),
            })
        })
        .collect()
}

fn require_regime(pred: &RegimePrediction, expected: Regime) -> Result<()> {
    if pred.degenerate {
        return Err(Error::Degenerate);
    }
    if pred.regime != expected {
        return Err(Error::WrongRegime {
            expected: expected.name(),
            actual: pred.regime.name(),
        });
    }
    Ok(())
}

/// Median of a slice (mean of the two middle values for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval at `level` for the sample variance.
pub fn bootstrap_variance_ci(
    xs: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut RngStream,
) -> (f64, f64) {
    let n = xs.len() as u64;
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = MomentAccumulator::new();
            for _ in 0..n {
                acc.push(xs[rng.next_below(n) as usize]);
            }
            acc.variance()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    (
        quantile_sorted(&stats, tail),
        quantile_sorted(&stats, 1.0 - tail),
    )
}

/// Estimate of the superdiffusive limit `W = lim M_n` from `M_{n}` of each
/// trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WEstimate {
    pub n: u64,
    pub n_used: u64,
    pub mean_w: f64,
    pub var_w: f64,
    pub stderr: f64,
    /// `Var(M_n)` from the moment recursion.
    pub exact_var_m: f64,
    /// `var_w / exact_var_m - 1`.
    pub relative_var_error: f64,
    /// 99% percentile-bootstrap interval of `var_w`.
    pub var_ci_low: f64,
    pub var_ci_high: f64,
    /// `phi * lim v_n`, the leading-order value of `E[W^2]`.
    pub phi_v_limit: f64,
}

pub(crate) fn w_estimate_from(
    params: &ModelParams,
    n: u64,
    ws: &[f64],
    bootstrap_rng: &mut RngStream,
) -> Result<WEstimate> {
    if ws.len() < 2 {
        return Err(Error::SampleTooSmall {
            got: ws.len(),
            need: 2,
        });
    }
    let pred = regime_prediction(params)?;
    let acc = MomentAccumulator::from_slice(ws);
    let ex = exact_moments_at(params, &[n])?[0];
    let a_n = a_values_at(pred.constants.alpha, &[n])?[0];
    let exact_var_m = ex.var_s / (a_n * a_n);
    let (lo, hi) = bootstrap_variance_ci(ws, BOOTSTRAP_RESAMPLES, 0.99, bootstrap_rng);
    let alpha = pred.constants.alpha;
    Ok(WEstimate {
        n,
        n_used: acc.count,
        mean_w: acc.mean,
        var_w: acc.variance(),
        stderr: acc.std_err(),
        exact_var_m,
        relative_var_error: acc.variance() / exact_var_m - 1.0,
        var_ci_low: lo,
        var_ci_high: hi,
        phi_v_limit: pred.constants.phi * v_limit_superdiffusive(alpha, V_LIMIT_TOL)?,
    })
}

pub(crate) fn martingale_values(params: &ModelParams, n: u64, sample: &[i64]) -> Result<Vec<f64>> {
    let alpha = params.derive().alpha;
    let mean = expected_s_at(params, &[n])?[0];
    let a_n = a_values_at(alpha, &[n])?[0];
    Ok(sample.iter().map(|&s| (s as f64 - mean) / a_n).collect())
}

/// Simulates `n_traj` trajectories to `n_steps` and summarizes
/// `M_{n_steps}` as an estimate of `W`.
pub fn estimate_w(
    params: &ModelParams,
    n_steps: u64,
    n_traj: u64,
    master_seed: u64,
    workers: usize,
) -> Result<WEstimate> {
    let pred = regime_prediction(params)?;
    require_regime(&pred, Regime::Superdiffusive)?;
    let cfg = EnsembleConfig::new(n_steps, n_traj, master_seed)
        .with_snapshots(vec![n_steps])
        .with_reservoir(n_traj as usize)
        .with_workers(workers);
    let ens = run_ensemble(params, &cfg)?;
    let sample = ens.last().sample_s.as_ref().expect("reservoir requested");
    w_estimate_from_sample(
        params,
        n_steps,
        sample,
        &mut RngStream::new(master_seed, n_traj + 1),
    )
}

/// [`WEstimate`] from raw `S_n` values; `bootstrap_rng` drives the resampling.
pub fn w_estimate_from_sample(
    params: &ModelParams,
    n: u64,
    sample: &[i64],
    bootstrap_rng: &mut RngStream,
) -> Result<WEstimate> {
    let ws = martingale_values(params, n, sample)?;
    w_estimate_from(params, n, &ws, bootstrap_rng)
}

/// Residuals `(S_n - E[S_n] - W_hat a_n) / sqrt(phi n / (2 alpha - 1))`
/// with `W_hat = M_{n_far}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub n: u64,
    pub n_far: u64,
    pub residuals: Vec<f64>,
    /// `sqrt(phi n / (2 alpha - 1))`
    pub scale: f64,
    /// Exact variance of the residual in units of `scale^2`:
    /// `(Var(M_far) - Var(M_n)) a_n^2 / scale^2`, which is below 1 because
    /// `M_far` only approximates `W`.
    pub proxy_variance_factor: f64,
}

/// Residuals at `n` from raw `S_n` and `S_{n_far}` samples of the same
/// trajectories.
pub fn residuals_from_samples(
    params: &ModelParams,
    n: u64,
    n_far: u64,
    s_n: &[i64],
    s_far: &[i64],
) -> Result<ResidualSample> {
    let pred = regime_prediction(params)?;
    require_regime(&pred, Regime::Superdiffusive)?;
    let m_n = martingale_values(params, n, s_n)?;
    let m_far = martingale_values(params, n_far, s_far)?;
    let a = a_values_at(pred.constants.alpha, &[n, n_far])?;
    let ex = exact_moments_at(params, &[n, n_far])?;
    let scale = pred.variance_scale(n).sqrt();
    let residuals = m_n
        .iter()
        .zip(&m_far)
        .map(|(mn, w)| (mn - w) * a[0] / scale)
        .collect();
    let var_m_n = ex[0].var_s / (a[0] * a[0]);
    let var_m_far = ex[1].var_s / (a[1] * a[1]);
    Ok(ResidualSample {
        n,
        n_far,
        residuals,
        scale,
        proxy_variance_factor: (var_m_far - var_m_n) * a[0] * a[0] / (scale * scale),
    })
}

/// Residual fluctuations of `S_n` around `W a_n`, with `W` replaced by
/// `M_{c n}`; `c >= 16` keeps the proxy away from `M_n` itself.
pub fn residual_clt_sample(
    params: &ModelParams,
    n_steps: u64,
    n_traj: u64,
    master_seed: u64,
    horizon_factor: u64,
    workers: usize,
) -> Result<ResidualSample> {
    let pred = regime_prediction(params)?;
    require_regime(&pred, Regime::Superdiffusive)?;
    if horizon_factor < MIN_HORIZON_FACTOR {
        return Err(Error::InvalidConfig(format!(
            "horizon factor {horizon_factor} < {MIN_HORIZON_FACTOR}"
        )));
    }
    let n_far = n_steps
        .checked_mul(horizon_factor)
        .ok_or_else(|| Error::InvalidConfig("horizon overflows".into()))?;
    let cfg = EnsembleConfig::new(n_far, n_traj, master_seed)
        .with_snapshots(vec![n_steps, n_far])
        .with_reservoir(n_traj as usize)
        .with_workers(workers);
    let ens = run_ensemble(params, &cfg)?;
    let s_n = ens.snapshots[0]
        .sample_s
        .as_ref()
        .expect("reservoir requested");
    let s_far = ens.snapshots[1]
        .sample_s
        .as_ref()
        .expect("reservoir requested");
    residuals_from_samples(params, n_steps, n_far, s_n, s_far)
}

/// Running maxima of `+-(S_n - E[S_n] [- W_hat a_n]) / envelope(n)` over a
/// dyadic grid, one row per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilTrace {
    pub points: Vec<u64>,
    pub envelopes: Vec<f64>,
    pub running_max_plus: Vec<Vec<f64>>,
    pub running_max_minus: Vec<Vec<f64>>,
}

impl LilTrace {
    fn column_median(rows: &[Vec<f64>], j: usize) -> f64 {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        median(&col)
    }

    /// Ensemble median of the `+` running maximum at each grid point.
    pub fn median_plus(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|j| Self::column_median(&self.running_max_plus, j))
            .collect()
    }

    pub fn median_minus(&self) -> Vec<f64> {
        (0..self.points.len())
            .map(|j| Self::column_median(&self.running_max_minus, j))
            .collect()
    }
}

/// Iterated-logarithm diagnostic. There is no pass/fail: a `limsup` cannot
/// be decided at finite `n`.
pub fn lil_diagnostic(
    params: &ModelParams,
    n_max: u64,
    n_traj: u64,
    master_seed: u64,
    workers: usize,
) -> Result<LilTrace> {
    let pred = regime_prediction(params)?;
    if pred.degenerate {
        return Err(Error::Degenerate);
    }
    let mut points = Vec::new();
    let mut envelopes = Vec::new();
    for n in dyadic_grid(n_max) {
        if let Ok(e) = lil_envelope(params, n) {
            points.push(n);
            envelopes.push(e);
        }
    }
    if points.is_empty() {
        return Err(Error::DomainTooSmall { n: n_max });
    }
    let superdiffusive = pred.regime == Regime::Superdiffusive;
    let mut snaps = points.clone();
    let n_far = n_max * DEFAULT_HORIZON_FACTOR;
    if superdiffusive {
        snaps.push(n_far);
    }
    let cfg = EnsembleConfig::new(*snaps.last().unwrap(), n_traj, master_seed)
        .with_snapshots(snaps.clone())
        .with_reservoir(n_traj as usize)
        .with_workers(workers);
    let ens = run_ensemble(params, &cfg)?;
    let means = expected_s_at(params, &snaps)?;
    let a = a_values_at(pred.constants.alpha, &snaps)?;
    let w_hat: Option<Vec<f64>> = if superdiffusive {
        let last = ens.last().sample_s.as_ref().expect("reservoir requested");
        Some(martingale_values(params, n_far, last)?)
    } else {
        None
    };

    let n_pts = points.len();
    let mut plus = vec![vec![0.0; n_pts]; n_traj as usize];
    let mut minus = vec![vec![0.0; n_pts]; n_traj as usize];
    for j in 0..n_pts {
        let sample = ens.snapshots[j]
            .sample_s
            .as_ref()
            .expect("reservoir requested");
        for (i, &s) in sample.iter().enumerate() {
            let mut centered = s as f64 - means[j];
            if let Some(w) = &w_hat {
                centered -= w[i] * a[j];
            }
            let ratio = centered / envelopes[j];
            let (prev_p, prev_m) = if j == 0 {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            } else {
                (plus[i][j - 1], minus[i][j - 1])
            };
            plus[i][j] = prev_p.max(ratio);
            minus[i][j] = prev_m.max(-ratio);
        }
    }
    Ok(LilTrace {
        points,
        envelopes,
        running_max_plus: plus,
        running_max_minus: minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diffusive() -> ModelParams {
        ModelParams::new(0.6, 0.2, 0.2, 0.5).unwrap()
    }

    fn superdiffusive() -> ModelParams {
        ModelParams::new(0.85, 0.05, 0.1, 0.9375).unwrap()
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn bootstrap_interval_brackets_variance() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let var = MomentAccumulator::from_slice(&xs).variance();
        let (lo, hi) = bootstrap_variance_ci(&xs, 400, 0.99, &mut RngStream::new(1, 1));
        assert!(lo < var && var < hi);
        assert!(lo > 0.0);
    }

    #[test]
    fn martingale_mean_is_zero() {
        let m = diffusive();
        let cfg = EnsembleConfig::new(4096, 4000, 17);
        let ens = run_ensemble(&m, &cfg).unwrap();
        for snap in martingale_track(&m, &ens).unwrap() {
            let acc = snap.acc_m;
            assert!(acc.mean.abs() <= 4.0 * acc.std_err(), "n = {}", snap.n);
            assert!(snap.exact_var_m > 0.0);
        }
    }

    #[test]
    fn exact_martingale_variance_tracks_phi_v() {
        // var(M_n) / v_n -> phi; at n = 1e5 the exact ratio is within 5%
        let m = diffusive();
        let ens = run_ensemble(
            &m,
            &EnsembleConfig::new(100_000, 1, 0).with_snapshots(vec![100_000]),
        )
        .unwrap();
        let track = martingale_track(&m, &ens).unwrap();
        let ratio = track[0].exact_ratio.unwrap();
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn superdiffusive_martingale_variance_plateaus() {
        let m = superdiffusive();
        let ex = exact_moments_at(&m, &[100_000, 200_000]).unwrap();
        let a = a_values_at(m.derive().alpha, &[100_000, 200_000]).unwrap();
        let v1 = ex[0].var_s / (a[0] * a[0]);
        let v2 = ex[1].var_s / (a[1] * a[1]);
        assert!(((v2 - v1) / v1).abs() < 0.01);
    }

    #[test]
    fn regime_guards() {
        assert!(matches!(
            estimate_w(&diffusive(), 100, 10, 0, 1),
            Err(Error::WrongRegime { .. })
        ));
        assert!(matches!(
            residual_clt_sample(&diffusive(), 100, 10, 0, 16, 1),
            Err(Error::WrongRegime { .. })
        ));
        assert!(matches!(
            residual_clt_sample(&superdiffusive(), 100, 10, 0, 8, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn w_estimate_small_run() {
        let w = estimate_w(&superdiffusive(), 5000, 2000, 3, 0).unwrap();
        assert_eq!(w.n_used, 2000);
        assert!(w.mean_w.abs() <= 4.0 * w.stderr);
        assert!(w.var_w > 0.0 && w.var_ci_low > 0.0);
        assert!(w.var_ci_low < w.var_w && w.var_w < w.var_ci_high);
    }

    #[test]
    fn residuals_are_centered() {
        let r = residual_clt_sample(&superdiffusive(), 500, 2000, 9, 16, 0).unwrap();
        assert_eq!(r.n_far, 8000);
        let acc = MomentAccumulator::from_slice(&r.residuals);
        assert!(acc.mean.abs() <= 4.0 * acc.std_err());
        assert!(r.proxy_variance_factor > 0.0 && r.proxy_variance_factor < 1.5);
    }

    #[test]
    fn lil_trace_is_finite_positive_and_reproducible() {
        let m = ModelParams::new(0.6, 0.2, 0.2, 0.0).unwrap();
        let a = lil_diagnostic(&m, 1 << 12, 50, 4, 0).unwrap();
        let b = lil_diagnostic(&m, 1 << 12, 50, 4, 2).unwrap();
        assert_eq!(a, b);
        for row in a.running_max_plus.iter().chain(&a.running_max_minus) {
            assert!(row.iter().all(|x| x.is_finite()));
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        // max(x, -x) over the grid is positive for every trajectory that moved
        for (p, q) in a.running_max_plus.iter().zip(&a.running_max_minus) {
            assert!(p.last().unwrap().max(*q.last().unwrap()) > 0.0);
        }
    }
}
