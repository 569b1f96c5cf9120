//! Normal CDF, Kolmogorov-Smirnov distances and log-log slope fits.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Smallest sample accepted by [`ks_test_normal`].
pub const KS_MIN_SAMPLE: usize = 10;

/// Standard normal CDF via `erfc`, accurate to ~1e-16 absolute.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

/// `P(K > t)` for the Kolmogorov distribution.
///
/// Uses `2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 t^2)` (truncated once a term
/// drops below 1e-12) for `t >= 1.18`, and the equivalent Jacobi-theta form
/// `1 - sqrt(2 pi)/t sum_{j>=1} exp(-(2j-1)^2 pi^2 / (8 t^2))` below that,
/// where the alternating series converges too slowly.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if !(t > 0.0) {
        return 1.0;
    }
    let p = if t < 1.18 {
        let y = std::f64::consts::PI.powi(2) / (8.0 * t * t);
        let mut sum = 0.0;
        for j in 1..=50u32 {
            let k = (2 * j - 1) as f64;
            let term = (-k * k * y).exp();
            sum += term;
            if term < 1e-16 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / t * sum
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=1000u32 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * t * t).exp();
            sum += sign * term;
            if term < 1e-12 {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test of `sample` against `N(0, 1)`.
///
/// The p-value uses the Stephens correction `t = d (sqrt k + 0.12 + 0.11/sqrt k)`.
pub fn ks_test_normal(sample: &[f64]) -> Result<KsResult> {
    let k = sample.len();
    if k < KS_MIN_SAMPLE {
        return Err(Error::SampleTooSmall {
            got: k,
            need: KS_MIN_SAMPLE,
        });
    }
    if let Some(bad) = sample.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "non-finite sample value {bad}"
        )));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kf = k as f64;
    let d_stat = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = normal_cdf(x);
            let above = (i + 1) as f64 / kf - cdf;
            let below = cdf - i as f64 / kf;
            above.max(below)
        })
        .fold(0.0f64, f64::max);
    let root = kf.sqrt();
    let p_value = kolmogorov_survival(d_stat * (root + 0.12 + 0.11 / root));
    Ok(KsResult {
        d_stat,
        p_value,
        sample_size: k,
    })
}

/// A CDF with finitely many jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteCdf {
    /// Jump locations, strictly increasing.
    pub points: Vec<f64>,
    /// Probability at each jump.
    pub masses: Vec<f64>,
    /// `F(points[i])`, right-continuous.
    pub cdf: Vec<f64>,
}

impl FiniteCdf {
    /// Builds the CDF from `(location, mass)` atoms; equal locations merge.
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Self {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut masses: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match points.last() {
                Some(&last) if last == x => *masses.last_mut().unwrap() += w,
                _ => {
                    points.push(x);
                    masses.push(w);
                }
            }
        }
        let mut acc = 0.0;
        let cdf = masses
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            points,
            masses,
            cdf,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.cdf.last().copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.masses)
            .map(|(x, w)| x * w)
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.masses)
            .map(|(x, w)| x * x * w)
            .sum()
    }
}

/// `sup_x |F(x) - Phi(x)|` for a finite-support CDF, checked on both sides
/// of every jump.
pub fn ks_distance_cdf(exact: &FiniteCdf) -> f64 {
    let mut prev = 0.0;
    let mut d = 0.0f64;
    for (&x, &f) in exact.points.iter().zip(&exact.cdf) {
        let phi = normal_cdf(x);
        d = d.max((f - phi).abs()).max((prev - phi).abs());
        prev = f;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidConfig(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::SampleTooSmall {
            got: xs.len(),
            need: 3,
        });
    }
    if let Some((&x, &y)) = xs.iter().zip(ys).find(|(&x, &y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::NonPositive { x, y });
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr_slope = if lx.len() > 2 {
        (sse / (m - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr_slope,
        r2,
    })
}
