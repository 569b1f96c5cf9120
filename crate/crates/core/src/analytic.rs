//! Deterministic predictions: the normalizing sequences `a_n`, `b_n`, the
//! martingale variance clock `v_n`, closed-form means, and the asymptotic
//! variance laws of each regime.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::params::{require_nonnegative_alpha, DerivedConstants, ModelParams, Regime};

/// Hard cap on the number of series terms in [`v_limit_superdiffusive`].
pub const SERIES_TERM_CAP: u64 = 100_000_000;

/// Terms always summed before the relative stopping rule applies.
const SERIES_MIN_TERMS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SequenceKind {
    /// `a_n = prod_{k<n} (1 + alpha/k)`
    A,
    /// `b_n`, the same product with `gamma`
    B,
    /// `v_n = sum_{k<=n} 1/a_k^2`
    V,
}

/// Values of a sequence for `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTable {
    pub kind: SequenceKind,
    pub rate: f64,
    pub values: Vec<f64>,
}

impl SequenceTable {
    pub fn n_max(&self) -> u64 {
        self.values.len() as u64
    }

    /// Value at `n` (1-based). Panics outside `1..=n_max`.
    pub fn at(&self, n: u64) -> f64 {
        assert!(n >= 1 && n <= self.n_max(), "n = {n} outside table");
        self.values[(n - 1) as usize]
    }
}

fn check_rate(rate: f64, name: &str) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::OutOfDomain(format!(
            "{name} = {rate} is outside [0, 1)"
        )));
    }
    Ok(())
}

fn product_sequence(rate: f64, n_max: u64) -> Vec<f64> {
    let mut values = Vec::with_capacity(n_max as usize);
    let mut a = 1.0;
    values.push(a);
    for k in 1..n_max {
        a *= 1.0 + rate / k as f64;
        values.push(a);
    }
    values
}

/// `a_1 = 1`, `a_{n+1} = a_n (1 + alpha/n)`, equal to
/// `Gamma(n + alpha) / (Gamma(n) Gamma(alpha + 1))`.
pub fn a_sequence(alpha: f64, n_max: u64) -> Result<SequenceTable> {
    check_rate(alpha, "alpha")?;
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be at least 1".into()));
    }
    Ok(SequenceTable {
        kind: SequenceKind::A,
        rate: alpha,
        values: product_sequence(alpha, n_max),
    })
}

/// The `Z_n` normalizer: same product with `gamma`.
pub fn b_sequence(gamma: f64, n_max: u64) -> Result<SequenceTable> {
    check_rate(gamma, "gamma")?;
    if n_max == 0 {
        return Err(Error::InvalidConfig("n_max must be at least 1".into()));
    }
    Ok(SequenceTable {
        kind: SequenceKind::B,
        rate: gamma,
        values: product_sequence(gamma, n_max),
    })
}

/// Partial sums `v_n = sum_{k=1}^n 1/a_k^2`.
pub fn v_sequence(alpha: f64, n_max: u64) -> Result<SequenceTable> {
    let a = a_sequence(alpha, n_max)?;
    let mut acc = 0.0;
    let values = a
        .values
        .iter()
        .map(|&ak| {
            acc += 1.0 / (ak * ak);
            acc
        })
        .collect();
    Ok(SequenceTable {
        kind: SequenceKind::V,
        rate: alpha,
        values,
    })
}

/// `lim v_n` for `alpha in (1/2, 1]`, i.e. `3F2(1, 1, 1; alpha+1, alpha+1; 1)`.
///
/// Terms `t_k = (k! Gamma(alpha+1) / Gamma(k+alpha+1))^2` are generated by
/// their ratio `((k+1)/(k+1+alpha))^2` and summed until
/// `t_k < tol * partial_sum` (and `k > 10`). The remainder after the last
/// term is then added from `t_k ~ Gamma(alpha+1)^2 (k + (alpha+1)/2)^(-2 alpha)`
/// integrated by the midpoint rule, whose relative error is `O(k^-2)`.
pub fn v_limit_superdiffusive(alpha: f64, tol: f64) -> Result<f64> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(Error::OutOfDomain(format!(
            "sum 1/a_n^2 diverges for alpha = {alpha} <= 1/2 (needs alpha in (1/2, 1])"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k: u64 = 0;
    loop {
        let next = (k + 1) as f64;
        term *= (next / (next + alpha)).powi(2);
        k += 1;
        sum += term;
        if k > SERIES_MIN_TERMS && term < tol * sum {
            break;
        }
        if k >= SERIES_TERM_CAP {
            return Err(Error::TooSlowConvergence { terms: k });
        }
    }
    Ok(sum + series_tail(alpha, k))
}

/// Approximate `sum_{j > k} t_j` for the series above.
fn series_tail(alpha: f64, k: u64) -> f64 {
    let g2 = gamma(alpha + 1.0).powi(2);
    let shift = 0.5 * (alpha + 1.0);
    let lower = k as f64 + 0.5 + shift;
    g2 * lower.powf(1.0 - 2.0 * alpha) / (2.0 * alpha - 1.0)
}

/// Closed form of `sum_{l=1}^{n-1} 1/a_{l+1} = n/((1-alpha) a_n) + 1/(alpha-1)`.
pub fn sum_inv_a_closed(alpha: f64, n: u64, a_n: f64) -> Result<f64> {
    if alpha == 1.0 {
        return Err(Error::OutOfDomain(
            "closed form is singular at alpha = 1".into(),
        ));
    }
    check_rate(alpha, "alpha")?;
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    Ok(n as f64 / ((1.0 - alpha) * a_n) + 1.0 / (alpha - 1.0))
}

/// `E[S_n] = beta a_n + omega a_n sum_{l<n} 1/a_{l+1}`.
pub fn expected_s(params: &ModelParams, n: u64) -> Result<f64> {
    let c = params.derive();
    require_nonnegative_alpha(&c)?;
    let a = a_sequence(c.alpha, n)?;
    let a_n = a.at(n);
    Ok(c.beta * a_n + c.omega * a_n * sum_inv_a_closed(c.alpha, n, a_n)?)
}

/// `E[Z_n] = psi b_n + tau b_n sum_{l<n} 1/b_{l+1}`.
pub fn expected_z(params: &ModelParams, n: u64) -> Result<f64> {
    let c = params.derive();
    let b = b_sequence(c.gamma, n)?;
    let b_n = b.at(n);
    Ok(c.psi * b_n + c.tau * b_n * sum_inv_a_closed(c.gamma, n, b_n)?)
}

/// `E[S_n]` for `n = 1..=n_max` in one pass.
pub fn expected_s_table(params: &ModelParams, n_max: u64) -> Result<Vec<f64>> {
    let c = params.derive();
    require_nonnegative_alpha(&c)?;
    let a = a_sequence(c.alpha, n_max)?;
    (1..=n_max)
        .map(|n| {
            let a_n = a.at(n);
            Ok(c.beta * a_n + c.omega * a_n * sum_inv_a_closed(c.alpha, n, a_n)?)
        })
        .collect()
}

/// `E[Z_n]` for `n = 1..=n_max` in one pass.
pub fn expected_z_table(params: &ModelParams, n_max: u64) -> Result<Vec<f64>> {
    let c = params.derive();
    let b = b_sequence(c.gamma, n_max)?;
    (1..=n_max)
        .map(|n| {
            let b_n = b.at(n);
            Ok(c.psi * b_n + c.tau * b_n * sum_inv_a_closed(c.gamma, n, b_n)?)
        })
        .collect()
}

fn check_times(times: &[u64]) -> Result<()> {
    if times.contains(&0) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "times must be strictly increasing and at least 1".into(),
        ));
    }
    Ok(())
}

/// `(a_n, v_n)` at increasing times without storing the whole table.
pub fn a_and_v_at(alpha: f64, times: &[u64]) -> Result<Vec<(f64, f64)>> {
    check_rate(alpha, "alpha")?;
    check_times(times)?;
    let mut out = Vec::with_capacity(times.len());
    let (mut n, mut a, mut v) = (1u64, 1.0f64, 1.0f64);
    for &t in times {
        while n < t {
            a *= 1.0 + alpha / n as f64;
            v += 1.0 / (a * a);
            n += 1;
        }
        out.push((a, v));
    }
    Ok(out)
}

/// `a_n` at increasing times.
pub fn a_values_at(alpha: f64, times: &[u64]) -> Result<Vec<f64>> {
    Ok(a_and_v_at(alpha, times)?
        .into_iter()
        .map(|(a, _)| a)
        .collect())
}

/// Closed-form `E[S_n]` at increasing times.
pub fn expected_s_at(params: &ModelParams, times: &[u64]) -> Result<Vec<f64>> {
    let c = params.derive();
    require_nonnegative_alpha(&c)?;
    let a = a_values_at(c.alpha, times)?;
    times
        .iter()
        .zip(a)
        .map(|(&n, a_n)| Ok(c.beta * a_n + c.omega * a_n * sum_inv_a_closed(c.alpha, n, a_n)?))
        .collect()
}

/// Asymptotic variance law of the regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum VarianceLaw {
    /// `Var(S_n) ~ coefficient * n` with `coefficient = phi/(1 - 2 alpha)`.
    Diffusive { coefficient: f64 },
    /// `Var(S_n) ~ coefficient * n ln n` with `coefficient = phi`.
    Critical { coefficient: f64 },
    /// `S_n - E[S_n] - W a_n` has variance `~ coefficient * n`,
    /// `coefficient = phi/(2 alpha - 1)`; `Var(S_n)` itself grows like `a_n^2`.
    Superdiffusive { coefficient: f64 },
}

impl VarianceLaw {
    pub fn coefficient(&self) -> f64 {
        match *self {
            VarianceLaw::Diffusive { coefficient }
            | VarianceLaw::Critical { coefficient }
            | VarianceLaw::Superdiffusive { coefficient } => coefficient,
        }
    }

    /// The normalizing variance of the central limit statement at time `n`:
    /// `c n`, `c n ln n`, or the residual scale `c n` for the superdiffusive
    /// case.
    pub fn scale(&self, n: u64) -> f64 {
        let n = n as f64;
        match *self {
            VarianceLaw::Critical { coefficient } => coefficient * n * n.ln(),
            VarianceLaw::Diffusive { coefficient }
            | VarianceLaw::Superdiffusive { coefficient } => coefficient * n,
        }
    }
}

/// Everything the limit theorems predict for a parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePrediction {
    pub regime: Regime,
    pub constants: DerivedConstants,
    /// `phi == 0`; standardized statistics are undefined.
    pub degenerate: bool,
    /// `lim S_n/n = omega/(1 - alpha)`.
    pub lln_limit: f64,
    /// `lim Z_n/n = tau/(1 - gamma)`.
    pub z_lln_limit: f64,
    pub variance_law: VarianceLaw,
}

impl RegimePrediction {
    pub fn variance_scale(&self, n: u64) -> f64 {
        self.variance_law.scale(n)
    }

    /// `r_n^2 = sum_{k>=n} E[(M_k - M_{k-1})^2] ~ phi n / ((2 alpha - 1) a_n^2)`,
    /// the tail variance of the martingale in the superdiffusive regime.
    pub fn tail_sum_law(&self, n: u64, a_n: f64) -> Option<f64> {
        match self.variance_law {
            VarianceLaw::Superdiffusive { coefficient } => {
                Some(coefficient * n as f64 / (a_n * a_n))
            }
            _ => None,
        }
    }

    /// Leading-order behaviour of `v_n`: `Gamma(alpha+1)^2 n^(1-2alpha)/(1-2alpha)`,
    /// `(pi/4) ln n`, or the finite limit (computed separately).
    pub fn v_asymptote(&self, n: u64) -> Option<f64> {
        let alpha = self.constants.alpha;
        let n = n as f64;
        match self.regime {
            Regime::Diffusive => {
                Some(gamma(alpha + 1.0).powi(2) * n.powf(1.0 - 2.0 * alpha) / (1.0 - 2.0 * alpha))
            }
            Regime::Critical => Some(std::f64::consts::FRAC_PI_4 * n.ln()),
            Regime::Superdiffusive => None,
        }
    }
}

pub fn regime_prediction(params: &ModelParams) -> Result<RegimePrediction> {
    let c = params.derive();
    require_nonnegative_alpha(&c)?;
    let variance_law = match c.regime {
        Regime::Diffusive => VarianceLaw::Diffusive {
            coefficient: c.phi / (1.0 - 2.0 * c.alpha),
        },
        Regime::Critical => VarianceLaw::Critical { coefficient: c.phi },
        Regime::Superdiffusive => VarianceLaw::Superdiffusive {
            coefficient: c.phi / (2.0 * c.alpha - 1.0),
        },
    };
    Ok(RegimePrediction {
        regime: c.regime,
        constants: c,
        degenerate: c.is_degenerate(),
        lln_limit: c.lln_limit(),
        z_lln_limit: c.z_lln_limit(),
        variance_law,
    })
}

/// Denominator of the law of the iterated logarithm for the regime:
///
/// * diffusive: `sqrt(2 c n ln ln(phi Gamma(alpha+1)^2 n^(1-2alpha) / (1-2alpha)))`, `c = phi/(1-2alpha)`
/// * critical: `sqrt(2 phi n ln n ln ln(phi Gamma(3/2) ln n))`
/// * superdiffusive: `sqrt(2 c n ln|ln(phi Gamma(alpha+1)^2 n^(1-2alpha) / (2alpha-1))|)`, `c = phi/(2alpha-1)`
///
/// Fails with [`Error::DomainTooSmall`] while the outer logarithm's argument
/// is at most 1.
pub fn lil_envelope(params: &ModelParams, n: u64) -> Result<f64> {
    let prediction = regime_prediction(params)?;
    if prediction.degenerate {
        return Err(Error::Degenerate);
    }
    let c = prediction.constants;
    let (alpha, phi) = (c.alpha, c.phi);
    let nf = n as f64;
    let (scale, inner_log) = match prediction.regime {
        Regime::Diffusive => {
            let k = phi / (1.0 - 2.0 * alpha);
            let inner = k * gamma(alpha + 1.0).powi(2) * nf.powf(1.0 - 2.0 * alpha);
            (k * nf, inner.ln())
        }
        Regime::Critical => {
            let inner = phi * gamma(1.5) * nf.ln();
            (phi * nf * nf.ln(), inner.ln())
        }
        Regime::Superdiffusive => {
            let k = phi / (2.0 * alpha - 1.0);
            let inner = k * gamma(alpha + 1.0).powi(2) * nf.powf(1.0 - 2.0 * alpha);
            (k * nf, inner.ln().abs())
        }
    };
    if n < 2 || !(inner_log > 1.0) {
        return Err(Error::DomainTooSmall { n });
    }
    Ok((2.0 * scale * inner_log.ln()).sqrt())
}
