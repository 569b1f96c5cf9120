//! Model parameters and the constants they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `p + q + r = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Half-width of the band around `alpha = 1/2` classified as critical.
pub const CRITICAL_TOL: f64 = 1e-12;

/// Tolerance below zero within which `phi` is clamped to zero.
pub const PHI_CLAMP_TOL: f64 = 1e-12;

/// Parameters of the walk.
///
/// `p`, `q`, `r` are the probabilities of a `+1`, `-1` and `0` step for the
/// first move and for every memory-free move; `theta` is the probability of
/// consulting the memory at each later step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    p: f64,
    q: f64,
    r: f64,
    theta: f64,
}

impl ModelParams {
    pub fn new(p: f64, q: f64, r: f64, theta: f64) -> Result<Self> {
        for (name, v) in [("p", p), ("q", q), ("r", r), ("theta", theta)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParams(format!(
                    "{name} = {v} is not a probability in [0, 1]"
                )));
            }
        }
        let sum = p + q + r;
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidParams(format!(
                "p + q + r = {sum} violates the simplex constraint p + q + r = 1"
            )));
        }
        if theta >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "theta = {theta} must be strictly below 1"
            )));
        }
        Ok(Self { p, q, r, theta })
    }

    /// Builds parameters with `r = 1 - p - q`.
    pub fn with_delay_remainder(p: f64, q: f64, theta: f64) -> Result<Self> {
        let mut r = 1.0 - p - q;
        if r.abs() <= SIMPLEX_TOL {
            r = 0.0;
        }
        Self::new(p, q, r, theta)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn derive(&self) -> DerivedConstants {
        derive_constants(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Diffusive,
    Critical,
    Superdiffusive,
}

impl Regime {
    pub fn classify(alpha: f64) -> Self {
        if (alpha - 0.5).abs() <= CRITICAL_TOL {
            Regime::Critical
        } else if alpha < 0.5 {
            Regime::Diffusive
        } else {
            Regime::Superdiffusive
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Diffusive => "diffusive",
            Regime::Critical => "critical",
            Regime::Superdiffusive => "superdiffusive",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Constants derived from [`ModelParams`].
///
/// * `alpha = (p - q) theta`, the memory drift rate driving `E[S_n]`
/// * `omega = (p - q)(1 - theta)`, the memory-free drift
/// * `tau = (1 - theta)(p + q)` and `gamma = (p + q) theta`, the analogues for `Z_n`
/// * `phi = tau / (1 - gamma) - (omega / (1 - alpha))^2`, the limiting
///   conditional step variance
/// * `beta = E[S_1] = p - q` and `psi = E[Z_1] = p + q`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub alpha: f64,
    pub omega: f64,
    pub tau: f64,
    pub gamma: f64,
    pub phi: f64,
    pub beta: f64,
    pub psi: f64,
    pub regime: Regime,
}

impl DerivedConstants {
    /// `phi == 0`: the walk is asymptotically deterministic.
    pub fn is_degenerate(&self) -> bool {
        self.phi == 0.0
    }

    /// Limit of `S_n / n`.
    pub fn lln_limit(&self) -> f64 {
        self.omega / (1.0 - self.alpha)
    }

    /// Limit of `Z_n / n`.
    pub fn z_lln_limit(&self) -> f64 {
        self.tau / (1.0 - self.gamma)
    }
}

pub fn derive_constants(params: &ModelParams) -> DerivedConstants {
    let ModelParams { p, q, theta, .. } = *params;
    let beta = p - q;
    let psi = p + q;
    let alpha = beta * theta;
    let omega = beta * (1.0 - theta);
    let tau = (1.0 - theta) * psi;
    let gamma = psi * theta;
    let mut phi = tau / (1.0 - gamma) - (omega / (1.0 - alpha)).powi(2);
    if (-PHI_CLAMP_TOL..0.0).contains(&phi) {
        phi = 0.0;
    }
    DerivedConstants {
        alpha,
        omega,
        tau,
        gamma,
        phi,
        beta,
        psi,
        regime: Regime::classify(alpha),
    }
}

/// Rejects parameters outside the `alpha in [0, 1)` range where the limit
/// theorems are stated.
pub(crate) fn require_nonnegative_alpha(c: &DerivedConstants) -> Result<()> {
    if c.alpha < 0.0 {
        Err(Error::OutOfDomain(format!(
            "alpha = {} < 0 (p < q with memory); limit theorems cover alpha in [0, 1)",
            c.alpha
        )))
    } else {
        Ok(())
    }
}
