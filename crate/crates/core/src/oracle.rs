//! Exact ground truth for the walk.
//!
//! Three independent routes: first/second moment recursions (O(n)), a
//! dynamic program over the Markov pair `(S_n, Z_n)` (O(n^3)), and brute
//! force over all `3^n` step sequences for tiny `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{first_step_distribution, step_distribution, Kernel, Step, WalkState};
use crate::params::ModelParams;
use crate::stats::FiniteCdf;

/// Default largest horizon accepted by [`distribution_dp`].
pub const DEFAULT_DP_CAP: u64 = 400;

/// Largest horizon accepted by [`enumerate_paths`].
pub const ENUMERATION_CAP: u64 = 14;

/// Exact moments of `(S_n, Z_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMoments {
    pub n: u64,
    pub mean_s: f64,
    pub mean_z: f64,
    pub mean_s2: f64,
    pub var_s: f64,
    pub mean_sz: f64,
}

/// Forward moment recursion, one step at a time.
///
/// With `mu = E[X_{n+1} | F_n] = (alpha/n) S_n + omega` and
/// `nu = E[X_{n+1}^2 | F_n] = (gamma/n) Z_n + tau`:
///
/// ```text
/// E[S']      = (1 + alpha/n) E[S] + omega
/// E[Z']      = (1 + gamma/n) E[Z] + tau
/// Var(S')    = (1 + 2 alpha/n) Var(S) + E[nu] - E[mu]^2
/// Cov(S',Z') = (1 + (alpha + gamma)/n) Cov(S,Z) + E[mu] (1 - E[nu])
/// ```
///
/// The variance and covariance forms follow from the laws of total
/// variance/covariance using `X^3 = X` and `X^4 = X^2`; they avoid the
/// cancellation of `E[S^2] - E[S]^2` at large `n`.
#[derive(Debug, Clone)]
pub struct MomentRecursion {
    alpha: f64,
    omega: f64,
    gamma: f64,
    tau: f64,
    n: u64,
    mean_s: f64,
    mean_z: f64,
    var_s: f64,
    cov_sz: f64,
}

impl MomentRecursion {
    pub fn new(params: &ModelParams) -> Self {
        let c = params.derive();
        let (p, q) = (params.p(), params.q());
        let mean_s = p - q;
        let mean_z = p + q;
        Self {
            alpha: c.alpha,
            omega: c.omega,
            gamma: c.gamma,
            tau: c.tau,
            n: 1,
            mean_s,
            mean_z,
            var_s: mean_z - mean_s * mean_s,
            // E[X^3] - E[X] E[X^2]
            cov_sz: mean_s - mean_s * mean_z,
        }
    }

    pub fn current(&self) -> ExactMoments {
        ExactMoments {
            n: self.n,
            mean_s: self.mean_s,
            mean_z: self.mean_z,
            mean_s2: self.var_s + self.mean_s * self.mean_s,
            var_s: self.var_s,
            mean_sz: self.cov_sz + self.mean_s * self.mean_z,
        }
    }

    pub fn step(&mut self) {
        let n = self.n as f64;
        let mu = self.alpha / n * self.mean_s + self.omega;
        let nu = self.gamma / n * self.mean_z + self.tau;
        self.var_s = (1.0 + 2.0 * self.alpha / n) * self.var_s + nu - mu * mu;
        self.cov_sz = (1.0 + (self.alpha + self.gamma) / n) * self.cov_sz + mu * (1.0 - nu);
        self.mean_s += mu;
        self.mean_z += nu;
        self.n += 1;
    }

    /// Advances to `n` (no-op if already there).
    pub fn advance_to(&mut self, n: u64) -> ExactMoments {
        while self.n < n {
            self.step();
        }
        self.current()
    }
}

/// Exact moments for `n = 1..=n_max`.
pub fn exact_moments(params: &ModelParams, n_max: u64) -> Vec<ExactMoments> {
    let mut rec = MomentRecursion::new(params);
    let mut out = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        out.push(rec.advance_to(n));
    }
    out
}

/// Exact moments at selected increasing times, in O(max time) and O(1) memory.
pub fn exact_moments_at(params: &ModelParams, times: &[u64]) -> Result<Vec<ExactMoments>> {
    if times.contains(&0) || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "times must be strictly increasing and at least 1".into(),
        ));
    }
    let mut rec = MomentRecursion::new(params);
    Ok(times.iter().map(|&t| rec.advance_to(t)).collect())
}

/// Probability mass over the reachable `(s, z)` pairs at time `n`.
///
/// Stored as a triangle indexed by `z` and `n_plus = (s + z)/2`, so the
/// parity constraint `z = s (mod 2)` costs no space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub n: u64,
    mass: Vec<f64>,
}

#[inline]
fn tri_index(z: u64, n_plus: u64) -> usize {
    (z * (z + 1) / 2 + n_plus) as usize
}

fn tri_len(n: u64) -> usize {
    ((n + 1) * (n + 2) / 2) as usize
}

impl ExactDistribution {
    fn zeros(n: u64) -> Self {
        Self {
            n,
            mass: vec![0.0; tri_len(n)],
        }
    }

    /// Mass at `(s, z)`; zero off the support.
    pub fn get(&self, s: i64, z: u64) -> f64 {
        if z > self.n || s.unsigned_abs() > z || (z as i64 - s) % 2 != 0 {
            return 0.0;
        }
        let n_plus = ((z as i64 + s) / 2) as u64;
        self.mass[tri_index(z, n_plus)]
    }

    fn add(&mut self, state: &WalkState, w: f64) {
        self.mass[tri_index(state.z(), state.n_plus)] += w;
    }

    /// `(s, z, mass)` for every atom with positive mass.
    pub fn atoms(&self) -> impl Iterator<Item = (i64, u64, f64)> + '_ {
        (0..=self.n).flat_map(move |z| {
            (0..=z).filter_map(move |k| {
                let w = self.mass[tri_index(z, k)];
                (w > 0.0).then(|| (2 * k as i64 - z as i64, z, w))
            })
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Marginal of `S_n` as `(s, mass)`, `s` ascending.
    pub fn marginal_s(&self) -> Vec<(i64, f64)> {
        let n = self.n as i64;
        let mut m = vec![0.0; (2 * n + 1) as usize];
        for (s, _, w) in self.atoms() {
            m[(s + n) as usize] += w;
        }
        m.into_iter()
            .enumerate()
            .filter(|(_, w)| *w > 0.0)
            .map(|(i, w)| (i as i64 - n, w))
            .collect()
    }

    /// Marginal of `Z_n`, indexed by `z`.
    pub fn marginal_z(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n as usize + 1];
        for (_, z, w) in self.atoms() {
            m[z as usize] += w;
        }
        m
    }

    /// Moments computed from the atoms.
    pub fn moments(&self) -> ExactMoments {
        let (mut ms, mut mz, mut ms2, mut msz) = (0.0, 0.0, 0.0, 0.0);
        for (s, z, w) in self.atoms() {
            let (s, z) = (s as f64, z as f64);
            ms += w * s;
            mz += w * z;
            ms2 += w * s * s;
            msz += w * s * z;
        }
        // central second moment in a second pass
        let var_s = self
            .atoms()
            .map(|(s, _, w)| w * (s as f64 - ms).powi(2))
            .sum();
        ExactMoments {
            n: self.n,
            mean_s: ms,
            mean_z: mz,
            mean_s2: ms2,
            var_s,
            mean_sz: msz,
        }
    }
}

/// Exact law of `(S_n, Z_n)` by forward propagation, capped at
/// [`DEFAULT_DP_CAP`].
pub fn distribution_dp(params: &ModelParams, n: u64) -> Result<ExactDistribution> {
    distribution_dp_capped(params, n, DEFAULT_DP_CAP)
}

/// [`distribution_dp`] with an explicit cap; cost is about `n^3 / 6` updates.
pub fn distribution_dp_capped(params: &ModelParams, n: u64, cap: u64) -> Result<ExactDistribution> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    let first = first_step_distribution(params);
    let mut cur = ExactDistribution::zeros(n);
    cur.mass[tri_index(1, 1)] = first.p_plus;
    cur.mass[tri_index(1, 0)] = first.p_minus;
    cur.mass[tri_index(0, 0)] = first.p_zero;
    let kernel = Kernel::new(params);
    let mut next = ExactDistribution::zeros(n);
    for m in 1..n {
        next.mass[..tri_len(m + 1)].fill(0.0);
        for z in 0..=m {
            for k in 0..=z {
                let w = cur.mass[tri_index(z, k)];
                if w == 0.0 {
                    continue;
                }
                let d = kernel.raw(m, k, z - k);
                next.mass[tri_index(z + 1, k + 1)] += w * d.p_plus;
                next.mass[tri_index(z + 1, k)] += w * d.p_minus;
                next.mass[tri_index(z, k)] += w * d.p_zero;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Brute-force law of `(S_n, Z_n)`: every path's probability by the chain
/// rule, accumulated without merging intermediate states.
pub fn enumerate_paths(params: &ModelParams, n: u64) -> Result<ExactDistribution> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    if n > ENUMERATION_CAP {
        return Err(Error::CapExceeded {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    fn walk(
        params: &ModelParams,
        state: WalkState,
        prob: f64,
        remaining: u64,
        out: &mut ExactDistribution,
    ) -> Result<()> {
        if remaining == 0 {
            out.add(&state, prob);
            return Ok(());
        }
        let dist = if state.n == 0 {
            first_step_distribution(params)
        } else {
            step_distribution(params, &state)?
        };
        for (step, p) in [
            (Step::Plus, dist.p_plus),
            (Step::Minus, dist.p_minus),
            (Step::Zero, dist.p_zero),
        ] {
            walk(params, state.advance(step), prob * p, remaining - 1, out)?;
        }
        Ok(())
    }
    let mut out = ExactDistribution::zeros(n);
    walk(params, WalkState::default(), 1.0, n, &mut out)?;
    Ok(out)
}

/// Exact CDF of `(S_n - E[S_n]) / sqrt(Var(S_n))`, from the dynamic program.
pub fn standardized_exact_cdf(params: &ModelParams, n: u64) -> Result<FiniteCdf> {
    let dist = distribution_dp(params, n)?;
    standardize_marginal(&dist.marginal_s())
}

/// Standardizes a lattice distribution `(s, mass)` by its own mean and
/// variance.
pub fn standardize_marginal(marginal: &[(i64, f64)]) -> Result<FiniteCdf> {
    let mean: f64 = marginal.iter().map(|&(s, w)| s as f64 * w).sum();
    let var: f64 = marginal
        .iter()
        .map(|&(s, w)| w * (s as f64 - mean).powi(2))
        .sum();
    if var <= 1e-14 {
        return Err(Error::DegenerateVariance(var));
    }
    let sd = var.sqrt();
    Ok(FiniteCdf::from_atoms(
        marginal
            .iter()
            .map(|&(s, w)| ((s as f64 - mean) / sd, w))
            .collect(),
    ))
}
