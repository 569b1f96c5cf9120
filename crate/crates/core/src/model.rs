//! The transition kernel and single-trajectory simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::RngStream;

/// Drift of `p_plus + p_minus + p_zero` from 1 tolerated without action.
pub const SUM_TOL: f64 = 1e-12;
/// Largest drift that is renormalized away; anything above is an error.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Step counts of one trajectory after `n` steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WalkState {
    pub n: u64,
    pub n_plus: u64,
    pub n_minus: u64,
    pub n_zero: u64,
}

impl WalkState {
    pub fn new(n_plus: u64, n_minus: u64, n_zero: u64) -> Self {
        Self {
            n: n_plus + n_minus + n_zero,
            n_plus,
            n_minus,
            n_zero,
        }
    }

    /// Position `S_n = n_plus - n_minus`.
    pub fn s(&self) -> i64 {
        self.n_plus as i64 - self.n_minus as i64
    }

    /// Number of moves `Z_n = n_plus + n_minus`.
    pub fn z(&self) -> u64 {
        self.n_plus + self.n_minus
    }

    pub fn is_consistent(&self) -> bool {
        self.n_plus
            .checked_add(self.n_minus)
            .and_then(|z| z.checked_add(self.n_zero))
            == Some(self.n)
    }

    pub fn advance(self, step: Step) -> Self {
        let mut next = self;
        next.n += 1;
        match step {
            Step::Plus => next.n_plus += 1,
            Step::Minus => next.n_minus += 1,
            Step::Zero => next.n_zero += 1,
        }
        next
    }
}

/// Free-function form of [`WalkState::advance`].
pub fn advance(state: WalkState, step: Step) -> WalkState {
    state.advance(step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    Plus,
    Minus,
    Zero,
}

impl Step {
    pub fn value(self) -> i64 {
        match self {
            Step::Plus => 1,
            Step::Minus => -1,
            Step::Zero => 0,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            1 => Some(Step::Plus),
            -1 => Some(Step::Minus),
            0 => Some(Step::Zero),
            _ => None,
        }
    }
}

/// Probabilities of the next step being `+1`, `-1` or `0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_zero: f64,
}

impl StepDistribution {
    /// Validates the components; small drift in the sum is renormalized.
    pub fn new(p_plus: f64, p_minus: f64, p_zero: f64) -> Result<Self> {
        let raw = Self {
            p_plus,
            p_minus,
            p_zero,
        };
        raw.checked()
    }

    fn checked(self) -> Result<Self> {
        for v in [self.p_plus, self.p_minus, self.p_zero] {
            if !v.is_finite() || !(-SUM_TOL..=1.0 + SUM_TOL).contains(&v) {
                return Err(Error::InvalidState(format!(
                    "step probability {v} outside [0, 1]"
                )));
            }
        }
        let sum = self.sum();
        let drift = (sum - 1.0).abs();
        if drift <= SUM_TOL {
            Ok(self.clamped())
        } else if drift <= RENORMALIZE_TOL {
            Ok(Self {
                p_plus: self.p_plus / sum,
                p_minus: self.p_minus / sum,
                p_zero: self.p_zero / sum,
            }
            .clamped())
        } else {
            Err(Error::ProbabilityDrift { drift: sum - 1.0 })
        }
    }

    fn clamped(self) -> Self {
        Self {
            p_plus: self.p_plus.clamp(0.0, 1.0),
            p_minus: self.p_minus.clamp(0.0, 1.0),
            p_zero: self.p_zero.clamp(0.0, 1.0),
        }
    }

    pub fn sum(&self) -> f64 {
        self.p_plus + self.p_minus + self.p_zero
    }

    pub fn mean(&self) -> f64 {
        self.p_plus - self.p_minus
    }
}

/// Distribution of the first step: `(p, q, r)`.
pub fn first_step_distribution(params: &ModelParams) -> StepDistribution {
    StepDistribution {
        p_plus: params.p(),
        p_minus: params.q(),
        p_zero: params.r(),
    }
}

/// Precomputed kernel coefficients for a parameter set.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    theta_p: f64,
    theta_q: f64,
    theta_pq: f64,
    free_p: f64,
    free_q: f64,
    r: f64,
}

impl Kernel {
    pub(crate) fn new(params: &ModelParams) -> Self {
        let theta = params.theta();
        Self {
            theta_p: theta * params.p(),
            theta_q: theta * params.q(),
            theta_pq: theta * (params.p() + params.q()),
            free_p: (1.0 - theta) * params.p(),
            free_q: (1.0 - theta) * params.q(),
            r: params.r(),
        }
    }

    /// Conditional step probabilities given the counts after `n >= 1` steps.
    #[inline(always)]
    pub(crate) fn raw(&self, n: u64, n_plus: u64, n_minus: u64) -> StepDistribution {
        let inv_n = 1.0 / n as f64;
        let plus = n_plus as f64;
        let minus = n_minus as f64;
        let zero = (n - n_plus - n_minus) as f64;
        StepDistribution {
            p_plus: (self.theta_p * plus + self.theta_q * minus) * inv_n + self.free_p,
            p_minus: (self.theta_p * minus + self.theta_q * plus) * inv_n + self.free_q,
            p_zero: self.theta_pq * zero * inv_n + self.r,
        }
    }
}

/// Conditional distribution of `X_{n+1}` given the counts in `state`.
///
/// With probability `theta` the walk copies a uniformly chosen past step and
/// then keeps it (`p`), flips it (`q`) or stays put (`r`); otherwise it draws
/// a fresh `(p, q, r)` step.
pub fn step_distribution(params: &ModelParams, state: &WalkState) -> Result<StepDistribution> {
    if state.n == 0 {
        return Err(Error::InvalidState(
            "n = 0: the first step uses first_step_distribution".into(),
        ));
    }
    if !state.is_consistent() {
        return Err(Error::InvalidState(format!(
            "counts {} + {} + {} do not add up to n = {}",
            state.n_plus, state.n_minus, state.n_zero, state.n
        )));
    }
    Kernel::new(params)
        .raw(state.n, state.n_plus, state.n_minus)
        .checked()
}

/// Inverse-CDF draw with the fixed category order `+1, -1, 0`.
#[inline]
pub fn sample_step(dist: &StepDistribution, u: f64) -> Step {
    if u < dist.p_plus {
        Step::Plus
    } else if u < dist.p_plus + dist.p_minus {
        Step::Minus
    } else {
        Step::Zero
    }
}

/// Position and move count at a snapshot time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u64,
    pub s: i64,
    pub z: u64,
}

/// Drives one trajectory with a dedicated stream.
#[derive(Debug, Clone)]
pub(crate) struct Walker {
    kernel: Kernel,
    first: StepDistribution,
    n: u64,
    n_plus: u64,
    n_minus: u64,
}

impl Walker {
    pub(crate) fn new(params: &ModelParams) -> Self {
        Self {
            kernel: Kernel::new(params),
            first: first_step_distribution(params),
            n: 0,
            n_plus: 0,
            n_minus: 0,
        }
    }

    pub(crate) fn reset(&mut self) {
        self.n = 0;
        self.n_plus = 0;
        self.n_minus = 0;
    }

    #[inline(always)]
    fn apply(&mut self, dist: &StepDistribution, u: f64) {
        // branch-free form of sample_step followed by advance
        let plus = (u < dist.p_plus) as u64;
        let minus = ((u < dist.p_plus + dist.p_minus) as u64) & (plus ^ 1);
        self.n_plus += plus;
        self.n_minus += minus;
        self.n += 1;
    }

    /// Advances until `n == target`.
    #[inline]
    pub(crate) fn run_to(&mut self, target: u64, rng: &mut RngStream) {
        if self.n == 0 && target > 0 {
            let first = self.first;
            self.apply(&first, rng.next_f64());
        }
        while self.n < target {
            let dist = self.kernel.raw(self.n, self.n_plus, self.n_minus);
            self.apply(&dist, rng.next_f64());
        }
    }

    pub(crate) fn point(&self) -> TrajectoryPoint {
        TrajectoryPoint {
            n: self.n,
            s: self.n_plus as i64 - self.n_minus as i64,
            z: self.n_plus + self.n_minus,
        }
    }
}

pub(crate) fn validate_snapshots(snapshots: &[u64], n_steps: u64) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
    }
    if snapshots.is_empty() {
        return Err(Error::InvalidConfig("no snapshot times given".into()));
    }
    if snapshots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "snapshot times must be strictly increasing".into(),
        ));
    }
    if snapshots[0] == 0 || *snapshots.last().unwrap() > n_steps {
        return Err(Error::InvalidConfig(format!(
            "snapshot times must lie in [1, {n_steps}]"
        )));
    }
    Ok(())
}

/// Simulates one trajectory of `n_steps` steps and reports `(n, S_n, Z_n)`
/// at each snapshot. The output is a pure function of the parameters, the
/// horizon and the stream's `(master_seed, stream_index)`.
pub fn simulate_trajectory(
    params: &ModelParams,
    n_steps: u64,
    stream: &mut RngStream,
    snapshots: &[u64],
) -> Result<Vec<TrajectoryPoint>> {
    validate_snapshots(snapshots, n_steps)?;
    let mut walker = Walker::new(params);
    let mut out = Vec::with_capacity(snapshots.len());
    for &t in snapshots {
        walker.run_to(t, stream);
        out.push(walker.point());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::new(0.6, 0.2, 0.2, 0.5).unwrap()
    }

    fn assert_dist(d: StepDistribution, plus: f64, minus: f64, zero: f64) {
        assert!((d.p_plus - plus).abs() < 1e-14, "{d:?}");
        assert!((d.p_minus - minus).abs() < 1e-14, "{d:?}");
        assert!((d.p_zero - zero).abs() < 1e-14, "{d:?}");
    }

    #[test]
    fn first_step_is_base_distribution() {
        assert_dist(first_step_distribution(&params()), 0.6, 0.2, 0.2);
        let m = ModelParams::new(0.0, 0.0, 1.0, 0.4).unwrap();
        assert_dist(first_step_distribution(&m), 0.0, 0.0, 1.0);
        let m = ModelParams::new(0.5, 0.5, 0.0, 0.4).unwrap();
        assert_dist(first_step_distribution(&m), 0.5, 0.5, 0.0);
    }

    #[test]
    fn kernel_after_single_plus_step() {
        let state = WalkState::new(1, 0, 0);
        let d = step_distribution(&params(), &state).unwrap();
        assert_dist(d, 0.6, 0.2, 0.2);
    }

    #[test]
    fn kernel_without_memory_is_base() {
        let m = ModelParams::new(0.6, 0.2, 0.2, 0.0).unwrap();
        for state in [
            WalkState::new(3, 1, 2),
            WalkState::new(0, 0, 9),
            WalkState::new(0, 5, 0),
        ] {
            assert_dist(step_distribution(&m, &state).unwrap(), 0.6, 0.2, 0.2);
        }
    }

    #[test]
    fn kernel_after_only_delays() {
        let m = params();
        let d = step_distribution(&m, &WalkState::new(0, 0, 7)).unwrap();
        let (p, q, r, th) = (0.6, 0.2, 0.2, 0.5);
        assert_dist(d, (1.0 - th) * p, (1.0 - th) * q, th * (p + q) + r);
    }

    #[test]
    fn kernel_rejects_empty_or_inconsistent_state() {
        assert!(matches!(
            step_distribution(&params(), &WalkState::default()),
            Err(Error::InvalidState(_))
        ));
        let bad = WalkState {
            n: 5,
            n_plus: 1,
            n_minus: 1,
            n_zero: 1,
        };
        assert!(step_distribution(&params(), &bad).is_err());
    }

    #[test]
    fn drift_handling() {
        assert!(StepDistribution::new(0.5, 0.5, 0.0).is_ok());
        let d = StepDistribution::new(0.5, 0.5, 1e-10).unwrap();
        assert!((d.sum() - 1.0).abs() < 1e-15);
        assert!(matches!(
            StepDistribution::new(0.5, 0.5, 1e-6),
            Err(Error::ProbabilityDrift { .. })
        ));
    }

    #[test]
    fn advance_examples() {
        let s = WalkState::new(1, 1, 0).advance(Step::Plus);
        assert_eq!((s.n, s.n_plus, s.n_minus, s.n_zero), (3, 2, 1, 0));
        assert_eq!((s.s(), s.z()), (1, 3));

        let s = advance(WalkState::default(), Step::Zero);
        assert_eq!((s.n, s.n_zero, s.s(), s.z()), (1, 1, 0, 0));

        let s = WalkState::new(3, 0, 2).advance(Step::Minus);
        assert_eq!((s.n, s.n_plus, s.n_minus, s.n_zero), (6, 3, 1, 2));
        assert_eq!((s.s(), s.z()), (2, 4));
    }

    #[test]
    fn sample_step_inverse_cdf() {
        let d = StepDistribution::new(0.6, 0.2, 0.2).unwrap();
        assert_eq!(sample_step(&d, 0.59), Step::Plus);
        assert_eq!(sample_step(&d, 0.75), Step::Minus);
        assert_eq!(sample_step(&d, 0.999), Step::Zero);
        assert_eq!(sample_step(&d, 0.0), Step::Plus);
    }

    #[test]
    fn all_delay_walk_stays_home() {
        let m = ModelParams::new(0.0, 0.0, 1.0, 0.7).unwrap();
        let snaps = [1, 10, 50, 100];
        let pts = simulate_trajectory(&m, 100, &mut RngStream::new(9, 0), &snaps).unwrap();
        assert!(pts.iter().all(|p| p.s == 0 && p.z == 0));
        assert_eq!(pts.iter().map(|p| p.n).collect::<Vec<_>>(), snaps);
    }

    #[test]
    fn always_plus_walk() {
        let m = ModelParams::new(1.0, 0.0, 0.0, 0.5).unwrap();
        let pts = simulate_trajectory(&m, 50, &mut RngStream::new(5, 3), &[50]).unwrap();
        assert_eq!(
            pts[0],
            TrajectoryPoint {
                n: 50,
                s: 50,
                z: 50
            }
        );
    }

    #[test]
    fn trajectory_is_deterministic() {
        let snaps: Vec<u64> = (1..=20).map(|k| k * 50).collect();
        let a = simulate_trajectory(&params(), 1000, &mut RngStream::new(11, 4), &snaps).unwrap();
        let b = simulate_trajectory(&params(), 1000, &mut RngStream::new(11, 4), &snaps).unwrap();
        let c = simulate_trajectory(&params(), 1000, &mut RngStream::new(11, 5), &snaps).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn walker_matches_public_kernel_and_sampler() {
        // Step-by-step replay through step_distribution + sample_step.
        let m = ModelParams::new(0.45, 0.25, 0.3, 0.8).unwrap();
        let n_steps = 2000;
        let snaps: Vec<u64> = (1..=n_steps).collect();
        let fast = simulate_trajectory(&m, n_steps, &mut RngStream::new(77, 2), &snaps).unwrap();

        let mut rng = RngStream::new(77, 2);
        let mut state = WalkState::default();
        for point in fast {
            let dist = if state.n == 0 {
                first_step_distribution(&m)
            } else {
                step_distribution(&m, &state).unwrap()
            };
            state = state.advance(sample_step(&dist, rng.next_f64()));
            assert_eq!((state.n, state.s(), state.z()), (point.n, point.s, point.z));
        }
    }

    #[test]
    fn snapshot_validation() {
        let m = params();
        let mut rng = RngStream::new(0, 0);
        assert!(simulate_trajectory(&m, 10, &mut rng, &[0, 5]).is_err());
        assert!(simulate_trajectory(&m, 10, &mut rng, &[5, 5]).is_err());
        assert!(simulate_trajectory(&m, 10, &mut rng, &[11]).is_err());
        assert!(simulate_trajectory(&m, 0, &mut rng, &[1]).is_err());
    }

    #[test]
    fn memoryless_step_frequencies() {
        let (p, q, r) = (0.5, 0.3, 0.2);
        let m = ModelParams::new(p, q, r, 0.0).unwrap();
        let n = 1_000_000u64;
        let pts = simulate_trajectory(&m, n, &mut RngStream::new(2024, 0), &[n]).unwrap();
        let np = (pts[0].z as i64 + pts[0].s) as f64 / 2.0;
        let nm = (pts[0].z as i64 - pts[0].s) as f64 / 2.0;
        let n0 = n as f64 - np - nm;
        for (count, prob) in [(np, p), (nm, q), (n0, r)] {
            let tol = 4.0 * (prob * (1.0 - prob) / n as f64).sqrt();
            assert!((count / n as f64 - prob).abs() <= tol, "{count} vs {prob}");
        }
    }

    fn reachable_state() -> impl Strategy<Value = (ModelParams, WalkState)> {
        (
            0.0..=1.0f64,
            0.0..=1.0f64,
            0.0..1.0f64,
            0u64..500,
            0u64..500,
            0u64..500,
        )
            .prop_filter("need n >= 1", |t| t.3 + t.4 + t.5 > 0)
            .prop_map(|(a, b, theta, np, nm, n0)| {
                // spread (p, q, r) over the simplex
                let p = a * b;
                let q = a * (1.0 - b);
                let params = ModelParams::with_delay_remainder(p, q, theta).unwrap();
                (params, WalkState::new(np, nm, n0))
            })
    }

    proptest! {
        #[test]
        fn kernel_is_a_distribution((params, state) in reachable_state()) {
            let raw = Kernel::new(&params).raw(state.n, state.n_plus, state.n_minus);
            prop_assert!((raw.sum() - 1.0).abs() <= 1e-12);
            for v in [raw.p_plus, raw.p_minus, raw.p_zero] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(step_distribution(&params, &state).is_ok());
        }

        #[test]
        fn two_forms_of_delay_probability_agree((params, state) in reachable_state()) {
            let (p, q, r, th) = (params.p(), params.q(), params.r(), params.theta());
            let frac = state.n_zero as f64 / state.n as f64;
            let short = th * frac * (p + q) + r;
            let long = th * (frac * (p + q) + r) + (1.0 - th) * r;
            prop_assert!((short - long).abs() <= 4.0 * f64::EPSILON);
            let d = step_distribution(&params, &state).unwrap();
            prop_assert!((d.p_zero - short).abs() <= 4.0 * f64::EPSILON);
        }
    }
}
