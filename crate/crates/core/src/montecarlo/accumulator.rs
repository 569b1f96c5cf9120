use serde::{Deserialize, Serialize};

/// Streaming count, mean and central moments (up to the fourth) with
/// min/max, mergeable in any grouping.
///
/// Updates and merges use the pairwise formulas of Chan et al. and Pébay,
/// which need the third central moment as well.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    pub count: u64,
    pub mean: f64,
    /// `sum (x - mean)^2`
    pub m2: f64,
    /// `sum (x - mean)^3`
    pub m3: f64,
    /// `sum (x - mean)^4`
    pub m4: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl MomentAccumulator {
    pub const fn new() -> Self {
        Self {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            m3: 0.0,
            m4: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut acc = Self::new();
        for &x in xs {
            acc.push(x);
        }
        acc
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        self.mean += delta * nb / n;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
        self.count += other.count;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    /// Unbiased sample variance; zero with fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    /// `m4 / (count * sigma^4)` with the population variance; 0 if constant.
    pub fn kurtosis(&self) -> f64 {
        if self.count == 0 || self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        n * self.m4 / (self.m2 * self.m2)
    }

    /// Accumulator of `(x - shift) / scale` for every value pushed so far.
    pub fn affine(&self, shift: f64, scale: f64) -> Self {
        let inv = 1.0 / scale;
        let (lo, hi) = ((self.min - shift) * inv, (self.max - shift) * inv);
        Self {
            count: self.count,
            mean: (self.mean - shift) * inv,
            m2: self.m2 * inv * inv,
            m3: self.m3 * inv.powi(3),
            m4: self.m4 * inv.powi(4),
            min: lo.min(hi),
            max: lo.max(hi),
        }
    }
}

/// Merges a sequence of accumulators pairwise in a fixed tree order, so the
/// floating-point result depends only on the input order.
pub fn tree_merge<I>(items: Vec<I>, merge: impl Fn(&mut I, &I) + Copy) -> Option<I> {
    let mut level = items;
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut iter = level.into_iter();
        while let Some(mut a) = iter.next() {
            if let Some(b) = iter.next() {
                merge(&mut a, &b);
            }
            next.push(a);
        }
        level = next;
    }
    level.into_iter().next()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_pass(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>();
        (mean, m(2), m(3), m(4))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn matches_two_pass() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i * 7919) % 1013) as f64 / 10.0 - 30.0)
            .collect();
        let acc = MomentAccumulator::from_slice(&xs);
        let (mean, m2, m3, m4) = two_pass(&xs);
        assert!(close(acc.mean, mean, 1e-12));
        assert!(close(acc.m2, m2, 1e-12));
        assert!(close(acc.m3, m3, 1e-10));
        assert!(close(acc.m4, m4, 1e-12));
        assert_eq!(acc.count, 1000);
        assert_eq!(acc.min, xs.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn constant_values() {
        let acc = MomentAccumulator::from_slice(&[2.5; 17]);
        assert_eq!(acc.mean, 2.5);
        assert_eq!(acc.m2, 0.0);
        assert_eq!(acc.variance(), 0.0);
        assert_eq!(acc.std_err(), 0.0);
    }

    #[test]
    fn affine_transform_of_moments() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.0];
        let acc = MomentAccumulator::from_slice(&xs);
        let ys: Vec<f64> = xs.iter().map(|x| (x - 2.0) / -0.5).collect();
        let direct = MomentAccumulator::from_slice(&ys);
        let t = acc.affine(2.0, -0.5);
        assert!(close(t.mean, direct.mean, 1e-12));
        assert!(close(t.m2, direct.m2, 1e-12));
        assert!(close(t.m3, direct.m3, 1e-12));
        assert!(close(t.m4, direct.m4, 1e-12));
        assert_eq!((t.min, t.max), (direct.min, direct.max));
    }

    #[test]
    fn tree_merge_is_deterministic() {
        let parts: Vec<MomentAccumulator> = (0..13)
            .map(|k| MomentAccumulator::from_slice(&[k as f64, 2.0 * k as f64 + 0.1]))
            .collect();
        let a = tree_merge(parts.clone(), |a, b| a.merge(b)).unwrap();
        let b = tree_merge(parts, |a, b| a.merge(b)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count, 26);
    }

    proptest! {
        #[test]
        fn merge_is_order_insensitive(
            xs in proptest::collection::vec(-1e3..1e3f64, 2..200),
            cut1 in 0usize..200,
            cut2 in 0usize..200,
        ) {
            let n = xs.len();
            let (c1, c2) = {
                let a = cut1 % n;
                let b = cut2 % n;
                (a.min(b), a.max(b))
            };
            let whole = MomentAccumulator::from_slice(&xs);
            let a = MomentAccumulator::from_slice(&xs[..c1]);
            let b = MomentAccumulator::from_slice(&xs[c1..c2]);
            let c = MomentAccumulator::from_slice(&xs[c2..]);

            let mut left = a;
            left.merge(&b);
            left.merge(&c);
            let mut right = c;
            let mut bc = b;
            bc.merge(&a);
            right.merge(&bc);

            for acc in [left, right] {
                prop_assert_eq!(acc.count, whole.count);
                prop_assert!(close(acc.mean, whole.mean, 1e-9));
                prop_assert!(close(acc.m2, whole.m2, 1e-9));
                prop_assert!(close(acc.m4, whole.m4, 1e-9));
                prop_assert!(acc.variance() >= 0.0);
                prop_assert_eq!(acc.min, whole.min);
                prop_assert_eq!(acc.max, whole.max);
            }
        }
    }
}
