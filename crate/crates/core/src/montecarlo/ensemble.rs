use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::accumulator::{tree_merge, MomentAccumulator};
use crate::analytic::{a_values_at, expected_s_at};
use crate::error::{Error, Result};
use crate::model::{validate_snapshots, Walker};
use crate::params::ModelParams;
use crate::rng::RngStream;

/// Trajectories per work item. Fixed so the merge tree does not depend on
/// the number of workers.
const CHUNK: u64 = 64;

/// Default number of raw `S_n` values kept per snapshot.
pub const DEFAULT_RESERVOIR: usize = 100_000;

/// `{16, 32, ..., 2^k <= n_max} ∪ {n_max}`; `{n_max}` alone when
/// `n_max < 16`.
pub fn dyadic_grid(n_max: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = (4..64)
        .map(|k| 1u64 << k)
        .take_while(|&n| n <= n_max)
        .collect();
    if grid.last() != Some(&n_max) {
        grid.push(n_max);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_steps: u64,
    pub n_traj: u64,
    pub snapshots: Vec<u64>,
    pub master_seed: u64,
    /// Raw `S_n` values retained per snapshot (0 disables sampling).
    pub reservoir_k: usize,
    /// Worker threads; 0 means rayon's default.
    pub workers: usize,
}

impl EnsembleConfig {
    pub fn new(n_steps: u64, n_traj: u64, master_seed: u64) -> Self {
        Self {
            n_steps,
            n_traj,
            snapshots: dyadic_grid(n_steps),
            master_seed,
            reservoir_k: 0,
            workers: 0,
        }
    }

    pub fn with_snapshots(mut self, snapshots: Vec<u64>) -> Self {
        self.snapshots = snapshots;
        self
    }

    pub fn with_reservoir(mut self, k: usize) -> Self {
        self.reservoir_k = k;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// Ensemble statistics at one snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub n: u64,
    pub acc_s: MomentAccumulator,
    pub acc_z: MomentAccumulator,
    /// `M_n = (S_n - E[S_n]) / a_n`; absent when `alpha < 0`.
    pub acc_m: Option<MomentAccumulator>,
    /// Raw `S_n` of the sampled trajectories, in trajectory order.
    pub sample_s: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub params: ModelParams,
    pub n_traj: u64,
    pub master_seed: u64,
    pub snapshots: Vec<SnapshotStats>,
    /// Trajectory indices behind `sample_s`, ascending.
    pub sampled_trajectories: Option<Vec<u64>>,
}

impl EnsembleResult {
    pub fn snapshot(&self, n: u64) -> Option<&SnapshotStats> {
        self.snapshots.iter().find(|s| s.n == n)
    }

    pub fn last(&self) -> &SnapshotStats {
        self.snapshots
            .last()
            .expect("ensemble has at least one snapshot")
    }
}

/// Picks `k` of `n` indices with Algorithm R driven by its own stream.
fn reservoir_indices(n: u64, k: usize, master_seed: u64) -> Vec<u64> {
    if k as u64 >= n {
        return (0..n).collect();
    }
    let mut rng = RngStream::new(master_seed, n);
    let mut chosen: Vec<u64> = (0..k as u64).collect();
    for i in k as u64..n {
        let j = rng.next_below(i + 1);
        if j < k as u64 {
            chosen[j as usize] = i;
        }
    }
    chosen.sort_unstable();
    chosen
}

struct Centering {
    mean_s: Vec<f64>,
    a_n: Vec<f64>,
}

struct ChunkOut {
    acc: Vec<[MomentAccumulator; 3]>,
    samples: Vec<Vec<i64>>,
}

impl ChunkOut {
    fn merge(&mut self, other: &ChunkOut) {
        for (a, b) in self.acc.iter_mut().zip(&other.acc) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            a.extend_from_slice(b);
        }
    }
}

fn run_chunk(
    params: &ModelParams,
    config: &EnsembleConfig,
    centering: Option<&Centering>,
    selected: &[bool],
    chunk: u64,
) -> ChunkOut {
    let snaps = &config.snapshots;
    let mut out = ChunkOut {
        acc: vec![[MomentAccumulator::new(); 3]; snaps.len()],
        samples: vec![Vec::new(); snaps.len()],
    };
    let mut walker = Walker::new(params);
    let start = chunk * CHUNK;
    let end = (start + CHUNK).min(config.n_traj);
    for traj in start..end {
        let mut rng = RngStream::new(config.master_seed, traj);
        walker.reset();
        let keep = selected.get(traj as usize).copied().unwrap_or(false);
        for (j, &t) in snaps.iter().enumerate() {
            walker.run_to(t, &mut rng);
            let point = walker.point();
            let s = point.s as f64;
            let acc = &mut out.acc[j];
            acc[0].push(s);
            acc[1].push(point.z as f64);
            if let Some(c) = centering {
                acc[2].push((s - c.mean_s[j]) / c.a_n[j]);
            }
            if keep {
                out.samples[j].push(point.s);
            }
        }
    }
    out
}

/// Runs `n_traj` independent trajectories; trajectory `i` uses stream `i`
/// and the raw-sample subset is drawn from stream `n_traj`. The result is
/// identical for any worker count.
pub fn run_ensemble(params: &ModelParams, config: &EnsembleConfig) -> Result<EnsembleResult> {
    validate_snapshots(&config.snapshots, config.n_steps)?;
    if config.n_traj == 0 {
        return Err(Error::InvalidConfig("n_traj must be at least 1".into()));
    }
    let alpha = params.derive().alpha;
    let centering = if (0.0..1.0).contains(&alpha) {
        Some(Centering {
            mean_s: expected_s_at(params, &config.snapshots)?,
            a_n: a_values_at(alpha, &config.snapshots)?,
        })
    } else {
        None
    };
    let sampled = (config.reservoir_k > 0)
        .then(|| reservoir_indices(config.n_traj, config.reservoir_k, config.master_seed));
    let mut selected = Vec::new();
    if let Some(idx) = &sampled {
        selected = vec![false; config.n_traj as usize];
        for &i in idx {
            selected[i as usize] = true;
        }
    }

    let n_chunks = config.n_traj.div_ceil(CHUNK);
    let work = || -> Vec<ChunkOut> {
        (0..n_chunks)
            .into_par_iter()
            .map(|c| run_chunk(params, config, centering.as_ref(), &selected, c))
            .collect()
    };
    let chunks = if config.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work)
    };
    let merged = tree_merge(chunks, |a, b| a.merge(b)).expect("at least one chunk");

    let snapshots = config
        .snapshots
        .iter()
        .zip(merged.acc)
        .zip(merged.samples)
        .map(|((&n, [acc_s, acc_z, acc_m]), sample)| SnapshotStats {
            n,
            acc_s,
            acc_z,
            acc_m: centering.as_ref().map(|_| acc_m),
            sample_s: sampled.as_ref().map(|_| sample),
        })
        .collect();
    Ok(EnsembleResult {
        params: *params,
        n_traj: config.n_traj,
        master_seed: config.master_seed,
        snapshots,
        sampled_trajectories: sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_trajectory;

    #[test]
    fn dyadic_grid_shape() {
        assert_eq!(dyadic_grid(100), vec![16, 32, 64, 100]);
        assert_eq!(dyadic_grid(64), vec![16, 32, 64]);
        assert_eq!(dyadic_grid(5), vec![5]);
    }

    #[test]
    fn reservoir_picks_distinct_sorted_indices() {
        let idx = reservoir_indices(1000, 100, 7);
        assert_eq!(idx.len(), 100);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(*idx.last().unwrap() < 1000);
        assert_eq!(idx, reservoir_indices(1000, 100, 7));
        assert_eq!(reservoir_indices(10, 100, 7), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn all_delay_ensemble_is_still() {
        let m = ModelParams::new(0.0, 0.0, 1.0, 0.5).unwrap();
        let res = run_ensemble(&m, &EnsembleConfig::new(200, 300, 3)).unwrap();
        for snap in &res.snapshots {
            assert_eq!(snap.acc_s.mean, 0.0);
            assert_eq!(snap.acc_s.m2, 0.0);
            assert_eq!(snap.acc_s.count, 300);
            assert_eq!(snap.acc_z.count, 300);
        }
    }

    #[test]
    fn ensemble_reproduces_single_trajectories() {
        let m = ModelParams::new(0.5, 0.2, 0.3, 0.6).unwrap();
        let cfg = EnsembleConfig::new(500, 150, 99).with_reservoir(150);
        let res = run_ensemble(&m, &cfg).unwrap();
        let last = res.last();
        let sample = last.sample_s.as_ref().unwrap();
        for traj in [0u64, 63, 64, 149] {
            let pts = simulate_trajectory(&m, 500, &mut RngStream::new(99, traj), &[500]).unwrap();
            assert_eq!(sample[traj as usize], pts[0].s);
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let m = ModelParams::new(0.6, 0.2, 0.2, 0.5).unwrap();
        let base = EnsembleConfig::new(2000, 700, 5).with_reservoir(50);
        let one = run_ensemble(&m, &base.clone().with_workers(1)).unwrap();
        let four = run_ensemble(&m, &base.clone().with_workers(4)).unwrap();
        let sixteen = run_ensemble(&m, &base.with_workers(16)).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, sixteen);
    }

    #[test]
    fn iid_mean_within_clt_bound() {
        let (p, q, r) = (0.5, 0.3, 0.2);
        let m = ModelParams::new(p, q, r, 0.0).unwrap();
        let n = 10_000u64;
        let n_traj = 100_000u64;
        let res = run_ensemble(
            &m,
            &EnsembleConfig::new(n, n_traj, 11).with_snapshots(vec![n]),
        )
        .unwrap();
        let acc = &res.last().acc_s;
        let var = n as f64 * ((p + q) - (p - q) * (p - q));
        let bound = 4.0 * (var / n_traj as f64).sqrt();
        assert!((acc.mean - n as f64 * (p - q)).abs() <= bound);
    }

    #[test]
    fn rejects_bad_config() {
        let m = ModelParams::new(0.6, 0.2, 0.2, 0.5).unwrap();
        assert!(run_ensemble(&m, &EnsembleConfig::new(100, 0, 1)).is_err());
        assert!(run_ensemble(
            &m,
            &EnsembleConfig::new(100, 5, 1).with_snapshots(vec![50, 20])
        )
        .is_err());
    }

    #[test]
    fn negative_alpha_has_no_martingale_track() {
        let m = ModelParams::new(0.1, 0.6, 0.3, 0.5).unwrap();
        let res = run_ensemble(&m, &EnsembleConfig::new(100, 10, 1)).unwrap();
        assert!(res.last().acc_m.is_none());
    }
}
