//! Ensemble execution: trajectory-parallel with deterministic seeding and a
//! reduction that is bit-identical for any worker count (fixed-size chunks
//! combined in chunk-index order, trajectory order fixed inside a chunk).

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::measures::von_neumann_entropy;
use crate::operators::{C64, OperatorMatrix};
use crate::Result;

use super::{run_trajectory, Scenario};

const CHUNK: u64 = 8;

/// Conditioned-ensemble statistics on the sampled grid: per-observable
/// sample means with standard errors, the mean conditioned state, and the
/// entropy of that mean state (for information-gain evaluations).
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub t: Vec<f64>,
    pub trajectories: usize,
    pub mean: BTreeMap<String, Vec<f64>>,
    pub sem: BTreeMap<String, Vec<f64>>,
    pub mean_state: Vec<OperatorMatrix>,
    pub entropy_of_mean: Vec<f64>,
    /// Total jump count per mode over the whole ensemble.
    pub jump_counts: BTreeMap<usize, usize>,
}

impl EnsembleStats {
    /// S[<rho>] - <S[rho]> per grid point; requires the entropy observable.
    pub fn information_gain(&self) -> Option<Vec<f64>> {
        let mean_entropy = self.mean.get("entropy")?;
        Some(
            self.entropy_of_mean
                .iter()
                .zip(mean_entropy.iter())
                .map(|(s_mean, mean_s)| crate::measures::information_gain(*mean_s, *s_mean))
                .collect(),
        )
    }
}

struct ChunkAccum {
    sum: BTreeMap<String, Vec<f64>>,
    sum_sq: BTreeMap<String, Vec<f64>>,
    state_sum: Vec<OperatorMatrix>,
    jumps: BTreeMap<usize, usize>,
    t: Vec<f64>,
}

fn run_chunk(scenario: &Scenario, lo: u64, hi: u64) -> Result<ChunkAccum> {
    let mut acc: Option<ChunkAccum> = None;
    for idx in lo..hi {
        let rec = run_trajectory(scenario, idx)?;
        let acc = acc.get_or_insert_with(|| ChunkAccum {
            sum: rec.series.keys().map(|k| (k.clone(), vec![0.0; rec.t.len()])).collect(),
            sum_sq: rec.series.keys().map(|k| (k.clone(), vec![0.0; rec.t.len()])).collect(),
            state_sum: vec![OperatorMatrix::zeros(rec.states[0].dim()); rec.t.len()],
            jumps: BTreeMap::new(),
            t: rec.t.clone(),
        });
        for (name, values) in &rec.series {
            let s = acc.sum.get_mut(name).expect("same keys");
            let q = acc.sum_sq.get_mut(name).expect("same keys");
            for (i, v) in values.iter().enumerate() {
                s[i] += v;
                q[i] += v * v;
            }
        }
        for (i, st) in rec.states.iter().enumerate() {
            acc.state_sum[i].axpy(C64::new(1.0, 0.0), st);
        }
        for (mode, _) in &rec.jump_times {
            *acc.jumps.entry(*mode).or_insert(0) += 1;
        }
    }
    Ok(acc.expect("chunk nonempty"))
}

/// Runs `m_trajectories` conditioned trajectories (indices 0..M) and
/// reduces them into per-grid-point statistics. Parallel execution gives
/// results identical to serial execution.
pub fn run_ensemble(scenario: &Scenario, m_trajectories: usize) -> Result<EnsembleStats> {
    assert!(m_trajectories >= 1);
    let m = m_trajectories as u64;
    let bounds: Vec<(u64, u64)> =
        (0..m).step_by(CHUNK as usize).map(|lo| (lo, (lo + CHUNK).min(m))).collect();
    let chunks: Vec<Result<ChunkAccum>> = bounds
        .par_iter()
        .map(|(lo, hi)| run_chunk(scenario, *lo, *hi))
        .collect();
    // combine in chunk-index order
    let mut total: Option<ChunkAccum> = None;
    for chunk in chunks {
        let chunk = chunk?;
        match &mut total {
            None => total = Some(chunk),
            Some(t) => {
                for (name, values) in chunk.sum {
                    let dst = t.sum.get_mut(&name).expect("same keys");
                    for (i, v) in values.iter().enumerate() {
                        dst[i] += v;
                    }
                }
                for (name, values) in chunk.sum_sq {
                    let dst = t.sum_sq.get_mut(&name).expect("same keys");
                    for (i, v) in values.iter().enumerate() {
                        dst[i] += v;
                    }
                }
                for (i, st) in chunk.state_sum.iter().enumerate() {
                    t.state_sum[i].axpy(C64::new(1.0, 0.0), st);
                }
                for (mode, n) in chunk.jumps {
                    *t.jumps.entry(mode).or_insert(0) += n;
                }
            }
        }
    }
    let total = total.expect("at least one trajectory");
    let n = m_trajectories as f64;
    let mut mean = BTreeMap::new();
    let mut sem = BTreeMap::new();
    for (name, sums) in &total.sum {
        let sq = &total.sum_sq[name];
        let mut mu = Vec::with_capacity(sums.len());
        let mut se = Vec::with_capacity(sums.len());
        for (s, q) in sums.iter().zip(sq.iter()) {
            let m = s / n;
            mu.push(m);
            let var = if m_trajectories > 1 {
                ((q - n * m * m) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            se.push((var / n).sqrt());
        }
        mean.insert(name.clone(), mu);
        sem.insert(name.clone(), se);
    }
    let mean_state: Vec<OperatorMatrix> = total
        .state_sum
        .iter()
        .map(|s| s.scaled(C64::new(1.0 / n, 0.0)))
        .collect();
    let entropy_of_mean: Vec<f64> = mean_state
        .iter()
        .map(|rho| {
            crate::measures::project_to_state(rho, 5e-2)
                .and_then(|r| von_neumann_entropy(&r))
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok(EnsembleStats {
        t: total.t,
        trajectories: m_trajectories,
        mean,
        sem,
        mean_state,
        entropy_of_mean,
        jump_counts: total.jumps,
    })
}
