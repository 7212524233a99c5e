//! Consensus and score-tracking kernels shared by the optimization drivers.
//!
//! Network-wide quantities are stored agent-major: agent `k` owns the
//! contiguous block `[k·dim, (k+1)·dim)`. A combination step reads only the
//! previous snapshot, so every agent's output depends on the same inputs
//! regardless of evaluation order.

use std::collections::VecDeque;

use crate::data::FeatureShard;
use crate::model::block_score;
use crate::topology::CombinationMatrix;

/// `out_k = Σ_{l∈N_k} a_{lk} · input_l` for blocks of length `dim`.
pub fn combine_into(a: &CombinationMatrix, input: &[f64], dim: usize, out: &mut [f64]) {
    debug_assert_eq!(input.len(), a.size() * dim);
    debug_assert_eq!(out.len(), input.len());
    for k in 0..a.size() {
        let dst = &mut out[k * dim..(k + 1) * dim];
        dst.iter_mut().for_each(|v| *v = 0.0);
        for &(l, w) in a.neighbors(k) {
            let src = &input[l * dim..(l + 1) * dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
}

/// One static consensus step over vectors of length `dim` per agent.
pub fn consensus_step(a: &CombinationMatrix, states: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; states.len()];
    combine_into(a, states, dim, &mut out);
    out
}

/// `x'_k = Σ_l a_{lk} (x_l + d_new,l − d_old,l)`. Starting from `x = d_0`,
/// the network sum of `x` always equals the sum of the latest signals.
pub fn dynamic_diffusion_step(a: &CombinationMatrix, x: &[f64], d_new: &[f64], d_old: &[f64], dim: usize) -> Vec<f64> {
    let input: Vec<f64> = x.iter().zip(d_new).zip(d_old).map(|((x, n), o)| x + n - o).collect();
    consensus_step(a, &input, dim)
}

/// Relative gap `|Σ_k u − Σ_k v| / (1 + |Σ_k v|)`, worst over the score entries.
pub(crate) fn sum_gap(u: &[f64], v: &[f64], agents: usize, dim: usize) -> f64 {
    (0..dim)
        .map(|c| {
            let su: f64 = (0..agents).map(|k| u[k * dim + c]).sum();
            let sv: f64 = (0..agents).map(|k| v[k * dim + c]).sum();
            (su - sv).abs() / (1.0 + sv.abs())
        })
        .fold(0.0, f64::max)
}

/// Per-agent tables of the last tracked score `u` and the last contributed
/// scaled local score `v`, one `C`-vector per sample.
#[derive(Debug, Clone)]
pub struct ScoreMemory {
    agents: usize,
    samples: usize,
    classes: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    last_update: Vec<Option<usize>>,
}

impl ScoreMemory {
    pub fn new(agents: usize, samples: usize, classes: usize) -> Self {
        let len = agents * samples * classes;
        ScoreMemory {
            agents,
            samples,
            classes,
            u: vec![0.0; len],
            v: vec![0.0; len],
            last_update: vec![None; samples],
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    fn offset(&self, agent: usize, n: usize) -> usize {
        (agent * self.samples + n) * self.classes
    }

    #[inline]
    pub fn u(&self, agent: usize, n: usize) -> &[f64] {
        let o = self.offset(agent, n);
        &self.u[o..o + self.classes]
    }

    #[inline]
    pub fn v(&self, agent: usize, n: usize) -> &[f64] {
        let o = self.offset(agent, n);
        &self.v[o..o + self.classes]
    }

    pub fn set(&mut self, agent: usize, n: usize, u: &[f64], v: &[f64]) {
        let o = self.offset(agent, n);
        self.u[o..o + self.classes].copy_from_slice(u);
        self.v[o..o + self.classes].copy_from_slice(v);
    }

    /// Overwrites row `n` for all agents from agent-major `K × C` buffers.
    pub fn commit(&mut self, n: usize, iteration: usize, z: &[f64], scaled_local: &[f64]) {
        let c = self.classes;
        for k in 0..self.agents {
            self.set(k, n, &z[k * c..(k + 1) * c], &scaled_local[k * c..(k + 1) * c]);
        }
        self.last_update[n] = Some(iteration);
    }

    pub fn mark_updated(&mut self, n: usize, iteration: usize) {
        self.last_update[n] = Some(iteration);
    }

    pub fn last_update(&self, n: usize) -> Option<usize> {
        self.last_update[n]
    }

    /// Test hook: perturbs one tracked score without touching `v`.
    pub fn corrupt_u(&mut self, agent: usize, n: usize, delta: f64) {
        let o = self.offset(agent, n);
        self.u[o] += delta;
    }

    /// `|Σ_k u_{n,k} − Σ_k v_{n,k}| / (1 + |Σ_k v_{n,k}|)`, worst entry.
    pub fn unbiasedness_residual(&self, n: usize) -> f64 {
        let c = self.classes;
        let u: Vec<f64> = (0..self.agents).flat_map(|k| self.u(k, n).to_vec()).collect();
        let v: Vec<f64> = (0..self.agents).flat_map(|k| self.v(k, n).to_vec()).collect();
        sum_gap(&u, &v, self.agents, c)
    }
}

/// Output of one selective tracking step for sample `n`.
#[derive(Debug, Clone)]
pub struct TrackedScores {
    /// `z_{n,k}` for every agent, agent-major `K × C`.
    pub z: Vec<f64>,
    /// `K · h_{n,k}ᵀ w_k`, the value each agent stores in `v` afterwards.
    pub scaled_local: Vec<f64>,
}

/// `u + s − v`, the value an agent feeds into the combination step.
#[inline]
pub(crate) fn tracking_input(u: f64, scaled_local: f64, v: f64) -> f64 {
    (u + scaled_local) - v
}

/// Scaled local scores `K · h_{n,k}ᵀ w_k` for every agent, agent-major.
pub fn scaled_local_scores<W: AsRef<[f64]>>(
    shards: &[FeatureShard],
    weights: &[W],
    n: usize,
    classes: usize,
) -> Vec<f64> {
    let agents = shards.len() as f64;
    let mut out = vec![0.0; shards.len() * classes];
    for (k, (shard, w)) in shards.iter().zip(weights).enumerate() {
        let dst = &mut out[k * classes..(k + 1) * classes];
        block_score(shard.row(n), w.as_ref(), classes, dst);
        dst.iter_mut().for_each(|v| *v *= agents);
    }
    out
}

/// `z_{n,k} = Σ_l a_{lk} (u_{n,l} + K h_{n,l}ᵀ w_l − v_{n,l})`.
///
/// Reads only row `n` of the memory; the caller commits the result with
/// [`ScoreMemory::commit`] once the weight update has used the old row.
pub fn tracked_score_update<W: AsRef<[f64]>>(
    a: &CombinationMatrix,
    shards: &[FeatureShard],
    weights: &[W],
    memory: &ScoreMemory,
    n: usize,
) -> TrackedScores {
    let c = memory.classes();
    let scaled_local = scaled_local_scores(shards, weights, n, c);
    let mut input = scaled_local.clone();
    for k in 0..shards.len() {
        let (u, v) = (memory.u(k, n), memory.v(k, n));
        for (i, x) in input[k * c..(k + 1) * c].iter_mut().enumerate() {
            *x = tracking_input(u[i], *x, v[i]);
        }
    }
    let mut z = vec![0.0; input.len()];
    combine_into(a, &input, c, &mut z);
    TrackedScores { z, scaled_local }
}

/// A group of `B` tracked entries travelling through the pipeline together.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Iteration the slot was pushed; `None` for the zero slots that fill
    /// the pipeline before the first real push pops.
    pub pushed_at: Option<usize>,
    /// Sample index of each entry; empty for zero slots.
    pub indices: Vec<usize>,
    /// Consensus values, agent-major `K × B × C`.
    pub z: Vec<f64>,
    /// Scaled local scores pushed alongside, never combined.
    pub tags: Vec<f64>,
}

/// The `J`-stage pipeline of every agent, side by side.
///
/// Between rounds it holds `J − 1` in-flight slots. Each round pushes one
/// slot, advances all `J` stages by one combination step in the same
/// exchange, and pops the slot pushed `J − 1` rounds earlier, which has
/// then been combined exactly `J` times.
#[derive(Debug, Clone)]
pub struct PipelineQueue {
    depth: usize,
    agents: usize,
    width: usize,
    slots: VecDeque<Slot>,
    scratch: Vec<f64>,
}

impl PipelineQueue {
    /// `width` is the per-agent payload of one slot, `B · C`.
    pub fn new(depth: usize, agents: usize, width: usize) -> Self {
        assert!(depth >= 1, "pipeline depth must be at least 1");
        let zero = Slot {
            pushed_at: None,
            indices: Vec::new(),
            z: vec![0.0; agents * width],
            tags: vec![0.0; agents * width],
        };
        PipelineQueue {
            depth,
            agents,
            width,
            slots: std::iter::repeat_n(zero, depth - 1).collect(),
            scratch: vec![0.0; agents * width],
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn in_flight(&self) -> usize {
        self.slots.len()
    }

    /// Number of entries in flight (excluding zero slots) that carry `n`.
    pub fn count_in_flight(&self, n: usize) -> usize {
        self.slots
            .iter()
            .map(|s| s.indices.iter().filter(|&&i| i == n).count())
            .sum()
    }

    /// Pushes `slot`, runs one combination step on all stages, and pops
    /// the oldest slot.
    pub fn push_pop(&mut self, a: &CombinationMatrix, slot: Slot) -> Slot {
        assert_eq!(slot.z.len(), self.agents * self.width);
        self.slots.push_front(slot);
        for s in self.slots.iter_mut() {
            combine_into(a, &s.z, self.width, &mut self.scratch);
            std::mem::swap(&mut s.z, &mut self.scratch);
        }
        self.slots.pop_back().expect("pipeline holds at least one slot")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Graph;

    fn ring4() -> CombinationMatrix {
        CombinationMatrix::metropolis(&Graph::ring(4).unwrap()).unwrap()
    }

    #[test]
    fn averaging_step_gives_mean() {
        let a = CombinationMatrix::averaging(4).unwrap();
        let out = consensus_step(&a, &[1.0, 2.0, 3.0, 10.0], 1);
        assert!(out.iter().all(|v| (v - 4.0).abs() < 1e-15));
    }

    #[test]
    fn ring_step_by_hand() {
        let out = consensus_step(&ring4(), &[4.0, 0.0, 0.0, 0.0], 1);
        let third = 4.0 / 3.0;
        for (o, e) in out.iter().zip([third, third, 0.0, third]) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_innovation_is_plain_consensus() {
        let a = ring4();
        let x = [1.0, -2.0, 0.5, 3.0];
        let d = [0.3, 0.1, 0.2, 0.9];
        let got = dynamic_diffusion_step(&a, &x, &d, &d, 1);
        for (g, e) in got.iter().zip(consensus_step(&a, &x, 1)) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dynamic_diffusion_tracks_sum_and_converges() {
        let a = ring4();
        let target = [2.0, -1.0, 4.0, 0.5];
        let signal = |i: usize| -> Vec<f64> {
            target
                .iter()
                .enumerate()
                .map(|(k, t)| t + (k as f64 + 1.0) * 0.5f64.powi(i as i32))
                .collect()
        };
        let mut d_old = signal(0);
        let mut x = d_old.clone();
        for i in 1..200 {
            let d_new = signal(i);
            x = dynamic_diffusion_step(&a, &x, &d_new, &d_old, 1);
            let (sx, sd): (f64, f64) = (x.iter().sum(), d_new.iter().sum());
            assert!((sx - sd).abs() < 1e-12);
            d_old = d_new;
        }
        let mean = target.iter().sum::<f64>() / 4.0;
        assert!(x.iter().all(|v| (v - mean).abs() < 1e-8));
    }

    #[test]
    fn pipeline_depth_one_is_one_step() {
        let a = ring4();
        let mut q = PipelineQueue::new(1, 4, 1);
        assert_eq!(q.in_flight(), 0);
        let pushed = vec![4.0, 0.0, 0.0, 0.0];
        let out = q.push_pop(
            &a,
            Slot {
                pushed_at: Some(0),
                indices: vec![7],
                z: pushed.clone(),
                tags: vec![1.0; 4],
            },
        );
        assert_eq!(out.z, consensus_step(&a, &pushed, 1));
        assert_eq!(out.indices, vec![7]);
        assert_eq!(out.tags, vec![1.0; 4]);
    }

    #[test]
    fn pipeline_pops_zero_slots_first() {
        let a = ring4();
        let mut q = PipelineQueue::new(3, 4, 2);
        assert_eq!(q.in_flight(), 2);
        for i in 0..2 {
            let out = q.push_pop(
                &a,
                Slot {
                    pushed_at: Some(i),
                    indices: vec![i, i],
                    z: vec![1.0; 8],
                    tags: vec![0.0; 8],
                },
            );
            assert_eq!(out.pushed_at, None);
            assert!(out.indices.is_empty());
            assert!(out.z.iter().all(|v| *v == 0.0));
        }
        assert_eq!(q.count_in_flight(1), 2);
    }

    #[test]
    fn memory_residual() {
        let mut m = ScoreMemory::new(2, 3, 1);
        m.commit(1, 0, &[1.0, 2.0], &[2.5, 0.5]);
        assert!(m.unbiasedness_residual(1) < 1e-15);
        m.corrupt_u(0, 1, 1.0);
        assert!(m.unbiasedness_residual(1) > 0.1);
        assert_eq!(m.last_update(1), Some(0));
        assert_eq!(m.last_update(0), None);
    }
}
