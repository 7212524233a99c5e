//! Optimization drivers for feature-distributed empirical risk
//! minimization, plus the single-agent recursions they reduce to.
//!
//! | driver                      | per-round score estimate                      |
//! |-----------------------------|-----------------------------------------------|
//! | [`run_naive`]               | one combination of scaled local scores        |
//! | [`run_vrd2`]                | tracked score from the `u`/`v` tables, SAGA   |
//! | [`run_pvrd2`]               | tracked score after `J` pipelined combinations|
//! | [`run_deterministic`]       | tracking of all `N` scores, full gradient     |
//! | [`run_centralized_sgd`]     | exact score, single agent                     |
//! | [`run_centralized_saga`]    | exact score, single agent, SAGA               |
//!
//! All drivers start from `w = 0`, draw sample indices from one shared
//! seeded stream, and call an [`Observer`] after the initial state and
//! after every round.

mod baseline;
mod centralized;
mod naive;
mod pvrd2;
mod rate;
mod step;
mod vrd2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{shard, Dataset, FeatureShard, Partition};
use crate::diffusion::ScoreMemory;
use crate::error::{Error, Result};
use crate::model::{add_outer, Loss, Regularizer};

pub use baseline::run_deterministic;
pub use centralized::{run_centralized_gd, run_centralized_saga, run_centralized_sgd};
pub use naive::run_naive;
pub use pvrd2::run_pvrd2;
pub use rate::{rate_bound, unpipelined_rate_bound, RateBound, RateBranch};
pub use step::{StepGuidance, DEFAULT_STEP_FACTOR};
pub use vrd2::run_vrd2;

/// Runs abort once `‖w‖` exceeds this.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// A dataset split over agents together with the loss and regularizer.
#[derive(Debug, Clone)]
pub struct Problem {
    dataset: Dataset,
    partition: Partition,
    shards: Vec<FeatureShard>,
    loss: Loss,
    reg: Regularizer,
}

impl Problem {
    pub fn new(dataset: Dataset, partition: Partition, loss: Loss, reg: Regularizer) -> Result<Self> {
        loss.validate()?;
        for &y in dataset.labels() {
            loss.check_label(y)?;
        }
        let shards = shard(&dataset, &partition)?;
        Ok(Problem {
            dataset,
            partition,
            shards,
            loss,
            reg,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn shards(&self) -> &[FeatureShard] {
        &self.shards
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn reg(&self) -> Regularizer {
        self.reg
    }

    pub fn agents(&self) -> usize {
        self.shards.len()
    }

    pub fn samples(&self) -> usize {
        self.dataset.samples()
    }

    pub fn classes(&self) -> usize {
        self.loss.classes()
    }

    /// Concatenates agent blocks into the full `M × C` weight matrix.
    pub fn join(&self, blocks: &[AgentState]) -> Vec<f64> {
        blocks.iter().flat_map(|b| b.weights.iter().copied()).collect()
    }

    /// Splits a full weight matrix into agent blocks.
    pub fn split(&self, full: &[f64]) -> Vec<Vec<f64>> {
        let c = self.classes();
        self.partition
            .ranges()
            .iter()
            .map(|r| full[r.start * c..r.end * c].to_vec())
            .collect()
    }

    pub fn risk(&self, full: &[f64]) -> f64 {
        crate::objective::risk(&self.dataset, self.loss, self.reg, full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Uniform,
    /// Visits `0, 1, …, N−1, 0, …` in order.
    Cyclic,
}

/// The shared index stream every agent reproduces from the common seed.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    samples: usize,
    mode: Sampling,
    position: usize,
}

impl Sampler {
    pub fn new(seed: u64, samples: usize, mode: Sampling) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            samples,
            mode,
            position: 0,
        }
    }

    pub fn next_index(&mut self) -> usize {
        match self.mode {
            Sampling::Uniform => self.rng.random_range(0..self.samples),
            Sampling::Cyclic => {
                let n = self.position % self.samples;
                self.position += 1;
                n
            }
        }
    }
}

/// Perturbs one tracked score right after the memory update of round
/// `iteration` (counting completed rounds from 1), so invariant audits can
/// be shown to catch it. The first row written in that round is hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub iteration: usize,
    pub agent: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub step: f64,
    pub iters: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Pipeline depth `J` (PVRD² only).
    pub depth: usize,
    /// Mini-batch `B` (PVRD² only).
    pub batch: usize,
    /// Number of full `grad_sum` recomputations spread over the run.
    pub checkpoints: usize,
    /// Update agents on the rayon pool. Results are identical either way.
    pub parallel: bool,
    pub fault: Option<Fault>,
}

impl RunSettings {
    pub fn new(step: f64, iters: usize, seed: u64) -> Self {
        RunSettings {
            step,
            iters,
            seed,
            sampling: Sampling::Uniform,
            depth: 1,
            batch: 1,
            checkpoints: 0,
            parallel: false,
            fault: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step)));
        }
        if self.depth == 0 || self.batch == 0 {
            return Err(Error::Config("pipeline depth and batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn is_checkpoint(&self, completed: usize) -> bool {
        if self.checkpoints == 0 {
            return false;
        }
        let every = (self.iters / self.checkpoints).max(1);
        completed.is_multiple_of(every)
    }
}

/// Per-agent optimizer state. `grad_sum` is `Σ_n h_{n,k} ⊗ ∇_z Q(u_{n,k}; γ_n)`,
/// maintained online for the variance-reduced drivers and empty otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub weights: Vec<f64>,
    pub grad_sum: Vec<f64>,
}

impl AsRef<[f64]> for AgentState {
    fn as_ref(&self) -> &[f64] {
        &self.weights
    }
}

/// What a driver exposes after each round.
#[derive(Debug)]
pub struct IterationReport<'a> {
    /// Completed rounds; 0 is the initial state.
    pub iteration: usize,
    pub agents: &'a [AgentState],
    /// Worst unbiasedness gap over the rows written this round.
    pub unbiasedness: Option<f64>,
    /// Worst relative gap between `grad_sum` and a fresh recomputation,
    /// present only at checkpoints.
    pub grad_sum_drift: Option<f64>,
    /// Cumulative per-agent gradient evaluations.
    pub gradient_evals: u64,
    /// Cumulative combination operations (entries mixed) per agent.
    pub combination_ops: u64,
    /// Pushed indices already in flight in the pipeline, cumulative.
    pub collisions: u64,
}

impl IterationReport<'_> {
    pub fn weights(&self) -> Vec<f64> {
        self.agents.iter().flat_map(|a| a.weights.iter().copied()).collect()
    }
}

pub trait Observer {
    fn observe(&mut self, report: &IterationReport<'_>) -> Result<()>;
}

impl<F: FnMut(&IterationReport<'_>)> Observer for F {
    fn observe(&mut self, report: &IterationReport<'_>) -> Result<()> {
        self(report);
        Ok(())
    }
}

/// Discards every report.
pub struct NoObserver;

impl Observer for NoObserver {
    fn observe(&mut self, _: &IterationReport<'_>) -> Result<()> {
        Ok(())
    }
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub agents: Vec<AgentState>,
    pub gradient_evals: u64,
    pub combination_ops: u64,
    pub collisions: u64,
}

pub(crate) fn zero_agents(problem: &Problem, with_grad_sum: bool) -> Vec<AgentState> {
    let c = problem.classes();
    problem
        .shards()
        .iter()
        .map(|s| AgentState {
            weights: vec![0.0; s.width() * c],
            grad_sum: if with_grad_sum {
                vec![0.0; s.width() * c]
            } else {
                Vec::new()
            },
        })
        .collect()
}

/// `Σ_n h_{n,k} ⊗ ∇_z Q(u_{n,k}; γ_n)` recomputed from the memory table.
pub(crate) fn fresh_grad_sum(shard: &FeatureShard, loss: Loss, memory: &ScoreMemory, agent: usize) -> Vec<f64> {
    let c = loss.classes();
    let mut sum = vec![0.0; shard.width() * c];
    let mut g = vec![0.0; c];
    for n in 0..shard.samples() {
        loss.score_grad(memory.u(agent, n), shard.labels()[n], &mut g);
        add_outer(&mut sum, shard.row(n), &g, 1.0);
    }
    sum
}

pub(crate) fn grad_sum_drift(problem: &Problem, agents: &[AgentState], memory: &ScoreMemory) -> f64 {
    problem
        .shards()
        .iter()
        .zip(agents)
        .enumerate()
        .map(|(k, (shard, state))| {
            let fresh = fresh_grad_sum(shard, problem.loss(), memory, k);
            let diff: f64 = fresh
                .iter()
                .zip(&state.grad_sum)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            diff / (1.0 + crate::objective::norm(&fresh))
        })
        .fold(0.0, f64::max)
}

/// `w ← w − μ (bracket + grad_sum / N + ∇r(w))`.
#[inline]
pub(crate) fn saga_step(state: &mut AgentState, bracket: &[f64], inv_n: f64, step: f64, reg: Regularizer) {
    let eta = reg.eta();
    for ((w, b), g) in state.weights.iter_mut().zip(bracket).zip(&state.grad_sum) {
        *w -= step * (b + g * inv_n + eta * *w);
    }
}

pub(crate) fn check_divergence(agents: &[AgentState], iteration: usize) -> Result<()> {
    let sq: f64 = agents.iter().flat_map(|a| a.weights.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if !norm.is_finite() || norm > DIVERGENCE_NORM {
        return Err(Error::Diverged { iteration, norm });
    }
    Ok(())
}

/// Runs `f(k, state)` for every agent, on the rayon pool when asked.
pub(crate) fn for_each_agent<F>(parallel: bool, agents: &mut [AgentState], f: F)
where
    F: Fn(usize, &mut AgentState) + Sync + Send,
{
    if parallel {
        agents.par_iter_mut().enumerate().for_each(|(k, s)| f(k, s));
    } else {
        agents.iter_mut().enumerate().for_each(|(k, s)| f(k, s));
    }
}
