//! Single-agent recursions on the unsplit data. They share the sampler
//! with the networked drivers and serve as their equivalence targets.

use super::{check_divergence, AgentState, IterationReport, Observer, Problem, RunOutcome, RunSettings, Sampler};
use crate::error::Result;
use crate::model::{add_outer, block_score};

fn report<'a>(iteration: usize, agents: &'a [AgentState], grads: u64) -> IterationReport<'a> {
    IterationReport {
        iteration,
        agents,
        unbiasedness: None,
        grad_sum_drift: None,
        gradient_evals: grads,
        combination_ops: 0,
        collisions: 0,
    }
}

/// `w ← w − μ (∇_z Q(h_nᵀw; γ_n) h_n + ∇r(w))`.
pub fn run_centralized_sgd(
    problem: &Problem,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let data = problem.dataset();
    let (loss, reg, c) = (problem.loss(), problem.reg(), problem.classes());
    let mut state = vec![AgentState {
        weights: vec![0.0; data.features() * c],
        grad_sum: Vec::new(),
    }];
    let mut sampler = Sampler::new(settings.seed, data.samples(), settings.sampling);
    let (mut z, mut g) = (vec![0.0; c], vec![0.0; c]);
    let mut grad = vec![0.0; data.features() * c];
    observer.observe(&report(0, &state, 0))?;
    for i in 0..settings.iters {
        let n = sampler.next_index();
        let h = data.row(n);
        block_score(h, &state[0].weights, c, &mut z);
        loss.score_grad(&z, data.labels()[n], &mut g);
        grad.iter_mut().for_each(|v| *v = 0.0);
        add_outer(&mut grad, h, &g, 1.0);
        for (w, gr) in state[0].weights.iter_mut().zip(&grad) {
            *w -= settings.step * (gr + reg.eta() * *w);
        }
        check_divergence(&state, i + 1)?;
        observer.observe(&report(i + 1, &state, (i + 1) as u64))?;
    }
    Ok(RunOutcome {
        agents: state,
        gradient_evals: settings.iters as u64,
        combination_ops: 0,
        collisions: 0,
    })
}

/// Vanilla SAGA with the stored-score table: the correction for sample `n`
/// is `∇_z Q(h_nᵀw) h_n − ∇_z Q(u_n) h_n + (1/N) Σ_m ∇_z Q(u_m) h_m`, then
/// `u_n ← h_nᵀw`.
pub fn run_centralized_saga(
    problem: &Problem,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let data = problem.dataset();
    let (loss, reg, c) = (problem.loss(), problem.reg(), problem.classes());
    let (samples, m) = (data.samples(), data.features());
    let inv_n = 1.0 / samples as f64;
    let mut scores = vec![0.0; samples * c];
    let mut table_sum = vec![0.0; m * c];
    let mut g = vec![0.0; c];
    for n in 0..samples {
        loss.score_grad(&scores[n * c..(n + 1) * c], data.labels()[n], &mut g);
        add_outer(&mut table_sum, data.row(n), &g, 1.0);
    }
    let mut state = vec![AgentState {
        weights: vec![0.0; m * c],
        grad_sum: Vec::new(),
    }];
    let mut sampler = Sampler::new(settings.seed, samples, settings.sampling);
    let (mut z, mut g_new, mut g_old) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
    let mut correction = vec![0.0; m * c];
    observer.observe(&report(0, &state, 0))?;
    for i in 0..settings.iters {
        let n = sampler.next_index();
        let (h, y) = (data.row(n), data.labels()[n]);
        block_score(h, &state[0].weights, c, &mut z);
        loss.score_grad(&z, y, &mut g_new);
        loss.score_grad(&scores[n * c..(n + 1) * c], y, &mut g_old);
        let delta: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, b)| a - b).collect();
        correction.iter_mut().for_each(|v| *v = 0.0);
        add_outer(&mut correction, h, &delta, 1.0);
        for ((w, corr), s) in state[0].weights.iter_mut().zip(&correction).zip(&table_sum) {
            *w -= settings.step * (corr + s * inv_n + reg.eta() * *w);
        }
        add_outer(&mut table_sum, h, &delta, 1.0);
        scores[n * c..(n + 1) * c].copy_from_slice(&z);
        check_divergence(&state, i + 1)?;
        observer.observe(&report(i + 1, &state, (i + 1) as u64))?;
    }
    Ok(RunOutcome {
        agents: state,
        gradient_evals: settings.iters as u64,
        combination_ops: 0,
        collisions: 0,
    })
}

/// Full-batch gradient descent with constant step.
pub fn run_centralized_gd(
    problem: &Problem,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let data = problem.dataset();
    let (loss, reg, c) = (problem.loss(), problem.reg(), problem.classes());
    let mut state = vec![AgentState {
        weights: vec![0.0; data.features() * c],
        grad_sum: Vec::new(),
    }];
    let mut grad = vec![0.0; data.features() * c];
    observer.observe(&report(0, &state, 0))?;
    let n = data.samples() as u64;
    for i in 0..settings.iters {
        crate::objective::risk_and_gradient(data, loss, reg, &state[0].weights, &mut grad);
        for (w, gr) in state[0].weights.iter_mut().zip(&grad) {
            *w -= settings.step * gr;
        }
        check_divergence(&state, i + 1)?;
        observer.observe(&report(i + 1, &state, (i as u64 + 1) * n))?;
    }
    Ok(RunOutcome {
        agents: state,
        gradient_evals: settings.iters as u64 * n,
        combination_ops: 0,
        collisions: 0,
    })
}
