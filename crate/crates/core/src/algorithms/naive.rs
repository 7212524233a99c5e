use super::{
    check_divergence, for_each_agent, zero_agents, IterationReport, Observer, Problem, RunOutcome, RunSettings, Sampler,
};
use crate::diffusion::{combine_into, scaled_local_scores};
use crate::error::Result;
use crate::model::add_outer;
use crate::topology::CombinationMatrix;

/// Naïve feature-distributed SGD: each agent estimates the score with a
/// single combination of its neighbors' scaled local scores,
/// `ẑ_k = Σ_l a_{lk} K h_{n,l}ᵀ w_l`, and takes a plain stochastic step.
/// There is no memory, so the estimate error never washes out.
pub fn run_naive(
    problem: &Problem,
    a: &CombinationMatrix,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let c = problem.classes();
    let (loss, reg) = (problem.loss(), problem.reg());
    let shards = problem.shards();
    let mut agents = zero_agents(problem, false);
    let mut sampler = Sampler::new(settings.seed, problem.samples(), settings.sampling);
    let mut estimate = vec![0.0; problem.agents() * c];

    observer.observe(&IterationReport {
        iteration: 0,
        agents: &agents,
        unbiasedness: None,
        grad_sum_drift: None,
        gradient_evals: 0,
        combination_ops: 0,
        collisions: 0,
    })?;

    for i in 0..settings.iters {
        let n = sampler.next_index();
        let local = scaled_local_scores(shards, &agents, n, c);
        combine_into(a, &local, c, &mut estimate);
        let estimate_ref = &estimate;
        let eta = reg.eta();
        for_each_agent(settings.parallel, &mut agents, |k, state| {
            let mut g = vec![0.0; c];
            loss.score_grad(&estimate_ref[k * c..(k + 1) * c], shards[k].labels()[n], &mut g);
            let mut grad = vec![0.0; state.weights.len()];
            add_outer(&mut grad, shards[k].row(n), &g, 1.0);
            for (w, gr) in state.weights.iter_mut().zip(&grad) {
                *w -= settings.step * (gr + eta * *w);
            }
        });
        check_divergence(&agents, i + 1)?;
        let completed = (i + 1) as u64;
        observer.observe(&IterationReport {
            iteration: i + 1,
            agents: &agents,
            unbiasedness: None,
            grad_sum_drift: None,
            gradient_evals: completed,
            combination_ops: completed,
            collisions: 0,
        })?;
    }
    let iters = settings.iters as u64;
    Ok(RunOutcome {
        agents,
        gradient_evals: iters,
        combination_ops: iters,
        collisions: 0,
    })
}
