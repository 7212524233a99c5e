use super::{
    check_divergence, for_each_agent, zero_agents, IterationReport, Observer, Problem, RunOutcome, RunSettings,
};
use crate::diffusion::{tracked_score_update, ScoreMemory};
use crate::error::Result;
use crate::model::add_outer;
use crate::topology::CombinationMatrix;

/// Deterministic full-gradient counterpart of VRD²: every round runs one
/// dynamic-diffusion tracking step for all `N` scores, then each agent takes
/// a full gradient step with its tracked scores. Costs `N` gradients and `N`
/// combinations per round.
pub fn run_deterministic(
    problem: &Problem,
    a: &CombinationMatrix,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let (samples, c) = (problem.samples(), problem.classes());
    let (loss, reg) = (problem.loss(), problem.reg());
    let shards = problem.shards();
    let inv_n = 1.0 / samples as f64;
    let mut memory = ScoreMemory::new(problem.agents(), samples, c);
    let mut agents = zero_agents(problem, false);

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
        let tracked: Vec<_> = (0..samples)
            .map(|n| tracked_score_update(a, shards, &agents, &memory, n))
            .collect();
        let tracked_ref = &tracked;
        let eta = reg.eta();
        for_each_agent(settings.parallel, &mut agents, |k, state| {
            let mut grad = vec![0.0; state.weights.len()];
            let mut g = vec![0.0; c];
            for (n, t) in tracked_ref.iter().enumerate() {
                loss.score_grad(&t.z[k * c..(k + 1) * c], shards[k].labels()[n], &mut g);
                add_outer(&mut grad, shards[k].row(n), &g, inv_n);
            }
            for (w, gr) in state.weights.iter_mut().zip(&grad) {
                *w -= settings.step * (gr + eta * *w);
            }
        });
        let mut worst = 0.0f64;
        for (n, t) in tracked.iter().enumerate() {
            memory.commit(n, i, &t.z, &t.scaled_local);
            worst = worst.max(memory.unbiasedness_residual(n));
        }
        check_divergence(&agents, i + 1)?;
        let done = (i + 1) as u64 * samples as u64;
        observer.observe(&IterationReport {
            iteration: i + 1,
            agents: &agents,
            unbiasedness: Some(worst),
            grad_sum_drift: None,
            gradient_evals: done,
            combination_ops: done,
            collisions: 0,
        })?;
    }
    let total = settings.iters as u64 * samples as u64;
    Ok(RunOutcome {
        agents,
        gradient_evals: total,
        combination_ops: total,
        collisions: 0,
    })
}
