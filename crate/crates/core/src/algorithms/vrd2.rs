use super::{
    check_divergence, for_each_agent, fresh_grad_sum, grad_sum_drift, saga_step, zero_agents, IterationReport,
    Observer, Problem, RunOutcome, RunSettings, Sampler,
};
use crate::diffusion::{tracked_score_update, ScoreMemory};
use crate::error::Result;
use crate::model::add_outer;
use crate::topology::CombinationMatrix;

/// Variance-reduced dynamic diffusion.
///
/// Each round tracks the score of one sampled index through the `u`/`v`
/// tables, takes a SAGA step with it, then overwrites row `n` of the tables
/// and patches `grad_sum` in O(1).
pub fn run_vrd2(
    problem: &Problem,
    a: &CombinationMatrix,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let (agents_n, samples, c) = (problem.agents(), problem.samples(), problem.classes());
    let (loss, reg) = (problem.loss(), problem.reg());
    let shards = problem.shards();
    let inv_n = 1.0 / samples as f64;

    let mut memory = ScoreMemory::new(agents_n, samples, c);
    let mut agents = zero_agents(problem, true);
    for (k, state) in agents.iter_mut().enumerate() {
        state.grad_sum = fresh_grad_sum(&shards[k], loss, &memory, k);
    }
    let mut sampler = Sampler::new(settings.seed, samples, settings.sampling);
    let (mut grads, mut combos) = (0u64, 0u64);

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
        let tracked = tracked_score_update(a, shards, &agents, &memory, n);
        let memory_ref = &memory;
        let z = &tracked.z;
        for_each_agent(settings.parallel, &mut agents, |k, state| {
            let h = shards[k].row(n);
            let y = shards[k].labels()[n];
            let mut gz = vec![0.0; c];
            let mut gu = vec![0.0; c];
            loss.score_grad(&z[k * c..(k + 1) * c], y, &mut gz);
            loss.score_grad(memory_ref.u(k, n), y, &mut gu);
            let diff: Vec<f64> = gz.iter().zip(&gu).map(|(p, q)| p - q).collect();
            let mut bracket = vec![0.0; state.weights.len()];
            add_outer(&mut bracket, h, &diff, 1.0);
            saga_step(state, &bracket, inv_n, settings.step, reg);
            add_outer(&mut state.grad_sum, h, &diff, 1.0);
        });
        memory.commit(n, i, &tracked.z, &tracked.scaled_local);
        if let Some(f) = settings.fault.filter(|f| f.iteration == i + 1) {
            memory.corrupt_u(f.agent, n, f.delta);
        }
        grads += 1;
        combos += 1;
        check_divergence(&agents, i + 1)?;

        let completed = i + 1;
        let drift = settings
            .is_checkpoint(completed)
            .then(|| grad_sum_drift(problem, &agents, &memory));
        observer.observe(&IterationReport {
            iteration: completed,
            agents: &agents,
            unbiasedness: Some(memory.unbiasedness_residual(n)),
            grad_sum_drift: drift,
            gradient_evals: grads,
            combination_ops: combos,
            collisions: 0,
        })?;
    }
    Ok(RunOutcome {
        agents,
        gradient_evals: grads,
        combination_ops: combos,
        collisions: 0,
    })
}
