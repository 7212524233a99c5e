use super::{
    check_divergence, for_each_agent, fresh_grad_sum, grad_sum_drift, saga_step, zero_agents, IterationReport,
    Observer, Problem, RunOutcome, RunSettings, Sampler,
};
use crate::diffusion::{scaled_local_scores, tracking_input, PipelineQueue, ScoreMemory, Slot};
use crate::error::Result;
use crate::model::add_outer;
use crate::topology::CombinationMatrix;

/// Pipelined variance-reduced dynamic diffusion with depth `J` and
/// mini-batch `B`.
///
/// Every round pushes `B` fresh tracking inputs `u + K hᵀw − v` (tagged with
/// `K hᵀw`) into the pipeline and pops the `B` entries pushed `J − 1` rounds
/// ago, each combined `J` times. The SAGA step averages the `B` popped
/// corrections; the `u`/`v` rows of the popped indices are then overwritten
/// in pop order. Zero slots popped during the first `J − 1` rounds carry no
/// sample, so those rounds step with `grad_sum / N + ∇r` only.
pub fn run_pvrd2(
    problem: &Problem,
    a: &CombinationMatrix,
    settings: &RunSettings,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    settings.validate()?;
    let (agents_n, samples, c) = (problem.agents(), problem.samples(), problem.classes());
    let (loss, reg) = (problem.loss(), problem.reg());
    let (depth, batch) = (settings.depth, settings.batch);
    let shards = problem.shards();
    let inv_n = 1.0 / samples as f64;
    let inv_b = 1.0 / batch as f64;
    let width = batch * c;

    let mut memory = ScoreMemory::new(agents_n, samples, c);
    let mut agents = zero_agents(problem, true);
    for (k, state) in agents.iter_mut().enumerate() {
        state.grad_sum = fresh_grad_sum(&shards[k], loss, &memory, k);
    }
    let mut queue = PipelineQueue::new(depth, agents_n, width);
    let mut sampler = Sampler::new(settings.seed, samples, settings.sampling);
    let (mut grads, mut combos, mut collisions) = (0u64, 0u64, 0u64);

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
        let indices: Vec<usize> = (0..batch).map(|_| sampler.next_index()).collect();
        collisions += indices.iter().map(|&n| queue.count_in_flight(n) as u64).sum::<u64>();

        let mut z = vec![0.0; agents_n * width];
        let mut tags = vec![0.0; agents_n * width];
        for (b, &n) in indices.iter().enumerate() {
            let local = scaled_local_scores(shards, &agents, n, c);
            for k in 0..agents_n {
                let (u, v) = (memory.u(k, n), memory.v(k, n));
                let at = k * width + b * c;
                for q in 0..c {
                    let s = local[k * c + q];
                    z[at + q] = tracking_input(u[q], s, v[q]);
                    tags[at + q] = s;
                }
            }
        }
        let popped = queue.push_pop(
            a,
            Slot {
                pushed_at: Some(i),
                indices,
                z,
                tags,
            },
        );

        let memory_ref = &memory;
        let popped_ref = &popped;
        for_each_agent(settings.parallel, &mut agents, |k, state| {
            let mut bracket = vec![0.0; state.weights.len()];
            let mut gz = vec![0.0; c];
            let mut gu = vec![0.0; c];
            let mut diff = vec![0.0; c];
            for (b, &n) in popped_ref.indices.iter().enumerate() {
                let y = shards[k].labels()[n];
                let at = k * width + b * c;
                loss.score_grad(&popped_ref.z[at..at + c], y, &mut gz);
                loss.score_grad(memory_ref.u(k, n), y, &mut gu);
                for q in 0..c {
                    diff[q] = gz[q] - gu[q];
                }
                add_outer(&mut bracket, shards[k].row(n), &diff, inv_b);
            }
            saga_step(state, &bracket, inv_n, settings.step, reg);
        });

        let mut worst_gap = 0.0f64;
        let mut gu = vec![0.0; c];
        let mut gz = vec![0.0; c];
        let mut diff = vec![0.0; c];
        for (b, &n) in popped.indices.iter().enumerate() {
            for (k, state) in agents.iter_mut().enumerate() {
                let at = k * width + b * c;
                let y = shards[k].labels()[n];
                loss.score_grad(&popped.z[at..at + c], y, &mut gz);
                loss.score_grad(memory.u(k, n), y, &mut gu);
                for q in 0..c {
                    diff[q] = gz[q] - gu[q];
                }
                add_outer(&mut state.grad_sum, shards[k].row(n), &diff, 1.0);
                memory.set(k, n, &popped.z[at..at + c], &popped.tags[at..at + c]);
            }
            memory.mark_updated(n, i);
        }
        if let (Some(f), Some(&n)) = (settings.fault.filter(|f| f.iteration == i + 1), popped.indices.first()) {
            memory.corrupt_u(f.agent, n, f.delta);
        }
        for &n in &popped.indices {
            worst_gap = worst_gap.max(memory.unbiasedness_residual(n));
        }
        grads += batch as u64;
        combos += (depth * batch) as u64;
        check_divergence(&agents, i + 1)?;

        let completed = i + 1;
        let drift = settings
            .is_checkpoint(completed)
            .then(|| grad_sum_drift(problem, &agents, &memory));
        observer.observe(&IterationReport {
            iteration: completed,
            agents: &agents,
            unbiasedness: (!popped.indices.is_empty()).then_some(worst_gap),
            grad_sum_drift: drift,
            gradient_evals: grads,
            combination_ops: combos,
            collisions,
        })?;
    }
    Ok(RunOutcome {
        agents,
        gradient_evals: grads,
        combination_ops: combos,
        collisions,
    })
}
