//! VRD² on a 4-agent ring reaches the empirical minimizer at a linear rate.

use featnet::algorithms::{run_vrd2, Problem, RunSettings, StepGuidance, DEFAULT_STEP_FACTOR};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{comm_per_edge_per_iter, CommScheme};
use featnet::harness::{compute_reference, decaying_window, fit_linear_rate, TraceRecorder};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    let mut spec = SyntheticSpec::new(200, 32, 1, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(ds, Partition::even(32, 4)?, Loss::Logistic, Regularizer::l2(1e-2)?)?;
    let a = CombinationMatrix::metropolis(&Graph::ring(4)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;

    let step = StepGuidance::from_problem(&problem).suggest(DEFAULT_STEP_FACTOR);
    let settings = RunSettings::new(step, 10_000, 7);
    let comm = comm_per_edge_per_iter(CommScheme::Pipelined { depth: 1, batch: 1 }, 1);
    let mut recorder = TraceRecorder::new(&problem, &reference, comm, 500, settings.iters);
    run_vrd2(&problem, &a, &settings, &mut recorder)?;
    let trace = recorder.finish("vrd2", serde_json::Value::Null);

    for r in trace.records.iter().step_by(2) {
        println!("iteration {:>6}  excess risk {:.3e}", r.iteration, r.excess_risk);
    }
    let fit = fit_linear_rate(&trace, decaying_window(&trace, 1e-13))?;
    println!("log10 slope {:.3e} per iteration, R² {:.4}", fit.slope, fit.r_squared);
    Ok(())
}
