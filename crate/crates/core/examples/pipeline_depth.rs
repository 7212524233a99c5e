//! Sweeps the pipeline depth `J` at a fixed budget `J + B = 30`.

use featnet::algorithms::{Problem, RunSettings, StepGuidance, DEFAULT_STEP_FACTOR};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{compute_reference, decaying_window, fit_linear_rate, run_traced, Algorithm};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    let mut spec = SyntheticSpec::new(1000, 256, 1, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(ds, Partition::even(256, 8)?, Loss::Logistic, Regularizer::l2(1e-2)?)?;
    let a = CombinationMatrix::metropolis(&Graph::ring(8)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;
    let step = StepGuidance::from_problem(&problem).suggest(DEFAULT_STEP_FACTOR);

    for depth in [1, 5, 10, 20] {
        let mut s = RunSettings::new(step, 3000, 0);
        s.depth = depth;
        s.batch = 30 - depth;
        let trace = run_traced(
            &problem,
            &a,
            Algorithm::Pvrd2,
            &s,
            &reference,
            50,
            serde_json::Value::Null,
        )?;
        let fit = fit_linear_rate(&trace, decaying_window(&trace, 1e-13))?;
        println!(
            "J={depth:<2} B={:<2} slope {:.4e}  final {:.2e}  scalars/edge {}",
            s.batch,
            fit.slope,
            trace.last().excess_risk,
            trace.last().comm_net
        );
    }
    Ok(())
}
