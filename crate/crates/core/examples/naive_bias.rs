//! The naive diffusion method stalls at a step-dependent floor; VRD² does not.

use featnet::algorithms::{Problem, RunSettings};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{compute_reference, run_traced, Algorithm};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    let mut spec = SyntheticSpec::new(200, 32, 1, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(ds, Partition::even(32, 4)?, Loss::Logistic, Regularizer::l2(1e-2)?)?;
    let a = CombinationMatrix::metropolis(&Graph::ring(4)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;

    for step in [0.2, 0.1, 0.05] {
        for alg in [Algorithm::Naive, Algorithm::Vrd2] {
            let s = RunSettings::new(step, 20_000, 3);
            let trace = run_traced(&problem, &a, alg, &s, &reference, 1000, serde_json::Value::Null)?;
            println!(
                "step {step:<5} {:<6} final excess risk {:.3e}",
                alg.name(),
                trace.last().excess_risk
            );
        }
    }
    Ok(())
}
