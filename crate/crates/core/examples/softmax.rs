//! Multi-class training with a softmax loss on a random geometric graph.

use featnet::algorithms::{Problem, RunSettings, StepGuidance, DEFAULT_STEP_FACTOR};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{audit_invariants, compute_reference, run_traced, Algorithm};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{build_random_geometric_graph, CombinationMatrix};

fn main() -> featnet::Result<()> {
    let classes = 4;
    let mut spec = SyntheticSpec::new(300, 60, 3, SyntheticKind::Softmax);
    spec.classes = classes;
    spec.flip_prob = 0.05;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(
        ds,
        Partition::even(60, 6)?,
        Loss::Softmax { classes },
        Regularizer::l2(1e-2)?,
    )?;
    let a = CombinationMatrix::metropolis(&build_random_geometric_graph(6, 0.6, 11)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;

    let mut s = RunSettings::new(
        StepGuidance::from_problem(&problem).suggest(DEFAULT_STEP_FACTOR),
        6000,
        2,
    );
    s.depth = 4;
    s.batch = 4;
    s.checkpoints = 10;
    let trace = run_traced(
        &problem,
        &a,
        Algorithm::Pvrd2,
        &s,
        &reference,
        1000,
        serde_json::Value::Null,
    )?;
    for r in &trace.records {
        println!("iteration {:>5}  excess risk {:.3e}", r.iteration, r.excess_risk);
    }
    print!("{}", audit_invariants(&trace));
    Ok(())
}
