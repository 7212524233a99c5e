//! Scalars per edge per iteration under each communication scheme, and the
//! traffic needed to reach a target excess risk.

use featnet::algorithms::{Problem, RunSettings, StepGuidance, DEFAULT_STEP_FACTOR};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{
    comm_per_edge_per_iter, compute_reference, run_traced, run_traced_with_comm, Algorithm, CommScheme,
};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    for (name, scheme, classes) in [
        (
            "pipelined J=10 B=10",
            CommScheme::Pipelined { depth: 10, batch: 10 },
            10,
        ),
        ("naive B=1", CommScheme::Naive { batch: 1 }, 10),
        ("full tracking N=1000", CommScheme::FullTracking { samples: 1000 }, 10),
        (
            "model-distributed M=3072",
            CommScheme::ModelDistributed { features: 3072 },
            10,
        ),
    ] {
        let c = comm_per_edge_per_iter(scheme, classes);
        println!("{name:<26} net {:>6}  gross {:>6}", c.net, c.gross);
    }

    let mut spec = SyntheticSpec::new(200, 256, 1, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(ds, Partition::even(256, 4)?, Loss::Logistic, Regularizer::l2(1e-2)?)?;
    let a = CombinationMatrix::metropolis(&Graph::ring(4)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;
    let step = StepGuidance::from_problem(&problem).suggest(DEFAULT_STEP_FACTOR);
    let s = RunSettings::new(step, 20_000, 1);
    let target = 1e-8;

    let vrd2 = run_traced(
        &problem,
        &a,
        Algorithm::Vrd2,
        &s,
        &reference,
        100,
        serde_json::Value::Null,
    )?;
    // Centralized SAGA charged as if the full model crossed every edge.
    let model = comm_per_edge_per_iter(CommScheme::ModelDistributed { features: 256 }, 1);
    let saga = run_traced_with_comm(
        &problem,
        &a,
        Algorithm::Saga,
        &s,
        &reference,
        100,
        model,
        serde_json::Value::Null,
    )?;
    for trace in [&vrd2, &saga] {
        let hit = trace.records.iter().find(|r| r.excess_risk < target);
        match hit {
            Some(r) => println!(
                "{:<5} reaches {target:e} after {} scalars per edge",
                trace.algorithm, r.comm_net
            ),
            None => println!("{:<5} does not reach {target:e}", trace.algorithm),
        }
    }
    Ok(())
}
