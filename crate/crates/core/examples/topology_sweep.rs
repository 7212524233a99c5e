//! Denser random geometric graphs mix faster and converge faster.

use featnet::algorithms::{rate_bound, Problem, RunSettings, StepGuidance, DEFAULT_STEP_FACTOR};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::harness::{compute_reference, decaying_window, fit_linear_rate, run_traced, Algorithm};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{build_random_geometric_graph, CombinationMatrix};

fn main() -> featnet::Result<()> {
    let mut spec = SyntheticSpec::new(500, 112, 1, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec)?;
    let problem = Problem::new(ds, Partition::even(112, 28)?, Loss::Logistic, Regularizer::l2(1e-2)?)?;
    let reference = compute_reference(problem.dataset(), problem.loss(), problem.reg(), 1e-10)?;
    let guidance = StepGuidance::from_problem(&problem);
    let step = guidance.suggest(DEFAULT_STEP_FACTOR);

    for radius in [0.3, 0.4, 0.6, 2f64.sqrt()] {
        let a = CombinationMatrix::metropolis(&build_random_geometric_graph(28, radius, 4)?)?;
        let mut s = RunSettings::new(step, 3000, 0);
        s.depth = 20;
        s.batch = 10;
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
        let bound = rate_bound(a.lambda(), 20, problem.samples(), step, guidance.nu)?;
        println!(
            "radius {radius:.2}  lambda {:.3}  slope {:.4e}  bound {:.4e} ({})",
            a.lambda(),
            fit.slope,
            bound.log10_slope(),
            bound.branch.label()
        );
    }
    Ok(())
}
