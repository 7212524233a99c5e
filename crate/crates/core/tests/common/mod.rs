#![allow(dead_code)]

use featnet::algorithms::{IterationReport, Problem};
use featnet::data::{make_synthetic, Partition, SyntheticKind, SyntheticSpec};
use featnet::model::{Loss, Regularizer};
use featnet::topology::{CombinationMatrix, Graph};

pub fn logistic_problem(samples: usize, features: usize, agents: usize, reg: f64, seed: u64) -> Problem {
    let mut spec = SyntheticSpec::new(samples, features, seed, SyntheticKind::Logistic);
    spec.flip_prob = 0.1;
    let (ds, _) = make_synthetic(&spec).unwrap();
    Problem::new(
        ds,
        Partition::even(features, agents).unwrap(),
        Loss::Logistic,
        Regularizer::l2(reg).unwrap(),
    )
    .unwrap()
}

pub fn softmax_problem(samples: usize, features: usize, agents: usize, classes: usize, reg: f64, seed: u64) -> Problem {
    let mut spec = SyntheticSpec::new(samples, features, seed, SyntheticKind::Softmax);
    spec.classes = classes;
    spec.flip_prob = 0.05;
    let (ds, _) = make_synthetic(&spec).unwrap();
    Problem::new(
        ds,
        Partition::even(features, agents).unwrap(),
        Loss::Softmax { classes },
        Regularizer::l2(reg).unwrap(),
    )
    .unwrap()
}

pub fn ring(agents: usize) -> CombinationMatrix {
    CombinationMatrix::metropolis(&Graph::ring(agents).unwrap()).unwrap()
}

pub struct Recorder {
    pub weights: Vec<Vec<f64>>,
    pub unbiasedness: Vec<f64>,
    pub drift: Vec<f64>,
}

impl Recorder {
    pub fn new() -> Self {
        Recorder {
            weights: Vec::new(),
            unbiasedness: Vec::new(),
            drift: Vec::new(),
        }
    }
}

impl featnet::algorithms::Observer for Recorder {
    fn observe(&mut self, r: &IterationReport<'_>) -> featnet::Result<()> {
        self.weights.push(r.weights());
        if let Some(u) = r.unbiasedness {
            self.unbiasedness.push(u);
        }
        if let Some(d) = r.grad_sum_drift {
            self.drift.push(d);
        }
        Ok(())
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest per-iterate deviation between two weight logs.
pub fn max_trajectory_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}
