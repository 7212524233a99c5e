//! Centralized evaluation of the empirical risk
//! `R(w) = (1/N) Σ_n Q(h_nᵀ W; γ_n) + ρ‖W‖²` on the unsplit dataset.
//!
//! Weights are `M × C` row-major; for an even split this is exactly the
//! concatenation of the agent blocks.

use crate::data::Dataset;
use crate::model::{add_outer, block_score, Loss, Regularizer};

pub fn risk(dataset: &Dataset, loss: Loss, reg: Regularizer, w: &[f64]) -> f64 {
    let c = loss.classes();
    let mut z = vec![0.0; c];
    let mut total = 0.0;
    for n in 0..dataset.samples() {
        block_score(dataset.row(n), w, c, &mut z);
        total += loss.value(&z, dataset.labels()[n]);
    }
    total / dataset.samples() as f64 + reg.value(w)
}

/// Writes `∇R(w)` into `grad` and returns `R(w)`.
pub fn risk_and_gradient(dataset: &Dataset, loss: Loss, reg: Regularizer, w: &[f64], grad: &mut [f64]) -> f64 {
    let c = loss.classes();
    let inv_n = 1.0 / dataset.samples() as f64;
    let mut z = vec![0.0; c];
    let mut g = vec![0.0; c];
    let mut total = 0.0;
    grad.iter_mut().for_each(|v| *v = 0.0);
    for n in 0..dataset.samples() {
        let (h, y) = (dataset.row(n), dataset.labels()[n]);
        block_score(h, w, c, &mut z);
        total += loss.value(&z, y);
        loss.score_grad(&z, y, &mut g);
        add_outer(grad, h, &g, inv_n);
    }
    for (gr, wv) in grad.iter_mut().zip(w) {
        *gr += reg.eta() * wv;
    }
    total * inv_n + reg.value(w)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
