//! Library results checked against independent implementations written
//! here from the defining formulas.

mod common;

use std::collections::VecDeque;

use common::*;
use featnet::algorithms::*;
use featnet::data::{make_synthetic, Dataset, Partition, SyntheticKind, SyntheticSpec};
use featnet::diffusion::{PipelineQueue, Slot};
use featnet::harness::{compute_reference, compute_reference_from};
use featnet::model::{softmax_column_grads, Loss, Regularizer};
use featnet::objective::risk;
use featnet::topology::{build_random_geometric_graph, CombinationMatrix, Graph};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic_grad(z: f64, y: f64) -> f64 {
    -y / (1.0 + (y * z).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense(a: &CombinationMatrix) -> DMatrix<f64> {
    let k = a.size();
    DMatrix::from_fn(k, k, |i, j| a.weight(i, j))
}

/// `(HᵀH/N + 2cI) w = Hᵀγ/N`.
fn ridge_closed_form(ds: &Dataset, coeff: f64) -> Vec<f64> {
    let (n, m) = (ds.samples(), ds.features());
    let h = DMatrix::from_row_slice(n, m, ds.values());
    let y = DVector::from_column_slice(ds.labels());
    let lhs = h.transpose() * &h / n as f64 + DMatrix::identity(m, m) * (2.0 * coeff);
    let rhs = h.transpose() * y / n as f64;
    lhs.lu().solve(&rhs).unwrap().iter().copied().collect()
}

fn ridge_data(noise: f64) -> Dataset {
    let mut spec = SyntheticSpec::new(150, 10, 21, SyntheticKind::Ridge);
    spec.noise_std = noise;
    make_synthetic(&spec).unwrap().0
}

#[test]
fn reference_matches_ridge_normal_equations() {
    let ds = ridge_data(0.1);
    let exact = ridge_closed_form(&ds, 1e-2);
    let r = compute_reference(&ds, Loss::Ridge, Regularizer::l2(1e-2).unwrap(), 1e-10).unwrap();
    assert!(r.grad_norm <= 1e-10);
    assert!(max_abs_diff(&r.w_star, &exact) <= 1e-8);
}

#[test]
fn saga_and_vrd2_reach_ridge_solution() {
    let ds = ridge_data(0.1);
    let exact = ridge_closed_form(&ds, 1e-2);
    let p = Problem::new(
        ds,
        Partition::even(10, 2).unwrap(),
        Loss::Ridge,
        Regularizer::l2(1e-2).unwrap(),
    )
    .unwrap();
    let s = RunSettings::new(0.2, 40_000, 3);
    let saga = run_centralized_saga(&p, &s, &mut NoObserver).unwrap();
    assert!(max_abs_diff(&saga.agents[0].weights, &exact) <= 1e-8);
    let net = run_vrd2(
        &p,
        &CombinationMatrix::metropolis(&Graph::path(2).unwrap()).unwrap(),
        &s,
        &mut NoObserver,
    )
    .unwrap();
    assert!(max_abs_diff(&p.join(&net.agents), &exact) <= 1e-8);
}

#[test]
fn noiseless_ridge_recovers_planted_weights() {
    let mut spec = SyntheticSpec::new(200, 8, 5, SyntheticKind::Ridge);
    spec.noise_std = 0.0;
    let (ds, planted) = make_synthetic(&spec).unwrap();
    let coeff = 1e-9;
    let r = compute_reference(&ds, Loss::Ridge, Regularizer::l2(coeff).unwrap(), 1e-10).unwrap();
    assert!(max_abs_diff(&r.w_star, &ridge_closed_form(&ds, coeff)) <= 1e-6);
    // The bias is O(coeff · ‖w‖ / λ_min(HᵀH/N)).
    assert!(max_abs_diff(&r.w_star, &planted) <= 1e-5);
}

#[test]
fn separable_logistic_reference_classifies_all_points() {
    let mut spec = SyntheticSpec::new(200, 10, 8, SyntheticKind::Logistic);
    spec.margin = 0.5;
    let (ds, _) = make_synthetic(&spec).unwrap();
    let r = compute_reference(&ds, Loss::Logistic, Regularizer::l2(1e-4).unwrap(), 1e-10).unwrap();
    for n in 0..ds.samples() {
        assert!(
            dot(ds.row(n), &r.w_star) * ds.labels()[n] > 0.0,
            "sample {n} misclassified"
        );
    }
}

#[test]
fn reference_is_independent_of_start() {
    let p = logistic_problem(120, 10, 2, 1e-3, 2);
    let ds = p.dataset();
    let a = compute_reference(ds, p.loss(), p.reg(), 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let init: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b = compute_reference_from(ds, p.loss(), p.reg(), 1e-10, &init, 200_000).unwrap();
    assert!((a.risk_star - b.risk_star).abs() < 1e-10);
}

#[test]
fn regularized_logistic_is_strongly_convex() {
    let p = logistic_problem(80, 6, 2, 0.05, 9);
    let ds = p.dataset();
    let coeff = 0.05;
    let grad = |w: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for n in 0..ds.samples() {
            let d = logistic_grad(dot(ds.row(n), w), ds.labels()[n]) / ds.samples() as f64;
            for (gi, hi) in g.iter_mut().zip(ds.row(n)) {
                *gi += d * hi;
            }
        }
        g.iter().zip(w).map(|(g, w)| g + 2.0 * coeff * w).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let w1: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let w2: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (g1, g2) = (grad(&w1), grad(&w2));
        let lhs: f64 = (0..6).map(|i| (g1[i] - g2[i]) * (w1[i] - w2[i])).sum();
        let dist: f64 = (0..6).map(|i| (w1[i] - w2[i]).powi(2)).sum();
        assert!(lhs >= 2.0 * coeff * dist * (1.0 - 1e-12));
    }
}

/// SAGA whose score for a sample is computed `J − 1` rounds before it is
/// used, with `B` samples per round, written directly from the recursion.
fn delayed_saga(p: &Problem, mu: f64, iters: usize, seed: u64, depth: usize, batch: usize) -> Vec<Vec<f64>> {
    let ds = p.dataset();
    let (n, m) = (ds.samples(), ds.features());
    let coeff = p.reg().coeff;
    let mut sampler = Sampler::new(seed, n, Sampling::Uniform);
    let mut w = vec![0.0; m];
    let mut table = vec![0.0; n];
    let mut sum = vec![0.0; m];
    for i in 0..n {
        let g = logistic_grad(0.0, ds.labels()[i]);
        for (s, h) in sum.iter_mut().zip(ds.row(i)) {
            *s += g * h;
        }
    }
    let mut queue: VecDeque<Vec<(usize, f64)>> = (0..depth - 1).map(|_| Vec::new()).collect();
    let mut log = vec![w.clone()];
    for _ in 0..iters {
        let pushed: Vec<(usize, f64)> = (0..batch)
            .map(|_| {
                let idx = sampler.next_index();
                (idx, dot(ds.row(idx), &w))
            })
            .collect();
        queue.push_back(pushed);
        let popped = queue.pop_front().unwrap();
        let mut bracket = vec![0.0; m];
        for &(idx, z) in &popped {
            let y = ds.labels()[idx];
            let d = (logistic_grad(z, y) - logistic_grad(table[idx], y)) / batch as f64;
            for (b, h) in bracket.iter_mut().zip(ds.row(idx)) {
                *b += d * h;
            }
        }
        for j in 0..m {
            w[j] -= mu * (bracket[j] + sum[j] / n as f64 + 2.0 * coeff * w[j]);
        }
        for &(idx, z) in &popped {
            let y = ds.labels()[idx];
            let d = logistic_grad(z, y) - logistic_grad(table[idx], y);
            for (s, h) in sum.iter_mut().zip(ds.row(idx)) {
                *s += d * h;
            }
            table[idx] = z;
        }
        log.push(w.clone());
    }
    log
}

#[test]
fn pvrd2_with_exact_averaging_is_delayed_saga() {
    let p = logistic_problem(40, 12, 4, 1e-2, 6);
    let a = CombinationMatrix::averaging(4).unwrap();
    for (depth, batch) in [(1, 1), (2, 1), (5, 1), (3, 4), (7, 2)] {
        let mut s = RunSettings::new(0.15, 400, 11);
        s.depth = depth;
        s.batch = batch;
        let mut rec = Recorder::new();
        run_pvrd2(&p, &a, &s, &mut rec).unwrap();
        let oracle = delayed_saga(&p, 0.15, 400, 11, depth, batch);
        let gap = max_trajectory_gap(&rec.weights, &oracle);
        assert!(gap <= 1e-10, "J={depth} B={batch}: gap {gap:e}");
    }
}

#[test]
fn deterministic_with_exact_averaging_is_full_batch_gd() {
    let p = logistic_problem(50, 8, 4, 1e-2, 6);
    let a = CombinationMatrix::averaging(4).unwrap();
    let (mu, iters) = (0.8, 150);
    let mut rec = Recorder::new();
    run_deterministic(&p, &a, &RunSettings::new(mu, iters, 0), &mut rec).unwrap();
    let ds = p.dataset();
    let mut w = vec![0.0; 8];
    let mut oracle = vec![w.clone()];
    for _ in 0..iters {
        let mut g = [0.0; 8];
        for n in 0..ds.samples() {
            let d = logistic_grad(dot(ds.row(n), &w), ds.labels()[n]) / ds.samples() as f64;
            for (gi, h) in g.iter_mut().zip(ds.row(n)) {
                *gi += d * h;
            }
        }
        for j in 0..8 {
            w[j] -= mu * (g[j] + 2.0 * 1e-2 * w[j]);
        }
        oracle.push(w.clone());
    }
    let gap = max_trajectory_gap(&rec.weights, &oracle);
    assert!(gap <= 1e-10, "gap {gap:e}");
}

#[test]
fn pipeline_pops_matrix_power_of_push() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for a in [
        ring(5),
        CombinationMatrix::metropolis(&build_random_geometric_graph(7, 0.6, 3).unwrap()).unwrap(),
    ] {
        let k = a.size();
        let ad = dense(&a);
        for depth in [1usize, 3, 7] {
            let width = 2;
            let mut q = PipelineQueue::new(depth, k, width);
            let mut pushed = Vec::new();
            for i in 0..20 {
                let z: Vec<f64> = (0..k * width).map(|_| rng.random_range(-1.0..1.0)).collect();
                pushed.push(z.clone());
                let out = q.push_pop(
                    &a,
                    Slot {
                        pushed_at: Some(i),
                        indices: vec![i, i + 100],
                        z,
                        tags: vec![0.0; k * width],
                    },
                );
                if i + 1 < depth {
                    assert_eq!(out.pushed_at, None);
                    assert!(out.z.iter().all(|&v| v == 0.0));
                    continue;
                }
                let origin = out.pushed_at.unwrap();
                assert_eq!(i - origin, depth - 1);
                // Each column of the slot is one vector across agents.
                let aj = ad.pow(depth as u32);
                for col in 0..width {
                    let x = DVector::from_fn(k, |l, _| pushed[origin][l * width + col]);
                    // Agent k receives Σ_l a_{lk} x_l, i.e. (Aᵀ)ᴶ x.
                    let expect = aj.transpose() * x;
                    for l in 0..k {
                        assert!((out.z[l * width + col] - expect[l]).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn powers_contract_at_lambda() {
    let graphs = vec![
        Graph::ring(6).unwrap(),
        Graph::path(5).unwrap(),
        build_random_geometric_graph(12, 0.5, 1).unwrap(),
    ];
    for g in graphs {
        let a = CombinationMatrix::metropolis(&g).unwrap();
        let k = a.size();
        let ad = dense(&a);
        let avg = DMatrix::from_element(k, k, 1.0 / k as f64);
        for j in 1..=10u32 {
            let diff = ad.pow(j) - &avg;
            let norm = diff.singular_values().max();
            assert!(
                norm <= a.lambda().powi(j as i32) + 1e-10,
                "j={j}: {norm} vs {}",
                a.lambda()
            );
        }
    }
}

#[test]
fn ring_and_complete_mixing_rates() {
    // Circulant with first row (1/3, 1/3, 0, 1/3): eigenvalues 1/3 + (2/3)cos(2πm/4).
    let eig: Vec<f64> = (0..4)
        .map(|m| 1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * m as f64 / 4.0).cos())
        .collect();
    let expect = eig[1..].iter().map(|e| e.abs()).fold(0.0, f64::max);
    assert!((ring(4).lambda() - expect).abs() < 1e-12);
    assert!((ring(4).lambda() - 1.0 / 3.0).abs() < 1e-12);
    let c3 = CombinationMatrix::metropolis(&Graph::complete(3).unwrap()).unwrap();
    assert!(c3.lambda().abs() < 1e-12);
}

#[test]
fn softmax_column_grads_match_finite_differences_of_risk() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let classes = rng.random_range(2..6);
        let m = rng.random_range(1..6);
        let coeff = rng.random_range(0.0..0.1);
        let h: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..m * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = rng.random_range(0..classes);
        // Softmax loss of this sample plus (coeff/2)‖W‖², whose gradient
        // carries the `coeff · W` term of the column formula.
        let f = |w: &[f64]| -> f64 {
            let z: Vec<f64> = (0..classes)
                .map(|c| (0..m).map(|j| h[j] * w[j * classes + c]).sum())
                .collect();
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            lse - z[label] + 0.5 * coeff * w.iter().map(|v| v * v).sum::<f64>()
        };
        let z: Vec<f64> = (0..classes)
            .map(|c| (0..m).map(|j| h[j] * w[j * classes + c]).sum())
            .collect();
        let g = softmax_column_grads(&z, label, &h, &w, coeff).unwrap();
        for i in 0..w.len() {
            let eps = 1e-6;
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += eps;
            wm[i] -= eps;
            let fd = (f(&wp) - f(&wm)) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "fd {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn risk_gradient_matches_finite_differences_for_every_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problems = [
        logistic_problem(30, 5, 1, 0.02, 1),
        softmax_problem(30, 5, 1, 3, 0.02, 1),
    ];
    for p in &problems {
        let dim = p.dataset().features() * p.classes();
        for _ in 0..20 {
            let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g = vec![0.0; dim];
            featnet::objective::risk_and_gradient(p.dataset(), p.loss(), p.reg(), &w, &mut g);
            for i in 0..dim {
                let eps = 1e-6;
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += eps;
                wm[i] -= eps;
                let fd = (risk(p.dataset(), p.loss(), p.reg(), &wp) - risk(p.dataset(), p.loss(), p.reg(), &wm))
                    / (2.0 * eps);
                assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()));
            }
        }
    }
}
