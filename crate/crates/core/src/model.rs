//! Losses on the aggregated score and the per-block ℓ2 regularizer.
//!
//! Every loss is written over a score vector of length `C`; the scalar
//! losses are the `C = 1` case. Labels are carried as `f64`: `±1` for
//! logistic, the class index `0..C` for softmax, any real for ridge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "lowercase", deny_unknown_fields)]
pub enum Loss {
    Logistic,
    Softmax {
        classes: usize,
    },
    /// Squared loss `½(z − γ)²`.
    Ridge,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Logistic => "logistic",
            Loss::Softmax { .. } => "softmax",
            Loss::Ridge => "ridge",
        }
    }

    /// Score dimension `C`.
    pub fn classes(&self) -> usize {
        match self {
            Loss::Softmax { classes } => *classes,
            _ => 1,
        }
    }

    /// Lipschitz constant of the score gradient.
    pub fn score_lipschitz(&self) -> f64 {
        match self {
            Loss::Logistic => 0.25,
            Loss::Softmax { .. } => 0.5,
            Loss::Ridge => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Loss::Softmax { classes } = self {
            if *classes < 2 {
                return Err(Error::Config(format!(
                    "softmax needs at least 2 classes, got {classes}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_label(&self, label: f64) -> Result<()> {
        let ok = match self {
            Loss::Logistic => label == 1.0 || label == -1.0,
            Loss::Softmax { classes } => label >= 0.0 && label.fract() == 0.0 && (label as usize) < *classes,
            Loss::Ridge => label.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "label {label} is not valid for {} loss",
                self.name()
            )))
        }
    }

    pub fn value(&self, z: &[f64], label: f64) -> f64 {
        match self {
            Loss::Logistic => logistic_loss(z[0], label),
            Loss::Softmax { .. } => log_sum_exp(z) - z[label as usize],
            Loss::Ridge => 0.5 * (z[0] - label).powi(2),
        }
    }

    /// Writes `∇_z Q(z; γ)` into `out` (length `C`).
    pub fn score_grad(&self, z: &[f64], label: f64, out: &mut [f64]) {
        match self {
            Loss::Logistic => out[0] = logistic_score_grad(z[0], label),
            Loss::Softmax { .. } => {
                softmax_into(z, out);
                out[label as usize] -= 1.0;
            }
            Loss::Ridge => out[0] = z[0] - label,
        }
    }
}

/// `ln(1 + exp(−γz))` without overflow.
pub fn logistic_loss(z: f64, label: f64) -> f64 {
    let t = -label * z;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `−γ / (1 + exp(γz))`, bounded in magnitude by one.
pub fn logistic_score_grad(z: f64, label: f64) -> f64 {
    let t = label * z;
    if t >= 0.0 {
        let e = (-t).exp();
        -label * e / (1.0 + e)
    } else {
        -label / (1.0 + t.exp())
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Softmax probability of `class` under scores `z`.
pub fn softmax_prob(z: &[f64], class: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.iter().map(|v| (v - max).exp()).sum();
    (z[class] - max).exp() / total
}

/// Per-column gradients of one sample's softmax term for an agent block.
///
/// `weights` is the agent's `M_k × C` block, row-major. The label column
/// gets `(prob − 1)·h + coeff·W[:,γ]`, every other column
/// `prob_c·h + coeff·W[:,c]`. `coeff` multiplies `W` as given, so the
/// gradient of `ρ‖W‖²_F` corresponds to `coeff = 2ρ`. Output has the same
/// layout as `weights`.
pub fn softmax_column_grads(
    z: &[f64],
    label: usize,
    features: &[f64],
    weights: &[f64],
    coeff: f64,
) -> Result<Vec<f64>> {
    let classes = z.len();
    if label >= classes || weights.len() != features.len() * classes {
        return Err(Error::Dimension(format!(
            "{} scores, label {label}, {} features, {} weights",
            classes,
            features.len(),
            weights.len()
        )));
    }
    let mut out = vec![0.0; weights.len()];
    for c in 0..classes {
        let p = softmax_prob(z, c) - if c == label { 1.0 } else { 0.0 };
        for (j, h) in features.iter().enumerate() {
            out[j * classes + c] = p * h + coeff * weights[j * classes + c];
        }
    }
    Ok(out)
}

/// `coeff · ‖w_k‖²` applied to each agent block separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub coeff: f64,
}

impl Regularizer {
    pub fn l2(coeff: f64) -> Result<Self> {
        if !(coeff >= 0.0) || !coeff.is_finite() {
            return Err(Error::Config(format!("reg_coeff must be nonnegative, got {coeff}")));
        }
        Ok(Regularizer { coeff })
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        self.coeff * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn grad(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|v| 2.0 * self.coeff * v).collect()
    }

    /// Lipschitz constant of the gradient.
    pub fn eta(&self) -> f64 {
        2.0 * self.coeff
    }

    /// Strong-convexity modulus the regularizer alone guarantees.
    pub fn modulus(&self) -> f64 {
        2.0 * self.coeff
    }
}

/// `s[c] = Σ_j h[j] · w[j·C + c]` for one feature slice.
#[inline]
pub(crate) fn block_score(features: &[f64], weights: &[f64], classes: usize, out: &mut [f64]) {
    if classes == 1 {
        out[0] = features.iter().zip(weights).map(|(h, w)| h * w).sum();
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, h) in features.iter().enumerate() {
        let row = &weights[j * classes..(j + 1) * classes];
        for (o, w) in out.iter_mut().zip(row) {
            *o += h * w;
        }
    }
}

/// `acc[j·C + c] += scale · h[j] · g[c]`.
#[inline]
pub(crate) fn add_outer(acc: &mut [f64], features: &[f64], grad: &[f64], scale: f64) {
    let classes = grad.len();
    if classes == 1 {
        let gs = grad[0] * scale;
        for (a, h) in acc.iter_mut().zip(features) {
            *a += h * gs;
        }
        return;
    }
    for (j, h) in features.iter().enumerate() {
        let hs = h * scale;
        if hs == 0.0 {
            continue;
        }
        for (a, g) in acc[j * classes..(j + 1) * classes].iter_mut().zip(grad) {
            *a += hs * g;
        }
    }
}
