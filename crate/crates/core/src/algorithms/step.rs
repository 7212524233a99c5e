use serde::Serialize;

use super::Problem;

/// Multiplier applied to the smallest analytic bound by default. The bounds
/// are worst-case and several orders too small for desk-scale problems; this
/// value was picked by sweeping the acceptance instances.
pub const DEFAULT_STEP_FACTOR: f64 = 20.0;

/// Step-size bounds computable from the problem constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepGuidance {
    /// Strong-convexity modulus `ν` (taken as the regularizer's `2·coeff`).
    pub nu: f64,
    /// Weight-gradient Lipschitz estimate `δ·max‖h‖² + η`.
    pub lipschitz: f64,
    pub delta: f64,
    pub eta: f64,
    /// `max_n ‖h_n‖⁴`.
    pub h4: f64,
    pub samples: usize,
}

impl StepGuidance {
    pub fn from_problem(problem: &Problem) -> Self {
        let max_sq = problem.dataset().squared_norms().into_iter().fold(0.0, f64::max);
        let delta = problem.loss().score_lipschitz();
        let eta = problem.reg().eta();
        StepGuidance {
            nu: problem.reg().modulus(),
            lipschitz: delta * max_sq + eta,
            delta,
            eta,
            h4: max_sq * max_sq,
            samples: problem.samples(),
        }
    }

    /// The individual bounds, in order: `1/(4ν)`, `1/(2νN)`, `ν/(48η²)`,
    /// `ν/(8L² + 20δ²h⁴)`. Bounds with a zero denominator are infinite.
    pub fn bounds(&self) -> [f64; 4] {
        let nu = self.nu;
        let div = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
        [
            div(1.0, 4.0 * nu),
            div(1.0, 2.0 * nu * self.samples as f64),
            div(nu, 48.0 * self.eta * self.eta),
            div(nu, 8.0 * self.lipschitz.powi(2) + 20.0 * self.delta.powi(2) * self.h4),
        ]
    }

    pub fn conservative(&self) -> f64 {
        self.bounds().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn suggest(&self, factor: f64) -> f64 {
        let mu = factor * self.conservative();
        self.warn_if_large(mu);
        mu
    }

    /// Logs a warning when `mu` exceeds the analytic guidance. Returns
    /// whether it did.
    pub fn warn_if_large(&self, mu: f64) -> bool {
        let bound = self.conservative();
        let large = mu > bound;
        if large {
            log::warn!(
                "step {mu:.3e} exceeds the analytic bound {bound:.3e} by {:.1}x; convergence is not guaranteed",
                mu / bound
            );
        }
        large
    }
}
