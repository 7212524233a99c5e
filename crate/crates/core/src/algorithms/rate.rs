use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which term of the max is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateBranch {
    NetworkLimited,
    StrongConvexityLimited,
}

impl RateBranch {
    pub fn label(&self) -> &'static str {
        match self {
            RateBranch::NetworkLimited => "network-limited",
            RateBranch::StrongConvexityLimited => "strong-convexity-limited",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub rho: f64,
    pub network_term: f64,
    pub convexity_term: f64,
    pub branch: RateBranch,
}

impl RateBound {
    /// `log10(ρ)`, the per-iteration slope of log excess risk the bound allows.
    pub fn log10_slope(&self) -> f64 {
        self.rho.log10()
    }
}

fn check(lambda: f64, depth: usize, samples: usize, mu_nu: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    if depth == 0 || samples == 0 {
        return Err(Error::InvalidInput("J and N must be at least 1".into()));
    }
    if !(mu_nu > 0.0) || !mu_nu.is_finite() {
        return Err(Error::InvalidInput(format!("mu * nu must be positive, got {mu_nu}")));
    }
    Ok(())
}

fn assemble(network_term: f64, convexity_term: f64) -> RateBound {
    let branch = if network_term >= convexity_term {
        RateBranch::NetworkLimited
    } else {
        RateBranch::StrongConvexityLimited
    };
    RateBound {
        rho: network_term.max(convexity_term),
        network_term,
        convexity_term,
        branch,
    }
}

/// `ρ = max(1 − (1 − λ^J)/(2N), 1 − μν/5)`.
pub fn rate_bound(lambda: f64, depth: usize, samples: usize, mu: f64, nu: f64) -> Result<RateBound> {
    check(lambda, depth, samples, mu * nu)?;
    let lj = lambda.powi(depth as i32);
    Ok(assemble(1.0 - (1.0 - lj) / (2.0 * samples as f64), 1.0 - mu * nu / 5.0))
}

/// The unpipelined variant `max(1 − (1 − λ)/(2N), 1 − μν/4)`.
pub fn unpipelined_rate_bound(lambda: f64, samples: usize, mu: f64, nu: f64) -> Result<RateBound> {
    check(lambda, 1, samples, mu * nu)?;
    Ok(assemble(
        1.0 - (1.0 - lambda) / (2.0 * samples as f64),
        1.0 - mu * nu / 4.0,
    ))
}
