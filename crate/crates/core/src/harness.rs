//! Experiment plumbing: the reference minimizer, per-iteration traces,
//! communication accounting, invariant audits and rate fits.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algorithms::{self, IterationReport, Observer, Problem, RunOutcome, RunSettings};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Loss, Regularizer};
use crate::objective::{norm, risk, risk_and_gradient};
use crate::topology::CombinationMatrix;

/// Gradient-norm target of the reference solver.
pub const REFERENCE_TOL: f64 = 1e-10;
/// Iteration cap of the reference solver.
pub const REFERENCE_MAX_ITERS: usize = 200_000;
/// Relative tolerance of the unbiasedness audit.
pub const UNBIASEDNESS_TOL: f64 = 1e-9;
/// Relative tolerance of the online gradient-sum audit.
pub const GRAD_SUM_TOL: f64 = 1e-8;
/// Excess risk may dip this far below zero before it counts as a failure.
pub const EXCESS_RISK_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub w_star: Vec<f64>,
    pub risk_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub solver: String,
}

/// Minimizes the full risk from `w = 0` with gradient descent, a
/// Barzilai–Borwein trial step and Armijo backtracking.
pub fn compute_reference(dataset: &Dataset, loss: Loss, reg: Regularizer, tol: f64) -> Result<ReferenceSolution> {
    let init = vec![0.0; dataset.features() * loss.classes()];
    compute_reference_from(dataset, loss, reg, tol, &init, REFERENCE_MAX_ITERS)
}

pub fn compute_reference_from(
    dataset: &Dataset,
    loss: Loss,
    reg: Regularizer,
    tol: f64,
    init: &[f64],
    max_iters: usize,
) -> Result<ReferenceSolution> {
    let dim = init.len();
    let mut w = init.to_vec();
    let mut grad = vec![0.0; dim];
    let mut f = risk_and_gradient(dataset, loss, reg, &w, &mut grad);
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut alpha = 1.0;
    for it in 0..max_iters {
        let gn = norm(&grad);
        if gn <= tol {
            return Ok(ReferenceSolution {
                w_star: w,
                risk_star: f,
                grad_norm: gn,
                iterations: it,
                solver: "gradient descent, BB step with Armijo backtracking".into(),
            });
        }
        // Slack of a few ulps lets the search accept steps whose decrease
        // is below the resolution of `f`.
        let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
        let mut a = alpha;
        let mut accepted = false;
        for _ in 0..60 {
            for ((t, x), g) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = x - a * g;
            }
            let ft = risk_and_gradient(dataset, loss, reg, &trial, &mut trial_grad);
            if ft <= f - 1e-4 * a * gn * gn + slack {
                accepted = true;
                let (mut sy, mut ss) = (0.0, 0.0);
                for i in 0..dim {
                    let s = trial[i] - w[i];
                    sy += s * (trial_grad[i] - grad[i]);
                    ss += s * s;
                }
                alpha = if sy > 0.0 {
                    (ss / sy).clamp(1e-12, 1e12)
                } else {
                    a * 2.0
                };
                std::mem::swap(&mut w, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                f = ft;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged {
                iterations: it,
                grad_norm: gn,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        grad_norm: norm(&grad),
    })
}

/// Every driver the harness can dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Naive,
    Vrd2,
    Pvrd2,
    Deterministic,
    Sgd,
    Saga,
    Gd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Naive => "naive",
            Algorithm::Vrd2 => "vrd2",
            Algorithm::Pvrd2 => "pvrd2",
            Algorithm::Deterministic => "deterministic",
            Algorithm::Sgd => "sgd",
            Algorithm::Saga => "saga",
            Algorithm::Gd => "gd",
        }
    }

    pub fn is_networked(&self) -> bool {
        matches!(
            self,
            Algorithm::Naive | Algorithm::Vrd2 | Algorithm::Pvrd2 | Algorithm::Deterministic
        )
    }

    pub fn run(
        &self,
        problem: &Problem,
        a: &CombinationMatrix,
        settings: &RunSettings,
        observer: &mut dyn Observer,
    ) -> Result<RunOutcome> {
        match self {
            Algorithm::Naive => algorithms::run_naive(problem, a, settings, observer),
            Algorithm::Vrd2 => algorithms::run_vrd2(problem, a, settings, observer),
            Algorithm::Pvrd2 => algorithms::run_pvrd2(problem, a, settings, observer),
            Algorithm::Deterministic => algorithms::run_deterministic(problem, a, settings, observer),
            Algorithm::Sgd => algorithms::run_centralized_sgd(problem, settings, observer),
            Algorithm::Saga => algorithms::run_centralized_saga(problem, settings, observer),
            Algorithm::Gd => algorithms::run_centralized_gd(problem, settings, observer),
        }
    }

    pub fn comm_scheme(&self, settings: &RunSettings, samples: usize) -> CommScheme {
        match self {
            Algorithm::Vrd2 => CommScheme::Pipelined { depth: 1, batch: 1 },
            Algorithm::Pvrd2 => CommScheme::Pipelined {
                depth: settings.depth,
                batch: settings.batch,
            },
            Algorithm::Naive => CommScheme::Naive { batch: 1 },
            Algorithm::Deterministic => CommScheme::FullTracking { samples },
            Algorithm::Sgd | Algorithm::Saga | Algorithm::Gd => CommScheme::None,
        }
    }
}

/// Communication pattern whose per-edge cost is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum CommScheme {
    /// One `J`-stage pipeline message carrying `B` score vectors per stage.
    Pipelined {
        depth: usize,
        batch: usize,
    },
    /// One combination of `B` score vectors.
    Naive {
        batch: usize,
    },
    /// Score tracking for every sample each round.
    FullTracking {
        samples: usize,
    },
    /// Sample-partitioned methods that exchange the full `M × C` model.
    ModelDistributed {
        features: usize,
    },
    None,
}

/// Scalars sent over one edge in one iteration. `net` counts the score
/// payload only; `gross` adds the `v` tags that ride along the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    pub net: u64,
    pub gross: u64,
}

pub fn comm_per_edge_per_iter(scheme: CommScheme, classes: usize) -> CommCost {
    let c = classes as u64;
    match scheme {
        CommScheme::Pipelined { depth, batch } => {
            let net = depth as u64 * c * batch as u64;
            CommCost { net, gross: 2 * net }
        }
        CommScheme::Naive { batch } => {
            let net = c * batch as u64;
            CommCost { net, gross: net }
        }
        CommScheme::FullTracking { samples } => {
            let net = samples as u64 * c;
            CommCost { net, gross: net }
        }
        CommScheme::ModelDistributed { features } => {
            let net = features as u64 * c;
            CommCost { net, gross: net }
        }
        CommScheme::None => CommCost { net: 0, gross: 0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub excess_risk: f64,
    /// `max_k ‖w_k − w*_k‖²`.
    pub msd: f64,
    /// Cumulative scalars per edge.
    pub comm_net: u64,
    pub comm_gross: u64,
    pub gradient_evals: u64,
    pub combination_ops: u64,
    /// Worst unbiasedness gap since the previous record.
    pub unbiasedness: Option<f64>,
    pub grad_sum_drift: Option<f64>,
    pub collisions: u64,
}

/// Worst value of a residual channel and where it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub max: f64,
    pub max_at: usize,
    pub threshold: f64,
    pub first_violation: Option<usize>,
    pub observations: usize,
}

impl ChannelSummary {
    fn new(threshold: f64) -> Self {
        ChannelSummary {
            max: 0.0,
            max_at: 0,
            threshold,
            first_violation: None,
            observations: 0,
        }
    }

    fn push(&mut self, iteration: usize, value: f64) {
        self.observations += 1;
        // NaN must count as a violation.
        if !(value <= self.max) {
            self.max = if value.is_nan() { f64::INFINITY } else { value };
            self.max_at = iteration;
        }
        if self.first_violation.is_none() && !(value <= self.threshold) {
            self.first_violation = Some(iteration);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub cadence: usize,
    pub comm: CommCost,
    pub risk_star: f64,
    pub records: Vec<TraceRecord>,
    pub unbiasedness: Option<ChannelSummary>,
    pub grad_sum_drift: Option<ChannelSummary>,
    pub config: serde_json::Value,
}

pub const CSV_HEADER: [&str; 10] = [
    "iteration",
    "excess_risk",
    "msd",
    "comm_net",
    "comm_gross",
    "gradient_evals",
    "combination_ops",
    "unbiasedness",
    "grad_sum_drift",
    "collisions",
];

impl RunTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("a trace holds at least the initial record")
    }

    pub fn excess_series(&self) -> Vec<(usize, f64)> {
        self.records.iter().map(|r| (r.iteration, r.excess_risk)).collect()
    }

    /// Writes the records as CSV. The first line is a `#` comment holding
    /// the resolved config.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        self.write_csv_to(&mut file)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                fmt_float(r.excess_risk),
                fmt_float(r.msd),
                r.comm_net.to_string(),
                r.comm_gross.to_string(),
                r.gradient_evals.to_string(),
                r.combination_ops.to_string(),
                opt(r.unbiasedness),
                opt(r.grad_sum_drift),
                r.collisions.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = i as u64 + 3;
            let num = |j: usize| -> Result<f64> {
                row[j].parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad value in column {}", CSV_HEADER[j]),
                })
            };
            let opt = |j: usize| -> Result<Option<f64>> {
                if row[j].is_empty() {
                    Ok(None)
                } else {
                    num(j).map(Some)
                }
            };
            records.push(TraceRecord {
                iteration: num(0)? as usize,
                excess_risk: num(1)?,
                msd: num(2)?,
                comm_net: num(3)? as u64,
                comm_gross: num(4)? as u64,
                gradient_evals: num(5)? as u64,
                combination_ops: num(6)? as u64,
                unbiasedness: opt(7)?,
                grad_sum_drift: opt(8)?,
                collisions: num(9)? as u64,
            });
        }
        Ok(records)
    }
}

/// Shortest round-trip representation, in exponent form.
pub fn fmt_float(x: f64) -> String {
    format!("{x:e}")
}

/// Observer that turns driver reports into a [`RunTrace`].
pub struct TraceRecorder<'a> {
    problem: &'a Problem,
    star_blocks: Vec<Vec<f64>>,
    risk_star: f64,
    cadence: usize,
    final_iteration: usize,
    comm: CommCost,
    records: Vec<TraceRecord>,
    window: Option<f64>,
    unbiasedness: ChannelSummary,
    drift: ChannelSummary,
}

impl<'a> TraceRecorder<'a> {
    pub fn new(
        problem: &'a Problem,
        reference: &ReferenceSolution,
        comm: CommCost,
        cadence: usize,
        final_iteration: usize,
    ) -> Self {
        TraceRecorder {
            problem,
            star_blocks: problem.split(&reference.w_star),
            risk_star: reference.risk_star,
            cadence: cadence.max(1),
            final_iteration,
            comm,
            records: Vec::new(),
            window: None,
            unbiasedness: ChannelSummary::new(UNBIASEDNESS_TOL),
            drift: ChannelSummary::new(GRAD_SUM_TOL),
        }
    }

    pub fn finish(self, algorithm: &str, config: serde_json::Value) -> RunTrace {
        let keep = |c: ChannelSummary| (c.observations > 0).then_some(c);
        RunTrace {
            algorithm: algorithm.to_string(),
            cadence: self.cadence,
            comm: self.comm,
            risk_star: self.risk_star,
            records: self.records,
            unbiasedness: keep(self.unbiasedness),
            grad_sum_drift: keep(self.drift),
            config,
        }
    }

    fn msd(&self, report: &IterationReport<'_>) -> f64 {
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        if report.agents.len() == self.star_blocks.len() {
            report
                .agents
                .iter()
                .zip(&self.star_blocks)
                .map(|(s, star)| sq(&s.weights, star))
                .fold(0.0, f64::max)
        } else {
            // Single-agent runs hold the full model; score it block by block.
            let blocks = self.problem.split(&report.weights());
            blocks
                .iter()
                .zip(&self.star_blocks)
                .map(|(w, star)| sq(w, star))
                .fold(0.0, f64::max)
        }
    }
}

impl Observer for TraceRecorder<'_> {
    fn observe(&mut self, report: &IterationReport<'_>) -> Result<()> {
        let i = report.iteration;
        if let Some(u) = report.unbiasedness {
            self.unbiasedness.push(i, u);
            self.window = Some(self.window.map_or(u, |w| w.max(u)));
        }
        if let Some(d) = report.grad_sum_drift {
            self.drift.push(i, d);
        }
        if i.is_multiple_of(self.cadence) || i == self.final_iteration {
            let excess = self.problem.risk(&report.weights()) - self.risk_star;
            let msd = self.msd(report);
            let n = i as u64;
            self.records.push(TraceRecord {
                iteration: i,
                excess_risk: excess,
                msd,
                comm_net: n * self.comm.net,
                comm_gross: n * self.comm.gross,
                gradient_evals: report.gradient_evals,
                combination_ops: report.combination_ops,
                unbiasedness: self.window.take(),
                grad_sum_drift: report.grad_sum_drift,
                collisions: report.collisions,
            });
        }
        Ok(())
    }
}

/// Runs one driver with a [`TraceRecorder`] attached.
pub fn run_traced(
    problem: &Problem,
    a: &CombinationMatrix,
    algorithm: Algorithm,
    settings: &RunSettings,
    reference: &ReferenceSolution,
    cadence: usize,
    config: serde_json::Value,
) -> Result<RunTrace> {
    let comm = comm_per_edge_per_iter(algorithm.comm_scheme(settings, problem.samples()), problem.classes());
    run_traced_with_comm(problem, a, algorithm, settings, reference, cadence, comm, config)
}

/// Like [`run_traced`] but charges `comm` per iteration instead of the
/// algorithm's own cost, e.g. to cost a centralized run as a
/// model-distributed method.
#[allow(clippy::too_many_arguments)]
pub fn run_traced_with_comm(
    problem: &Problem,
    a: &CombinationMatrix,
    algorithm: Algorithm,
    settings: &RunSettings,
    reference: &ReferenceSolution,
    cadence: usize,
    comm: CommCost,
    config: serde_json::Value,
) -> Result<RunTrace> {
    let mut recorder = TraceRecorder::new(problem, reference, comm, cadence, settings.iters);
    algorithm.run(problem, a, settings, &mut recorder)?;
    Ok(recorder.finish(algorithm.name(), config))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
    /// Iteration of the worst observation.
    pub worst_at: Option<usize>,
    pub first_violation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<InvariantCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NotApplicable => "N/A ",
            };
            writeln!(f, "{tag} {:<24} {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn channel_check(name: &str, channel: &Option<ChannelSummary>) -> InvariantCheck {
    match channel {
        None => InvariantCheck {
            name: name.into(),
            status: CheckStatus::NotApplicable,
            detail: "channel not reported by this algorithm".into(),
            worst_at: None,
            first_violation: None,
        },
        Some(c) => InvariantCheck {
            name: name.into(),
            status: if c.first_violation.is_none() {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            detail: format!(
                "worst {:.3e} at iteration {} (tolerance {:.0e}, {} observations)",
                c.max, c.max_at, c.threshold, c.observations
            ),
            worst_at: Some(c.max_at),
            first_violation: c.first_violation,
        },
    }
}

pub fn audit_invariants(trace: &RunTrace) -> AuditReport {
    let mut checks = vec![
        channel_check("unbiasedness", &trace.unbiasedness),
        channel_check("grad_sum", &trace.grad_sum_drift),
    ];

    let worst = trace
        .records
        .iter()
        .min_by(|a, b| a.excess_risk.total_cmp(&b.excess_risk));
    let first_bad = trace
        .records
        .iter()
        .find(|r| !(r.excess_risk >= -EXCESS_RISK_SLACK))
        .map(|r| r.iteration);
    checks.push(InvariantCheck {
        name: "excess_risk_nonnegative".into(),
        status: if first_bad.is_none() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: worst.map_or("empty trace".into(), |r| {
            format!("minimum {:.3e} at iteration {}", r.excess_risk, r.iteration)
        }),
        worst_at: worst.map(|r| r.iteration),
        first_violation: first_bad,
    });

    let comm_bad = trace.records.iter().find(|r| {
        r.comm_net != r.iteration as u64 * trace.comm.net || r.comm_gross != r.iteration as u64 * trace.comm.gross
    });
    checks.push(InvariantCheck {
        name: "comm_accounting".into(),
        status: if comm_bad.is_none() {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!(
            "{} net / {} gross scalars per edge per iteration",
            trace.comm.net, trace.comm.gross
        ),
        worst_at: comm_bad.map(|r| r.iteration),
        first_violation: comm_bad.map(|r| r.iteration),
    });

    let gap = trace.records.windows(2).find(|w| {
        let (a, b) = (w[0].iteration, w[1].iteration);
        !(b > a && (b - a == trace.cadence || b % trace.cadence != 0))
    });
    let starts_at_zero = trace.records.first().is_some_and(|r| r.iteration == 0);
    let complete = starts_at_zero && gap.is_none();
    checks.push(InvariantCheck {
        name: "trace_complete".into(),
        status: if complete { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("{} records at cadence {}", trace.records.len(), trace.cadence),
        worst_at: gap.map(|w| w[1].iteration),
        first_violation: gap.map(|w| w[1].iteration),
    });
    AuditReport { checks }
}

/// Least-squares fit of `log10(excess risk)` against iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub start: usize,
    pub end: usize,
    pub points: usize,
    /// The requested window held non-positive values and was cut short.
    pub shrunk: bool,
}

/// Fits over the records whose iteration lies in `window`. If a
/// non-positive excess risk appears, the window ends just before it.
pub fn fit_linear_rate(trace: &RunTrace, window: RangeInclusive<usize>) -> Result<RateFit> {
    let series: Vec<(usize, f64)> = trace
        .records
        .iter()
        .filter(|r| window.contains(&r.iteration))
        .map(|r| (r.iteration, r.excess_risk))
        .collect();
    fit_log10_series(&series)
}

pub fn fit_log10_series(series: &[(usize, f64)]) -> Result<RateFit> {
    let cut = series.iter().position(|&(_, v)| !(v > 0.0)).unwrap_or(series.len());
    let shrunk = cut < series.len();
    if shrunk {
        log::warn!(
            "non-positive excess risk at iteration {}; fitting window shrunk",
            series[cut].0
        );
    }
    let pts = &series[..cut];
    if pts.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "rate fit needs at least two positive points, found {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.log10()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        start: pts[0].0,
        end: pts[pts.len() - 1].0,
        points: pts.len(),
        shrunk,
    })
}

/// Iterations from the start up to the last record before the excess risk
/// first drops below `floor`, the part of a run that still decays cleanly.
pub fn decaying_window(trace: &RunTrace, floor: f64) -> RangeInclusive<usize> {
    let mut end = trace.last().iteration;
    for w in trace.records.windows(2) {
        if w[1].excess_risk < floor {
            end = w[0].iteration;
            break;
        }
    }
    0..=end
}

/// Risk of `w` compared to the reference, the quantity every record holds.
pub fn excess_risk(problem: &Problem, reference: &ReferenceSolution, w: &[f64]) -> f64 {
    risk(problem.dataset(), problem.loss(), problem.reg(), w) - reference.risk_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Partition;

    #[test]
    fn comm_counts() {
        let p = comm_per_edge_per_iter(CommScheme::Pipelined { depth: 10, batch: 10 }, 10);
        assert_eq!(p.net, 1000);
        assert_eq!(p.gross, 2000);
        assert_eq!(
            comm_per_edge_per_iter(CommScheme::ModelDistributed { features: 3072 }, 10).net,
            30720
        );
        assert_eq!(
            comm_per_edge_per_iter(CommScheme::Pipelined { depth: 1, batch: 1 }, 1).net,
            1
        );
        assert_eq!(comm_per_edge_per_iter(CommScheme::Naive { batch: 3 }, 2).net, 6);
        assert_eq!(
            comm_per_edge_per_iter(CommScheme::FullTracking { samples: 50 }, 2).net,
            100
        );
    }

    #[test]
    fn geometric_sequence_slope() {
        let series: Vec<(usize, f64)> = (0..50).map(|i| (i, 10f64.powf(-0.1 * i as f64))).collect();
        let fit = fit_log10_series(&series).unwrap();
        assert!((fit.slope + 0.1).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(!fit.shrunk);
    }

    #[test]
    fn fit_shrinks_on_zero() {
        let series = vec![(0, 1.0), (1, 0.1), (2, 0.01), (3, 0.0), (4, 1e-5)];
        let fit = fit_log10_series(&series).unwrap();
        assert!(fit.shrunk);
        assert_eq!(fit.end, 2);
        assert!(fit_log10_series(&[(0, 1.0), (1, -1.0)]).is_err());
    }

    #[test]
    fn channel_flags_nan() {
        let mut c = ChannelSummary::new(1e-9);
        c.push(1, 1e-12);
        c.push(2, f64::NAN);
        assert_eq!(c.first_violation, Some(2));
        assert_eq!(c.max_at, 2);
    }

    #[test]
    fn reference_on_zero_features_is_origin() {
        let ds = Dataset::new(3, 2, vec![0.0; 6], vec![1.0, -1.0, 1.0]).unwrap();
        let r = compute_reference(&ds, Loss::Logistic, Regularizer::l2(0.1).unwrap(), 1e-10).unwrap();
        assert!(r.w_star.iter().all(|&v| v == 0.0));
        assert!((r.risk_star - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(
            4,
            2,
            vec![1.0, 0.5, -0.3, 0.2, 0.7, -1.0, 0.1, 0.4],
            vec![1.0, -1.0, 1.0, -1.0],
        )
        .unwrap();
        let loss = Loss::Logistic;
        let reg = Regularizer::l2(0.05).unwrap();
        let reference = compute_reference(&ds, loss, reg, 1e-10).unwrap();
        let problem = Problem::new(ds, Partition::even(2, 2).unwrap(), loss, reg).unwrap();
        let a = CombinationMatrix::averaging(2).unwrap();
        let settings = RunSettings::new(0.1, 20, 3);
        let trace = run_traced(
            &problem,
            &a,
            Algorithm::Vrd2,
            &settings,
            &reference,
            5,
            serde_json::json!({"k": 1}),
        )
        .unwrap();
        assert_eq!(trace.records.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        trace.write_csv(&path).unwrap();
        let back = RunTrace::read_csv(&path).unwrap();
        assert_eq!(back, trace.records);
        assert!(audit_invariants(&trace).passed());
    }
}
