//! The `featnet` command line. Everything lives here so the binary is a
//! one-line shim and the commands can be driven from tests.
//!
//! Exit codes: 0 success, 1 I/O or other runtime error, 2 invalid config or
//! input, 3 divergence or a failed invariant audit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::algorithms::{rate_bound, Problem, StepGuidance};
use crate::config::{apply_override, from_value, read_value, CommConvention, ExperimentConfig, TopologySpec};
use crate::data::{make_synthetic, SyntheticSpec};
use crate::error::{Error, Result};
use crate::harness::{
    audit_invariants, comm_per_edge_per_iter, compute_reference, decaying_window, fit_linear_rate,
    run_traced_with_comm, AuditReport, CommScheme, ReferenceSolution, RunTrace,
};
use crate::topology::CombinationMatrix;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

/// Environment variable capping the worker threads of one run.
pub const THREADS_ENV: &str = "FEATNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "featnet", version, about = "Feature-partitioned ERM over networked agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment config and write trace.csv and summary.json.
    Run(RunArgs),
    /// Write a synthetic dataset as CSV.
    GenData(GenArgs),
    /// Write a combination matrix as JSON and print its mixing rate.
    GenTopology(GenArgs),
    /// Run a config and report the invariant audit; fails on any violation.
    Audit(RunArgs),
    /// Run several configs on one dataset and align their excess risk.
    Compare(CompareArgs),
    /// Evaluate the linear rate bound and report the active branch.
    RateBound(RateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Dotted override applied after parsing, e.g. `algorithm.step=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replicates with seeds `algorithm.seed, algorithm.seed + 1, …`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Exit with code 3 when the invariant audit fails.
    #[arg(long)]
    pub strict_invariants: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// JSON spec; omitted fields can be supplied with `--set`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// At least two configs sharing dataset, model and regularizer.
    #[arg(long = "config", required = true)]
    pub configs: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides applied to every config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long)]
    pub strict_invariants: bool,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long, conflicts_with = "topology", required_unless_present = "topology")]
    pub lambda: Option<f64>,
    /// Topology JSON to take λ from.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub step: f64,
    #[arg(long)]
    pub nu: f64,
}

/// Parses `args` (including the program name) and runs. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Dimension(_) | Error::Parse { .. } => EXIT_CONFIG,
        Error::Disconnected { .. } | Error::NotMixing(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_FAILED,
        _ => EXIT_RUNTIME,
    }
}

/// Worker threads from `FEATNET_THREADS`, else all available cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => cmd_run(&args, false),
        Command::Audit(args) => cmd_run(&args, true),
        Command::GenData(args) => cmd_gen_data(&args),
        Command::GenTopology(args) => cmd_gen_topology(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::RateBound(args) => cmd_rate_bound(&args),
    }
}

/// Everything one replicate produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub step: f64,
    pub lambda: Option<f64>,
    pub reference: ReferenceSummary,
    pub final_record: crate::harness::TraceRecord,
    pub rate_fit: Option<crate::harness::RateFit>,
    pub rate_bound: Option<crate::algorithms::RateBound>,
    pub audit: AuditReport,
    pub config: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub risk_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// A resolved experiment: problem, topology and reference, built once and
/// reused across replicates.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub problem: Problem,
    pub topology: CombinationMatrix,
    pub reference: ReferenceSolution,
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let problem = config.build_problem()?;
        let topology = config.build_topology()?;
        let reference = compute_reference(
            problem.dataset(),
            problem.loss(),
            problem.reg(),
            config.metrics.reference_tol,
        )?;
        Ok(Prepared {
            config,
            problem,
            topology,
            reference,
        })
    }

    /// Runs one replicate with the algorithm seed offset by `replicate`.
    pub fn run(&self, replicate: u64, parallel: bool) -> Result<(RunTrace, RunSummary)> {
        let mut config = self.config.clone();
        config.algorithm.seed = config.algorithm.seed.wrapping_add(replicate);
        let settings = config.settings(&self.problem, parallel);
        // Echo the resolved step so the config alone reproduces the run.
        config.algorithm.step = Some(settings.step);
        let echo = config.to_value();
        let alg = config.algorithm.name;
        let scheme = match config.metrics.comm {
            CommConvention::Native => alg.comm_scheme(&settings, self.problem.samples()),
            CommConvention::ModelDistributed => CommScheme::ModelDistributed {
                features: self.problem.dataset().features(),
            },
        };
        let comm = comm_per_edge_per_iter(scheme, self.problem.classes());
        let trace = run_traced_with_comm(
            &self.problem,
            &self.topology,
            alg,
            &settings,
            &self.reference,
            config.metrics.cadence,
            comm,
            echo.clone(),
        )?;
        let rate_fit = fit_linear_rate(&trace, decaying_window(&trace, 1e-13)).ok();
        let lambda = alg.is_networked().then(|| self.topology.lambda());
        let nu = StepGuidance::from_problem(&self.problem).nu;
        let bound = match (alg, lambda) {
            (crate::harness::Algorithm::Vrd2 | crate::harness::Algorithm::Pvrd2, Some(l)) if nu > 0.0 => {
                rate_bound(l, settings.depth, self.problem.samples(), settings.step, nu).ok()
            }
            _ => None,
        };
        let summary = RunSummary {
            algorithm: alg.name().into(),
            seed: settings.seed,
            step: settings.step,
            lambda,
            reference: ReferenceSummary {
                risk_star: self.reference.risk_star,
                grad_norm: self.reference.grad_norm,
                iterations: self.reference.iterations,
            },
            final_record: trace.last().clone(),
            rate_fit,
            rate_bound: bound,
            audit: audit_invariants(&trace),
            config: echo,
        };
        Ok((trace, summary))
    }
}

fn replicate_dir(out: &Path, seeds: u64, seed: u64) -> PathBuf {
    if seeds <= 1 {
        out.to_path_buf()
    } else {
        out.join(format!("seed-{seed}"))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn install_threads() -> Result<bool> {
    let threads = thread_count()?;
    // A second install in the same process keeps the first pool, which is
    // fine for tests driving several commands.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(threads > 1)
}

/// Runs every replicate and writes its outputs. Returns the summaries.
fn run_replicates(prepared: &Prepared, out: &Path, seeds: u64, parallel: bool) -> Result<Vec<(RunTrace, RunSummary)>> {
    let mut results = Vec::new();
    for r in 0..seeds.max(1) {
        let (trace, summary) = prepared.run(r, parallel)?;
        let dir = replicate_dir(out, seeds, summary.seed);
        std::fs::create_dir_all(&dir)?;
        trace.write_csv(dir.join("trace.csv"))?;
        write_json(&dir.join("summary.json"), &summary)?;
        results.push((trace, summary));
    }
    Ok(results)
}

fn cmd_run(args: &RunArgs, audit_only: bool) -> Result<i32> {
    let parallel = install_threads()?;
    let config = ExperimentConfig::load(&args.config, &args.overrides)?;
    let prepared = Prepared::new(config)?;
    let results = run_replicates(&prepared, &args.out, args.seeds, parallel)?;
    let mut failed = false;
    for (_, s) in &results {
        let last = &s.final_record;
        if audit_only {
            println!("seed {}:", s.seed);
            print!("{}", s.audit);
        } else {
            println!(
                "{} seed {} step {:.4e}: {} iterations, excess risk {:.3e}, audit {}",
                s.algorithm,
                s.seed,
                s.step,
                last.iteration,
                last.excess_risk,
                if s.audit.passed() { "ok" } else { "FAILED" }
            );
        }
        failed |= !s.audit.passed();
    }
    if args.seeds > 1 {
        write_json(&args.out.join("replicates.json"), &replicate_overview(&results))?;
    }
    if failed && (audit_only || args.strict_invariants) {
        eprintln!("invariant audit failed");
        return Ok(EXIT_FAILED);
    }
    Ok(EXIT_OK)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    })
}

fn replicate_overview(results: &[(RunTrace, RunSummary)]) -> Value {
    let finals: Vec<f64> = results.iter().map(|(_, s)| s.final_record.excess_risk).collect();
    let slopes: Vec<f64> = results
        .iter()
        .filter_map(|(_, s)| s.rate_fit.map(|f| f.slope))
        .collect();
    json!({
        "seeds": results.iter().map(|(_, s)| s.seed).collect::<Vec<_>>(),
        "final_excess_risk": finals,
        "median_final_excess_risk": median(finals.clone()),
        "slopes": slopes,
        "median_slope": median(slopes.clone()),
        "all_audits_passed": results.iter().all(|(_, s)| s.audit.passed()),
    })
}

fn gen_value(args: &GenArgs) -> Result<Value> {
    let mut value = match &args.config {
        Some(path) => read_value(path)?,
        None => Value::Object(Default::default()),
    };
    for o in &args.overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

fn cmd_gen_data(args: &GenArgs) -> Result<i32> {
    let spec: SyntheticSpec = from_value(gen_value(args)?)?;
    let (ds, _) = make_synthetic(&spec)?;
    ds.save_csv(&args.out)?;
    println!(
        "wrote {} samples x {} features to {}",
        ds.samples(),
        ds.features(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_gen_topology(args: &GenArgs) -> Result<i32> {
    // The spec is a topology plus an `agents` count. serde cannot combine
    // `flatten` with `deny_unknown_fields`, so the count is split off here.
    let value = gen_value(args)?;
    let mut obj = value
        .as_object()
        .cloned()
        .ok_or_else(|| Error::Config("topology spec must be a JSON object".into()))?;
    let agents = obj
        .remove("agents")
        .ok_or_else(|| Error::Config("agents: missing field".into()))?;
    let agents: usize = serde_json::from_value(agents).map_err(|e| Error::Config(format!("agents: {e}")))?;
    let topology: TopologySpec = from_value(Value::Object(obj))?;
    let a = topology.build(agents)?;
    a.save(&args.out)?;
    println!(
        "wrote {} agents, {} edges, lambda {:.17} to {}",
        a.size(),
        a.graph().edge_count(),
        a.lambda(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_rate_bound(args: &RateArgs) -> Result<i32> {
    let lambda = match (&args.topology, args.lambda) {
        (Some(path), _) => CombinationMatrix::load(path)?.lambda(),
        (None, Some(l)) => l,
        (None, None) => return Err(Error::Config("either --lambda or --topology is required".into())),
    };
    let b = rate_bound(lambda, args.depth, args.samples, args.step, args.nu)?;
    println!("lambda {lambda:.17}");
    println!("rho {:.17}", b.rho);
    println!("network term {:.17}", b.network_term);
    println!("strong-convexity term {:.17}", b.convexity_term);
    println!("branch {}", b.branch.label());
    Ok(EXIT_OK)
}

/// Fingerprint of the parts of a config that fix the reference solution.
fn dataset_key(c: &ExperimentConfig) -> Value {
    json!({
        "dataset": c.dataset,
        "normalize": c.normalize,
        "bias": c.bias,
        "model": c.model,
        "reg_coeff": c.reg_coeff,
    })
}

/// Forward-filled alignment of several traces on one cumulative counter.
pub fn align_traces(
    traces: &[(String, &RunTrace)],
    key: fn(&crate::harness::TraceRecord) -> u64,
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut xs: Vec<u64> = traces.iter().flat_map(|(_, t)| t.records.iter().map(key)).collect();
    xs.sort_unstable();
    xs.dedup();
    let header = traces.iter().map(|(name, _)| name.clone()).collect();
    let mut cursors = vec![0usize; traces.len()];
    let mut rows = Vec::with_capacity(xs.len());
    for x in xs {
        let mut row = vec![x.to_string()];
        for (j, (_, t)) in traces.iter().enumerate() {
            while cursors[j] + 1 < t.records.len() && key(&t.records[cursors[j] + 1]) <= x {
                cursors[j] += 1;
            }
            let r = &t.records[cursors[j]];
            row.push(if key(r) <= x {
                crate::harness::fmt_float(r.excess_risk)
            } else {
                String::new()
            });
        }
        rows.push(row);
    }
    (header, rows)
}

fn write_aligned(path: &Path, counter: &str, header: &[String], rows: &[Vec<String>], config: &Value) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    writeln!(file, "# configs: {}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(file);
    let mut head = vec![counter.to_string()];
    head.extend(header.iter().cloned());
    w.write_record(&head)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// First value of `key` at which the excess risk falls below each threshold.
fn crossings(trace: &RunTrace, key: fn(&crate::harness::TraceRecord) -> u64) -> BTreeMap<String, Option<u64>> {
    [1e-2, 1e-4, 1e-6, 1e-8, 1e-10]
        .iter()
        .map(|&t| {
            let hit = trace.records.iter().find(|r| r.excess_risk < t).map(key);
            (format!("{t:e}"), hit)
        })
        .collect()
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    if args.configs.len() < 2 {
        return Err(Error::Config("compare needs at least two --config files".into()));
    }
    let parallel = install_threads()?;
    let configs = args
        .configs
        .iter()
        .map(|p| ExperimentConfig::load(p, &args.overrides))
        .collect::<Result<Vec<_>>>()?;
    let key0 = dataset_key(&configs[0]);
    for (path, c) in args.configs.iter().zip(&configs).skip(1) {
        if dataset_key(c) != key0 {
            return Err(Error::Config(format!(
                "{} uses a different dataset, model or reg_coeff than {}",
                path.display(),
                args.configs[0].display()
            )));
        }
    }
    let first = Prepared::new(configs[0].clone())?;
    let mut prepared = vec![];
    for c in configs.into_iter().skip(1) {
        // Same dataset, so the reference is shared.
        let problem = c.build_problem()?;
        let topology = c.build_topology()?;
        prepared.push(Prepared {
            config: c,
            problem,
            topology,
            reference: first.reference.clone(),
        });
    }
    prepared.insert(0, first);

    std::fs::create_dir_all(&args.out)?;
    let mut failed = false;
    let mut overview = Vec::new();
    for r in 0..args.seeds.max(1) {
        let mut runs = Vec::new();
        for (i, p) in prepared.iter().enumerate() {
            let (trace, summary) = p.run(r, parallel)?;
            failed |= !summary.audit.passed();
            let label = format!("{i}-{}", summary.algorithm);
            runs.push((label, trace, summary));
        }
        let dir = replicate_dir(&args.out, args.seeds, prepared[0].config.algorithm.seed.wrapping_add(r));
        std::fs::create_dir_all(&dir)?;
        let named: Vec<(String, &RunTrace)> = runs.iter().map(|(l, t, _)| (l.clone(), t)).collect();
        let echo = Value::Array(runs.iter().map(|(_, _, s)| s.config.clone()).collect());
        let (h, rows) = align_traces(&named, |r| r.gradient_evals);
        write_aligned(&dir.join("by_gradients.csv"), "gradient_evals", &h, &rows, &echo)?;
        let (h, rows) = align_traces(&named, |r| r.comm_net);
        write_aligned(&dir.join("by_comm.csv"), "comm_net", &h, &rows, &echo)?;
        for (label, trace, summary) in &runs {
            println!(
                "{label}: final excess risk {:.3e} after {} gradients, {} scalars per edge",
                summary.final_record.excess_risk, summary.final_record.gradient_evals, summary.final_record.comm_net
            );
            overview.push(json!({
                "run": label,
                "seed": summary.seed,
                "final_excess_risk": summary.final_record.excess_risk,
                "gradients_to_reach": crossings(trace, |r| r.gradient_evals),
                "comm_to_reach": crossings(trace, |r| r.comm_net),
                "audit_passed": summary.audit.passed(),
                "config": summary.config,
            }));
        }
    }
    write_json(&args.out.join("compare.json"), &overview)?;
    if failed && args.strict_invariants {
        eprintln!("invariant audit failed");
        return Ok(EXIT_FAILED);
    }
    Ok(EXIT_OK)
}
