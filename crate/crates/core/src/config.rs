//! Versioned JSON experiment configs, dotted `key=value` overrides, and
//! their resolution into a runnable problem.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algorithms::{Fault, Problem, RunSettings, Sampling, StepGuidance, DEFAULT_STEP_FACTOR};
use crate::data::{load_csv, load_idx, make_synthetic, CsvOptions, Dataset, IdxOptions, Partition, SyntheticSpec};
use crate::error::{Error, Result};
use crate::harness::Algorithm;
use crate::model::{Loss, Regularizer};
use crate::topology::{build_random_geometric_graph, CombinationMatrix, Graph};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub dataset: DatasetSpec,
    /// Rescale every feature to `[0, 1]` after loading.
    #[serde(default)]
    pub normalize: bool,
    /// Append a constant-one feature after normalizing. Explicit partition
    /// sizes must count it.
    #[serde(default)]
    pub bias: bool,
    pub partition: PartitionSpec,
    pub topology: TopologySpec,
    pub model: Loss,
    pub reg_coeff: f64,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        #[serde(default = "last_column")]
        label_column: i64,
        #[serde(default)]
        header: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        classes: Option<Vec<u8>>,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn last_column() -> i64 {
    -1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum PartitionSpec {
    Even { agents: usize },
    Sizes { sizes: Vec<usize> },
}

impl PartitionSpec {
    pub fn agents(&self) -> usize {
        match self {
            PartitionSpec::Even { agents } => *agents,
            PartitionSpec::Sizes { sizes } => sizes.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologySpec {
    Ring,
    Path,
    Complete,
    /// The exact-averaging matrix `(1/K)𝟙𝟙ᵀ`.
    Averaging,
    Rgg {
        radius: f64,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl TopologySpec {
    pub fn build(&self, agents: usize) -> Result<CombinationMatrix> {
        let a = match self {
            TopologySpec::Ring if agents >= 3 => CombinationMatrix::metropolis(&Graph::ring(agents)?)?,
            TopologySpec::Ring | TopologySpec::Path => CombinationMatrix::metropolis(&Graph::path(agents)?)?,
            TopologySpec::Complete => CombinationMatrix::metropolis(&Graph::complete(agents)?)?,
            TopologySpec::Averaging => CombinationMatrix::averaging(agents)?,
            TopologySpec::Rgg { radius, seed } => {
                CombinationMatrix::metropolis(&build_random_geometric_graph(agents, *radius, *seed)?)?
            }
            TopologySpec::File { path } => CombinationMatrix::load(path)?,
        };
        if a.size() != agents {
            return Err(Error::Config(format!(
                "topology has {} agents but the partition has {agents}",
                a.size()
            )));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    /// Explicit step size; when absent the analytic guidance times
    /// `step_factor` is used.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_factor")]
    pub step_factor: f64,
    #[serde(default = "one")]
    pub depth: usize,
    #[serde(default = "one")]
    pub batch: usize,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub fault: Option<Fault>,
}

fn default_factor() -> f64 {
    DEFAULT_STEP_FACTOR
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Record every `cadence` iterations (and the last one).
    #[serde(default = "one")]
    pub cadence: usize,
    /// Full gradient-sum recomputations spread over the run.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "default_tol")]
    pub reference_tol: f64,
    #[serde(default)]
    pub comm: CommConvention,
}

/// How communication is charged in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CommConvention {
    /// The algorithm's own per-edge cost.
    #[default]
    Native,
    /// `M · C` scalars per iteration, the cost of exchanging the whole model
    /// as sample-partitioned methods do.
    ModelDistributed,
}

fn default_checkpoints() -> usize {
    10
}

fn default_tol() -> f64 {
    crate::harness::REFERENCE_TOL
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec {
            cadence: 1,
            checkpoints: default_checkpoints(),
            reference_tol: default_tol(),
            comm: CommConvention::Native,
        }
    }
}

/// Parses a JSON value, naming the offending field on failure.
pub fn from_value<T: serde::de::DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })
}

/// Reads a config file into a raw JSON value (overrides apply before typing).
pub fn read_value(path: impl AsRef<Path>) -> Result<Value> {
    let text = std::fs::read_to_string(path.as_ref())?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))
}

/// Applies `a.b.c=value`. The value is parsed as JSON when it can be,
/// otherwise kept as a string. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    for part in &parts[..parts.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?
            .entry(part.to_string())
            .or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}` does not address an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    /// Loads, applies overrides, and validates.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let mut value = read_value(path)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_json(value)
    }

    pub fn from_json(value: Value) -> Result<Self> {
        let config: ExperimentConfig = from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.version != CONFIG_VERSION {
            return bad(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            );
        }
        if !(self.reg_coeff >= 0.0) || !self.reg_coeff.is_finite() {
            return bad("reg_coeff", format!("must be nonnegative, got {}", self.reg_coeff));
        }
        let alg = &self.algorithm;
        if let Some(step) = alg.step {
            if !(step > 0.0) || !step.is_finite() {
                return bad("algorithm.step", format!("must be positive, got {step}"));
            }
        }
        if !(alg.step_factor > 0.0) || !alg.step_factor.is_finite() {
            return bad(
                "algorithm.step_factor",
                format!("must be positive, got {}", alg.step_factor),
            );
        }
        if alg.depth == 0 {
            return bad("algorithm.depth", "must be at least 1".into());
        }
        if alg.batch == 0 {
            return bad("algorithm.batch", "must be at least 1".into());
        }
        if alg.name != Algorithm::Pvrd2 && (alg.depth != 1 || alg.batch != 1) {
            return bad(
                "algorithm.depth",
                format!("depth and batch apply to pvrd2 only, not {}", alg.name.name()),
            );
        }
        if self.metrics.cadence == 0 {
            return bad("metrics.cadence", "must be at least 1".into());
        }
        if !(self.metrics.reference_tol > 0.0) {
            return bad("metrics.reference_tol", "must be positive".into());
        }
        if self.partition.agents() == 0 {
            return bad("partition", "needs at least one agent".into());
        }
        if let Some(f) = alg.fault {
            if f.agent >= self.partition.agents() {
                return bad("algorithm.fault.agent", format!("{} is not an agent index", f.agent));
            }
        }
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let mut ds = match &self.dataset {
            DatasetSpec::Synthetic(spec) => make_synthetic(spec)?.0,
            DatasetSpec::Csv {
                path,
                label_column,
                header,
            } => load_csv(
                path,
                &CsvOptions {
                    label_column: *label_column,
                    header: *header,
                },
            )?,
            DatasetSpec::Idx {
                images,
                labels,
                classes,
                limit,
            } => load_idx(
                images,
                labels,
                &IdxOptions {
                    classes: classes.clone(),
                    limit: *limit,
                },
            )?,
        };
        if self.normalize {
            ds.scale_unit();
        }
        if self.bias {
            ds.append_bias();
        }
        Ok(ds)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let ds = self.load_dataset()?;
        let partition = match &self.partition {
            PartitionSpec::Even { agents } => Partition::even(ds.features(), *agents)?,
            PartitionSpec::Sizes { sizes } => Partition::from_sizes(sizes.clone(), ds.features())?,
        };
        Problem::new(ds, partition, self.model, Regularizer::l2(self.reg_coeff)?)
    }

    pub fn build_topology(&self) -> Result<CombinationMatrix> {
        self.topology.build(self.partition.agents())
    }

    /// The step size this config runs with.
    pub fn step(&self, problem: &Problem) -> f64 {
        let guidance = StepGuidance::from_problem(problem);
        match self.algorithm.step {
            Some(mu) => {
                guidance.warn_if_large(mu);
                mu
            }
            None => guidance.suggest(self.algorithm.step_factor),
        }
    }

    pub fn settings(&self, problem: &Problem, parallel: bool) -> RunSettings {
        let alg = &self.algorithm;
        RunSettings {
            step: self.step(problem),
            iters: alg.iters,
            seed: alg.seed,
            sampling: alg.sampling,
            depth: alg.depth,
            batch: alg.batch,
            checkpoints: self.metrics.checkpoints,
            parallel,
            fault: alg.fault,
        }
    }
}
