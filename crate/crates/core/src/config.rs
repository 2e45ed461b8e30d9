//! Experiment configuration: a single JSON document plus dotted-key overrides.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::control::{StrategyKind, StrategySpec};
use crate::dynamics::{GeneratorParams, LinkFn, ModelSpec};
use crate::error::{Error, Result};
use crate::estimator::{NoiseTiming, PriorSpec, DEFAULT_REFRESH_INTERVAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    #[serde(default = "default_strategy")]
    pub strategy: StrategySpec,
    /// Strategies run side by side by `compare`; empty selects a default set.
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
    /// Total plant steps, warm-up included.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Root of every per-replica random stream.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_strategy() -> StrategySpec {
    StrategySpec::new(StrategyKind::Infomax)
}

fn default_horizon() -> usize {
    2000
}

fn default_replicas() -> usize {
    50
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            prior: PriorSpec::default(),
            estimator: EstimatorOptions::default(),
            strategy: default_strategy(),
            strategies: Vec::new(),
            horizon: default_horizon(),
            replicas: default_replicas(),
            seed: 0,
            output: OutputSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Seed of the random plant generator (ignored for explicit models).
    #[serde(default = "default_model_seed")]
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorParams,
    /// Explicit plant; takes precedence over the generator.
    #[serde(default)]
    pub explicit: Option<ExplicitModel>,
}

fn default_model_seed() -> u64 {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { seed: default_model_seed(), generator: GeneratorParams::default(), explicit: None }
    }
}

/// Matrices given as lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitModel {
    /// `F_0, …, F_I`.
    pub f: Vec<Vec<Vec<f64>>>,
    /// `B_0, …, B_J`.
    pub b: Vec<Vec<Vec<f64>>>,
    /// Noise covariance.
    pub v: Vec<Vec<f64>>,
    #[serde(default)]
    pub link: LinkFn,
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config {
            path: format!("model.explicit.{name}"),
            message: "expected a non-empty rectangular list of rows".into(),
        });
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let spec = match &self.explicit {
            Some(ex) => {
                let f = ex.f.iter().enumerate().map(|(i, m)| rows_to_matrix(m, &format!("f.{i}"))).collect::<Result<_>>()?;
                let b = ex.b.iter().enumerate().map(|(j, m)| rows_to_matrix(m, &format!("b.{j}"))).collect::<Result<_>>()?;
                ModelSpec::new(f, b, rows_to_matrix(&ex.v, "v")?, ex.link)
            }
            None => ModelSpec::generate(&self.generator, &mut ChaCha8Rng::seed_from_u64(self.seed)),
        };
        spec.map_err(|e| Error::Config { path: "model".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorOptions {
    #[serde(default)]
    pub noise_timing: NoiseTiming,
    #[serde(default = "default_refresh")]
    pub refresh_interval: usize,
}

fn default_refresh() -> usize {
    DEFAULT_REFRESH_INTERVAL
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { noise_timing: NoiseTiming::PreUpdate, refresh_interval: default_refresh() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: TraceFormat,
}

impl ExperimentConfig {
    /// Parse, apply `key=value` overrides in order, then validate.
    pub fn from_json_str_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_json_str_with_overrides(text, &[])
    }

    /// Defaults with overrides applied.
    pub fn default_with_overrides(overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("config serializes");
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, message: String| Error::Config { path: path.into(), message };
        if self.replicas == 0 {
            return Err(field("replicas", "must be at least 1".into()));
        }
        if !(self.prior.kappa > 0.0) || !self.prior.kappa.is_finite() {
            return Err(field("prior.kappa", "must be positive".into()));
        }
        if !(self.prior.q_scale > 0.0) || !self.prior.q_scale.is_finite() {
            return Err(field("prior.q_scale", "must be positive".into()));
        }
        if self.estimator.refresh_interval == 0 {
            return Err(field("estimator.refresh_interval", "must be at least 1".into()));
        }
        self.strategy.validate().map_err(|e| field("strategy", e.to_string()))?;
        for (i, s) in self.strategies.iter().enumerate() {
            s.validate().map_err(|e| field(&format!("strategies.{i}"), e.to_string()))?;
        }
        let warmup = self.warmup_steps();
        if self.horizon < warmup {
            return Err(field(
                "horizon",
                format!("must cover the {warmup} warm-up steps (got {})", self.horizon),
            ));
        }
        Ok(())
    }

    /// `max(I, J) + 1` for the configured plant.
    pub fn warmup_steps(&self) -> usize {
        match &self.model.explicit {
            Some(ex) => ex.f.len().max(ex.b.len()).max(1),
            None => self.model.generator.ar_order.max(self.model.generator.input_order) + 1,
        }
    }

    /// Every dotted key accepted by `--override`.
    pub fn override_keys() -> Vec<String> {
        let mut keys = Vec::new();
        collect_keys(&serde_json::to_value(Self::default()).expect("config serializes"), "", &mut keys);
        keys
    }
}

fn collect_keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_keys(child, &key, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// Apply one `dotted.key=value` override. The value is read as JSON when it
/// parses, otherwise as a string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let bad = |message: String| Error::Config { path: spec.to_string(), message };
    let (key, raw) = spec.split_once('=').ok_or_else(|| bad("override must look like key=value".into()))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad("empty key segment".into()));
    }
    let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    for seg in key.split('.') {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| bad(format!("`{seg}` is not an array index")))?;
                items.get_mut(idx).ok_or_else(|| bad(format!("index {idx} out of range")))?
            }
            _ => return Err(bad(format!("`{seg}` descends into a scalar"))),
        };
    }
    *cur = value;
    Ok(())
}
