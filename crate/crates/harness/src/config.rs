//! Experiment configs: one TOML file of flat dotted keys, checked against a
//! fixed schema. Anything not in the schema for the chosen problem kind is
//! rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nexus_core::autodiff_net::Activation;
use nexus_core::nexus::{NexusConfig, Sampling, StrategyRegistry, Variant};
use nexus_core::optimizers::{
    AdamWHyper, DegeneratePolicy, Schedule, ScheduleKind, DEFAULT_GRAD_FLOOR,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::error::ConfigError;

type Fields = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    QuadraticFamily {
        n_tasks: usize,
        dim: usize,
        variance: f64,
        curvature: f64,
        depth: f64,
        init_scale: f64,
    },
    CubicSet {
        n_tasks: usize,
        dim: usize,
        lambda_min: f64,
        lambda_max: f64,
        third_bound: f64,
        init_scale: f64,
    },
    MlpMultisource {
        n_tasks: usize,
        widths: Vec<usize>,
        activation: Activation,
        samples_per_source: usize,
        shared_fraction: f64,
        batch_size: Option<usize>,
    },
    CustomTasksetFile {
        path: PathBuf,
        init_scale: f64,
    },
}

impl ProblemConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemConfig::QuadraticFamily { .. } => "quadratic_family",
            ProblemConfig::CubicSet { .. } => "cubic_set",
            ProblemConfig::MlpMultisource { .. } => "mlp_multisource",
            ProblemConfig::CustomTasksetFile { .. } => "custom_taskset_file",
        }
    }

    /// Number of tasks when known without reading files.
    pub fn n_tasks(&self) -> Option<usize> {
        match self {
            ProblemConfig::QuadraticFamily { n_tasks, .. }
            | ProblemConfig::CubicSet { n_tasks, .. }
            | ProblemConfig::MlpMultisource { n_tasks, .. } => Some(*n_tasks),
            ProblemConfig::CustomTasksetFile { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub decay_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NexusFields {
    pub gamma: f64,
    pub sampling: Sampling,
    pub grad_floor: f64,
    pub policy: DegeneratePolicy,
    pub rescale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub problem: ProblemConfig,
    pub optimizer: String,
    pub schedule: ScheduleConfig,
    pub nexus: NexusFields,
    pub adamw: AdamWHyper,
    pub total_steps: usize,
    /// Microbatches per outer step; the number of tasks when unset.
    pub accum_steps: Option<usize>,
    pub metric_cadence: usize,
    pub clip_norm: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

const COMMON_KEYS: &[&str] = &[
    "name",
    "seed",
    "optimizer",
    "total_steps",
    "accum_steps",
    "metric_cadence",
    "clip_norm",
    "output_dir",
    "problem.kind",
    "schedule.kind",
    "schedule.base_lr",
    "schedule.warmup_steps",
    "schedule.decay_steps",
    "nexus.gamma",
    "nexus.sampling",
    "nexus.grad_floor",
    "nexus.policy",
    "nexus.rescale",
    "adamw.beta1",
    "adamw.beta2",
    "adamw.eps",
    "adamw.weight_decay",
];

fn problem_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "quadratic_family" => &[
            "problem.n_tasks",
            "problem.dim",
            "problem.variance",
            "problem.curvature",
            "problem.depth",
            "problem.init_scale",
        ],
        "cubic_set" => &[
            "problem.n_tasks",
            "problem.dim",
            "problem.lambda_min",
            "problem.lambda_max",
            "problem.third_bound",
            "problem.init_scale",
        ],
        "mlp_multisource" => &[
            "problem.n_tasks",
            "problem.widths",
            "problem.activation",
            "problem.samples_per_source",
            "problem.shared_fraction",
            "problem.batch_size",
        ],
        "custom_taskset_file" => &["problem.path", "problem.init_scale"],
        _ => return None,
    })
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Fields) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&path, t, out),
            other => {
                out.insert(path, other.clone());
            }
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        path: path.to_string(),
        message: message.into(),
    }
}

struct Reader {
    fields: Fields,
}

impl Reader {
    fn raw(&self, key: &str) -> Option<&Value> {
        self.fields.get(key)
    }

    fn required<T>(
        &self,
        key: &str,
        f: impl Fn(&str, &Value) -> Result<T, ConfigError>,
    ) -> Result<T, ConfigError> {
        match self.raw(key) {
            Some(v) => f(key, v),
            None => Err(ConfigError::MissingField(key.to_string())),
        }
    }

    fn optional<T>(
        &self,
        key: &str,
        f: impl Fn(&str, &Value) -> Result<T, ConfigError>,
    ) -> Result<Option<T>, ConfigError> {
        self.raw(key).map(|v| f(key, v)).transpose()
    }

    fn or<T>(
        &self,
        key: &str,
        default: T,
        f: impl Fn(&str, &Value) -> Result<T, ConfigError>,
    ) -> Result<T, ConfigError> {
        Ok(self.optional(key, f)?.unwrap_or(default))
    }
}

fn as_str(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| invalid(key, "expected a string"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
    v.as_integer()
        .and_then(|i| usize::try_from(i).ok())
        .ok_or_else(|| invalid(key, "expected a non-negative integer"))
}

fn as_u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| invalid(key, "expected a non-negative integer"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(key, "expected a number")),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool()
        .ok_or_else(|| invalid(key, "expected true or false"))
}

fn as_enum<T: DeserializeOwned>(key: &str, v: &Value) -> Result<T, ConfigError> {
    let s = as_str(key, v)?;
    serde_json::from_value(serde_json::Value::String(s.clone()))
        .map_err(|_| invalid(key, format!("unknown value {s:?}")))
}

fn as_widths(key: &str, v: &Value) -> Result<Vec<usize>, ConfigError> {
    v.as_array()
        .ok_or_else(|| invalid(key, "expected an array of integers"))?
        .iter()
        .map(|x| as_usize(key, x))
        .collect()
}

fn as_clip(key: &str, v: &Value) -> Result<Option<f64>, ConfigError> {
    if v.as_str() == Some("none") {
        return Ok(None);
    }
    let c = as_f64(key, v)?;
    if c > 0.0 {
        Ok(Some(c))
    } else {
        Err(invalid(key, "expected a positive number or \"none\""))
    }
}

fn enum_name<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative `problem.path` entries
    /// resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with(path, &[])
    }

    /// [`Self::load`] with overrides applied before validation.
    pub fn load_with(path: &Path, overrides: &[(String, Value)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::ParseError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    /// Parses config text, then applies `overrides` (dotted key, value) on
    /// top before validation.
    pub fn from_toml_str(
        text: &str,
        base_dir: &Path,
        overrides: &[(String, Value)],
    ) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::ParseError(e.to_string()))?;
        let mut fields = Fields::new();
        flatten("", &table, &mut fields);
        for (k, v) in overrides {
            fields.insert(k.clone(), v.clone());
        }
        Self::from_fields(fields, base_dir)
    }

    fn from_fields(fields: Fields, base_dir: &Path) -> Result<Self, ConfigError> {
        let r = Reader { fields };
        let kind = r.required("problem.kind", as_str)?;
        let kind_keys = problem_keys(&kind)
            .ok_or_else(|| invalid("problem.kind", format!("unknown problem kind {kind:?}")))?;
        if let Some(unknown) = r
            .fields
            .keys()
            .find(|k| !COMMON_KEYS.contains(&k.as_str()) && !kind_keys.contains(&k.as_str()))
        {
            return Err(ConfigError::UnknownKey(unknown.clone()));
        }

        let name = r.required("name", as_str)?;
        let seed = r.required("seed", as_u64)?;
        let optimizer = r.required("optimizer", as_str)?;
        let registry = StrategyRegistry::default();
        if !registry.names().contains(&optimizer.as_str()) {
            return Err(invalid(
                "optimizer",
                format!(
                    "unknown optimizer {optimizer:?}; known: {}",
                    registry.names().join(", ")
                ),
            ));
        }
        let total_steps = r.required("total_steps", as_usize)?;

        let init_scale = || r.or("problem.init_scale", 3.0, as_f64);
        let problem = match kind.as_str() {
            "quadratic_family" => ProblemConfig::QuadraticFamily {
                n_tasks: r.required("problem.n_tasks", as_usize)?,
                dim: r.required("problem.dim", as_usize)?,
                variance: r.or("problem.variance", 1.0, as_f64)?,
                curvature: r.or("problem.curvature", 1.0, as_f64)?,
                depth: r.or("problem.depth", 0.0, as_f64)?,
                init_scale: init_scale()?,
            },
            "cubic_set" => ProblemConfig::CubicSet {
                n_tasks: r.required("problem.n_tasks", as_usize)?,
                dim: r.required("problem.dim", as_usize)?,
                lambda_min: r.or("problem.lambda_min", 0.5, as_f64)?,
                lambda_max: r.or("problem.lambda_max", 2.0, as_f64)?,
                third_bound: r.or("problem.third_bound", 0.5, as_f64)?,
                init_scale: init_scale()?,
            },
            "mlp_multisource" => ProblemConfig::MlpMultisource {
                n_tasks: r.required("problem.n_tasks", as_usize)?,
                widths: r.required("problem.widths", as_widths)?,
                activation: r.or("problem.activation", Activation::Tanh, as_enum)?,
                samples_per_source: r.or("problem.samples_per_source", 128, as_usize)?,
                shared_fraction: r.or("problem.shared_fraction", 0.5, as_f64)?,
                batch_size: r.optional("problem.batch_size", as_usize)?,
            },
            _ => {
                let raw = PathBuf::from(r.required("problem.path", as_str)?);
                let joined = if raw.is_absolute() {
                    raw
                } else {
                    base_dir.join(raw)
                };
                let path = joined
                    .canonicalize()
                    .map_err(|_| ConfigError::MissingFile(joined.clone()))?;
                ProblemConfig::CustomTasksetFile {
                    path,
                    init_scale: init_scale()?,
                }
            }
        };

        let defaults = AdamWHyper::default();
        let cfg = ExperimentConfig {
            name,
            seed,
            problem,
            optimizer,
            schedule: ScheduleConfig {
                kind: r.or("schedule.kind", ScheduleKind::Constant, as_enum)?,
                base_lr: r.or("schedule.base_lr", 1e-3, as_f64)?,
                warmup_steps: r.or("schedule.warmup_steps", 0, as_usize)?,
                decay_steps: r.or("schedule.decay_steps", 0, as_usize)?,
            },
            nexus: NexusFields {
                gamma: r.or("nexus.gamma", 0.1, as_f64)?,
                sampling: r.or("nexus.sampling", Sampling::Permuted, as_enum)?,
                grad_floor: r.or("nexus.grad_floor", DEFAULT_GRAD_FLOOR, as_f64)?,
                policy: r.or("nexus.policy", DegeneratePolicy::Strict, as_enum)?,
                rescale: r.or("nexus.rescale", false, as_bool)?,
            },
            adamw: AdamWHyper {
                beta1: r.or("adamw.beta1", defaults.beta1, as_f64)?,
                beta2: r.or("adamw.beta2", defaults.beta2, as_f64)?,
                eps: r.or("adamw.eps", defaults.eps, as_f64)?,
                weight_decay: r.or("adamw.weight_decay", defaults.weight_decay, as_f64)?,
            },
            total_steps,
            accum_steps: r.optional("accum_steps", as_usize)?,
            metric_cadence: r.or("metric_cadence", 1, as_usize)?,
            clip_norm: r.or("clip_norm", Some(1.0), as_clip)?,
            output_dir: r.optional("output_dir", as_str)?.map(PathBuf::from),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.accum_steps == Some(0) {
            return Err(invalid("accum_steps", "must be ≥ 1"));
        }
        if self.metric_cadence == 0 {
            return Err(invalid("metric_cadence", "must be ≥ 1"));
        }
        if let Some(n) = self.problem.n_tasks() {
            if n == 0 {
                return Err(invalid("problem.n_tasks", "must be ≥ 1"));
            }
        }
        if let ProblemConfig::MlpMultisource { widths, .. } = &self.problem {
            if widths.len() < 2 {
                return Err(invalid(
                    "problem.widths",
                    "need at least input and output widths",
                ));
            }
        }
        self.nexus_config(1)
            .validate()
            .map_err(|e| invalid("nexus.gamma", e.to_string()))?;
        self.schedule()
            .validate()
            .map_err(|e| invalid("schedule", e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            kind: self.schedule.kind,
            base_lr: self.schedule.base_lr,
            total_steps: self.total_steps,
            warmup_steps: self.schedule.warmup_steps,
            decay_steps: self.schedule.decay_steps,
        }
    }

    pub fn nexus_config(&self, inner_steps: usize) -> NexusConfig {
        let variant = if self.optimizer.contains("dot") {
            Variant::Dot
        } else {
            Variant::Cosine
        };
        NexusConfig {
            gamma: self.nexus.gamma,
            inner_steps,
            sampling: self.nexus.sampling,
            variant,
            grad_floor: self.nexus.grad_floor,
            policy: self.nexus.policy,
            rescale: self.nexus.rescale,
        }
    }

    /// Canonical flat-key rendering; [`ExperimentConfig::load`] reads it back
    /// to an equal config.
    pub fn to_toml_string(&self) -> String {
        let mut kv: Vec<(&str, Value)> = vec![
            ("name", Value::String(self.name.clone())),
            ("seed", Value::Integer(self.seed as i64)),
            ("optimizer", Value::String(self.optimizer.clone())),
            ("total_steps", Value::Integer(self.total_steps as i64)),
        ];
        if let Some(a) = self.accum_steps {
            kv.push(("accum_steps", Value::Integer(a as i64)));
        }
        kv.push(("metric_cadence", Value::Integer(self.metric_cadence as i64)));
        kv.push((
            "clip_norm",
            match self.clip_norm {
                Some(c) => Value::Float(c),
                None => Value::String("none".into()),
            },
        ));
        if let Some(d) = &self.output_dir {
            kv.push(("output_dir", Value::String(d.display().to_string())));
        }
        kv.push(("problem.kind", Value::String(self.problem.kind().into())));
        let int = |x: usize| Value::Integer(x as i64);
        match &self.problem {
            ProblemConfig::QuadraticFamily {
                n_tasks,
                dim,
                variance,
                curvature,
                depth,
                init_scale,
            } => kv.extend([
                ("problem.n_tasks", int(*n_tasks)),
                ("problem.dim", int(*dim)),
                ("problem.variance", Value::Float(*variance)),
                ("problem.curvature", Value::Float(*curvature)),
                ("problem.depth", Value::Float(*depth)),
                ("problem.init_scale", Value::Float(*init_scale)),
            ]),
            ProblemConfig::CubicSet {
                n_tasks,
                dim,
                lambda_min,
                lambda_max,
                third_bound,
                init_scale,
            } => kv.extend([
                ("problem.n_tasks", int(*n_tasks)),
                ("problem.dim", int(*dim)),
                ("problem.lambda_min", Value::Float(*lambda_min)),
                ("problem.lambda_max", Value::Float(*lambda_max)),
                ("problem.third_bound", Value::Float(*third_bound)),
                ("problem.init_scale", Value::Float(*init_scale)),
            ]),
            ProblemConfig::MlpMultisource {
                n_tasks,
                widths,
                activation,
                samples_per_source,
                shared_fraction,
                batch_size,
            } => {
                kv.extend([
                    ("problem.n_tasks", int(*n_tasks)),
                    (
                        "problem.widths",
                        Value::Array(widths.iter().map(|w| int(*w)).collect()),
                    ),
                    ("problem.activation", Value::String(enum_name(activation))),
                    ("problem.samples_per_source", int(*samples_per_source)),
                    ("problem.shared_fraction", Value::Float(*shared_fraction)),
                ]);
                if let Some(b) = batch_size {
                    kv.push(("problem.batch_size", int(*b)));
                }
            }
            ProblemConfig::CustomTasksetFile { path, init_scale } => kv.extend([
                ("problem.path", Value::String(path.display().to_string())),
                ("problem.init_scale", Value::Float(*init_scale)),
            ]),
        }
        kv.extend([
            (
                "schedule.kind",
                Value::String(enum_name(&self.schedule.kind)),
            ),
            ("schedule.base_lr", Value::Float(self.schedule.base_lr)),
            ("schedule.warmup_steps", int(self.schedule.warmup_steps)),
            ("schedule.decay_steps", int(self.schedule.decay_steps)),
            ("nexus.gamma", Value::Float(self.nexus.gamma)),
            (
                "nexus.sampling",
                Value::String(enum_name(&self.nexus.sampling)),
            ),
            ("nexus.grad_floor", Value::Float(self.nexus.grad_floor)),
            ("nexus.policy", Value::String(enum_name(&self.nexus.policy))),
            ("nexus.rescale", Value::Boolean(self.nexus.rescale)),
            ("adamw.beta1", Value::Float(self.adamw.beta1)),
            ("adamw.beta2", Value::Float(self.adamw.beta2)),
            ("adamw.eps", Value::Float(self.adamw.eps)),
            ("adamw.weight_decay", Value::Float(self.adamw.weight_decay)),
        ]);
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml_string())
    }
}

/// Parses `key=value` into a dotted key and a TOML value. Bare words that are
/// not valid TOML become strings.
pub fn parse_override(s: &str) -> Result<(String, Vec<Value>), ConfigError> {
    let (key, vals) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::ParseError(format!("override {s:?} is not key=value")))?;
    let values = split_top_level(vals)
        .into_iter()
        .map(|v| parse_value(v.trim()))
        .collect();
    Ok((key.trim().to_string(), values))
}

/// Splits on commas outside brackets and quotes, so `[8,16,1],[4,1]` is two
/// values.
fn split_top_level(s: &str) -> Vec<&str> {
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    let mut out = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '[' if !quoted => depth += 1,
            ']' if !quoted => depth -= 1,
            ',' if !quoted && depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_value(s: &str) -> Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(s.to_string()))
}
