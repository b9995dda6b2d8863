//! Cartesian sweeps over config overrides and seeds.

use std::path::Path;

use nexus_core::numerics::derive_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::run::{run_to_dir, write_json_file, Summary};

/// Environment variable that sizes the sweep thread pool.
pub const THREADS_ENV: &str = "NEXUS_OPT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    /// Directory name under the sweep root.
    pub label: String,
    pub seed: u64,
    pub overrides: Vec<(String, String)>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub base: String,
    pub root_seed: u64,
    pub runs: Vec<SweepEntry>,
}

impl SweepIndex {
    pub fn failures(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.summary.status != "ok")
            .count()
    }
}

/// Every combination of the override alternatives, in row-major order.
pub fn grid(axes: &[(String, Vec<Value>)]) -> Vec<Vec<(String, Value)>> {
    let mut out = vec![Vec::new()];
    for (key, values) in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

fn value_label(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

struct Job {
    label: String,
    overrides: Vec<(String, Value)>,
    seed: u64,
}

fn plan(root_seed: u64, axes: &[(String, Vec<Value>)], seeds: usize) -> Vec<Job> {
    let mut jobs = Vec::new();
    for combo in grid(axes) {
        let stem: Vec<String> = combo
            .iter()
            .map(|(k, v)| format!("{}={}", k.rsplit('.').next().unwrap_or(k), value_label(v)))
            .collect();
        let stem = if stem.is_empty() {
            "base".to_string()
        } else {
            stem.join("_")
        };
        for s in 0..seeds {
            let label = format!("{stem}_s{s}");
            // Seeds depend on the seed index only, so every grid cell sees the
            // same problems and initializations.
            // Kept below 2^63 so it survives a TOML integer.
            let seed = derive_seed(root_seed, &format!("seed{s}")) & i64::MAX as u64;
            jobs.push(Job {
                label,
                overrides: combo.clone(),
                seed,
            });
        }
    }
    jobs
}

/// Runs the grid and writes `<out>/<label>/` per run plus `<out>/sweep.json`.
/// Config problems in any cell abort before anything runs.
pub fn run_sweep(
    base_path: &Path,
    axes: &[(String, Vec<Value>)],
    seeds: usize,
    out: &Path,
) -> Result<SweepIndex> {
    if seeds == 0 {
        return Err(HarnessError::Failed("--seeds must be at least 1".into()));
    }
    let base = ExperimentConfig::load(base_path)?;

    let jobs = plan(base.seed, axes, seeds);
    let configs = jobs
        .iter()
        .map(|j| {
            let mut ov = j.overrides.clone();
            ov.push(("seed".into(), Value::Integer(j.seed as i64)));
            ov.push((
                "name".into(),
                Value::String(format!("{}-{}", base.name, j.label)),
            ));
            ExperimentConfig::load_with(base_path, &ov).map_err(HarnessError::from)
        })
        .collect::<Result<Vec<_>>>()?;

    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::Failed(format!("thread pool: {e}")))?;
    log::info!(
        "sweep: {} runs on {} threads",
        jobs.len(),
        pool.current_num_threads()
    );

    let summaries = pool.install(|| {
        jobs.par_iter()
            .zip(configs.par_iter())
            .map(|(job, cfg)| run_to_dir(cfg, &out.join(&job.label)).map(|r| r.summary))
            .collect::<Result<Vec<_>>>()
    })?;

    let runs = jobs
        .into_iter()
        .zip(summaries)
        .map(|(j, summary)| SweepEntry {
            label: j.label,
            seed: j.seed,
            overrides: j
                .overrides
                .iter()
                .map(|(k, v)| (k.clone(), v.to_string()))
                .collect(),
            summary,
        })
        .collect();
    let index = SweepIndex {
        base: base.name,
        root_seed: base.seed,
        runs,
    };
    write_json_file(&out.join("sweep.json"), &index)?;
    Ok(index)
}
