//! Builds the problem from a config, trains, and writes the run directory:
//! `metrics.csv` (streamed, synced at the end), `summary.json` and
//! `config.resolved.json`. A run directory without `summary.json` is partial.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nexus_core::analysis::closeness;
use nexus_core::autodiff_net::{make_synthetic_sources, MlpSpec, MlpTask};
use nexus_core::nexus::{train, BatchStream, MetricsRow, StrategyRegistry, TrainSettings};
use nexus_core::tasks::{random_spd, CubicTask, QuadraticTask, TaskFamily};
use nexus_core::{ParameterVector, RngStream, Task, TaskSet};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ProblemConfig};
use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: &str =
    "step,lr,train_loss,ood_loss,mean_pairwise_cos,grad_norm,pseudo_grad_norm";

/// Tasks, optional held-out task and start point of a run.
pub struct Problem {
    pub tasks: TaskSet,
    pub held_out: Option<Task>,
    pub theta0: ParameterVector,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let root = RngStream::new(cfg.seed);
    let mut rng = root.substream("problem");
    let mut init = root.substream("init");
    Ok(match &cfg.problem {
        ProblemConfig::QuadraticFamily {
            n_tasks,
            dim,
            variance,
            curvature,
            depth,
            init_scale,
        } => {
            let fam = TaskFamily::new(ParameterVector::zeros(*dim), *variance, *curvature, *depth)?;
            let tasks = fam.sample(*n_tasks, &mut rng)?;
            let held_out = Some(fam.sample_task(&mut root.substream("held_out")).into());
            Problem {
                tasks,
                held_out,
                theta0: init.normal_vector(*dim, *init_scale),
            }
        }
        ProblemConfig::CubicSet {
            n_tasks,
            dim,
            lambda_min,
            lambda_max,
            third_bound,
            init_scale,
        } => {
            let cubic = |r: &mut RngStream| -> Result<Task> {
                let q = QuadraticTask::new(
                    random_spd(*dim, *lambda_min, *lambda_max, r),
                    r.normal_vector(*dim, 1.0),
                    0.0,
                )?;
                Ok(CubicTask::random(q, *third_bound, r).into())
            };
            let tasks = TaskSet::new(
                (0..*n_tasks)
                    .map(|_| cubic(&mut rng))
                    .collect::<Result<Vec<_>>>()?,
            )?;
            let held_out = Some(cubic(&mut root.substream("held_out"))?);
            Problem {
                tasks,
                held_out,
                theta0: init.normal_vector(*dim, *init_scale),
            }
        }
        ProblemConfig::MlpMultisource {
            n_tasks,
            widths,
            activation,
            samples_per_source,
            shared_fraction,
            ..
        } => {
            let spec = MlpSpec::new(widths.clone(), *activation)?;
            let src = make_synthetic_sources(
                *n_tasks,
                spec.input_dim(),
                spec.output_dim(),
                *samples_per_source,
                *shared_fraction,
                &mut rng,
            )?;
            let tasks = TaskSet::new(
                src.sources
                    .into_iter()
                    .map(|s| MlpTask::new(spec.clone(), s, 1.0).map(Task::from))
                    .collect::<nexus_core::Result<Vec<_>>>()?,
            )?;
            let held_out = Some(MlpTask::new(spec.clone(), src.held_out, 1.0)?.into());
            Problem {
                tasks,
                held_out,
                theta0: spec.init_params(&mut init),
            }
        }
        ProblemConfig::CustomTasksetFile { path, init_scale } => {
            let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            let tasks: TaskSet = serde_json::from_str(&text)?;
            let dim = tasks.dim();
            Problem {
                tasks,
                held_out: None,
                theta0: init.normal_vector(dim, *init_scale),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub optimizer: String,
    /// `"ok"` or `"error"`.
    pub status: String,
    pub error: Option<String>,
    pub steps: usize,
    pub rows: usize,
    pub final_train_loss: Option<f64>,
    pub final_ood_loss: Option<f64>,
    pub final_mean_pairwise_cos: Option<f64>,
    pub final_grad_norm: Option<f64>,
    /// `(1/K) Σ ||θ − θ*_k||²` when the tasks expose minimizers.
    pub closeness: Option<f64>,
    pub grad_evals: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.summary.status == "ok"
    }
}

/// Streams rows into `metrics.csv`.
struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(BufWriter::new(file));
        inner.write_record(METRICS_HEADER.split(','))?;
        Ok(Self { inner })
    }

    fn push(&mut self, row: &MetricsRow) -> Result<()> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        self.inner.write_record([
            row.step.to_string(),
            row.lr.to_string(),
            row.train_loss.to_string(),
            opt(row.ood_loss),
            opt(row.mean_pairwise_cos),
            row.grad_norm.to_string(),
            opt(row.pseudo_grad_norm),
        ])?;
        self.inner
            .flush()
            .map_err(|e| HarnessError::io("metrics.csv", e))?;
        Ok(())
    }

    fn finish(self, path: &Path) -> Result<()> {
        let buf = self
            .inner
            .into_inner()
            .map_err(|e| HarnessError::io(path, e.into_error()))?;
        let file = buf
            .into_inner()
            .map_err(|e| HarnessError::io(path, e.into_error()))?;
        file.sync_all().map_err(|e| HarnessError::io(path, e))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Runs `cfg` and writes its outputs to `dir`. Training errors do not abort:
/// they land in `summary.json` with status `"error"`.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let _ = fs::remove_file(dir.join("summary.json"));
    write_json(&dir.join("config.resolved.json"), cfg)?;
    let csv_path = dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&csv_path)?;
    let start = Instant::now();
    let outcome = execute(cfg, &mut writer);
    writer.finish(&csv_path)?;
    let wall = start.elapsed().as_secs_f64();

    let (rows, summary) = match outcome {
        Ok((rows, mut s)) => {
            s.wall_clock_secs = wall;
            (rows, s)
        }
        Err(e) => {
            log::error!("run {} failed: {e}", cfg.name);
            let s = Summary {
                name: cfg.name.clone(),
                seed: cfg.seed,
                optimizer: cfg.optimizer.clone(),
                status: "error".into(),
                error: Some(e.to_string()),
                steps: cfg.total_steps,
                rows: 0,
                final_train_loss: None,
                final_ood_loss: None,
                final_mean_pairwise_cos: None,
                final_grad_norm: None,
                closeness: None,
                grad_evals: 0,
                wall_clock_secs: wall,
            };
            (Vec::new(), s)
        }
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(RunRecord {
        config: cfg.clone(),
        rows,
        summary,
    })
}

fn execute(
    cfg: &ExperimentConfig,
    writer: &mut MetricsWriter,
) -> Result<(Vec<MetricsRow>, Summary)> {
    let problem = build_problem(cfg)?;
    let ts = &problem.tasks;
    let accum = cfg.accum_steps.unwrap_or(ts.len());
    let ncfg = cfg.nexus_config(accum);
    let mut strategy = StrategyRegistry::default().build(&cfg.optimizer, &ncfg)?;
    let batches = RngStream::new(cfg.seed).substream("batches");
    let mut stream = match &cfg.problem {
        ProblemConfig::MlpMultisource {
            batch_size: Some(b),
            ..
        } => BatchStream::minibatches(cfg.nexus.sampling, ts, *b, batches)?,
        _ => BatchStream::full(cfg.nexus.sampling, ts.len(), batches),
    };
    let settings = TrainSettings {
        total_steps: cfg.total_steps,
        accum_steps: accum,
        metric_cadence: cfg.metric_cadence,
        clip_norm: cfg.clip_norm,
        schedule: cfg.schedule(),
        adamw: cfg.adamw,
    };
    let mut write_err = None;
    let result = train(
        ts,
        &problem.theta0,
        &mut strategy,
        &mut stream,
        &settings,
        problem.held_out.as_ref(),
        &mut |row| {
            if let Err(e) = writer.push(row) {
                let msg = e.to_string();
                write_err = Some(e);
                return Err(nexus_core::Error::InvalidArgument(msg));
            }
            Ok(())
        },
    );
    if let Some(e) = write_err {
        return Err(e);
    }
    let tr = result?;
    let has_minimizers = ts
        .tasks()
        .iter()
        .all(|t| nexus_core::Objective::minimizer(t).is_some());
    let close = if has_minimizers {
        Some(closeness(&tr.final_theta, ts, None)?.mean_sq)
    } else {
        None
    };
    let last = tr.last_row();
    let summary = Summary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        optimizer: cfg.optimizer.clone(),
        status: "ok".into(),
        error: None,
        steps: cfg.total_steps,
        rows: tr.rows.len(),
        final_train_loss: last.map(|r| r.train_loss),
        final_ood_loss: last.and_then(|r| r.ood_loss),
        final_mean_pairwise_cos: last.and_then(|r| r.mean_pairwise_cos),
        final_grad_norm: last.map(|r| r.grad_norm),
        closeness: close,
        grad_evals: tr.grad_evals,
        wall_clock_secs: 0.0,
    };
    Ok((tr.rows, summary))
}

/// Output directory: `--out` wins over `output_dir`, else `runs/<name>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    match (out, &cfg.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("runs").join(&cfg.name),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDeltas {
    pub train_loss: Option<f64>,
    pub ood_loss: Option<f64>,
    pub mean_pairwise_cos: Option<f64>,
    pub grad_norm: Option<f64>,
    pub closeness: Option<f64>,
}

/// `candidate − baseline` for every final metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    pub baseline: String,
    pub candidate: String,
    pub seed: u64,
    pub deltas: FinalDeltas,
}

pub fn diff(baseline: &Summary, candidate: &Summary) -> RunDiff {
    let d = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| b - a);
    RunDiff {
        baseline: baseline.name.clone(),
        candidate: candidate.name.clone(),
        seed: candidate.seed,
        deltas: FinalDeltas {
            train_loss: d(baseline.final_train_loss, candidate.final_train_loss),
            ood_loss: d(baseline.final_ood_loss, candidate.final_ood_loss),
            mean_pairwise_cos: d(
                baseline.final_mean_pairwise_cos,
                candidate.final_mean_pairwise_cos,
            ),
            grad_norm: d(baseline.final_grad_norm, candidate.final_grad_norm),
            closeness: d(baseline.closeness, candidate.closeness),
        },
    }
}

/// Runs two configs under one seed into `<out>/<name>` each and writes
/// `<out>/diff.json`.
pub fn run_paired(
    baseline: &ExperimentConfig,
    candidate: &ExperimentConfig,
    out: &Path,
) -> Result<(RunRecord, RunRecord, RunDiff)> {
    if baseline.name == candidate.name {
        return Err(HarnessError::Failed(format!(
            "paired runs need distinct names, both are {:?}",
            baseline.name
        )));
    }
    let mut candidate = candidate.clone();
    candidate.seed = baseline.seed;
    let a = run_to_dir(baseline, &out.join(&baseline.name))?;
    let b = run_to_dir(&candidate, &out.join(&candidate.name))?;
    let d = diff(&a.summary, &b.summary);
    write_json(&out.join("diff.json"), &d)?;
    Ok((a, b, d))
}

pub(crate) fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}
