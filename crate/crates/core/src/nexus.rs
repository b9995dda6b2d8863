//! The Nexus dual loop, its gradient-accumulation form, and the named
//! strategy registry used by training runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::mean_pairwise_cosine;
use crate::error::{Error, Result};
use crate::numerics::{ParameterVector, RngStream};
use crate::optimizers::{
    clip_grad, normalized_displacement, AdamWHyper, DegeneratePolicy, Optimizer, OuterKind,
    Schedule, DEFAULT_GRAD_FLOOR,
};
use crate::tasks::{Objective, Task, TaskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform with replacement.
    IidUniform,
    /// Task `m mod n` at micro-step `m`.
    FixedSequence,
    /// A fresh random permutation of all tasks every `n` micro-steps.
    Permuted,
}

impl std::str::FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid_uniform" => Ok(Self::IidUniform),
            "fixed_sequence" => Ok(Self::FixedSequence),
            "permuted" => Ok(Self::Permuted),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sampling mode {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Normalized inner steps.
    Cosine,
    /// Raw-gradient inner steps.
    Dot,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "dot" => Ok(Self::Dot),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NexusConfig {
    pub gamma: f64,
    pub inner_steps: usize,
    pub sampling: Sampling,
    pub variant: Variant,
    pub grad_floor: f64,
    #[serde(default)]
    pub policy: DegeneratePolicy,
    /// Divide ĝ by `Kγ` before the outer step.
    #[serde(default)]
    pub rescale: bool,
}

impl NexusConfig {
    pub fn new(gamma: f64, inner_steps: usize) -> Self {
        Self {
            gamma,
            inner_steps,
            sampling: Sampling::IidUniform,
            variant: Variant::Cosine,
            grad_floor: DEFAULT_GRAD_FLOOR,
            policy: DegeneratePolicy::Strict,
            rescale: false,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "nexus.gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidArgument(
                "nexus.inner_steps must be ≥ 1".into(),
            ));
        }
        if !(self.grad_floor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "nexus.grad_floor {}",
                self.grad_floor
            )));
        }
        Ok(())
    }

    /// Displacement of one inner step from gradient `g` of task `task`.
    pub fn inner_displacement(
        &self,
        g: &ParameterVector,
        task: usize,
    ) -> Result<Option<ParameterVector>> {
        match self.variant {
            Variant::Cosine => {
                normalized_displacement(g, self.gamma, self.grad_floor, self.policy, Some(task))
            }
            Variant::Dot => {
                if !g.is_finite() {
                    return Err(Error::NonFiniteValue("gradient"));
                }
                Ok(Some(g.scaled(self.gamma)))
            }
        }
    }
}

/// Draws task indices according to a [`Sampling`] mode.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    mode: Sampling,
    n_tasks: usize,
    drawn: usize,
    pending: Vec<usize>,
    rng: RngStream,
}

impl TaskSampler {
    pub fn new(mode: Sampling, n_tasks: usize, rng: RngStream) -> Self {
        assert!(n_tasks > 0);
        Self {
            mode,
            n_tasks,
            drawn: 0,
            pending: Vec::new(),
            rng,
        }
    }

    pub fn next_task(&mut self) -> usize {
        let k = match self.mode {
            Sampling::IidUniform => self.rng.index(self.n_tasks),
            Sampling::FixedSequence => self.drawn % self.n_tasks,
            Sampling::Permuted => {
                if self.pending.is_empty() {
                    self.pending = self.rng.permutation(self.n_tasks);
                    self.pending.reverse();
                }
                self.pending.pop().expect("refilled")
            }
        };
        self.drawn += 1;
        k
    }

    pub fn take(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.next_task()).collect()
    }

    pub fn rng_mut(&mut self) -> &mut RngStream {
        &mut self.rng
    }
}

/// The displacement `ĝ = θ_start − θ_end` of one inner loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoGradient {
    pub value: ParameterVector,
    /// `θ_0, …, θ_K` when recorded.
    pub inner_trajectory: Option<Vec<ParameterVector>>,
    pub tasks: Vec<usize>,
}

/// Runs the inner loop along a given task sequence with an arbitrary
/// gradient oracle `grad(task, θ)`.
///
/// ĝ is accumulated as the sum of the inner displacements, which equals
/// `θ_0 − θ_K` up to rounding and is exact when `K = 1`.
pub fn inner_loop_with<F>(
    theta: &ParameterVector,
    sequence: &[usize],
    cfg: &NexusConfig,
    record: bool,
    mut grad: F,
) -> Result<PseudoGradient>
where
    F: FnMut(usize, &ParameterVector) -> Result<ParameterVector>,
{
    cfg.validate()?;
    theta.check_finite("theta")?;
    let mut inner = theta.clone();
    let mut acc = ParameterVector::zeros(theta.dim());
    let mut traj = record.then(|| vec![theta.clone()]);
    for &k in sequence {
        let g = grad(k, &inner)?;
        g.check_dim(theta.dim())?;
        if let Some(step) = cfg.inner_displacement(&g, k)? {
            inner = &inner - &step;
            acc.axpy(1.0, &step);
        }
        if let Some(t) = traj.as_mut() {
            t.push(inner.clone());
        }
    }
    Ok(PseudoGradient {
        value: acc,
        inner_trajectory: traj,
        tasks: sequence.to_vec(),
    })
}

/// Inner loop over full task gradients along an explicit sequence.
pub fn inner_loop_with_sequence(
    theta: &ParameterVector,
    ts: &TaskSet,
    cfg: &NexusConfig,
    sequence: &[usize],
    record: bool,
) -> Result<PseudoGradient> {
    if let Some(&bad) = sequence.iter().find(|&&k| k >= ts.len()) {
        return Err(Error::InvalidArgument(format!(
            "task index {bad} out of range"
        )));
    }
    inner_loop_with(theta, sequence, cfg, record, |k, th| ts.task(k).grad(th))
}

/// `K` inner steps on tasks drawn per `cfg.sampling`.
pub fn inner_loop(
    theta: &ParameterVector,
    ts: &TaskSet,
    cfg: &NexusConfig,
    rng: &mut RngStream,
) -> Result<PseudoGradient> {
    let seq = draw_sequence(cfg.sampling, ts.len(), cfg.inner_steps, rng);
    inner_loop_with_sequence(theta, ts, cfg, &seq, true)
}

/// One sequence of `len` task indices. Stateful modes start fresh.
pub fn draw_sequence(
    mode: Sampling,
    n_tasks: usize,
    len: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    match mode {
        Sampling::IidUniform => (0..len).map(|_| rng.index(n_tasks)).collect(),
        Sampling::FixedSequence => (0..len).map(|m| m % n_tasks).collect(),
        Sampling::Permuted => {
            let mut out = Vec::with_capacity(len);
            while out.len() < len {
                out.extend(rng.permutation(n_tasks));
            }
            out.truncate(len);
            out
        }
    }
}

/// Feeds ĝ to the outer optimizer as though it were a gradient.
pub fn nexus_outer_step(
    opt: &mut dyn Optimizer,
    theta: &mut ParameterVector,
    ghat: &PseudoGradient,
    lr: f64,
) -> Result<()> {
    opt.step(theta, &ghat.value, lr)
}

/// A unit of data for one gradient evaluation: a task and optionally a
/// subset of its rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Microbatch {
    pub task: usize,
    pub rows: Option<Vec<usize>>,
}

/// Gradient of one microbatch.
pub fn microbatch_grad(
    ts: &TaskSet,
    mb: &Microbatch,
    theta: &ParameterVector,
) -> Result<ParameterVector> {
    let task = ts
        .tasks()
        .get(mb.task)
        .ok_or_else(|| Error::InvalidArgument(format!("task index {} out of range", mb.task)))?;
    match (&mb.rows, task) {
        (None, t) => t.grad(theta),
        (Some(rows), Task::Mlp(m)) => m.minibatch(rows)?.grad(theta),
        (Some(_), _) => Err(Error::Unsupported(
            "row subsets need a data-backed task".into(),
        )),
    }
}

/// Infinite stream of microbatches.
#[derive(Debug, Clone)]
pub struct BatchStream {
    sampler: TaskSampler,
    batch_size: Option<usize>,
    source_sizes: Vec<usize>,
}

impl BatchStream {
    /// Full-task microbatches.
    pub fn full(mode: Sampling, n_tasks: usize, rng: RngStream) -> Self {
        Self {
            sampler: TaskSampler::new(mode, n_tasks, rng),
            batch_size: None,
            source_sizes: Vec::new(),
        }
    }

    /// Row minibatches of size `batch_size` drawn with replacement.
    pub fn minibatches(
        mode: Sampling,
        ts: &TaskSet,
        batch_size: usize,
        rng: RngStream,
    ) -> Result<Self> {
        let sizes = ts
            .tasks()
            .iter()
            .map(|t| match t {
                Task::Mlp(m) => Ok(m.source.len()),
                _ => Err(Error::Unsupported(
                    "minibatches need data-backed tasks".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be ≥ 1".into()));
        }
        Ok(Self {
            sampler: TaskSampler::new(mode, ts.len(), rng),
            batch_size: Some(batch_size),
            source_sizes: sizes,
        })
    }

    pub fn next_batch(&mut self) -> Microbatch {
        let task = self.sampler.next_task();
        let rows = self.batch_size.map(|b| {
            let n = self.source_sizes[task];
            let rng = self.sampler.rng_mut();
            (0..b).map(|_| rng.index(n)).collect()
        });
        Microbatch { task, rows }
    }

    pub fn take(&mut self, count: usize) -> Vec<Microbatch> {
        (0..count).map(|_| self.next_batch()).collect()
    }
}

/// The vector handed to the outer optimizer for one outer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub value: ParameterVector,
    pub pseudo_grad_norm: Option<f64>,
    pub grad_evals: usize,
}

/// Turns a window of microbatches into one outer-optimizer input.
pub trait GradientApproximator: Send {
    fn name(&self) -> &'static str;
    fn direction(
        &mut self,
        theta: &ParameterVector,
        ts: &TaskSet,
        window: &[Microbatch],
    ) -> Result<Direction>;
}

/// Plain gradient accumulation: the mean microbatch gradient at θ.
#[derive(Debug, Clone, Default)]
pub struct MeanGradient;

impl GradientApproximator for MeanGradient {
    fn name(&self) -> &'static str {
        "mean_gradient"
    }

    fn direction(
        &mut self,
        theta: &ParameterVector,
        ts: &TaskSet,
        window: &[Microbatch],
    ) -> Result<Direction> {
        let mut acc = ParameterVector::zeros(theta.dim());
        for mb in window {
            acc.axpy(1.0, &microbatch_grad(ts, mb, theta)?);
        }
        Ok(Direction {
            value: acc.scaled(1.0 / window.len() as f64),
            pseudo_grad_norm: None,
            grad_evals: window.len(),
        })
    }
}

/// Normalized gradients at θ, summed with inner step size γ: the NSGD
/// ablation fed into an outer optimizer.
#[derive(Debug, Clone)]
pub struct NormalizedGradient {
    pub cfg: NexusConfig,
}

impl GradientApproximator for NormalizedGradient {
    fn name(&self) -> &'static str {
        "normalized_gradient"
    }

    fn direction(
        &mut self,
        theta: &ParameterVector,
        ts: &TaskSet,
        window: &[Microbatch],
    ) -> Result<Direction> {
        let mut acc = ParameterVector::zeros(theta.dim());
        for mb in window {
            let g = microbatch_grad(ts, mb, theta)?;
            if let Some(step) = normalized_displacement(
                &g,
                self.cfg.gamma,
                self.cfg.grad_floor,
                self.cfg.policy,
                Some(mb.task),
            )? {
                acc.axpy(1.0, &step);
            }
        }
        let norm = acc.norm();
        Ok(Direction {
            value: acc,
            pseudo_grad_norm: Some(norm),
            grad_evals: window.len(),
        })
    }
}

/// The Nexus inner loop over the window: one inner step per microbatch on a
/// private copy of θ.
#[derive(Debug, Clone)]
pub struct NexusApproximator {
    pub cfg: NexusConfig,
}

impl GradientApproximator for NexusApproximator {
    fn name(&self) -> &'static str {
        match self.cfg.variant {
            Variant::Cosine => "nexus",
            Variant::Dot => "nexus_dot",
        }
    }

    fn direction(
        &mut self,
        theta: &ParameterVector,
        ts: &TaskSet,
        window: &[Microbatch],
    ) -> Result<Direction> {
        let seq: Vec<usize> = (0..window.len()).collect();
        let pg = inner_loop_with(theta, &seq, &self.cfg, false, |i, th| {
            microbatch_grad(ts, &window[i], th)
        })?;
        let norm = pg.value.norm();
        let value = if self.cfg.rescale {
            pg.value
                .scaled(1.0 / (window.len() as f64 * self.cfg.gamma))
        } else {
            pg.value
        };
        Ok(Direction {
            value,
            pseudo_grad_norm: Some(norm),
            grad_evals: window.len(),
        })
    }
}

/// A registered pairing of approximator and outer optimizer.
pub struct Strategy {
    pub name: String,
    pub approximator: Box<dyn GradientApproximator>,
    pub outer: OuterKind,
}

impl std::fmt::Debug for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Strategy")
            .field("name", &self.name)
            .field("approximator", &self.approximator.name())
            .field("outer", &self.outer)
            .finish()
    }
}

pub type StrategyCtor = fn(&NexusConfig) -> (Box<dyn GradientApproximator>, OuterKind);

/// Name → strategy constructor.
#[derive(Clone)]
pub struct StrategyRegistry {
    entries: BTreeMap<String, StrategyCtor>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("adamw", |_| (Box::new(MeanGradient), OuterKind::AdamW));
        r.register("sgd", |_| (Box::new(MeanGradient), OuterKind::Sgd));
        r.register("nsgd_adamw", |c| {
            (Box::new(NormalizedGradient { cfg: *c }), OuterKind::AdamW)
        });
        r.register("nexus_adamw", |c| {
            let cfg = c.with_variant(Variant::Cosine);
            (Box::new(NexusApproximator { cfg }), OuterKind::AdamW)
        });
        r.register("nexus_dot_adamw", |c| {
            let cfg = c.with_variant(Variant::Dot);
            (Box::new(NexusApproximator { cfg }), OuterKind::AdamW)
        });
        r.register("nexus_sgd", |c| {
            (Box::new(NexusApproximator { cfg: *c }), OuterKind::Sgd)
        });
        r
    }
}

impl StrategyRegistry {
    pub fn register(&mut self, name: &str, ctor: StrategyCtor) {
        self.entries.insert(name.to_string(), ctor);
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, cfg: &NexusConfig) -> Result<Strategy> {
        let ctor = self.entries.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown optimizer {name:?}; known: {}",
                self.names().join(", ")
            ))
        })?;
        let (approximator, outer) = ctor(cfg);
        Ok(Strategy {
            name: name.to_string(),
            approximator,
            outer,
        })
    }
}

/// Outer iterates and pseudo-gradients of [`accum_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct AccumTrace {
    pub iterates: Vec<ParameterVector>,
    pub pseudo_gradients: Vec<ParameterVector>,
    pub grad_evals: usize,
}

/// Gradient-accumulation form of the dual loop: every microbatch moves a
/// private inner copy by one step, and each `accum_steps` boundary feeds the
/// displacement to the outer optimizer and resynchronizes the copy.
#[allow(clippy::too_many_arguments)]
pub fn accum_run(
    theta: &ParameterVector,
    ts: &TaskSet,
    stream: &mut BatchStream,
    cfg: &NexusConfig,
    outer: &mut dyn Optimizer,
    accum_steps: usize,
    outer_steps: usize,
    lr: f64,
) -> Result<AccumTrace> {
    if accum_steps == 0 {
        return Err(Error::InvalidArgument("accum_steps must be ≥ 1".into()));
    }
    cfg.validate()?;
    let mut model = theta.clone();
    let mut trace = AccumTrace {
        iterates: vec![model.clone()],
        pseudo_gradients: Vec::with_capacity(outer_steps),
        grad_evals: 0,
    };
    for _ in 0..outer_steps {
        let mut inner = model.clone();
        let mut ghat = ParameterVector::zeros(model.dim());
        for _ in 0..accum_steps {
            let mb = stream.next_batch();
            let g = microbatch_grad(ts, &mb, &inner)?;
            trace.grad_evals += 1;
            if let Some(step) = cfg.inner_displacement(&g, mb.task)? {
                inner = &inner - &step;
                ghat.axpy(1.0, &step);
            }
        }
        outer.step(&mut model, &ghat, lr)?;
        trace.pseudo_gradients.push(ghat);
        trace.iterates.push(model.clone());
    }
    Ok(trace)
}

/// One logged row of a training run. `None` fields serialize as empty CSV
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub ood_loss: Option<f64>,
    pub mean_pairwise_cos: Option<f64>,
    pub grad_norm: f64,
    pub pseudo_grad_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub total_steps: usize,
    pub accum_steps: usize,
    pub metric_cadence: usize,
    /// Clip the outer-optimizer input to this norm.
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
    pub adamw: AdamWHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub final_theta: ParameterVector,
    pub rows: Vec<MetricsRow>,
    pub grad_evals: usize,
}

impl Trajectory {
    pub fn last_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

fn metrics_row(
    ts: &TaskSet,
    held_out: Option<&Task>,
    theta: &ParameterVector,
    step: usize,
    lr: f64,
    pseudo_grad_norm: Option<f64>,
) -> Result<MetricsRow> {
    let grads = ts.per_task_grads(theta)?;
    let mut mean = ParameterVector::zeros(theta.dim());
    for g in &grads {
        mean.axpy(1.0 / grads.len() as f64, g);
    }
    Ok(MetricsRow {
        step,
        lr,
        train_loss: ts.train_loss(theta)?,
        ood_loss: held_out.map(|t| t.loss(theta)).transpose()?,
        mean_pairwise_cos: mean_pairwise_cosine(&grads),
        grad_norm: mean.norm(),
        pseudo_grad_norm,
    })
}

/// Runs `total_steps` outer steps. Rows are logged at step 0, every
/// `metric_cadence` steps, and at the final step; the update taken after the
/// row at step `s` uses `schedule.lr(s)`.
pub fn train(
    ts: &TaskSet,
    theta0: &ParameterVector,
    strategy: &mut Strategy,
    stream: &mut BatchStream,
    settings: &TrainSettings,
    held_out: Option<&Task>,
    hook: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<Trajectory> {
    theta0.check_dim(ts.dim())?;
    if settings.accum_steps == 0 || settings.metric_cadence == 0 {
        return Err(Error::InvalidArgument(
            "accum_steps and metric_cadence must be ≥ 1".into(),
        ));
    }
    settings.schedule.validate()?;
    if settings.schedule.total_steps < settings.total_steps {
        return Err(Error::InvalidArgument(
            "schedule shorter than the run".into(),
        ));
    }
    let mut theta = theta0.clone();
    let mut outer = strategy.outer.build(theta.dim(), settings.adamw);
    let mut rows = Vec::new();
    let mut grad_evals = 0;
    let total = settings.total_steps;
    for step in 0..total {
        let lr = settings.schedule.lr(step)?;
        let window = stream.take(settings.accum_steps);
        let dir = strategy.approximator.direction(&theta, ts, &window)?;
        grad_evals += dir.grad_evals;
        if step % settings.metric_cadence == 0 {
            let row = metrics_row(ts, held_out, &theta, step, lr, dir.pseudo_grad_norm)?;
            hook(&row)?;
            rows.push(row);
        }
        let input = match settings.clip_norm {
            Some(c) => clip_grad(&dir.value, c)?,
            None => dir.value,
        };
        outer.step(&mut theta, &input, lr)?;
        if !theta.is_finite() {
            return Err(Error::NonFiniteValue("parameters"));
        }
    }
    if total > 0 {
        let row = metrics_row(
            ts,
            held_out,
            &theta,
            total,
            settings.schedule.lr(total)?,
            None,
        )?;
        hook(&row)?;
        rows.push(row);
    }
    Ok(Trajectory {
        final_theta: theta,
        rows,
        grad_evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{nsgd_step, sgd_step, AdamW, Sgd};
    use crate::tasks::{random_spd, QuadraticTask};

    fn pv(x: &[f64]) -> ParameterVector {
        ParameterVector::from_slice(x)
    }

    fn random_set(k: usize, d: usize, seed: u64) -> TaskSet {
        let mut rng = RngStream::new(seed);
        TaskSet::new(
            (0..k)
                .map(|_| {
                    let a = random_spd(d, 0.5, 2.0, &mut rng);
                    QuadraticTask::new(a, rng.normal_vector(d, 1.0), 0.0)
                        .unwrap()
                        .into()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn k_one_is_a_single_normalized_step() {
        let ts = random_set(3, 4, 1);
        let theta = pv(&[0.5, 0.5, 0.5, 0.5]);
        let cfg = NexusConfig::new(0.1, 1);
        let pg = inner_loop_with_sequence(&theta, &ts, &cfg, &[2], false).unwrap();
        let g = ts.task(2).grad(&theta).unwrap();
        assert_eq!(pg.value, g.scaled(0.1 / g.norm()));
    }

    #[test]
    fn isotropic_single_task_keeps_the_gradient_ray() {
        let q = QuadraticTask::isotropic(1.5, pv(&[1.0, -2.0, 0.5]), 0.0).unwrap();
        let ts = TaskSet::new(vec![q.into()]).unwrap();
        let theta = pv(&[4.0, 3.0, -1.0]);
        let g0 = ts.train_grad(&theta).unwrap();
        for k in 1..6 {
            let cfg = NexusConfig::new(0.05, k);
            let pg = inner_loop(&theta, &ts, &cfg, &mut RngStream::new(k as u64)).unwrap();
            assert!(pg.value.cosine(&g0).unwrap() >= 1.0 - 1e-10);
            assert!((pg.value.norm() - 0.05 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn small_gamma_limit_is_sum_of_unit_gradients() {
        let ts = random_set(3, 3, 2);
        let theta = pv(&[0.3, -0.2, 0.9]);
        let cfg = NexusConfig::new(1e-8, 4);
        let pg = inner_loop(&theta, &ts, &cfg, &mut RngStream::new(9)).unwrap();
        let mut expect = ParameterVector::zeros(3);
        for &k in &pg.tasks {
            let g = ts.task(k).grad(&theta).unwrap();
            expect.axpy(1.0 / g.norm(), &g);
        }
        assert!(pg.value.scaled(1e8).distance(&expect) <= 1e-6);
    }

    #[test]
    fn pseudo_gradient_is_start_minus_end_and_bounded() {
        let ts = random_set(4, 5, 3);
        let mut rng = RngStream::new(4);
        for k in 1..8 {
            let cfg = NexusConfig::new(0.3, k);
            let theta = rng.normal_vector(5, 2.0);
            let pg = inner_loop(&theta, &ts, &cfg, &mut rng).unwrap();
            let traj = pg.inner_trajectory.as_ref().unwrap();
            assert_eq!(traj.len(), k + 1);
            let diff = &traj[0] - traj.last().unwrap();
            assert!(diff.distance(&pg.value) <= 1e-14 * (1.0 + diff.norm()));
            assert!(pg.value.norm() <= 0.3 * k as f64 * (1.0 + 1e-14));
        }
    }

    #[test]
    fn outer_sgd_with_unit_lr_lands_on_inner_endpoint() {
        let ts = random_set(3, 4, 5);
        let theta = pv(&[1.0, 2.0, 3.0, 4.0]);
        let cfg = NexusConfig::new(0.2, 3);
        let pg = inner_loop(&theta, &ts, &cfg, &mut RngStream::new(1)).unwrap();
        let mut th = theta.clone();
        nexus_outer_step(&mut Sgd, &mut th, &pg, 1.0).unwrap();
        let end = pg.inner_trajectory.unwrap().pop().unwrap();
        assert!(th.distance(&end) <= 1e-14);

        // ĝ = 0 leaves θ unchanged under AdamW with wd = 0
        let zero = PseudoGradient {
            value: ParameterVector::zeros(4),
            inner_trajectory: None,
            tasks: vec![],
        };
        let mut adam = AdamW::new(4, AdamWHyper::default());
        let mut th = theta.clone();
        nexus_outer_step(&mut adam, &mut th, &zero, 0.1).unwrap();
        assert_eq!(th, theta);
    }

    #[test]
    fn outer_adamw_sees_only_the_pseudo_gradient() {
        let ts = random_set(2, 3, 6);
        let theta = pv(&[1.0, 0.0, -1.0]);
        let cfg = NexusConfig::new(0.1, 2);
        let pg = inner_loop_with_sequence(&theta, &ts, &cfg, &[0, 1], true).unwrap();
        let swapped = PseudoGradient {
            value: pg.value.clone(),
            inner_trajectory: None,
            tasks: vec![1, 1],
        };
        let (mut a, mut b) = (
            AdamW::new(3, AdamWHyper::default()),
            AdamW::new(3, AdamWHyper::default()),
        );
        let (mut ta, mut tb) = (theta.clone(), theta.clone());
        nexus_outer_step(&mut a, &mut ta, &pg, 0.05).unwrap();
        nexus_outer_step(&mut b, &mut tb, &swapped, 0.05).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn degenerate_inner_gradient_is_reported() {
        let q = QuadraticTask::isotropic(1.0, pv(&[0.0, 0.0]), 0.0).unwrap();
        let ts = TaskSet::new(vec![q.into()]).unwrap();
        let err = inner_loop(
            &pv(&[0.0, 0.0]),
            &ts,
            &NexusConfig::new(0.1, 2),
            &mut RngStream::new(0),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::DegenerateGradient { task: Some(0), .. }
        ));
        let dot = NexusConfig::new(0.1, 2).with_variant(Variant::Dot);
        assert!(inner_loop(&pv(&[0.0, 0.0]), &ts, &dot, &mut RngStream::new(0)).is_ok());
    }

    #[test]
    fn accum_run_matches_fixed_sequence_inner_loop() {
        let ts = random_set(4, 3, 7);
        let theta = pv(&[2.0, -1.0, 0.5]);
        let cfg = NexusConfig::new(0.15, 4).with_sampling(Sampling::FixedSequence);
        let mut stream = BatchStream::full(Sampling::FixedSequence, 4, RngStream::new(0));
        let trace = accum_run(&theta, &ts, &mut stream, &cfg, &mut Sgd, 4, 1, 1.0).unwrap();
        let pg = inner_loop(&theta, &ts, &cfg, &mut RngStream::new(0)).unwrap();
        assert!(trace.pseudo_gradients[0].max_abs_diff(&pg.value) <= 1e-15);
        // one gradient evaluation per microbatch, like plain accumulation
        assert_eq!(trace.grad_evals, 4);
    }

    #[test]
    fn accum_one_is_nsgd_fed_to_the_outer_optimizer() {
        let ts = random_set(3, 3, 8);
        let theta = pv(&[1.0, 1.0, 1.0]);
        let cfg = NexusConfig::new(0.1, 1);
        let mut s1 = BatchStream::full(Sampling::IidUniform, 3, RngStream::new(5));
        let mut s2 = s1.clone();
        let mut a = AdamW::new(3, AdamWHyper::default());
        let trace = accum_run(&theta, &ts, &mut s1, &cfg, &mut a, 1, 20, 0.01).unwrap();
        let mut b = AdamW::new(3, AdamWHyper::default());
        let mut th = theta.clone();
        for it in trace.iterates.iter().skip(1) {
            let mb = s2.next_batch();
            let g = microbatch_grad(&ts, &mb, &th).unwrap();
            b.step(&mut th, &g.scaled(0.1 / g.norm()), 0.01).unwrap();
            assert_eq!(&th, it);
        }
    }

    #[test]
    fn sgd_nexus_k2_matches_two_nsgd_steps() {
        let ts = random_set(2, 3, 9);
        let mut theta = pv(&[1.0, -1.0, 2.0]);
        let mut nsgd = theta.clone();
        let cfg = NexusConfig::new(0.05, 2);
        for _ in 0..10 {
            let pg = inner_loop_with_sequence(&theta, &ts, &cfg, &[0, 1], false).unwrap();
            theta = sgd_step(&theta, &pg.value, 1.0).unwrap();
            for k in 0..2 {
                let g = ts.task(k).grad(&nsgd).unwrap();
                nsgd = nsgd_step(&nsgd, &g, 0.05, DEFAULT_GRAD_FLOOR).unwrap();
            }
        }
        assert!(theta.distance(&nsgd) <= 1e-12);
    }

    #[test]
    fn permuted_sampling_covers_every_task_per_window() {
        let mut s = TaskSampler::new(Sampling::Permuted, 5, RngStream::new(3));
        for _ in 0..4 {
            let mut w = s.take(5);
            w.sort();
            assert_eq!(w, vec![0, 1, 2, 3, 4]);
        }
        assert_eq!(
            draw_sequence(Sampling::FixedSequence, 3, 5, &mut RngStream::new(0)),
            vec![0, 1, 2, 0, 1]
        );
    }

    fn settings(total: usize, cadence: usize) -> TrainSettings {
        TrainSettings {
            total_steps: total,
            accum_steps: 2,
            metric_cadence: cadence,
            clip_norm: Some(1.0),
            schedule: Schedule::constant(0.05, total),
            adamw: AdamWHyper::default(),
        }
    }

    #[test]
    fn train_rows_follow_cadence_and_replay() {
        let ts = random_set(3, 4, 10);
        let reg = StrategyRegistry::default();
        let cfg = NexusConfig::new(0.1, 2);
        let run = || {
            let mut st = reg.build("nexus_adamw", &cfg).unwrap();
            let mut stream = BatchStream::full(Sampling::IidUniform, 3, RngStream::new(2));
            train(
                &ts,
                &pv(&[1.0, 1.0, 1.0, 1.0]),
                &mut st,
                &mut stream,
                &settings(10, 5),
                None,
                &mut |_| Ok(()),
            )
            .unwrap()
        };
        let a = run();
        let steps: Vec<usize> = a.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 5, 10]);
        assert_eq!(a, run());
        assert_eq!(a.grad_evals, 20);
    }

    /// Conflicting quadratics with an inner step large next to the spread of
    /// the task minimizers. In the small-γ limit the ordering flips: Nexus
    /// settles where the unit gradients cancel, which is the least aligned
    /// configuration there is.
    #[test]
    fn large_inner_steps_end_more_aligned_than_adamw() {
        let final_cos = |name: &str, seed: u64| {
            let mut rng = RngStream::new(seed);
            let ts = TaskSet::new(
                (0..4)
                    .map(|_| {
                        let a = random_spd(4, 0.5, 2.0, &mut rng);
                        QuadraticTask::new(a, rng.normal_vector(4, 1.0), 0.0)
                            .unwrap()
                            .into()
                    })
                    .collect(),
            )
            .unwrap();
            let theta0 = rng.normal_vector(4, 3.0);
            let mut st = StrategyRegistry::default()
                .build(name, &NexusConfig::new(8.0, 4))
                .unwrap();
            let mut stream = BatchStream::full(
                Sampling::Permuted,
                4,
                RngStream::new(seed).substream("batches"),
            );
            let settings = TrainSettings {
                total_steps: 600,
                accum_steps: 4,
                metric_cadence: 600,
                clip_norm: None,
                schedule: Schedule {
                    kind: crate::optimizers::ScheduleKind::Cosine,
                    base_lr: 0.05,
                    total_steps: 600,
                    warmup_steps: 0,
                    decay_steps: 0,
                },
                adamw: AdamWHyper {
                    weight_decay: 0.0,
                    ..AdamWHyper::default()
                },
            };
            let tr = train(
                &ts,
                &theta0,
                &mut st,
                &mut stream,
                &settings,
                None,
                &mut |_| Ok(()),
            )
            .unwrap();
            tr.last_row().unwrap().mean_pairwise_cos.unwrap()
        };
        let wins = (0..20)
            .filter(|&s| final_cos("nexus_adamw", s) > final_cos("adamw", s))
            .count();
        assert!(wins >= 18, "{wins}/20");
    }

    #[test]
    fn zero_steps_leave_theta_alone() {
        let ts = random_set(2, 2, 11);
        let mut st = StrategyRegistry::default()
            .build("adamw", &NexusConfig::new(0.1, 2))
            .unwrap();
        let mut stream = BatchStream::full(Sampling::IidUniform, 2, RngStream::new(0));
        let theta = pv(&[0.3, 0.4]);
        let out = train(
            &ts,
            &theta,
            &mut st,
            &mut stream,
            &settings(0, 1),
            None,
            &mut |_| Ok(()),
        )
        .unwrap();
        assert_eq!(out.final_theta, theta);
        assert!(out.rows.is_empty());
    }

    #[test]
    fn registry_knows_the_builtin_strategies() {
        let reg = StrategyRegistry::default();
        for name in [
            "adamw",
            "sgd",
            "nsgd_adamw",
            "nexus_adamw",
            "nexus_dot_adamw",
            "nexus_sgd",
        ] {
            assert_eq!(
                reg.build(name, &NexusConfig::new(0.1, 2)).unwrap().name,
                name
            );
        }
        assert!(reg.build("muon", &NexusConfig::new(0.1, 2)).is_err());
    }

    #[test]
    fn dot_variant_uses_raw_gradients() {
        let ts = random_set(2, 3, 12);
        let theta = pv(&[1.0, 2.0, 3.0]);
        let cfg = NexusConfig::new(0.01, 1).with_variant(Variant::Dot);
        let pg = inner_loop_with_sequence(&theta, &ts, &cfg, &[1], false).unwrap();
        assert_eq!(pg.value, ts.task(1).grad(&theta).unwrap().scaled(0.01));
    }
}
