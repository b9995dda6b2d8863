//! Analytic task families, task sets and the sampling model for quadratic
//! basins.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::autodiff_net::MlpTask;
use crate::error::{Error, Result};
use crate::numerics::{ParameterVector, RngStream};

/// A differentiable loss with first- and second-order access.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &ParameterVector) -> Result<f64>;
    fn grad(&self, theta: &ParameterVector) -> Result<ParameterVector>;
    fn hvp(&self, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector>;

    /// Dense Hessian, when the task has a closed form for it.
    fn hessian(&self, _theta: &ParameterVector) -> Option<DMatrix<f64>> {
        None
    }

    /// `∇³L(θ)[u, v, ·]`, when the task exposes its third derivative.
    fn third_contract(
        &self,
        _theta: &ParameterVector,
        _u: &ParameterVector,
        _v: &ParameterVector,
    ) -> Option<ParameterVector> {
        None
    }

    /// Analytic local minimizer, if known.
    fn minimizer(&self) -> Option<&ParameterVector> {
        None
    }
}

fn symmetric_check(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotPositiveDefinite("matrix is not square".into()));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::NotPositiveDefinite(format!(
                    "asymmetric at ({i},{j}): {a} vs {b}"
                )));
            }
        }
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFiniteValue("hessian"));
    }
    Ok(())
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let lo = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Spectral norm of a symmetric matrix.
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(m);
    lo.abs().max(hi.abs())
}

/// Random symmetric positive definite matrix whose spectrum spans exactly
/// `[lambda_min, lambda_max]`.
pub fn random_spd(
    dim: usize,
    lambda_min: f64,
    lambda_max: f64,
    rng: &mut RngStream,
) -> DMatrix<f64> {
    assert!(lambda_min > 0.0 && lambda_max >= lambda_min);
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
    let q = g.qr().q();
    let mut eigs: Vec<f64> = (0..dim)
        .map(|_| lambda_min + (lambda_max - lambda_min) * rng.uniform())
        .collect();
    eigs[0] = lambda_min;
    if dim > 1 {
        eigs[dim - 1] = lambda_max;
    }
    let d = DMatrix::from_diagonal(&DVector::from_vec(eigs));
    let m = &q * d * q.transpose();
    // exact symmetry
    DMatrix::from_fn(dim, dim, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// `L(θ) = ½(θ−θ*)ᵀA(θ−θ*) + c` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticWire", into = "QuadraticWire")]
pub struct QuadraticTask {
    hessian: DMatrix<f64>,
    minimizer: ParameterVector,
    offset: f64,
}

impl QuadraticTask {
    pub fn new(hessian: DMatrix<f64>, minimizer: ParameterVector, offset: f64) -> Result<Self> {
        symmetric_check(&hessian)?;
        minimizer.check_dim(hessian.nrows())?;
        minimizer.check_finite("minimizer")?;
        let (lo, _) = eigen_range(&hessian);
        if !(lo > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {lo}"
            )));
        }
        Ok(Self {
            hessian,
            minimizer,
            offset,
        })
    }

    /// `a/2 ||θ − θ*||² + c`
    pub fn isotropic(curvature: f64, minimizer: ParameterVector, offset: f64) -> Result<Self> {
        let d = minimizer.dim();
        Self::new(DMatrix::identity(d, d) * curvature, minimizer, offset)
    }

    pub fn hessian_matrix(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn optimum(&self) -> &ParameterVector {
        &self.minimizer
    }

    /// Extreme eigenvalues of the Hessian.
    pub fn curvature_range(&self) -> (f64, f64) {
        eigen_range(&self.hessian)
    }

    fn apply(&self, v: &ParameterVector) -> ParameterVector {
        ParameterVector::from_dvector(&(&self.hessian * v.to_dvector()))
    }

    /// Scales the whole loss (Hessian and offset) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            hessian: &self.hessian * factor,
            minimizer: self.minimizer.clone(),
            offset: self.offset * factor,
        }
    }
}

impl Objective for QuadraticTask {
    fn dim(&self) -> usize {
        self.minimizer.dim()
    }

    fn loss(&self, theta: &ParameterVector) -> Result<f64> {
        theta.check_dim(self.dim())?;
        let delta = theta - &self.minimizer;
        Ok(0.5 * delta.dot(&self.apply(&delta)) + self.offset)
    }

    fn grad(&self, theta: &ParameterVector) -> Result<ParameterVector> {
        theta.check_dim(self.dim())?;
        Ok(self.apply(&(theta - &self.minimizer)))
    }

    fn hvp(&self, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector> {
        theta.check_dim(self.dim())?;
        v.check_dim(self.dim())?;
        Ok(self.apply(v))
    }

    fn hessian(&self, _theta: &ParameterVector) -> Option<DMatrix<f64>> {
        Some(self.hessian.clone())
    }

    fn third_contract(
        &self,
        _theta: &ParameterVector,
        _u: &ParameterVector,
        _v: &ParameterVector,
    ) -> Option<ParameterVector> {
        Some(ParameterVector::zeros(self.dim()))
    }

    fn minimizer(&self) -> Option<&ParameterVector> {
        Some(&self.minimizer)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticWire {
    dim: usize,
    /// row-major
    hessian: Vec<f64>,
    minimizer: ParameterVector,
    offset: f64,
}

impl From<QuadraticTask> for QuadraticWire {
    fn from(q: QuadraticTask) -> Self {
        let d = q.dim();
        let hessian = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| q.hessian[(i, j)])
            .collect();
        Self {
            dim: d,
            hessian,
            minimizer: q.minimizer,
            offset: q.offset,
        }
    }
}

impl TryFrom<QuadraticWire> for QuadraticTask {
    type Error = Error;
    fn try_from(w: QuadraticWire) -> Result<Self> {
        if w.hessian.len() != w.dim * w.dim {
            return Err(Error::DimensionMismatch {
                expected: w.dim * w.dim,
                found: w.hessian.len(),
            });
        }
        let m = DMatrix::from_row_slice(w.dim, w.dim, &w.hessian);
        QuadraticTask::new(m, w.minimizer, w.offset)
    }
}

/// Fully symmetric order-3 tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorWire", into = "TensorWire")]
pub struct SymmetricTensor {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricTensor {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// Symmetrizes an arbitrary `d×d×d` array (row-major, `i*d*d + j*d + k`).
    pub fn symmetrize(dim: usize, raw: &[f64]) -> Result<Self> {
        if raw.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                found: raw.len(),
            });
        }
        let at = |i: usize, j: usize, k: usize| raw[(i * dim + j) * dim + k];
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    t.data[(i * dim + j) * dim + k] = (at(i, j, k)
                        + at(i, k, j)
                        + at(j, i, k)
                        + at(j, k, i)
                        + at(k, i, j)
                        + at(k, j, i))
                        / 6.0;
                }
            }
        }
        Ok(t)
    }

    /// Random symmetric tensor scaled to Frobenius norm `bound`, which
    /// dominates `|T[u,v,w]|` over unit vectors.
    pub fn random(dim: usize, bound: f64, rng: &mut RngStream) -> Self {
        let raw: Vec<f64> = (0..dim * dim * dim).map(|_| rng.normal()).collect();
        let mut t = Self::symmetrize(dim, &raw).expect("sized");
        let f = t.frobenius_norm();
        if f > 0.0 {
            for x in &mut t.data {
                *x *= bound / f;
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    /// `T[u, v, ·]`
    pub fn contract2(&self, u: &ParameterVector, v: &ParameterVector) -> ParameterVector {
        let d = self.dim;
        let mut out = ParameterVector::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let w = u[i] * v[j];
                if w == 0.0 {
                    continue;
                }
                let base = (i * d + j) * d;
                for k in 0..d {
                    out[k] += w * self.data[base + k];
                }
            }
        }
        out
    }

    /// `T[u, u, u]`
    pub fn contract3(&self, u: &ParameterVector, v: &ParameterVector, w: &ParameterVector) -> f64 {
        self.contract2(u, v).dot(w)
    }

    /// `T[u, ·, ·]` as a symmetric matrix.
    pub fn contract1(&self, u: &ParameterVector) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |j, k| (0..d).map(|i| u[i] * self.get(i, j, k)).sum())
    }
}

/// Canonical form: entries with `i ≤ j ≤ k`, lexicographic order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorWire {
    dim: usize,
    unique: Vec<f64>,
}

impl From<SymmetricTensor> for TensorWire {
    fn from(t: SymmetricTensor) -> Self {
        let d = t.dim;
        let mut unique = Vec::new();
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    unique.push(t.get(i, j, k));
                }
            }
        }
        Self { dim: d, unique }
    }
}

impl TryFrom<TensorWire> for SymmetricTensor {
    type Error = Error;
    fn try_from(w: TensorWire) -> Result<Self> {
        let d = w.dim;
        let expected = d * (d + 1) * (d + 2) / 6;
        if w.unique.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: w.unique.len(),
            });
        }
        let mut t = SymmetricTensor::zeros(d);
        let mut it = w.unique.into_iter();
        for i in 0..d {
            for j in i..d {
                for k in j..d {
                    let x = it.next().expect("counted");
                    for (a, b, c) in [
                        (i, j, k),
                        (i, k, j),
                        (j, i, k),
                        (j, k, i),
                        (k, i, j),
                        (k, j, i),
                    ] {
                        t.data[(a * d + b) * d + c] = x;
                    }
                }
            }
        }
        Ok(t)
    }
}

/// Quadratic plus a symmetric cubic term: `L = q(θ) + (1/6)T[δ,δ,δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubicTask {
    pub quadratic: QuadraticTask,
    pub third_tensor: SymmetricTensor,
    /// Bound `M₃` on `|T[u,v,w]|` over unit vectors.
    pub third_bound: f64,
}

impl CubicTask {
    pub fn new(quadratic: QuadraticTask, third_tensor: SymmetricTensor) -> Result<Self> {
        if third_tensor.dim() != quadratic.dim() {
            return Err(Error::DimensionMismatch {
                expected: quadratic.dim(),
                found: third_tensor.dim(),
            });
        }
        let third_bound = third_tensor.frobenius_norm();
        Ok(Self {
            quadratic,
            third_tensor,
            third_bound,
        })
    }

    pub fn random(quadratic: QuadraticTask, third_bound: f64, rng: &mut RngStream) -> Self {
        let t = SymmetricTensor::random(quadratic.dim(), third_bound, rng);
        Self::new(quadratic, t).expect("dimensions agree")
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            quadratic: self.quadratic.scaled(factor),
            third_tensor: self.third_tensor.scaled(factor),
            third_bound: self.third_bound * factor.abs(),
        }
    }
}

impl Objective for CubicTask {
    fn dim(&self) -> usize {
        self.quadratic.dim()
    }

    fn loss(&self, theta: &ParameterVector) -> Result<f64> {
        let q = self.quadratic.loss(theta)?;
        let delta = theta - self.quadratic.optimum();
        Ok(q + self.third_tensor.contract3(&delta, &delta, &delta) / 6.0)
    }

    fn grad(&self, theta: &ParameterVector) -> Result<ParameterVector> {
        let mut g = self.quadratic.grad(theta)?;
        let delta = theta - self.quadratic.optimum();
        g.axpy(0.5, &self.third_tensor.contract2(&delta, &delta));
        Ok(g)
    }

    fn hvp(&self, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector> {
        let mut hv = self.quadratic.hvp(theta, v)?;
        let delta = theta - self.quadratic.optimum();
        hv.axpy(1.0, &self.third_tensor.contract2(&delta, v));
        Ok(hv)
    }

    fn hessian(&self, theta: &ParameterVector) -> Option<DMatrix<f64>> {
        let delta = theta - self.quadratic.optimum();
        Some(self.quadratic.hessian_matrix() + self.third_tensor.contract1(&delta))
    }

    fn third_contract(
        &self,
        _theta: &ParameterVector,
        u: &ParameterVector,
        v: &ParameterVector,
    ) -> Option<ParameterVector> {
        Some(self.third_tensor.contract2(u, v))
    }

    fn minimizer(&self) -> Option<&ParameterVector> {
        Some(self.quadratic.optimum())
    }
}

/// Any concrete task, serializable with a `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Quadratic(QuadraticTask),
    Cubic(CubicTask),
    Mlp(MlpTask),
}

impl Task {
    fn inner(&self) -> &dyn Objective {
        match self {
            Task::Quadratic(t) => t,
            Task::Cubic(t) => t,
            Task::Mlp(t) => t,
        }
    }

    /// The same task with its loss multiplied by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Task {
        match self {
            Task::Quadratic(q) => Task::Quadratic(q.scaled(factor)),
            Task::Cubic(c) => Task::Cubic(c.scaled(factor)),
            Task::Mlp(m) => Task::Mlp(m.scaled(factor)),
        }
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticTask> {
        match self {
            Task::Quadratic(q) => Some(q),
            _ => None,
        }
    }

    /// Bound on the third derivative (`0` for quadratics, `None` if unknown).
    pub fn third_bound(&self) -> Option<f64> {
        match self {
            Task::Quadratic(_) => Some(0.0),
            Task::Cubic(c) => Some(c.third_bound),
            Task::Mlp(_) => None,
        }
    }
}

impl Objective for Task {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn loss(&self, theta: &ParameterVector) -> Result<f64> {
        self.inner().loss(theta)
    }
    fn grad(&self, theta: &ParameterVector) -> Result<ParameterVector> {
        self.inner().grad(theta)
    }
    fn hvp(&self, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector> {
        self.inner().hvp(theta, v)
    }
    fn hessian(&self, theta: &ParameterVector) -> Option<DMatrix<f64>> {
        self.inner().hessian(theta)
    }
    fn third_contract(
        &self,
        theta: &ParameterVector,
        u: &ParameterVector,
        v: &ParameterVector,
    ) -> Option<ParameterVector> {
        self.inner().third_contract(theta, u, v)
    }
    fn minimizer(&self) -> Option<&ParameterVector> {
        self.inner().minimizer()
    }
}

impl From<QuadraticTask> for Task {
    fn from(t: QuadraticTask) -> Self {
        Task::Quadratic(t)
    }
}

impl From<CubicTask> for Task {
    fn from(t: CubicTask) -> Self {
        Task::Cubic(t)
    }
}

impl From<MlpTask> for Task {
    fn from(t: MlpTask) -> Self {
        Task::Mlp(t)
    }
}

/// `K` tasks whose average is the training objective.
///
/// Mixture weights are folded into the tasks at construction, so every
/// method here works with a plain average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskSetWire", into = "TaskSetWire")]
pub struct TaskSet {
    tasks: Vec<Task>,
    weights: Vec<f64>,
}

pub const TASKSET_FORMAT: &str = "nexus-taskset/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSetWire {
    format: String,
    dim: usize,
    /// Mixture weights, already folded into `tasks`.
    weights: Vec<f64>,
    tasks: Vec<Task>,
}

impl From<TaskSet> for TaskSetWire {
    fn from(ts: TaskSet) -> Self {
        Self {
            format: TASKSET_FORMAT.into(),
            dim: ts.dim(),
            weights: ts.weights,
            tasks: ts.tasks,
        }
    }
}

impl TryFrom<TaskSetWire> for TaskSet {
    type Error = Error;
    fn try_from(w: TaskSetWire) -> Result<Self> {
        if w.format != TASKSET_FORMAT {
            return Err(Error::InvalidArgument(format!(
                "unknown task-set format {:?}",
                w.format
            )));
        }
        let ts = TaskSet::validated(w.tasks, w.weights)?;
        if ts.dim() != w.dim {
            return Err(Error::DimensionMismatch {
                expected: w.dim,
                found: ts.dim(),
            });
        }
        Ok(ts)
    }
}

impl TaskSet {
    /// Unit weights.
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        let weights = vec![1.0; tasks.len()];
        Self::validated(tasks, weights)
    }

    /// Folds `weights[k]` into task `k`'s loss.
    pub fn weighted(tasks: Vec<Task>, weights: Vec<f64>) -> Result<Self> {
        if tasks.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: tasks.len(),
                found: weights.len(),
            });
        }
        check_weights(&weights)?;
        let tasks = tasks
            .iter()
            .zip(&weights)
            .map(|(t, &w)| t.scaled(w))
            .collect();
        Self::validated(tasks, weights)
    }

    fn validated(tasks: Vec<Task>, weights: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidArgument(
                "a task set needs at least one task".into(),
            ));
        }
        check_weights(&weights)?;
        let d = tasks[0].dim();
        for t in &tasks {
            if t.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: t.dim(),
                });
            }
        }
        Ok(Self { tasks, weights })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, k: usize) -> &Task {
        &self.tasks[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Every loss multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> TaskSet {
        TaskSet {
            tasks: self.tasks.iter().map(|t| t.scaled(factor)).collect(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    pub fn train_loss(&self, theta: &ParameterVector) -> Result<f64> {
        let mut acc = 0.0;
        for t in &self.tasks {
            acc += t.loss(theta)?;
        }
        Ok(acc / self.len() as f64)
    }

    pub fn train_grad(&self, theta: &ParameterVector) -> Result<ParameterVector> {
        let mut acc = ParameterVector::zeros(self.dim());
        for t in &self.tasks {
            acc.axpy(1.0, &t.grad(theta)?);
        }
        Ok(acc.scaled(1.0 / self.len() as f64))
    }

    pub fn per_task_grads(&self, theta: &ParameterVector) -> Result<Vec<ParameterVector>> {
        self.tasks.iter().map(|t| t.grad(theta)).collect()
    }

    pub fn quadratics(&self) -> Option<Vec<&QuadraticTask>> {
        self.tasks.iter().map(Task::as_quadratic).collect()
    }

    /// Minimizer of the average of quadratic tasks: solves
    /// `(Σ A_k) θ = Σ A_k θ*_k`.
    pub fn stationary_point(&self) -> Result<ParameterVector> {
        let quads = self.quadratics().ok_or_else(|| {
            Error::Unsupported("stationary_point requires quadratic tasks".into())
        })?;
        let d = self.dim();
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        for q in &quads {
            a += q.hessian_matrix();
            b += q.hessian_matrix() * q.optimum().to_dvector();
        }
        let chol = a.clone().cholesky().ok_or(Error::SingularSystem)?;
        let mut x = chol.solve(&b);
        // one round of iterative refinement
        let r = &b - &a * &x;
        x += chol.solve(&r);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        Ok(ParameterVector::from_dvector(&x))
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "weights must be finite and non-negative: {weights:?}"
        )));
    }
    Ok(())
}

/// Distribution over isotropic quadratic tasks sharing one basin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamily {
    pub basin_mean: ParameterVector,
    /// `E||θ* − μ||²`
    pub variance: f64,
    pub curvature: f64,
    pub depth: f64,
}

impl TaskFamily {
    pub fn new(
        basin_mean: ParameterVector,
        variance: f64,
        curvature: f64,
        depth: f64,
    ) -> Result<Self> {
        if !(variance >= 0.0) || !(curvature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need variance ≥ 0 and curvature > 0, got {variance}, {curvature}"
            )));
        }
        Ok(Self {
            basin_mean,
            variance,
            curvature,
            depth,
        })
    }

    pub fn dim(&self) -> usize {
        self.basin_mean.dim()
    }

    /// Draws one minimizer: Gaussian with per-coordinate variance `σ²/d`.
    pub fn sample_minimizer(&self, rng: &mut RngStream) -> ParameterVector {
        let std = (self.variance / self.dim() as f64).sqrt();
        let mut theta = self.basin_mean.clone();
        if std > 0.0 {
            theta.axpy(1.0, &rng.normal_vector(self.dim(), std));
        }
        theta
    }

    pub fn sample_task(&self, rng: &mut RngStream) -> QuadraticTask {
        QuadraticTask::isotropic(self.curvature, self.sample_minimizer(rng), self.depth)
            .expect("curvature validated positive")
    }

    /// `K` i.i.d. tasks from the family.
    pub fn sample(&self, k: usize, rng: &mut RngStream) -> Result<TaskSet> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be ≥ 1".into()));
        }
        TaskSet::new(
            (0..k)
                .map(|_| Task::Quadratic(self.sample_task(rng)))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_gradient, fd_hvp, mean_and_se};

    fn pv(x: &[f64]) -> ParameterVector {
        ParameterVector::from_slice(x)
    }

    #[test]
    fn quadratic_identity_example() {
        let q = QuadraticTask::isotropic(1.0, pv(&[0.0, 0.0]), 1.0).unwrap();
        let theta = pv(&[2.0, 0.0]);
        assert_eq!(q.loss(&theta).unwrap(), 3.0);
        assert_eq!(q.grad(&theta).unwrap(), pv(&[2.0, 0.0]));
        assert_eq!(q.hvp(&theta, &pv(&[0.0, 1.0])).unwrap(), pv(&[0.0, 1.0]));
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            QuadraticTask::new(m, pv(&[0.0, 0.0]), 0.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        let q = QuadraticTask::isotropic(1.0, pv(&[0.0, 0.0]), 0.0).unwrap();
        assert_eq!(
            q.loss(&pv(&[1.0])).unwrap_err(),
            Error::DimensionMismatch {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn cubic_one_dimensional_example() {
        let q = QuadraticTask::isotropic(1.0, pv(&[0.0]), 0.0).unwrap();
        let t = SymmetricTensor::symmetrize(1, &[6.0]).unwrap();
        let c = CubicTask::new(q, t).unwrap();
        let theta = pv(&[2.0]);
        assert!((c.loss(&theta).unwrap() - 10.0).abs() < 1e-12);
        assert!((c.grad(&theta).unwrap()[0] - 14.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_with_zero_tensor_is_its_quadratic() {
        let mut rng = RngStream::new(5);
        let a = random_spd(3, 0.5, 2.0, &mut rng);
        let q = QuadraticTask::new(a, rng.normal_vector(3, 1.0), 0.3).unwrap();
        let c = CubicTask::new(q.clone(), SymmetricTensor::zeros(3)).unwrap();
        for _ in 0..10 {
            let theta = rng.normal_vector(3, 2.0);
            let v = rng.normal_vector(3, 1.0);
            assert_eq!(c.loss(&theta).unwrap(), q.loss(&theta).unwrap());
            assert_eq!(c.grad(&theta).unwrap(), q.grad(&theta).unwrap());
            assert_eq!(c.hvp(&theta, &v).unwrap(), q.hvp(&theta, &v).unwrap());
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = RngStream::new(17);
        for trial in 0..50 {
            let d = 2 + trial % 4;
            let a = random_spd(d, 0.3, 3.0, &mut rng);
            let q = QuadraticTask::new(a, rng.normal_vector(d, 1.0), 0.1).unwrap();
            let task: Task = if trial % 2 == 0 {
                q.into()
            } else {
                CubicTask::random(q, 0.8, &mut rng).into()
            };
            let theta = rng.normal_vector(d, 1.0);
            let v = rng.normal_vector(d, 1.0);
            let g = task.grad(&theta).unwrap();
            let g_fd = fd_gradient(|t| task.loss(t), &theta, 1e-5).unwrap();
            assert!(
                (&g - &g_fd).norm() <= 1e-7 * g.norm().max(1.0),
                "grad trial {trial}"
            );
            let hv = task.hvp(&theta, &v).unwrap();
            let hv_fd = fd_hvp(|t| task.grad(t), &theta, &v, 1e-5).unwrap();
            assert!(
                (&hv - &hv_fd).norm() <= 1e-6 * hv.norm().max(1.0),
                "hvp trial {trial}"
            );
        }
    }

    #[test]
    fn tensor_bound_dominates_unit_contractions() {
        let mut rng = RngStream::new(23);
        let t = SymmetricTensor::random(4, 0.7, &mut rng);
        assert!((t.frobenius_norm() - 0.7).abs() < 1e-12);
        for _ in 0..200 {
            let (u, v, w) = (rng.unit_vector(4), rng.unit_vector(4), rng.unit_vector(4));
            assert!(t.contract3(&u, &v, &w).abs() <= 0.7);
            // full permutation symmetry
            assert!((t.contract3(&u, &v, &w) - t.contract3(&w, &u, &v)).abs() < 1e-14);
        }
    }

    #[test]
    fn two_identical_tasks_average_to_one() {
        let q = QuadraticTask::isotropic(2.0, pv(&[1.0, -1.0]), 0.5).unwrap();
        let ts = TaskSet::new(vec![q.clone().into(), q.clone().into()]).unwrap();
        let theta = pv(&[0.3, 0.9]);
        assert_eq!(ts.train_loss(&theta).unwrap(), q.loss(&theta).unwrap());
    }

    #[test]
    fn symmetric_pair_train_loss() {
        let ts = TaskSet::new(vec![
            QuadraticTask::isotropic(1.0, pv(&[1.0, 0.0]), 0.0)
                .unwrap()
                .into(),
            QuadraticTask::isotropic(1.0, pv(&[-1.0, 0.0]), 0.0)
                .unwrap()
                .into(),
        ])
        .unwrap();
        let theta = pv(&[0.0, 0.0]);
        assert!((ts.train_loss(&theta).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ts.train_grad(&theta).unwrap(), pv(&[0.0, 0.0]));
        let fd = fd_gradient(|t| ts.train_loss(t), &theta, 1e-5).unwrap();
        assert!(fd.norm() < 1e-10);
        assert_eq!(ts.stationary_point().unwrap(), pv(&[0.0, 0.0]));
    }

    #[test]
    fn anisotropic_stationary_point() {
        let ts = TaskSet::new(vec![
            QuadraticTask::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
                pv(&[0.0, 0.0]),
                0.0,
            )
            .unwrap()
            .into(),
            QuadraticTask::new(
                DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]),
                pv(&[4.0, 0.0]),
                0.0,
            )
            .unwrap()
            .into(),
        ])
        .unwrap();
        let theta = ts.stationary_point().unwrap();
        assert!(theta.distance(&pv(&[3.0, 0.0])) < 1e-14);
    }

    #[test]
    fn random_stationary_points_are_stationary_minima() {
        let mut rng = RngStream::new(99);
        for trial in 0..100 {
            let d = 2 + trial % 5;
            let k = 2 + trial % 4;
            let tasks = (0..k)
                .map(|_| {
                    let a = random_spd(d, 0.2, 5.0, &mut rng);
                    QuadraticTask::new(a, rng.normal_vector(d, 1.0), rng.uniform())
                        .unwrap()
                        .into()
                })
                .collect();
            let ts = TaskSet::new(tasks).unwrap();
            let star = ts.stationary_point().unwrap();
            assert!(ts.train_grad(&star).unwrap().norm() <= 1e-10);
            let base = ts.train_loss(&star).unwrap();
            let probe = &star + &rng.unit_vector(d).scaled(rng.uniform());
            assert!(ts.train_loss(&probe).unwrap() >= base);
        }
    }

    #[test]
    fn weights_fold_into_losses() {
        let q = QuadraticTask::isotropic(1.0, pv(&[1.0]), 2.0).unwrap();
        let ts =
            TaskSet::weighted(vec![q.clone().into(), q.clone().into()], vec![0.5, 1.5]).unwrap();
        let theta = pv(&[3.0]);
        let expected = 0.5 * (0.5 * q.loss(&theta).unwrap() + 1.5 * q.loss(&theta).unwrap());
        assert!((ts.train_loss(&theta).unwrap() - expected).abs() < 1e-14);
        assert!(TaskSet::weighted(vec![q.into()], vec![-1.0]).is_err());
    }

    #[test]
    fn zero_variance_family_collapses() {
        let fam = TaskFamily::new(pv(&[1.0, 2.0, 3.0]), 0.0, 2.0, 0.1).unwrap();
        let ts = fam.sample(5, &mut RngStream::new(1)).unwrap();
        for t in ts.tasks() {
            assert_eq!(t.minimizer().unwrap(), &fam.basin_mean);
        }
    }

    #[test]
    fn family_variance_matches_monte_carlo() {
        let fam = TaskFamily::new(ParameterVector::zeros(4), 0.5, 1.0, 0.0).unwrap();
        let mut rng = RngStream::new(2024);
        let ts = fam.sample(10_000, &mut rng).unwrap();
        let sq: Vec<f64> = ts
            .tasks()
            .iter()
            .map(|t| t.minimizer().unwrap().distance(&fam.basin_mean).powi(2))
            .collect();
        let (mean, se) = mean_and_se(&sq);
        assert!((mean - 0.5).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn family_sampling_is_seeded() {
        let fam = TaskFamily::new(ParameterVector::zeros(3), 1.0, 1.0, 0.0).unwrap();
        let a = fam.sample(4, &mut RngStream::new(8)).unwrap();
        let b = fam.sample(4, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn task_set_json_round_trip() {
        let mut rng = RngStream::new(4);
        let q = QuadraticTask::new(
            random_spd(3, 0.5, 2.0, &mut rng),
            rng.normal_vector(3, 1.0),
            0.2,
        )
        .unwrap();
        let c = CubicTask::random(q.clone(), 0.3, &mut rng);
        let ts = TaskSet::new(vec![q.into(), c.into()]).unwrap();
        let json = serde_json::to_string(&ts).unwrap();
        let back: TaskSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.dim(), 3);
        let theta = rng.normal_vector(3, 1.0);
        for (a, b) in ts.tasks().iter().zip(back.tasks()) {
            assert!((a.loss(&theta).unwrap() - b.loss(&theta).unwrap()).abs() < 1e-14);
        }
        // canonical tensor storage keeps only i ≤ j ≤ k
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            v["tasks"][1]["third_tensor"]["unique"]
                .as_array()
                .unwrap()
                .len(),
            10
        );
        assert_eq!(v["format"], TASKSET_FORMAT);
    }
}
