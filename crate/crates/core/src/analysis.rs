//! Gradient similarity, parameter closeness, minimizer location and the
//! flatness/closeness expansion of the downstream loss.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParameterVector;
use crate::optimizers::{AdamWHyper, AdamWState, DEFAULT_GRAD_FLOOR};
use crate::tasks::{spectral_norm_sym, Objective, Task, TaskSet};

/// Points sampled per segment when curvature has no closed form.
pub const SEGMENT_SAMPLES: usize = 32;

/// `S_ij = CosSim(∇L_i, ∇L_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Mean over `i ≠ j`; `None` for a single task.
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let k = self.len();
        if k < 2 {
            return None;
        }
        let mut s = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    s += self.values[i][j];
                }
            }
        }
        Some(s / (k * (k - 1)) as f64)
    }
}

/// Cosine similarity matrix of the given gradients.
pub fn similarity_of(grads: &[ParameterVector], floor: f64) -> Result<SimilarityMatrix> {
    let k = grads.len();
    let norms: Vec<f64> = grads.iter().map(ParameterVector::norm).collect();
    if let Some((i, &n)) = norms
        .iter()
        .enumerate()
        .find(|(_, &n)| !(n >= floor) || n == 0.0)
    {
        return Err(Error::DegenerateGradient {
            task: Some(i),
            norm: n,
            floor,
        });
    }
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in 0..i {
            let c = (grads[i].dot(&grads[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(SimilarityMatrix { values })
}

pub fn cosine_matrix(ts: &TaskSet, theta: &ParameterVector) -> Result<SimilarityMatrix> {
    similarity_of(&ts.per_task_grads(theta)?, DEFAULT_GRAD_FLOOR)
}

/// Mean off-diagonal cosine, or `None` when fewer than two gradients are
/// non-degenerate.
pub fn mean_pairwise_cosine(grads: &[ParameterVector]) -> Option<f64> {
    similarity_of(grads, DEFAULT_GRAD_FLOOR)
        .ok()?
        .mean_off_diagonal()
}

/// Range `(min, max)` of the directional curvature `uᵀ∇²L(ξ)u`, `u = (b − a)/||b − a||`,
/// over the segment from `a` to `b`.
///
/// Exact for quadratics (constant) and cubics (linear in the position, so the
/// endpoints bound it); sampled at [`SEGMENT_SAMPLES`] points otherwise.
pub fn directional_curvature_range(
    task: &Task,
    a: &ParameterVector,
    b: &ParameterVector,
) -> Result<(f64, f64)> {
    let delta = b - a;
    let len = delta.norm();
    if len == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let u = delta.scaled(1.0 / len);
    let ts: Vec<f64> = match task {
        Task::Quadratic(_) => vec![0.0],
        Task::Cubic(_) => vec![0.0, 1.0],
        Task::Mlp(_) => (0..SEGMENT_SAMPLES)
            .map(|i| i as f64 / (SEGMENT_SAMPLES - 1) as f64)
            .collect(),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for t in ts {
        let mut xi = a.clone();
        xi.axpy(t, &delta);
        let c = u.dot(&task.hvp(&xi, &u)?);
        lo = lo.min(c);
        hi = hi.max(c);
    }
    Ok((lo, hi))
}

/// Largest Hessian spectral norm over the segment, for tasks with a dense
/// Hessian.
pub fn spectral_flatness(task: &Task, a: &ParameterVector, b: &ParameterVector) -> Option<f64> {
    let samples = match task {
        Task::Quadratic(_) => 1,
        _ => SEGMENT_SAMPLES,
    };
    let delta = b - a;
    let mut best: Option<f64> = None;
    for i in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            i as f64 / (samples - 1) as f64
        };
        let mut xi = a.clone();
        xi.axpy(t, &delta);
        let h: DMatrix<f64> = task.hessian(&xi)?;
        let n = spectral_norm_sym(&h);
        best = Some(best.map_or(n, |b: f64| b.max(n)));
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub per_task_distance: Vec<f64>,
    pub mean_sq: f64,
    /// Smallest directional curvature along the segments to each minimizer;
    /// `None` when θ coincides with a minimizer.
    pub curvature_floor: Option<f64>,
}

/// `(1/K) Σ ||θ − θ*_k||²`. Minimizers come from `located` when given, else
/// from each task's analytic minimizer.
pub fn closeness(
    theta: &ParameterVector,
    ts: &TaskSet,
    located: Option<&[ParameterVector]>,
) -> Result<ClosenessReport> {
    let mut dist = Vec::with_capacity(ts.len());
    let mut floor: Option<f64> = None;
    for (k, task) in ts.tasks().iter().enumerate() {
        let star = match located.and_then(|l| l.get(k)) {
            Some(s) => s,
            None => task.minimizer().ok_or(Error::MissingMinimizer(k))?,
        };
        star.check_dim(theta.dim())?;
        let d = theta.distance(star);
        dist.push(d);
        if d > 0.0 {
            let (lo, _) = directional_curvature_range(task, star, theta)?;
            floor = Some(floor.map_or(lo, |f: f64| f.min(lo)));
        }
    }
    let mean_sq = dist.iter().map(|d| d * d).sum::<f64>() / dist.len() as f64;
    Ok(ClosenessReport {
        per_task_distance: dist,
        mean_sq,
        curvature_floor: floor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizerSearch {
    pub tol: f64,
    /// Full-batch AdamW steps before switching to line-search descent.
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub max_steps: usize,
}

impl Default for MinimizerSearch {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            adam_steps: 500,
            adam_lr: 2e-5,
            max_steps: 100_000,
        }
    }
}

/// Descends from `init` until `||∇L|| ≤ tol`: full-batch AdamW (wd 0), then
/// gradient descent with Armijo backtracking to reach tight tolerances.
pub fn locate_task_minimizer(
    task: &Task,
    init: &ParameterVector,
    search: &MinimizerSearch,
) -> Result<ParameterVector> {
    let mut theta = init.clone();
    let mut g = task.grad(&theta)?;
    if g.norm() <= search.tol {
        return Ok(theta);
    }
    let mut adam = AdamWState::new(theta.dim(), AdamWHyper::default());
    let mut steps = 0;
    while steps < search.adam_steps.min(search.max_steps) {
        adam.apply(&mut theta, &g, search.adam_lr)?;
        g = task.grad(&theta)?;
        steps += 1;
        if g.norm() <= search.tol {
            return Ok(theta);
        }
    }
    let mut loss = task.loss(&theta)?;
    let mut step = 1.0;
    while steps < search.max_steps {
        let gn2 = g.norm_sq();
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta - &g.scaled(step);
            let cl = task.loss(&cand)?;
            if cl <= loss - 0.5 * step * gn2 {
                theta = cand;
                loss = cl;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        g = task.grad(&theta)?;
        steps += 1;
        if g.norm() <= search.tol {
            return Ok(theta);
        }
        if !accepted {
            break;
        }
        step *= 2.0;
    }
    Err(Error::NotConverged {
        steps,
        grad_norm: g.norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Downstream loss decrease after one full-batch GD step on the training
/// objective, against its first-order prediction.
pub fn first_order_transfer(
    theta: &ParameterVector,
    ts: &TaskSet,
    downstream: &Task,
    gamma: f64,
) -> Result<TransferCheck> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma {gamma}")));
    }
    let g = ts.train_grad(theta)?;
    let next = theta - &g.scaled(gamma);
    let lhs = downstream.loss(theta)? - downstream.loss(&next)?;
    let rhs = gamma * g.dot(&downstream.grad(theta)?);
    Ok(TransferCheck {
        lhs,
        rhs,
        residual: lhs - rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatnessClosenessBound {
    pub downstream_min_loss: f64,
    pub closeness_term: f64,
    /// Largest directional curvature along the segment.
    pub flatness_term: f64,
    /// Largest Hessian spectral norm along the segment, when available.
    pub spectral_flatness: Option<f64>,
    pub bound: f64,
    pub downstream_loss: f64,
}

/// `L_T(θ*_T) + ½ ||θ − θ*_T||² · max_ξ uᵀ∇²L_T(ξ)u` over the segment.
pub fn flatness_closeness_bound(
    theta_train: &ParameterVector,
    downstream: &Task,
    minimizer: Option<&ParameterVector>,
) -> Result<FlatnessClosenessBound> {
    let star = match minimizer {
        Some(m) => m,
        None => downstream.minimizer().ok_or(Error::MissingMinimizer(0))?,
    };
    let min_loss = downstream.loss(star)?;
    let closeness = theta_train.distance(star).powi(2);
    let spectral = spectral_flatness(downstream, star, theta_train);
    let flatness = if closeness > 0.0 {
        directional_curvature_range(downstream, star, theta_train)?.1
    } else {
        spectral.unwrap_or(0.0)
    };
    Ok(FlatnessClosenessBound {
        downstream_min_loss: min_loss,
        closeness_term: closeness,
        flatness_term: flatness,
        spectral_flatness: spectral,
        bound: min_loss + 0.5 * closeness * flatness,
        downstream_loss: downstream.loss(theta_train)?,
    })
}
