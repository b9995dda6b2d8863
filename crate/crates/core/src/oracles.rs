//! Closed-form ground truth for the expansions and bounds: exact expected
//! pseudo-gradients, similarity gradients, Taylor coefficients, error bounds,
//! generalization gaps and contraction factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::directional_curvature_range;
use crate::error::{Error, Result};
use crate::nexus::{draw_sequence, inner_loop_with_sequence, NexusConfig, PseudoGradient, Variant};
use crate::numerics::{mean_and_se, ParameterVector, RngStream};
use crate::optimizers::{nsgd_step, sgd_step};
use crate::tasks::{eigen_range, spectral_norm_sym, Objective, Task, TaskSet};

/// Default cap on the number of enumerated index sequences.
pub const ENUMERATION_CAP: u128 = 256;

/// Region-dependent smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// `G_min`
    pub grad_lower: f64,
    /// `G`
    pub grad_upper: f64,
    /// `L`
    pub hessian_bound: f64,
    /// `ρ`
    pub hessian_lipschitz: f64,
    /// `M₃`
    pub third_bound: f64,
}

impl SmoothnessConstants {
    pub fn new(
        grad_lower: f64,
        grad_upper: f64,
        hessian_bound: f64,
        hessian_lipschitz: f64,
        third_bound: f64,
    ) -> Result<Self> {
        let c = Self {
            grad_lower,
            grad_upper,
            hessian_bound,
            hessian_lipschitz,
            third_bound,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_lower > 0.0
            && self.grad_lower <= self.grad_upper
            && self.hessian_bound >= 0.0
            && self.hessian_lipschitz >= 0.0
            && self.third_bound >= 0.0
            && [
                self.grad_upper,
                self.hessian_bound,
                self.hessian_lipschitz,
                self.third_bound,
            ]
            .iter()
            .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid smoothness constants {self:?}"
            )))
        }
    }

    /// Constants of a task set over a finite set of probe points. `L` is the
    /// largest Hessian spectral norm seen; `ρ` and `M₃` come from the tasks'
    /// third-derivative bounds (zero for quadratics).
    pub fn measure(ts: &TaskSet, points: &[ParameterVector]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "need at least one probe point".into(),
            ));
        }
        let (mut g_lo, mut g_hi, mut l) = (f64::INFINITY, 0.0f64, 0.0f64);
        for p in points {
            for t in ts.tasks() {
                let n = t.grad(p)?.norm();
                g_lo = g_lo.min(n);
                g_hi = g_hi.max(n);
                let h = t.hessian(p).ok_or_else(|| {
                    Error::Unsupported("smoothness constants need dense Hessians".into())
                })?;
                l = l.max(spectral_norm_sym(&h));
            }
        }
        let mut m3 = 0.0f64;
        for t in ts.tasks() {
            let b = t.third_bound().ok_or_else(|| {
                Error::Unsupported("smoothness constants need a third-derivative bound".into())
            })?;
            m3 = m3.max(b);
        }
        if !(g_lo > 0.0) {
            return Err(Error::DegenerateGradient {
                task: None,
                norm: g_lo,
                floor: 0.0,
            });
        }
        Self::new(g_lo, g_hi, l, m3, m3)
    }
}

/// `λ_min ≤ uᵀ∇²L(ξ)u ≤ λ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

impl CurvatureBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0) || !(lambda_max >= lambda_min) || !lambda_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need 0 < λ_min ≤ λ_max, got {lambda_min}, {lambda_max}"
            )));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
            kappa: lambda_max / lambda_min,
        })
    }
}

fn unit_gradient(
    task: &Task,
    theta: &ParameterVector,
    floor: f64,
    idx: Option<usize>,
) -> Result<(ParameterVector, f64)> {
    let g = task.grad(theta)?;
    let norm = g.norm();
    if !(norm >= floor) || norm == 0.0 {
        return Err(Error::DegenerateGradient {
            task: idx,
            norm,
            floor,
        });
    }
    Ok((g, norm))
}

/// HVP that treats an exactly zero direction as giving zero.
fn hvp0(task: &Task, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector> {
    if v.norm() == 0.0 {
        Ok(ParameterVector::zeros(v.dim()))
    } else {
        task.hvp(theta, v)
    }
}

/// `v − (nᵀv) n`
fn project_out(n: &ParameterVector, v: &ParameterVector) -> ParameterVector {
    let mut out = v.clone();
    out.axpy(-n.dot(v), n);
    out
}

/// `CosSim(∇L_i, ∇L_j)` at θ.
pub fn cos_sim(ti: &Task, tj: &Task, theta: &ParameterVector, floor: f64) -> Result<f64> {
    let (gi, ni) = unit_gradient(ti, theta, floor, Some(0))?;
    let (gj, nj) = unit_gradient(tj, theta, floor, Some(1))?;
    Ok(gi.dot(&gj) / (ni * nj))
}

/// Exact gradient of `CosSim(∇L_i, ∇L_j)`:
/// `(H_i Π_i g_j + H_j Π_j g_i) / (||g_i|| ||g_j||)` with `Π = I − n nᵀ`.
pub fn cosgrad_analytic(
    ti: &Task,
    tj: &Task,
    theta: &ParameterVector,
    floor: f64,
) -> Result<ParameterVector> {
    let (gi, ni) = unit_gradient(ti, theta, floor, Some(0))?;
    let (gj, nj) = unit_gradient(tj, theta, floor, Some(1))?;
    let ui = gi.scaled(1.0 / ni);
    let uj = gj.scaled(1.0 / nj);
    let mut out = hvp0(ti, theta, &project_out(&ui, &gj))?;
    out.axpy(1.0, &hvp0(tj, theta, &project_out(&uj, &gi))?);
    Ok(out.scaled(1.0 / (ni * nj)))
}

/// `J v` where `J = ∂(g/||g||)/∂θ = Π H / ||g||`.
pub fn normalized_jacobian_apply(
    task: &Task,
    theta: &ParameterVector,
    v: &ParameterVector,
    floor: f64,
) -> Result<ParameterVector> {
    let (g, n) = unit_gradient(task, theta, floor, None)?;
    let u = g.scaled(1.0 / n);
    Ok(project_out(&u, &hvp0(task, theta, v)?).scaled(1.0 / n))
}

/// The vector field followed by the inner loop (`g/||g||` or `g`) with its
/// first and second directional derivatives.
struct Field<'a> {
    ts: &'a TaskSet,
    theta: &'a ParameterVector,
    variant: Variant,
    grads: Vec<ParameterVector>,
    norms: Vec<f64>,
}

impl<'a> Field<'a> {
    fn new(ts: &'a TaskSet, theta: &'a ParameterVector, cfg: &NexusConfig) -> Result<Self> {
        let mut grads = Vec::with_capacity(ts.len());
        let mut norms = Vec::with_capacity(ts.len());
        for (k, t) in ts.tasks().iter().enumerate() {
            let g = t.grad(theta)?;
            let n = g.norm();
            if cfg.variant == Variant::Cosine && (!(n >= cfg.grad_floor) || n == 0.0) {
                return Err(Error::DegenerateGradient {
                    task: Some(k),
                    norm: n,
                    floor: cfg.grad_floor,
                });
            }
            grads.push(g);
            norms.push(n);
        }
        Ok(Self {
            ts,
            theta,
            variant: cfg.variant,
            grads,
            norms,
        })
    }

    fn n(&self) -> usize {
        self.grads.len()
    }

    fn value(&self, i: usize) -> ParameterVector {
        match self.variant {
            Variant::Cosine => self.grads[i].scaled(1.0 / self.norms[i]),
            Variant::Dot => self.grads[i].clone(),
        }
    }

    fn mean_value(&self) -> ParameterVector {
        let mut acc = ParameterVector::zeros(self.theta.dim());
        for i in 0..self.n() {
            acc.axpy(1.0, &self.value(i));
        }
        acc.scaled(1.0 / self.n() as f64)
    }

    fn jac(&self, i: usize, v: &ParameterVector) -> Result<ParameterVector> {
        let hv = hvp0(self.ts.task(i), self.theta, v)?;
        Ok(match self.variant {
            Variant::Dot => hv,
            Variant::Cosine => {
                let u = self.value(i);
                project_out(&u, &hv).scaled(1.0 / self.norms[i])
            }
        })
    }

    fn mean_jac(&self, v: &ParameterVector) -> Result<ParameterVector> {
        let mut acc = ParameterVector::zeros(v.dim());
        for i in 0..self.n() {
            acc.axpy(1.0, &self.jac(i, v)?);
        }
        Ok(acc.scaled(1.0 / self.n() as f64))
    }

    /// `d²/dt² F_i(θ + t u)` at `t = 0`, restricted to `part`.
    fn second(&self, i: usize, u: &ParameterVector, part: Part) -> Result<ParameterVector> {
        let task = self.ts.task(i);
        let d = u.dim();
        let tuu = if part == Part::Curvature {
            ParameterVector::zeros(d)
        } else {
            task.third_contract(self.theta, u, u).ok_or_else(|| {
                Error::Unsupported("third-order terms need an analytic third derivative".into())
            })?
        };
        if self.variant == Variant::Dot {
            return Ok(tuu);
        }
        let g = &self.grads[i];
        let r = 1.0 / self.norms[i];
        // tensor part: r Π T[u,u]
        let mut out = tuu.scaled(r);
        out.axpy(-r.powi(3) * g.dot(&tuu), g);
        if part != Part::Tensor {
            let g1 = hvp0(task, self.theta, u)?;
            let gg1 = g.dot(&g1);
            out.axpy(-2.0 * r.powi(3) * gg1, &g1);
            out.axpy(3.0 * r.powi(5) * gg1 * gg1 - r.powi(3) * g1.norm_sq(), g);
        }
        Ok(out)
    }

    fn mean_second(&self, u: &ParameterVector, part: Part) -> Result<ParameterVector> {
        let mut acc = ParameterVector::zeros(u.dim());
        for j in 0..self.n() {
            acc.axpy(1.0, &self.second(j, u, part)?);
        }
        Ok(acc.scaled(1.0 / self.n() as f64))
    }
}

fn choose2(k: usize) -> f64 {
    (k * k.saturating_sub(1)) as f64 / 2.0
}

fn choose3(k: usize) -> f64 {
    (k * k.saturating_sub(1) * k.saturating_sub(2)) as f64 / 6.0
}

/// `(K−1)/(4K)`, the weight of the similarity term.
pub fn second_order_coefficient(k: usize) -> f64 {
    (k as f64 - 1.0) / (4.0 * k as f64)
}

/// `(K−1)(2K−1)/(12K²)`
pub fn third_order_coefficient(k: usize) -> f64 {
    let k = k as f64;
    (k - 1.0) * (2.0 * k - 1.0) / (12.0 * k * k)
}

/// First- and second-order Taylor coefficients `(a1, a2)` of `E[ĝ]` in γ
/// under uniform i.i.d. task sampling.
pub fn expansion_terms(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<(ParameterVector, ParameterVector)> {
    cfg.validate()?;
    let f = Field::new(ts, theta, cfg)?;
    let k = cfg.inner_steps;
    let fbar = f.mean_value();
    let a1 = fbar.scaled(k as f64);
    let a2 = f.mean_jac(&fbar)?.scaled(-choose2(k));
    Ok((a1, a2))
}

/// `γ a1 + γ² a2`: for the cosine variant with `n = K` tasks this is
/// `γ Σ_i n_i − γ² (K−1)/(4K) Σ_{i,j} (J_i n_j + J_j n_i)`.
/// The first-order part is the sum of unit gradients, the gradient of
/// `Σ_i ||∇L_i||`; reading it as `Σ_i ||L_i||` would not match the expansion.
pub fn second_order_direction(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<ParameterVector> {
    let (a1, a2) = expansion_terms(ts, theta, cfg)?;
    let g = cfg.gamma;
    let mut out = a1.scaled(g);
    out.axpy(g * g, &a2);
    Ok(out)
}

/// The similarity-gradient form `γ Σ_i n_i − γ² (K−1)/(4K) Σ_{i≠j} ∇CosSim_ij`
/// written with the exact gradient of the cosine.
pub fn similarity_form_direction(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<ParameterVector> {
    cfg.validate()?;
    let n = ts.len();
    let mut first = ParameterVector::zeros(theta.dim());
    for (k, t) in ts.tasks().iter().enumerate() {
        let (g, norm) = unit_gradient(t, theta, cfg.grad_floor, Some(k))?;
        first.axpy(1.0 / norm, &g);
    }
    let mut sim = ParameterVector::zeros(theta.dim());
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sim.axpy(
                    1.0,
                    &cosgrad_analytic(ts.task(i), ts.task(j), theta, cfg.grad_floor)?,
                );
            }
        }
    }
    let g = cfg.gamma;
    let mut out = first.scaled(g);
    out.axpy(-g * g * second_order_coefficient(cfg.inner_steps), &sim);
    Ok(out)
}

/// Which terms of the third-order coefficient to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// Everything.
    Full,
    /// Terms linear in the third-derivative tensor; zero for quadratics.
    Tensor,
    /// Terms built from gradients and Hessians alone.
    Curvature,
}

/// Third-order Taylor coefficient `a3` of `E[ĝ]` under i.i.d. sampling:
/// `C(K,3) J̄J̄F̄ + ½[C(K,2) (1/n)Σ_i D̄²[F_i,F_i] + K(K−1)(K−2)/3 · D̄²[F̄,F̄]]`.
pub fn third_order_term(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<ParameterVector> {
    third_order_term_part(ts, theta, cfg, Part::Full)
}

pub fn third_order_term_part(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
    part: Part,
) -> Result<ParameterVector> {
    cfg.validate()?;
    let f = Field::new(ts, theta, cfg)?;
    let k = cfg.inner_steps;
    let fbar = f.mean_value();
    let mut out = ParameterVector::zeros(theta.dim());
    if part != Part::Tensor {
        let jf = f.mean_jac(&fbar)?;
        out.axpy(choose3(k), &f.mean_jac(&jf)?);
    }
    let mut diag = ParameterVector::zeros(theta.dim());
    for i in 0..f.n() {
        diag.axpy(1.0 / f.n() as f64, &f.mean_second(&f.value(i), part)?);
    }
    out.axpy(0.5 * choose2(k), &diag);
    let kk = k as f64;
    out.axpy(
        0.5 * kk * (kk - 1.0) * (kk - 2.0) / 3.0,
        &f.mean_second(&fbar, part)?,
    );
    Ok(out)
}

/// `γ a1 + γ² a2 + γ³ a3`.
pub fn third_order_direction(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<ParameterVector> {
    let mut out = second_order_direction(ts, theta, cfg)?;
    out.axpy(cfg.gamma.powi(3), &third_order_term(ts, theta, cfg)?);
    Ok(out)
}

/// The locally-constant-direction sharpness term
/// `−(K−1)(2K−1)/(12K²) Σ_{i,j,p} ∇³L_j[n_i, n_p]`, without the γ³ factor.
pub fn sharpness_tensor_term(
    ts: &TaskSet,
    theta: &ParameterVector,
    k: usize,
    floor: f64,
) -> Result<ParameterVector> {
    let units = ts
        .tasks()
        .iter()
        .enumerate()
        .map(|(i, t)| unit_gradient(t, theta, floor, Some(i)).map(|(g, n)| g.scaled(1.0 / n)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ParameterVector::zeros(theta.dim());
    for t in ts.tasks() {
        for ni in &units {
            for np in &units {
                let c = t.third_contract(theta, ni, np).ok_or_else(|| {
                    Error::Unsupported("sharpness term needs an analytic third derivative".into())
                })?;
                out.axpy(1.0, &c);
            }
        }
    }
    Ok(out.scaled(-third_order_coefficient(k)))
}

fn sequence_count(n: usize, k: usize) -> u128 {
    (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX)
}

/// Every equally likely inner loop under i.i.d. sampling, in lexicographic
/// order of the index sequence, with recorded trajectories.
pub fn enumerate_pseudo_gradients(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
    cap: u128,
) -> Result<Vec<PseudoGradient>> {
    cfg.validate()?;
    let (n, k) = (ts.len(), cfg.inner_steps);
    let count = sequence_count(n, k);
    if count > cap {
        return Err(Error::EnumerationTooLarge {
            sequences: count,
            cap,
        });
    }
    (0..count as usize)
        .into_par_iter()
        .map(|mut code| {
            let mut seq = vec![0; k];
            for slot in seq.iter_mut().rev() {
                *slot = code % n;
                code /= n;
            }
            inner_loop_with_sequence(theta, ts, cfg, &seq, true)
        })
        .collect()
}

/// Exact `E[ĝ]` by enumeration, summed in a fixed order.
pub fn expected_pseudo_gradient_exact(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<ParameterVector> {
    let all = enumerate_pseudo_gradients(ts, theta, cfg, ENUMERATION_CAP)?;
    Ok(mean_of(&all, theta.dim()))
}

fn mean_of(all: &[PseudoGradient], dim: usize) -> ParameterVector {
    let mut acc = ParameterVector::zeros(dim);
    for pg in all {
        acc.axpy(1.0, &pg.value);
    }
    acc.scaled(1.0 / all.len() as f64)
}

/// Exact expectation plus the smoothness constants measured over every
/// visited inner iterate.
pub fn exact_expectation_with_constants(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<(ParameterVector, SmoothnessConstants)> {
    let all = enumerate_pseudo_gradients(ts, theta, cfg, ENUMERATION_CAP)?;
    let mut points = vec![theta.clone()];
    for pg in &all {
        if let Some(tr) = &pg.inner_trajectory {
            points.extend(tr.iter().skip(1).cloned());
        }
    }
    let c = SmoothnessConstants::measure(ts, &points)?;
    Ok((mean_of(&all, theta.dim()), c))
}

/// Sample mean and per-coordinate standard error of ĝ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: ParameterVector,
    pub standard_error: ParameterVector,
    pub draws: usize,
}

pub fn expected_pseudo_gradient_mc(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
    draws: usize,
    rng: &mut RngStream,
) -> Result<MonteCarloEstimate> {
    if draws < 2 {
        return Err(Error::InvalidArgument("need at least two draws".into()));
    }
    let d = theta.dim();
    let mut samples = vec![Vec::with_capacity(draws); d];
    for _ in 0..draws {
        let seq = draw_sequence(cfg.sampling, ts.len(), cfg.inner_steps, rng);
        let pg = inner_loop_with_sequence(theta, ts, cfg, &seq, false)?;
        for (c, s) in samples.iter_mut().enumerate() {
            s.push(pg.value[c]);
        }
    }
    let (mean, se): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| mean_and_se(s)).unzip();
    Ok(MonteCarloEstimate {
        mean: ParameterVector::new(mean),
        standard_error: ParameterVector::new(se),
        draws,
    })
}

/// `(1/6)((4L² + ρG_min)/G_min²) K³ γ³`
pub fn second_order_error_bound(c: &SmoothnessConstants, k: usize, gamma: f64) -> f64 {
    let g = c.grad_lower;
    let l = c.hessian_bound;
    (4.0 * l * l + c.hessian_lipschitz * g) / (g * g) * (k as f64).powi(3) * gamma.powi(3) / 6.0
}

/// `(M₃/24 + M₃L/(8G_min)) K⁴γ⁴ + M₃L²/(40G_min²) K⁵γ⁵`
pub fn third_order_error_bound(c: &SmoothnessConstants, k: usize, gamma: f64) -> f64 {
    let (m3, l, g) = (c.third_bound, c.hessian_bound, c.grad_lower);
    let kg = k as f64 * gamma;
    (m3 / 24.0 + m3 * l / (8.0 * g)) * kg.powi(4) + m3 * l * l / (40.0 * g * g) * kg.powi(5)
}

/// `(L1, L2) = (L/G_min, (3L² + ρG_min)/G_min²)`
pub fn lipschitz_constants(c: &SmoothnessConstants) -> (f64, f64) {
    let g = c.grad_lower;
    let l = c.hessian_bound;
    (l / g, (3.0 * l * l + c.hessian_lipschitz * g) / (g * g))
}

/// The three quantities of the closeness chain at the stationary point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessChain {
    /// `(1/K) Σ ||θ − θ*_k||²`
    pub closeness: f64,
    /// `(1/(Kλ²)) Σ_{i≠j} (−g_iᵀg_j)`
    pub dot_term: f64,
    /// `(G²/(Kλ²)) Σ_{i≠j} (1 − CosSim_ij)`
    pub cosine_term: f64,
    pub lambda_min: f64,
    pub grad_upper: f64,
    pub first_slack: f64,
    pub second_slack: f64,
}

impl ClosenessChain {
    pub fn holds(&self, tol: f64) -> bool {
        self.first_slack >= -tol && self.second_slack >= -tol
    }
}

/// Evaluates the chain at the stationary point of a quadratic task set.
/// `λ_min` is the smallest directional curvature along the segments from each
/// minimizer to θ.
pub fn closeness_bound_check(ts: &TaskSet) -> Result<ClosenessChain> {
    let theta = ts.stationary_point()?;
    let gn = ts.train_grad(&theta)?.norm();
    if gn > 1e-9 {
        return Err(Error::NotStationary(gn));
    }
    let k = ts.len();
    let grads = ts.per_task_grads(&theta)?;
    let mut lambda = f64::INFINITY;
    let mut closeness = 0.0;
    for t in ts.tasks() {
        let star = t.minimizer().ok_or(Error::MissingMinimizer(0))?;
        let d = theta.distance(star);
        closeness += d * d;
        let lo = if d > 0.0 {
            directional_curvature_range(t, star, &theta)?.0
        } else {
            let h = t
                .hessian(&theta)
                .ok_or_else(|| Error::Unsupported("need a Hessian".into()))?;
            eigen_range(&h).0
        };
        lambda = lambda.min(lo);
    }
    closeness /= k as f64;
    let big_g = grads.iter().map(ParameterVector::norm).fold(0.0, f64::max);
    let (mut dots, mut cos) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            dots -= grads[i].dot(&grads[j]);
            let c = grads[i].cosine(&grads[j]).unwrap_or(1.0);
            cos += 1.0 - c;
        }
    }
    let scale = k as f64 * lambda * lambda;
    let dot_term = dots / scale;
    let cosine_term = big_g * big_g * cos / scale;
    Ok(ClosenessChain {
        closeness,
        dot_term,
        cosine_term,
        lambda_min: lambda,
        grad_upper: big_g,
        first_slack: dot_term - closeness,
        second_slack: cosine_term - dot_term,
    })
}

/// `(a/K) σ²`
pub fn quadratic_gap(a: f64, k: usize, sigma_sq: f64) -> f64 {
    a * sigma_sq / k as f64
}

/// `λ_max (κ² + 1) / (2K) σ²`
pub fn general_gap_bound(cb: &CurvatureBounds, k: usize, sigma_sq: f64) -> f64 {
    cb.lambda_max * (cb.kappa * cb.kappa + 1.0) / (2.0 * k as f64) * sigma_sq
}

/// Downstream gap `L_T(θ̄) − L_train(θ̄)` averaged over independent draws of
/// a training set and a downstream task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub draws: usize,
}

pub fn monte_carlo_gap<S, D>(
    draws: usize,
    rng: &mut RngStream,
    mut sample_train: S,
    mut sample_downstream: D,
) -> Result<GapEstimate>
where
    S: FnMut(&mut RngStream) -> Result<TaskSet>,
    D: FnMut(&mut RngStream) -> Result<Task>,
{
    let mut gaps = Vec::with_capacity(draws);
    for _ in 0..draws {
        let ts = sample_train(rng)?;
        let theta = ts.stationary_point()?;
        let down = sample_downstream(rng)?;
        gaps.push(down.loss(&theta)? - ts.train_loss(&theta)?);
    }
    let (mean, se) = mean_and_se(&gaps);
    Ok(GapEstimate {
        mean,
        standard_error: se,
        draws,
    })
}

/// Per-step squared-distance factor `1 − 2γμL/(L+μ)`.
pub fn convergence_contraction(mu: f64, l: f64, gamma: f64) -> Result<f64> {
    if !(mu > 0.0) || !(l >= mu) || !l.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need 0 < μ ≤ L, got {mu}, {l}"
        )));
    }
    let max = 2.0 / (l + mu);
    if !(gamma > 0.0) || gamma > max * (1.0 + 1e-12) {
        return Err(Error::StepSizeOutOfRange { gamma, max });
    }
    Ok((1.0 - 2.0 * gamma * mu * l / (l + mu)).max(0.0))
}

/// Runs `2·n_pairs` NSGD steps alongside `n_pairs` Nexus steps (K = 2,
/// same task order, outer SGD with lr 1) and returns the largest coordinate
/// gap between paired iterates.
pub fn nsgd_nexus_identity_check(
    theta0: &ParameterVector,
    ts: &TaskSet,
    gamma: f64,
    n_pairs: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    let cfg = NexusConfig::new(gamma, 2);
    let mut a = theta0.clone();
    let mut b = theta0.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let seq = [rng.index(ts.len()), rng.index(ts.len())];
        for &k in &seq {
            a = nsgd_step(&a, &ts.task(k).grad(&a)?, gamma, cfg.grad_floor)?;
        }
        let pg = inner_loop_with_sequence(&b, ts, &cfg, &seq, false)?;
        b = sgd_step(&b, &pg.value, 1.0)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok(worst)
}
