//! Vector arithmetic, seeded random streams and finite-difference probes.
//!
//! Everything runs in `f64`. The finite-difference routines are the
//! independent oracles used to check analytic gradients and Hessian-vector
//! products elsewhere in the crate.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default central-difference step for gradients.
pub const FD_GRAD_EPS: f64 = 1e-5;

/// Flat parameter state of a model.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(values.to_vec())
    }

    /// Standard basis vector `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|x| x * s).collect())
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, xi) in self.0.iter_mut().zip(&x.0) {
            *s += a * xi;
        }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self - other).norm()
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteValue(what))
        }
    }

    /// Cosine similarity; `None` when either vector is zero.
    pub fn cosine(&self, other: &Self) -> Option<f64> {
        let denom = self.norm() * other.norm();
        if denom > 0.0 {
            Some(self.dot(other) / denom)
        } else {
            None
        }
    }

    pub fn to_dvector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_column_slice(&self.0)
    }

    pub fn from_dvector(v: &nalgebra::DVector<f64>) -> Self {
        Self(v.as_slice().to_vec())
    }
}

impl fmt::Debug for ParameterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParameterVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for &ParameterVector {
    type Output = ParameterVector;
    fn add(self, rhs: Self) -> ParameterVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParameterVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &ParameterVector {
    type Output = ParameterVector;
    fn sub(self, rhs: Self) -> ParameterVector {
        debug_assert_eq!(self.dim(), rhs.dim());
        ParameterVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &ParameterVector {
    type Output = ParameterVector;
    fn mul(self, rhs: f64) -> ParameterVector {
        self.scaled(rhs)
    }
}

impl Neg for &ParameterVector {
    type Output = ParameterVector;
    fn neg(self) -> ParameterVector {
        self.scaled(-1.0)
    }
}

/// Sum of vectors in iteration order (fixed order keeps results reproducible).
pub fn sum_vectors<'a, I>(dim: usize, items: I) -> ParameterVector
where
    I: IntoIterator<Item = &'a ParameterVector>,
{
    let mut acc = ParameterVector::zeros(dim);
    for v in items {
        acc.axpy(1.0, v);
    }
    acc
}

/// A seeded, splittable random stream backed by ChaCha20.
///
/// Child streams depend only on the parent seed and a label, never on how
/// many values the parent has drawn.
#[derive(Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32/64-bit words drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn substream(&self, label: &str) -> RngStream {
        RngStream::new(derive_seed(self.seed, label))
    }

    pub fn uniform(&mut self) -> f64 {
        self.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    pub fn normal_vector(&mut self, dim: usize, std: f64) -> ParameterVector {
        ParameterVector((0..dim).map(|_| std * self.normal()).collect())
    }

    /// Uniformly random unit vector.
    pub fn unit_vector(&mut self, dim: usize) -> ParameterVector {
        loop {
            let v = self.normal_vector(dim, 1.0);
            let n = v.norm();
            if n > 1e-12 {
                return v.scaled(1.0 / n);
            }
        }
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.random_range(0..=i);
            p.swap(i, j);
        }
        p
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("counter", &self.counter)
            .finish()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.counter += 1;
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.counter += dst.len().div_ceil(4) as u64;
        self.rng.fill_bytes(dst)
    }
}

/// Child seed for `(seed, label)`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"nexus-rng/v1");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, theta: &ParameterVector, eps: f64) -> Result<ParameterVector>
where
    F: Fn(&ParameterVector) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    let mut probe = theta.clone();
    let mut out = ParameterVector::zeros(theta.dim());
    for i in 0..theta.dim() {
        let x = theta[i];
        probe[i] = x + eps;
        let plus = f(&probe)?;
        probe[i] = x - eps;
        let minus = f(&probe)?;
        probe[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteValue("fd_gradient probe"));
        }
        out[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// Step used by [`fd_hvp`] when the caller has no better choice.
pub fn default_hvp_eps(theta: &ParameterVector, v: &ParameterVector) -> f64 {
    1e-5 * (1.0 + theta.norm()) / v.norm()
}

/// Hessian-vector product by central differences of a gradient map.
pub fn fd_hvp<G>(
    grad_fn: G,
    theta: &ParameterVector,
    v: &ParameterVector,
    eps: f64,
) -> Result<ParameterVector>
where
    G: Fn(&ParameterVector) -> Result<ParameterVector>,
{
    theta.check_dim(v.dim())?;
    if v.norm() == 0.0 {
        return Err(Error::ZeroDirection);
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "eps must be > 0, got {eps}"
        )));
    }
    let mut plus = theta.clone();
    plus.axpy(eps, v);
    let mut minus = theta.clone();
    minus.axpy(-eps, v);
    let gp = grad_fn(&plus)?;
    let gm = grad_fn(&minus)?;
    if !gp.is_finite() || !gm.is_finite() {
        return Err(Error::NonFiniteValue("fd_hvp probe"));
    }
    Ok((&gp - &gm).scaled(1.0 / (2.0 * eps)))
}

/// Ordinary least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_half_norm_squared() {
        let theta = ParameterVector::from_slice(&[3.0, -1.0]);
        let g = fd_gradient(|t| Ok(0.5 * t.norm_sq()), &theta, 1e-5).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9);
        assert!((g[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let theta = ParameterVector::from_slice(&[0.3, 7.0, -2.0]);
        let g = fd_gradient(|_| Ok(4.2), &theta, 1e-5).unwrap();
        assert_eq!(g, ParameterVector::zeros(3));
    }

    #[test]
    fn fd_gradient_of_cube() {
        // d/dx x^3 = 3x^2 = 12 at x = 2
        let theta = ParameterVector::from_slice(&[2.0]);
        let g = fd_gradient(|t| Ok(t[0].powi(3)), &theta, 1e-4).unwrap();
        assert!((g[0] - 12.0).abs() < 1e-6, "{}", g[0]);
    }

    #[test]
    fn fd_gradient_rejects_non_finite_probe() {
        let theta = ParameterVector::from_slice(&[0.0]);
        let err = fd_gradient(
            |t| Ok(1.0 / t[0].abs().min(1e-300) * f64::INFINITY),
            &theta,
            1e-5,
        );
        assert_eq!(err.unwrap_err(), Error::NonFiniteValue("fd_gradient probe"));
    }

    #[test]
    fn fd_hvp_on_diagonal_quadratic() {
        let grad = |t: &ParameterVector| {
            Ok(ParameterVector::from_slice(&[
                2.0 * (t[0] - 1.0),
                5.0 * (t[1] + 1.0),
            ]))
        };
        let theta = ParameterVector::from_slice(&[0.4, 0.2]);
        let hv = fd_hvp(
            grad,
            &theta,
            &ParameterVector::from_slice(&[1.0, 0.0]),
            1e-5,
        )
        .unwrap();
        assert!((hv[0] - 2.0).abs() < 1e-9);
        assert!(hv[1].abs() < 1e-9);
    }

    #[test]
    fn fd_hvp_of_constant_gradient_is_zero() {
        let grad = |_: &ParameterVector| Ok(ParameterVector::from_slice(&[1.0, -3.0]));
        let theta = ParameterVector::from_slice(&[0.0, 0.0]);
        let hv = fd_hvp(
            grad,
            &theta,
            &ParameterVector::from_slice(&[0.3, 0.4]),
            1e-5,
        )
        .unwrap();
        assert_eq!(hv, ParameterVector::zeros(2));
    }

    #[test]
    fn fd_hvp_rejects_zero_direction() {
        let grad = |t: &ParameterVector| Ok(t.clone());
        let theta = ParameterVector::zeros(2);
        let err = fd_hvp(grad, &theta, &ParameterVector::zeros(2), 1e-5).unwrap_err();
        assert_eq!(err, Error::ZeroDirection);
    }

    fn draws(mut s: RngStream, n: usize) -> Vec<u64> {
        (0..n).map(|_| s.next_u64()).collect()
    }

    #[test]
    fn substream_is_deterministic() {
        let parent = RngStream::new(7);
        assert_eq!(
            draws(parent.substream("tasks"), 100),
            draws(parent.substream("tasks"), 100)
        );
    }

    #[test]
    fn substream_labels_and_seeds_separate() {
        let a = draws(RngStream::new(7).substream("tasks"), 100);
        let b = draws(RngStream::new(7).substream("data"), 100);
        let c = draws(RngStream::new(8).substream("tasks"), 100);
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
        assert!(a.iter().zip(&c).all(|(x, y)| x != y));
    }

    #[test]
    fn substream_ignores_parent_draw_count() {
        let mut parent = RngStream::new(11);
        let before = parent.substream("x");
        for _ in 0..17 {
            parent.next_u64();
        }
        assert_eq!(parent.counter(), 17);
        assert_eq!(draws(before, 10), draws(parent.substream("x"), 10));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut s = RngStream::new(3);
        let mut p = s.permutation(9);
        p.sort();
        assert_eq!(p, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1e-1, 1e-2, 1e-3];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 5.0 * x.powi(3)).collect();
        assert!((log_log_slope(&xs, &ys) - 3.0).abs() < 1e-12);
    }
}
