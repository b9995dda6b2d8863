//! A small multilayer perceptron with a matrix-level reverse-mode tape, and
//! synthetic multi-source regression data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{default_hvp_eps, fd_hvp, ParameterVector, RngStream};
use crate::tasks::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    /// Linear network; handy for closed-form checks.
    Identity,
}

/// Layer widths from input to output. Hidden layers use `activation`, the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 || layer_widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "need at least two positive layer widths, got {layer_widths:?}"
            )));
        }
        Ok(Self {
            layer_widths,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Splits θ into `(W_l, b_l)` per layer. `W_l` is `d_in × d_out`, stored
    /// row-major in θ, followed by `b_l`.
    pub fn unflatten(&self, theta: &ParameterVector) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        theta.check_dim(self.param_count())?;
        let s = theta.as_slice();
        let mut at = 0;
        let mut out = Vec::with_capacity(self.n_layers());
        for w in self.layer_widths.windows(2) {
            let (din, dout) = (w[0], w[1]);
            let wm = DMatrix::from_row_slice(din, dout, &s[at..at + din * dout]);
            at += din * dout;
            let b = DMatrix::from_row_slice(1, dout, &s[at..at + dout]);
            at += dout;
            out.push((wm, b));
        }
        Ok(out)
    }

    pub fn flatten(&self, layers: &[(DMatrix<f64>, DMatrix<f64>)]) -> Result<ParameterVector> {
        if layers.len() != self.n_layers() {
            return Err(Error::DimensionMismatch {
                expected: self.n_layers(),
                found: layers.len(),
            });
        }
        let mut out = Vec::with_capacity(self.param_count());
        for ((w, b), dims) in layers.iter().zip(self.layer_widths.windows(2)) {
            if w.shape() != (dims[0], dims[1]) || b.shape() != (1, dims[1]) {
                return Err(Error::DimensionMismatch {
                    expected: dims[0] * dims[1] + dims[1],
                    found: w.len() + b.len(),
                });
            }
            for i in 0..w.nrows() {
                out.extend(w.row(i).iter());
            }
            out.extend(b.iter());
        }
        Ok(ParameterVector::new(out))
    }

    /// Gaussian init with std `1/√fan_in`, zero biases.
    pub fn init_params(&self, rng: &mut RngStream) -> ParameterVector {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.layer_widths.windows(2) {
            let std = 1.0 / (w[0] as f64).sqrt();
            out.extend((0..w[0] * w[1]).map(|_| std * rng.normal()));
            out.extend(std::iter::repeat_n(0.0, w[1]));
        }
        ParameterVector::new(out)
    }
}

/// One data source `D_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceWire", into = "SourceWire")]
pub struct DataSource {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub source_id: usize,
}

impl DataSource {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>, source_id: usize) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                expected: inputs.nrows().max(1),
                found: targets.nrows(),
            });
        }
        if !inputs.iter().chain(targets.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteValue("data source"));
        }
        Ok(Self {
            inputs,
            targets,
            source_id,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Rows selected by `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select_rows(idx);
        let targets = self.targets.select_rows(idx);
        Self::new(inputs, targets, self.source_id)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SourceWire {
    source_id: usize,
    n: usize,
    d_in: usize,
    d_out: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

impl From<DataSource> for SourceWire {
    fn from(s: DataSource) -> Self {
        Self {
            source_id: s.source_id,
            n: s.inputs.nrows(),
            d_in: s.inputs.ncols(),
            d_out: s.targets.ncols(),
            inputs: row_major(&s.inputs),
            targets: row_major(&s.targets),
        }
    }
}

impl TryFrom<SourceWire> for DataSource {
    type Error = Error;
    fn try_from(w: SourceWire) -> Result<Self> {
        if w.inputs.len() != w.n * w.d_in || w.targets.len() != w.n * w.d_out {
            return Err(Error::DimensionMismatch {
                expected: w.n * (w.d_in + w.d_out),
                found: w.inputs.len() + w.targets.len(),
            });
        }
        DataSource::new(
            DMatrix::from_row_slice(w.n, w.d_in, &w.inputs),
            DMatrix::from_row_slice(w.n, w.d_out, &w.targets),
            w.source_id,
        )
    }
}

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// broadcast a `1 × d` row over every row of the left operand
    AddRow(Var, Var),
    Tanh(Var),
    Relu(Var),
    /// `(1/(2n)) Σ ||p − y||²`
    HalfMse(Var, DMatrix<f64>),
}

/// Records matrix operations and replays them backwards.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<DMatrix<f64>>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.values[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.values[a.0] * &self.values[b.0];
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let r = &self.values[row.0];
        for mut x in out.row_iter_mut() {
            x += r;
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn half_mse(&mut self, pred: Var, target: DMatrix<f64>) -> Var {
        let p = &self.values[pred.0];
        let n = p.nrows() as f64;
        let loss = (p - &target).norm_squared() / (2.0 * n);
        self.push(DMatrix::from_element(1, 1, loss), Op::HalfMse(pred, target))
    }

    /// Adjoints of every tape entry with respect to the scalar `out`.
    pub fn backward(&self, out: Var) -> Vec<Option<DMatrix<f64>>> {
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.values.len()];
        grads[out.0] = Some(DMatrix::from_element(1, 1, 1.0));
        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = &g * self.values[b.0].transpose();
                    let gb = self.values[a.0].transpose() * &g;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = DMatrix::from_iterator(1, g.ncols(), g.row_sum().iter().cloned());
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let y = &self.values[i];
                    acc(&mut grads, *a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)));
                }
                Op::Relu(a) => {
                    let x = &self.values[a.0];
                    acc(
                        &mut grads,
                        *a,
                        g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                    );
                }
                Op::HalfMse(p, target) => {
                    let pv = &self.values[p.0];
                    let scale = g[(0, 0)] / pv.nrows() as f64;
                    acc(&mut grads, *p, (pv - target) * scale);
                }
            }
        }
        grads
    }
}

/// Tape, per-layer `(weight, bias)` leaves, loss node.
type Recorded = (Tape, Vec<(Var, Var)>, Var);

/// Weighted mean-squared-error loss of an MLP on one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpTask {
    pub spec: MlpSpec,
    pub source: DataSource,
    pub weight: f64,
}

impl MlpTask {
    pub fn new(spec: MlpSpec, source: DataSource, weight: f64) -> Result<Self> {
        if source.inputs.ncols() != spec.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim(),
                found: source.inputs.ncols(),
            });
        }
        if source.targets.ncols() != spec.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.output_dim(),
                found: source.targets.ncols(),
            });
        }
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidArgument(format!("task weight {weight}")));
        }
        Ok(Self {
            spec,
            source,
            weight,
        })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weight: self.weight * factor,
            ..self.clone()
        }
    }

    /// The same loss restricted to the rows in `idx` (a minibatch).
    pub fn minibatch(&self, idx: &[usize]) -> Result<Self> {
        Self::new(self.spec.clone(), self.source.select(idx)?, self.weight)
    }

    pub fn predict(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        let (tape, _, pred) = self.record(theta)?;
        Ok(tape.value(pred).clone())
    }

    fn record(&self, theta: &ParameterVector) -> Result<Recorded> {
        let layers = self.spec.unflatten(theta)?;
        let mut tape = Tape::new();
        let mut h = tape.leaf(self.source.inputs.clone());
        let last = layers.len() - 1;
        let mut params = Vec::with_capacity(layers.len());
        for (l, (w, b)) in layers.into_iter().enumerate() {
            let wv = tape.leaf(w);
            let bv = tape.leaf(b);
            params.push((wv, bv));
            let z = tape.matmul(h, wv);
            let z = tape.add_row(z, bv);
            h = if l == last {
                z
            } else {
                match self.spec.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                    Activation::Identity => z,
                }
            };
        }
        Ok((tape, params, h))
    }

    fn loss_and_grad(&self, theta: &ParameterVector) -> Result<(f64, ParameterVector)> {
        let (mut tape, params, pred) = self.record(theta)?;
        let loss = tape.half_mse(pred, self.source.targets.clone());
        let value = self.weight * tape.value(loss)[(0, 0)];
        let adj = tape.backward(loss);
        let mut out = Vec::with_capacity(self.spec.param_count());
        for (w, b) in params {
            let gw = adj[w.0]
                .clone()
                .unwrap_or_else(|| DMatrix::zeros(tape.value(w).nrows(), tape.value(w).ncols()));
            for i in 0..gw.nrows() {
                out.extend(gw.row(i).iter().map(|x| x * self.weight));
            }
            match &adj[b.0] {
                Some(gb) => out.extend(gb.iter().map(|x| x * self.weight)),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(b).len())),
            }
        }
        let grad = ParameterVector::new(out);
        if !value.is_finite() {
            return Err(Error::NonFiniteValue("mlp loss"));
        }
        grad.check_finite("mlp gradient")?;
        Ok((value, grad))
    }
}

impl Objective for MlpTask {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss(&self, theta: &ParameterVector) -> Result<f64> {
        let pred = self.predict(theta)?;
        let n = pred.nrows() as f64;
        let v = self.weight * (pred - &self.source.targets).norm_squared() / (2.0 * n);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue("mlp loss"));
        }
        Ok(v)
    }

    fn grad(&self, theta: &ParameterVector) -> Result<ParameterVector> {
        Ok(self.loss_and_grad(theta)?.1)
    }

    /// Central difference of exact gradients.
    fn hvp(&self, theta: &ParameterVector, v: &ParameterVector) -> Result<ParameterVector> {
        v.check_dim(self.dim())?;
        if v.norm() == 0.0 {
            return Err(Error::ZeroDirection);
        }
        fd_hvp(|t| self.grad(t), theta, v, default_hvp_eps(theta, v))
    }
}

/// Output of [`make_synthetic_sources`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSources {
    pub sources: Vec<DataSource>,
    pub held_out: DataSource,
    /// Flattened `d_in × d_out` teacher matrices, one per source.
    pub teachers: Vec<ParameterVector>,
    pub held_out_teacher: ParameterVector,
}

/// `K` regression sources with targets `tanh(x W_k)`, where
/// `W_k = √f·W_shared + √(1−f)·U_k`. The held-out source draws a fresh `U`.
pub fn make_synthetic_sources(
    k: usize,
    d_in: usize,
    d_out: usize,
    n_per_source: usize,
    shared_fraction: f64,
    rng: &mut RngStream,
) -> Result<SyntheticSources> {
    if k == 0 || d_in == 0 || d_out == 0 || n_per_source == 0 {
        return Err(Error::InvalidArgument(
            "synthetic sources need positive shapes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&shared_fraction) {
        return Err(Error::InvalidArgument(format!(
            "shared_fraction {shared_fraction} not in [0,1]"
        )));
    }
    let m = d_in * d_out;
    let std = 1.0 / (d_in as f64).sqrt();
    let mut teacher_rng = rng.substream("teachers");
    let mut data_rng = rng.substream("inputs");
    let shared = teacher_rng.normal_vector(m, std);
    let (a, b) = (shared_fraction.sqrt(), (1.0 - shared_fraction).sqrt());
    let draw_teacher = |r: &mut RngStream| {
        let own = r.normal_vector(m, std);
        &shared.scaled(a) + &own.scaled(b)
    };
    let teachers: Vec<ParameterVector> = (0..k).map(|_| draw_teacher(&mut teacher_rng)).collect();
    let held_out_teacher = draw_teacher(&mut teacher_rng);

    let mut build = |teacher: &ParameterVector, id: usize| -> Result<DataSource> {
        let x = DMatrix::from_fn(n_per_source, d_in, |_, _| data_rng.normal());
        let w = DMatrix::from_row_slice(d_in, d_out, teacher.as_slice());
        let y = (&x * w).map(f64::tanh);
        DataSource::new(x, y, id)
    };
    let sources = teachers
        .iter()
        .enumerate()
        .map(|(i, t)| build(t, i))
        .collect::<Result<Vec<_>>>()?;
    let held_out = build(&held_out_teacher, k)?;
    Ok(SyntheticSources {
        sources,
        held_out,
        teachers,
        held_out_teacher,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{fd_gradient, mean_and_se};

    fn task(
        widths: Vec<usize>,
        act: Activation,
        n: usize,
        seed: u64,
    ) -> (MlpTask, ParameterVector) {
        let spec = MlpSpec::new(widths, act).unwrap();
        let mut rng = RngStream::new(seed);
        let x = DMatrix::from_fn(n, spec.input_dim(), |_, _| rng.normal());
        let y = DMatrix::from_fn(n, spec.output_dim(), |_, _| rng.normal());
        let theta = spec.init_params(&mut rng);
        (
            MlpTask::new(spec, DataSource::new(x, y, 0).unwrap(), 1.0).unwrap(),
            theta,
        )
    }

    #[test]
    fn zero_network_zero_targets() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let x = DMatrix::from_fn(5, 3, |i, j| (i + j) as f64);
        let src = DataSource::new(x, DMatrix::zeros(5, 2), 0).unwrap();
        let t = MlpTask::new(spec.clone(), src, 1.0).unwrap();
        let theta = ParameterVector::zeros(spec.param_count());
        assert_eq!(t.loss(&theta).unwrap(), 0.0);
        assert_eq!(t.grad(&theta).unwrap().norm(), 0.0);
    }

    #[test]
    fn reverse_mode_matches_finite_differences() {
        let configs = [
            (vec![2, 3, 1], Activation::Tanh),
            (vec![3, 5, 2], Activation::Tanh),
            (vec![4, 4, 4, 1], Activation::Tanh),
            (vec![2, 6, 3], Activation::Relu),
            (vec![3, 2], Activation::Identity),
        ];
        for trial in 0..20 {
            let (w, a) = configs[trial % configs.len()].clone();
            let (t, theta) = task(w, a, 7, trial as u64);
            let g = t.grad(&theta).unwrap();
            let fd = fd_gradient(|th| t.loss(th), &theta, 1e-6).unwrap();
            let rel = (&g - &fd).norm() / g.norm().max(1e-12);
            assert!(rel <= 1e-5, "trial {trial}: rel {rel}");
        }
    }

    #[test]
    fn flatten_round_trip_is_exact() {
        let spec = MlpSpec::new(vec![8, 16, 8, 1], Activation::Tanh).unwrap();
        let theta = spec.init_params(&mut RngStream::new(3));
        let layers = spec.unflatten(&theta).unwrap();
        assert_eq!(spec.flatten(&layers).unwrap(), theta);
        assert_eq!(theta.dim(), 8 * 16 + 16 + 16 * 8 + 8 + 8 + 1);
    }

    #[test]
    fn duplication_and_permutation_invariance() {
        let (t, theta) = task(vec![3, 4, 1], Activation::Tanh, 6, 11);
        let doubled: Vec<usize> = (0..6).chain(0..6).collect();
        let d = t.minibatch(&doubled).unwrap();
        assert!((d.loss(&theta).unwrap() - t.loss(&theta).unwrap()).abs() < 1e-14);
        assert!(d.grad(&theta).unwrap().distance(&t.grad(&theta).unwrap()) < 1e-14);
        let p = t.minibatch(&[5, 3, 1, 0, 2, 4]).unwrap();
        assert!((p.loss(&theta).unwrap() - t.loss(&theta).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn hvp_rejects_zero_and_is_symmetric() {
        let (t, theta) = task(vec![3, 5, 1], Activation::Tanh, 10, 2);
        let d = theta.dim();
        assert_eq!(
            t.hvp(&theta, &ParameterVector::zeros(d)).unwrap_err(),
            Error::ZeroDirection
        );
        let mut rng = RngStream::new(4);
        for _ in 0..5 {
            let u = rng.normal_vector(d, 1.0);
            let v = rng.normal_vector(d, 1.0);
            let a = u.dot(&t.hvp(&theta, &v).unwrap());
            let b = v.dot(&t.hvp(&theta, &u).unwrap());
            assert!((a - b).abs() <= 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn linear_network_hvp_is_gauss_newton() {
        // single linear layer: H = (1/n) [X 1]ᵀ[X 1] ⊗ I, independent of θ
        let (t, theta) = task(vec![3, 1], Activation::Identity, 8, 6);
        let n = t.source.len();
        let xa = DMatrix::from_fn(
            n,
            4,
            |i, j| if j < 3 { t.source.inputs[(i, j)] } else { 1.0 },
        );
        let h = xa.transpose() * &xa / n as f64;
        let mut rng = RngStream::new(1);
        for _ in 0..3 {
            let v = rng.normal_vector(4, 1.0);
            let expected = ParameterVector::from_dvector(&(&h * v.to_dvector()));
            let far = &theta + &rng.normal_vector(4, 3.0);
            assert!(t.hvp(&far, &v).unwrap().distance(&expected) < 1e-6);
        }
    }

    #[test]
    fn weight_scales_loss_and_grad() {
        let (t, theta) = task(vec![2, 3, 1], Activation::Tanh, 5, 9);
        let s = t.scaled(3.0);
        assert!((s.loss(&theta).unwrap() - 3.0 * t.loss(&theta).unwrap()).abs() < 1e-12);
        assert!(
            s.grad(&theta)
                .unwrap()
                .distance(&t.grad(&theta).unwrap().scaled(3.0))
                < 1e-12
        );
    }

    #[test]
    fn fully_shared_sources_have_aligned_gradients() {
        let mut rng = RngStream::new(12);
        let syn = make_synthetic_sources(4, 8, 1, 1024, 1.0, &mut rng).unwrap();
        assert!(syn.teachers.windows(2).all(|w| w[0] == w[1]));
        let spec = MlpSpec::new(vec![8, 16, 8, 1], Activation::Tanh).unwrap();
        let theta = spec.init_params(&mut rng);
        let grads: Vec<_> = syn
            .sources
            .iter()
            .map(|s| {
                MlpTask::new(spec.clone(), s.clone(), 1.0)
                    .unwrap()
                    .grad(&theta)
                    .unwrap()
            })
            .collect();
        for i in 0..grads.len() {
            for j in 0..i {
                assert!(grads[i].cosine(&grads[j]).unwrap() >= 0.99);
            }
        }
    }

    #[test]
    fn unshared_teachers_are_uncorrelated() {
        let mut rng = RngStream::new(5);
        let syn = make_synthetic_sources(40, 8, 4, 2, 0.0, &mut rng).unwrap();
        let mut cos = Vec::new();
        for i in 0..syn.teachers.len() {
            for j in 0..i {
                cos.push(syn.teachers[i].cosine(&syn.teachers[j]).unwrap());
            }
        }
        let (mean, se) = mean_and_se(&cos);
        assert!(mean.abs() <= 3.0 * se.max(1e-3), "mean {mean} se {se}");
    }

    #[test]
    fn synthetic_sources_are_seeded_and_serializable() {
        let a = make_synthetic_sources(3, 4, 2, 16, 0.5, &mut RngStream::new(1)).unwrap();
        let b = make_synthetic_sources(3, 4, 2, 16, 0.5, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
        let json = serde_json::to_string(&a.held_out).unwrap();
        let back: DataSource = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a.held_out);
    }
}
