//! SGD, normalized SGD, decoupled AdamW, learning-rate schedules and
//! gradient clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParameterVector;

/// Default floor below which a gradient counts as degenerate.
pub const DEFAULT_GRAD_FLOOR: f64 = 1e-12;

/// What to do when NSGD meets a gradient below the floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    #[default]
    Strict,
    /// Take a zero step and log a warning.
    Lenient,
}

fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    Ok(())
}

/// `θ − lr·g`
pub fn sgd_step(
    theta: &ParameterVector,
    grad: &ParameterVector,
    lr: f64,
) -> Result<ParameterVector> {
    check_lr(lr)?;
    grad.check_dim(theta.dim())?;
    let mut out = theta.clone();
    out.axpy(-lr, grad);
    Ok(out)
}

/// The displacement `lr·g/||g||` of one normalized step, or `None` under the
/// lenient policy when `g` is degenerate.
pub fn normalized_displacement(
    grad: &ParameterVector,
    lr: f64,
    floor: f64,
    policy: DegeneratePolicy,
    task: Option<usize>,
) -> Result<Option<ParameterVector>> {
    check_lr(lr)?;
    let norm = grad.norm();
    if !norm.is_finite() {
        return Err(Error::NonFiniteValue("gradient"));
    }
    if norm < floor || norm == 0.0 {
        return match policy {
            DegeneratePolicy::Strict => Err(Error::DegenerateGradient { task, norm, floor }),
            DegeneratePolicy::Lenient => {
                log::warn!("gradient norm {norm:e} below floor {floor:e}; taking a zero step");
                Ok(None)
            }
        };
    }
    Ok(Some(grad.scaled(lr / norm)))
}

/// `θ − lr·g/||g||`
pub fn nsgd_step(
    theta: &ParameterVector,
    grad: &ParameterVector,
    lr: f64,
    floor: f64,
) -> Result<ParameterVector> {
    grad.check_dim(theta.dim())?;
    let step = normalized_displacement(grad, lr, floor, DegeneratePolicy::Strict, None)?
        .expect("strict policy never skips");
    Ok(theta - &step)
}

/// Rescales `grad` so its norm is at most `max_norm`.
pub fn clip_grad(grad: &ParameterVector, max_norm: f64) -> Result<ParameterVector> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("clip norm {max_norm}")));
    }
    let n = grad.norm();
    if n <= max_norm {
        Ok(grad.clone())
    } else {
        Ok(grad.scaled(max_norm / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-10,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub first_moment: ParameterVector,
    pub second_moment: ParameterVector,
    pub step_count: u64,
    pub hyper: AdamWHyper,
}

impl AdamWState {
    pub fn new(dim: usize, hyper: AdamWHyper) -> Self {
        Self {
            first_moment: ParameterVector::zeros(dim),
            second_moment: ParameterVector::zeros(dim),
            step_count: 0,
            hyper,
        }
    }

    /// In-place decoupled AdamW update.
    pub fn apply(
        &mut self,
        theta: &mut ParameterVector,
        grad: &ParameterVector,
        lr: f64,
    ) -> Result<()> {
        check_lr(lr)?;
        let d = self.first_moment.dim();
        theta.check_dim(d)?;
        grad.check_dim(d)?;
        let AdamWHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        let th = theta.as_mut_slice();
        for i in 0..d {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            th[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * th[i]);
        }
        Ok(())
    }
}

/// Functional form of [`AdamWState::apply`].
pub fn adamw_step(
    state: &AdamWState,
    theta: &ParameterVector,
    grad: &ParameterVector,
    lr: f64,
) -> Result<(AdamWState, ParameterVector)> {
    let mut s = state.clone();
    let mut th = theta.clone();
    s.apply(&mut th, grad, lr)?;
    Ok((s, th))
}

/// A stateful first-order update rule.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    fn step(&mut self, theta: &mut ParameterVector, grad: &ParameterVector, lr: f64) -> Result<()>;
}

#[derive(Debug, Clone, Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, theta: &mut ParameterVector, grad: &ParameterVector, lr: f64) -> Result<()> {
        *theta = sgd_step(theta, grad, lr)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub state: AdamWState,
}

impl AdamW {
    pub fn new(dim: usize, hyper: AdamWHyper) -> Self {
        Self {
            state: AdamWState::new(dim, hyper),
        }
    }
}

impl Optimizer for AdamW {
    fn name(&self) -> &'static str {
        "adamw"
    }

    fn step(&mut self, theta: &mut ParameterVector, grad: &ParameterVector, lr: f64) -> Result<()> {
        self.state.apply(theta, grad, lr)
    }
}

/// Which outer optimizer to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterKind {
    Sgd,
    AdamW,
}

impl OuterKind {
    pub fn build(self, dim: usize, hyper: AdamWHyper) -> Box<dyn Optimizer> {
        match self {
            OuterKind::Sgd => Box::new(Sgd),
            OuterKind::AdamW => Box::new(AdamW::new(dim, hyper)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Cosine,
    Wsd,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            "wsd" => Ok(Self::Wsd),
            _ => Err(Error::InvalidArgument(format!("unknown schedule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Length of the final linear decay (WSD only).
    pub decay_steps: usize,
}

impl Schedule {
    pub fn constant(base_lr: f64, total_steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            base_lr,
            total_steps,
            warmup_steps: 0,
            decay_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_lr(self.base_lr)?;
        let extra = match self.kind {
            ScheduleKind::Wsd => self.decay_steps,
            _ => 0,
        };
        if self.warmup_steps + extra > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "warmup ({}) plus decay ({extra}) exceeds total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        let base = self.base_lr;
        let warm = self.warmup_steps;
        if self.kind != ScheduleKind::Constant && step < warm {
            return Ok(base * step as f64 / warm as f64);
        }
        Ok(match self.kind {
            ScheduleKind::Constant => base,
            ScheduleKind::Cosine => {
                let span = self.total_steps - warm;
                if span == 0 {
                    base
                } else {
                    let p = (step - warm) as f64 / span as f64;
                    base * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
                }
            }
            ScheduleKind::Wsd => {
                let decay_start = self.total_steps - self.decay_steps;
                if step <= decay_start || self.decay_steps == 0 {
                    base
                } else {
                    base * (self.total_steps - step) as f64 / self.decay_steps as f64
                }
            }
        })
    }
}

/// Free-function form of [`Schedule::lr`].
pub fn schedule_lr(s: &Schedule, step: usize) -> Result<f64> {
    s.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::tasks::{random_spd, Objective, QuadraticTask};
    use proptest::prelude::*;

    fn pv(x: &[f64]) -> ParameterVector {
        ParameterVector::from_slice(x)
    }

    #[test]
    fn sgd_arithmetic() {
        let th = pv(&[1.0, 1.0]);
        assert_eq!(sgd_step(&th, &pv(&[1.0, 0.0]), 0.0).unwrap(), th);
        assert_eq!(
            sgd_step(&th, &pv(&[1.0, 0.0]), 0.5).unwrap(),
            pv(&[0.5, 1.0])
        );
        assert!(matches!(
            sgd_step(&th, &pv(&[1.0]), 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sgd_contracts_on_strongly_convex_quadratic() {
        let mut rng = RngStream::new(3);
        let (mu, l) = (1.0, 5.0);
        let q = QuadraticTask::new(
            random_spd(4, mu, l, &mut rng),
            rng.normal_vector(4, 1.0),
            0.0,
        )
        .unwrap();
        let gamma = 2.0 / (l + mu);
        let factor = ((l / mu - 1.0) / (l / mu + 1.0)).powi(2);
        let mut th = rng.normal_vector(4, 3.0);
        for _ in 0..50 {
            let before = th.distance(q.optimum()).powi(2);
            th = sgd_step(&th, &q.grad(&th).unwrap(), gamma).unwrap();
            let after = th.distance(q.optimum()).powi(2);
            assert!(after <= factor * before + 1e-12);
        }
    }

    #[test]
    fn fd_and_analytic_gradients_give_same_trajectory() {
        let q = QuadraticTask::isotropic(2.0, pv(&[1.0, -2.0]), 0.0).unwrap();
        let mut a = pv(&[3.0, 3.0]);
        let mut b = a.clone();
        for _ in 0..20 {
            a = sgd_step(&a, &q.grad(&a).unwrap(), 0.1).unwrap();
            let fd = crate::numerics::fd_gradient(|t| q.loss(t), &b, 1e-5).unwrap();
            b = sgd_step(&b, &fd, 0.1).unwrap();
        }
        assert!(a.distance(&b) < 1e-9);
    }

    #[test]
    fn nsgd_unit_step() {
        let th = pv(&[0.0, 0.0]);
        let out = nsgd_step(&th, &pv(&[3.0, 4.0]), 1.0, DEFAULT_GRAD_FLOOR).unwrap();
        assert!(out.distance(&pv(&[-0.6, -0.8])) < 1e-15);
        assert!(matches!(
            nsgd_step(&th, &pv(&[0.0, 0.0]), 1.0, DEFAULT_GRAD_FLOOR),
            Err(Error::DegenerateGradient { .. })
        ));
        let lenient = normalized_displacement(
            &pv(&[0.0, 0.0]),
            1.0,
            1e-12,
            DegeneratePolicy::Lenient,
            None,
        );
        assert_eq!(lenient.unwrap(), None);
    }

    proptest! {
        #[test]
        fn nsgd_step_length_is_lr(g in proptest::collection::vec(-1e3f64..1e3, 1..8), lr in 0.0f64..10.0) {
            let g = ParameterVector::new(g);
            prop_assume!(g.norm() > 1e-6);
            let th = ParameterVector::zeros(g.dim());
            let out = nsgd_step(&th, &g, lr, DEFAULT_GRAD_FLOOR).unwrap();
            prop_assert!((out.norm() - lr).abs() <= 1e-14 * (1.0 + lr));
        }

        #[test]
        fn clip_preserves_direction(g in proptest::collection::vec(-100f64..100.0, 1..8), max in 0.01f64..10.0) {
            let g = ParameterVector::new(g);
            prop_assume!(g.norm() > 1e-9);
            let c = clip_grad(&g, max).unwrap();
            prop_assert!(c.norm() <= max * (1.0 + 1e-12));
            prop_assert!((g.cosine(&c).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn wsd_is_continuous_and_nonnegative(total in 10usize..300, w in 0usize..5, d in 1usize..5, base in 0.001f64..1.0) {
            let s = Schedule { kind: ScheduleKind::Wsd, base_lr: base, total_steps: total, warmup_steps: w, decay_steps: d };
            prop_assume!(s.validate().is_ok());
            let max_jump = base / (w.max(1).min(d)) as f64;
            let mut prev = s.lr(0).unwrap();
            for step in 0..=total {
                let lr = s.lr(step).unwrap();
                prop_assert!(lr >= 0.0 && lr <= base);
                prop_assert!((lr - prev).abs() <= max_jump * (1.0 + 1e-12));
                prev = lr;
            }
        }
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_grad(&pv(&[0.3, 0.4]), 1.0).unwrap(), pv(&[0.3, 0.4]));
        assert!((clip_grad(&pv(&[0.0, 4.0]), 1.0).unwrap().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adamw_zero_grad_keeps_theta() {
        let mut st = AdamWState::new(2, AdamWHyper::default());
        let mut th = pv(&[1.0, -1.0]);
        for _ in 0..10 {
            st.apply(&mut th, &pv(&[0.0, 0.0]), 0.1).unwrap();
        }
        assert_eq!(th, pv(&[1.0, -1.0]));
        assert_eq!(st.step_count, 10);
    }

    #[test]
    fn adamw_first_step_hand_trace() {
        let st = AdamWState::new(1, AdamWHyper::default());
        let (st, th) = adamw_step(&st, &pv(&[0.0]), &pv(&[1.0]), 0.01).unwrap();
        assert!((th[0] + 0.01 / (1.0 + 1e-10)).abs() < 1e-18);
        assert_eq!(st.step_count, 1);
        assert!((st.first_moment[0] - 0.1).abs() < 1e-15);
        assert!((st.second_moment[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn adamw_decoupled_decay() {
        let hyper = AdamWHyper {
            weight_decay: 0.1,
            ..Default::default()
        };
        let (_, th) =
            adamw_step(&AdamWState::new(1, hyper), &pv(&[2.0]), &pv(&[0.0]), 0.5).unwrap();
        assert!((th[0] - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn adamw_is_scale_free_without_decay() {
        let q = QuadraticTask::isotropic(1.0, pv(&[1.0, 2.0, -1.0]), 0.0).unwrap();
        let mut a = AdamW::new(3, AdamWHyper::default());
        let mut b = AdamW::new(3, AdamWHyper::default());
        let mut ta = pv(&[0.0, 0.0, 0.0]);
        let mut tb = ta.clone();
        for _ in 0..200 {
            let ga = q.grad(&ta).unwrap();
            let gb = q.grad(&tb).unwrap().scaled(10.0);
            a.step(&mut ta, &ga, 0.01).unwrap();
            b.step(&mut tb, &gb, 0.01).unwrap();
        }
        assert!(ta.distance(&tb) < 1e-6);
    }

    #[test]
    fn schedule_shapes() {
        let wsd = Schedule {
            kind: ScheduleKind::Wsd,
            base_lr: 0.1,
            total_steps: 100,
            warmup_steps: 10,
            decay_steps: 20,
        };
        assert_eq!(wsd.lr(0).unwrap(), 0.0);
        assert_eq!(wsd.lr(10).unwrap(), 0.1);
        assert_eq!(wsd.lr(50).unwrap(), 0.1);
        assert_eq!(wsd.lr(80).unwrap(), 0.1);
        assert!((wsd.lr(90).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(wsd.lr(100).unwrap(), 0.0);
        assert_eq!(
            wsd.lr(101).unwrap_err(),
            Error::StepOutOfRange {
                step: 101,
                total: 100
            }
        );

        let c = Schedule::constant(0.3, 7);
        assert!((0..=7).all(|s| c.lr(s).unwrap() == 0.3));

        let cos = Schedule {
            kind: ScheduleKind::Cosine,
            base_lr: 1.0,
            total_steps: 110,
            warmup_steps: 10,
            decay_steps: 0,
        };
        assert!((cos.lr(60).unwrap() - 0.5).abs() < 1e-15);
        assert!(cos.lr(110).unwrap().abs() < 1e-15);
        assert_eq!(cos.lr(5).unwrap(), 0.5);
    }

    #[test]
    fn outer_kind_builds_named_optimizers() {
        assert_eq!(OuterKind::Sgd.build(2, AdamWHyper::default()).name(), "sgd");
        assert_eq!(
            OuterKind::AdamW.build(2, AdamWHyper::default()).name(),
            "adamw"
        );
    }
}
