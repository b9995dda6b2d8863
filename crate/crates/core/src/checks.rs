//! Named theorem checks over deterministic fixtures, grouped into suites and
//! reported as `{check_name, status, measured, bound, tolerance}` rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nexus::{inner_loop_with_sequence, NexusConfig, Variant};
use crate::numerics::{log_log_slope, ParameterVector, RngStream};
use crate::optimizers::sgd_step;
use crate::oracles::{
    closeness_bound_check, convergence_contraction, exact_expectation_with_constants,
    expected_pseudo_gradient_exact, general_gap_bound, monte_carlo_gap, nsgd_nexus_identity_check,
    quadratic_gap, second_order_direction, second_order_error_bound, sharpness_tensor_term,
    third_order_direction, third_order_error_bound, third_order_term_part, CurvatureBounds, Part,
    SmoothnessConstants,
};
use crate::tasks::{random_spd, CubicTask, QuadraticTask, Task, TaskFamily, TaskSet};

/// Nominal inner step size of the expansion fixtures.
pub const DEFAULT_GAMMA: f64 = 1e-2;
pub const DEFAULT_CHECK_SEED: u64 = 20_250_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    SecondOrder,
    ThirdOrder,
    Closeness,
    Convergence,
    NsgdIdentity,
    Generalization,
}

impl Suite {
    pub const NAMES: [&'static str; 7] = [
        "all",
        "second_order",
        "third_order",
        "closeness",
        "convergence",
        "nsgd_identity",
        "generalization",
    ];

    pub fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "second_order" => Suite::SecondOrder,
            "third_order" => Suite::ThirdOrder,
            "closeness" => Suite::Closeness,
            "convergence" => Suite::Convergence,
            "nsgd_identity" => Suite::NsgdIdentity,
            "generalization" => Suite::Generalization,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown suite {s:?}; expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Suite::All,
            Suite::SecondOrder,
            Suite::ThirdOrder,
            Suite::Closeness,
            Suite::Convergence,
            Suite::NsgdIdentity,
            Suite::Generalization,
        ]
        .iter()
        .position(|s| s == self)
        .unwrap_or(0);
        f.write_str(Suite::NAMES[i])
    }
}

/// `Info` rows are reported but never gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Info,
}

/// One row. A gated row passes iff `measured ≤ bound + tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check_name: String,
    pub status: CheckStatus,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckOutcome {
    pub fn upper(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        let ok = measured <= bound + tolerance;
        Self {
            check_name: name.into(),
            status: if ok {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            measured,
            bound,
            tolerance,
            detail: None,
        }
    }

    /// Passes iff `|measured − target| ≤ tolerance`; reported with
    /// `measured = |measured − target|` and `bound = tolerance` so the
    /// row keeps the `measured ≤ bound` reading.
    pub fn within(name: impl Into<String>, value: f64, target: f64, tolerance: f64) -> Self {
        let mut o = Self::upper(name, (value - target).abs(), tolerance, 0.0);
        o.detail = Some(format!("value {value} target {target}"));
        o
    }

    pub fn info(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            check_name: name.into(),
            status: CheckStatus::Info,
            measured,
            bound,
            tolerance: 0.0,
            detail: None,
        }
    }

    pub fn failed(name: impl Into<String>, err: &Error) -> Self {
        Self {
            check_name: name.into(),
            status: CheckStatus::Fail,
            measured: f64::NAN,
            bound: f64::NAN,
            tolerance: 0.0,
            detail: Some(err.to_string()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != CheckStatus::Fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    pub seed: u64,
    /// Replaces the nominal inner step size of the expansion fixtures; the
    /// γ grids scale with it.
    pub gamma: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_CHECK_SEED,
            gamma: None,
        }
    }
}

impl CheckOptions {
    fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(DEFAULT_GAMMA)
    }

    fn rng(&self, label: &str) -> RngStream {
        RngStream::new(self.seed).substream(label)
    }
}

pub trait TheoremCheck: Send + Sync {
    fn name(&self) -> &'static str;
    fn suite(&self) -> Suite;
    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub seed: u64,
    pub gamma_override: Option<f64>,
    pub passed: bool,
    pub outcomes: Vec<CheckOutcome>,
}

pub struct CheckRegistry {
    checks: Vec<Box<dyn TheoremCheck>>,
}

impl Default for CheckRegistry {
    fn default() -> Self {
        let mut r = Self { checks: Vec::new() };
        r.register(Box::new(SecondOrderCheck));
        r.register(Box::new(ThirdOrderCheck));
        r.register(Box::new(ClosenessCheck));
        r.register(Box::new(ConvergenceCheck));
        r.register(Box::new(NsgdIdentityCheck));
        r.register(Box::new(GeneralizationCheck));
        r
    }
}

impl CheckRegistry {
    pub fn register(&mut self, check: Box<dyn TheoremCheck>) {
        self.checks.push(check);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.checks.iter().map(|c| c.name()).collect()
    }

    /// Runs every check in `suite`. A check that errors becomes a failed row.
    pub fn run(&self, suite: Suite, opts: &CheckOptions) -> CheckReport {
        let mut outcomes = Vec::new();
        for c in self.checks.iter().filter(|c| suite.includes(c.suite())) {
            log::info!("running check {}", c.name());
            match c.run(opts) {
                Ok(rows) => outcomes.extend(rows),
                Err(e) => outcomes.push(CheckOutcome::failed(c.name(), &e)),
            }
        }
        CheckReport {
            suite,
            seed: opts.seed,
            gamma_override: opts.gamma,
            passed: outcomes.iter().all(CheckOutcome::passed),
            outcomes,
        }
    }
}

fn quadratic(d: usize, rng: &mut RngStream) -> QuadraticTask {
    QuadraticTask::new(random_spd(d, 0.5, 2.0, rng), rng.normal_vector(d, 1.0), 0.0)
        .expect("spd by construction")
}

/// A start point well outside the cloud of minimizers.
fn probe_point(d: usize, rng: &mut RngStream) -> ParameterVector {
    let mut theta = rng.unit_vector(d).scaled(4.0);
    theta.axpy(1.0, &rng.normal_vector(d, 0.3));
    theta
}

/// `(task set, start point, K)` instances for the second-order identity.
pub fn second_order_fixtures(
    rng: &mut RngStream,
    count: usize,
) -> Vec<(TaskSet, ParameterVector, usize)> {
    (0..count)
        .map(|i| {
            let k = [2, 3][i % 2];
            let d = [2, 5][(i / 2) % 2];
            let ts = TaskSet::new((0..k).map(|_| quadratic(d, rng).into()).collect())
                .expect("non-empty");
            let theta = probe_point(d, rng);
            (ts, theta, k)
        })
        .collect()
}

/// Two-task cubic sets in dimension 3.
pub fn cubic_fixtures(
    rng: &mut RngStream,
    count: usize,
    third_bound: f64,
) -> Vec<(TaskSet, ParameterVector)> {
    (0..count)
        .map(|_| {
            let tasks = (0..2)
                .map(|_| CubicTask::random(quadratic(3, rng), third_bound, rng).into())
                .collect();
            (TaskSet::new(tasks).expect("non-empty"), probe_point(3, rng))
        })
        .collect()
}

/// Residual of the second-order expansion and its bound at γ, with the
/// constants taken over every inner iterate visited by the enumeration.
pub fn second_order_residual(
    ts: &TaskSet,
    theta: &ParameterVector,
    k: usize,
    gamma: f64,
) -> Result<(f64, f64)> {
    let cfg = NexusConfig::new(gamma, k);
    let (exact, c): (ParameterVector, SmoothnessConstants) =
        exact_expectation_with_constants(ts, theta, &cfg)?;
    let r = exact.distance(&second_order_direction(ts, theta, &cfg)?);
    Ok((r, second_order_error_bound(&c, k, gamma)))
}

struct SecondOrderCheck;

impl TheoremCheck for SecondOrderCheck {
    fn name(&self) -> &'static str {
        "second_order"
    }

    fn suite(&self) -> Suite {
        Suite::SecondOrder
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let g0 = opts.gamma();
        let fixtures = second_order_fixtures(&mut opts.rng("second_order"), 20);
        let (mut worst_ratio, mut worst) = (f64::NEG_INFINITY, (0.0, 0.0));
        let mut slopes = Vec::new();
        for (ts, theta, k) in &fixtures {
            for gamma in [g0, g0 / 10.0] {
                let (r, b) = second_order_residual(ts, theta, *k, gamma)?;
                if r / b > worst_ratio {
                    worst_ratio = r / b;
                    worst = (r, b);
                }
            }
            let grid = [10.0 * g0, g0, g0 / 10.0];
            let res = grid
                .iter()
                .map(|&g| second_order_residual(ts, theta, *k, g).map(|x| x.0))
                .collect::<Result<Vec<_>>>()?;
            slopes.push(log_log_slope(&grid, &res));
        }
        let worst_slope = slopes
            .iter()
            .copied()
            .max_by(|a, b| (a - 3.0).abs().total_cmp(&(b - 3.0).abs()))
            .unwrap_or(f64::NAN);
        Ok(vec![
            CheckOutcome::upper("second_order.error_bound", worst.0, worst.1, 0.0).with_detail(
                format!(
                    "worst residual/bound over 20 instances at γ ∈ {{{g0}, {}}}",
                    g0 / 10.0
                ),
            ),
            CheckOutcome::within("second_order.residual_slope", worst_slope, 3.0, 0.2).with_detail(
                format!(
                    "worst log-log slope {worst_slope} over γ ∈ {{{}, {g0}, {}}}",
                    10.0 * g0,
                    g0 / 10.0
                ),
            ),
        ])
    }
}

struct ThirdOrderCheck;

impl TheoremCheck for ThirdOrderCheck {
    fn name(&self) -> &'static str {
        "third_order"
    }

    fn suite(&self) -> Suite {
        Suite::ThirdOrder
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let g0 = 2.0 * opts.gamma();
        let grid = [g0, g0 / 2.0, g0 / 4.0];
        let mut rng = opts.rng("third_order");
        let mut slopes = Vec::new();
        let mut closed_form_ratio: f64 = 0.0;
        for (ts, theta) in cubic_fixtures(&mut rng, 5, 0.8) {
            let mut res = Vec::new();
            for &g in &grid {
                let cfg = NexusConfig::new(g, 2);
                let (exact, c) = exact_expectation_with_constants(&ts, &theta, &cfg)?;
                let r = exact.distance(&third_order_direction(&ts, &theta, &cfg)?);
                closed_form_ratio = closed_form_ratio.max(r / third_order_error_bound(&c, 2, g));
                res.push(r);
            }
            slopes.push(log_log_slope(&grid, &res));
        }
        let worst_slope = slopes
            .iter()
            .copied()
            .max_by(|a, b| (a - 4.0).abs().total_cmp(&(b - 4.0).abs()))
            .unwrap_or(f64::NAN);
        let mut quad_tensor: f64 = 0.0;
        for (ts, theta, _) in second_order_fixtures(&mut rng, 4) {
            let cfg = NexusConfig::new(g0, 2);
            quad_tensor =
                quad_tensor.max(third_order_term_part(&ts, &theta, &cfg, Part::Tensor)?.norm());
            quad_tensor =
                quad_tensor.max(sharpness_tensor_term(&ts, &theta, 2, cfg.grad_floor)?.norm());
        }
        Ok(vec![
            CheckOutcome::within("third_order.residual_slope", worst_slope, 4.0, 0.2).with_detail(
                format!("worst log-log slope over γ ∈ {grid:?}, 5 cubic sets, K=2"),
            ),
            CheckOutcome::upper("third_order.quadratic_tensor_term", quad_tensor, 0.0, 0.0),
            CheckOutcome::info(
                "third_order.residual_over_closed_form_bound",
                closed_form_ratio,
                1.0,
            )
            .with_detail("largest residual / closed-form third-order bound; not gated"),
        ])
    }
}

struct ClosenessCheck;

impl TheoremCheck for ClosenessCheck {
    fn name(&self) -> &'static str {
        "closeness"
    }

    fn suite(&self) -> Suite {
        Suite::Closeness
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let mut rng = opts.rng("closeness");
        let mut worst: f64 = f64::NEG_INFINITY;
        for i in 0..100 {
            let k = [2, 4, 8][i % 3];
            let d = [2, 3, 5][(i / 3) % 3];
            let ts = TaskSet::new((0..k).map(|_| quadratic(d, &mut rng).into()).collect())?;
            let c = closeness_bound_check(&ts)?;
            worst = worst.max(-c.first_slack).max(-c.second_slack);
        }
        Ok(vec![CheckOutcome::upper(
            "closeness.chain_violation",
            worst,
            0.0,
            1e-10,
        )
        .with_detail(
            "largest negative slack over 100 task sets, K ∈ {2,4,8}",
        )])
    }
}

/// Squared-distance ratios of every inner step of a raw-gradient Nexus run
/// with outer SGD at lr 1, on tasks sharing the minimizer 0.
pub fn convergence_ratios(
    ts: &TaskSet,
    theta0: &ParameterVector,
    gamma: f64,
    k: usize,
    steps: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, f64)> {
    let cfg = NexusConfig::new(gamma, k).with_variant(Variant::Dot);
    let mut theta = theta0.clone();
    let mut ratios = Vec::with_capacity(steps);
    while ratios.len() < steps {
        let seq: Vec<usize> = (0..k).map(|_| rng.index(ts.len())).collect();
        let pg = inner_loop_with_sequence(&theta, ts, &cfg, &seq, true)?;
        let next = sgd_step(&theta, &pg.value, 1.0)?;
        let mut path = pg.inner_trajectory.unwrap_or_default();
        path.truncate(k);
        path.push(next.clone());
        for w in path.windows(2) {
            if ratios.len() < steps {
                ratios.push(w[1].norm_sq() / w[0].norm_sq());
            }
        }
        theta = next;
    }
    Ok((ratios, theta.norm_sq() / theta0.norm_sq()))
}

/// Tasks with spectrum in `[mu, l]` and the common minimizer 0.
pub fn common_minimizer_set(
    n: usize,
    d: usize,
    mu: f64,
    l: f64,
    rng: &mut RngStream,
) -> Result<TaskSet> {
    TaskSet::new(
        (0..n)
            .map(|_| {
                QuadraticTask::new(random_spd(d, mu, l, rng), ParameterVector::zeros(d), 0.0)
                    .map(Task::from)
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

struct ConvergenceCheck;

impl TheoremCheck for ConvergenceCheck {
    fn name(&self) -> &'static str {
        "convergence"
    }

    fn suite(&self) -> Suite {
        Suite::Convergence
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let mut rng = opts.rng("convergence");
        let mut out = Vec::new();
        let steps = 200;
        for kappa in [2.0, 5.0, 10.0] {
            let (mu, l) = (1.0, kappa);
            let ts = common_minimizer_set(4, 4, mu, l, &mut rng)?;
            let theta0 = rng.normal_vector(4, 1.0);
            for gamma in [1.0 / l, 2.0 / (l + mu)] {
                let factor = convergence_contraction(mu, l, gamma)?;
                let (ratios, total) = convergence_ratios(&ts, &theta0, gamma, 4, steps, &mut rng)?;
                let worst = ratios.iter().copied().fold(0.0, f64::max);
                out.push(
                    CheckOutcome::upper(
                        format!("convergence.step_ratio.kappa{kappa}.gamma{gamma:.4}"),
                        worst,
                        factor,
                        1e-12,
                    )
                    .with_detail("largest per-step squared-distance ratio over 200 steps, K=4"),
                );
                if gamma == 2.0 / (l + mu) {
                    let rate = ((kappa - 1.0) / (kappa + 1.0)).powi(2 * steps as i32);
                    out.push(CheckOutcome::upper(
                        format!("convergence.cumulative.kappa{kappa}"),
                        total,
                        rate,
                        rate * 1e-9,
                    ));
                }
            }
        }
        Ok(out)
    }
}

struct NsgdIdentityCheck;

impl TheoremCheck for NsgdIdentityCheck {
    fn name(&self) -> &'static str {
        "nsgd_identity"
    }

    fn suite(&self) -> Suite {
        Suite::NsgdIdentity
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let mut rng = opts.rng("nsgd_identity");
        let mut worst: f64 = 0.0;
        for i in 0..10 {
            let d = 2 + i % 4;
            let ts = TaskSet::new((0..2).map(|_| quadratic(d, &mut rng).into()).collect())?;
            let theta = probe_point(d, &mut rng);
            worst = worst.max(nsgd_nexus_identity_check(&theta, &ts, 0.05, 50, &mut rng)?);
        }
        Ok(vec![CheckOutcome::upper(
            "nsgd_identity.max_divergence",
            worst,
            1e-12,
            0.0,
        )
        .with_detail("10 instances, 50 step pairs each")])
    }
}

/// `(a, K, σ²)` grid for the isotropic gap.
pub const GAP_GRID: [(f64, usize, f64); 9] = [
    (0.5, 2, 0.1),
    (0.5, 4, 0.5),
    (0.5, 8, 1.0),
    (1.0, 2, 0.5),
    (1.0, 4, 1.0),
    (1.0, 8, 0.1),
    (2.0, 2, 1.0),
    (2.0, 4, 0.1),
    (2.0, 8, 0.5),
];

/// Quadratic tasks with Hessians drawn as random rotations of a spectrum
/// spanning `[lambda_min, lambda_max]`, and isotropic Gaussian minimizers of
/// total variance `sigma_sq`.
pub fn anisotropic_task(
    d: usize,
    lambda_min: f64,
    lambda_max: f64,
    sigma_sq: f64,
    rng: &mut RngStream,
) -> Result<Task> {
    let h = random_spd(d, lambda_min, lambda_max, rng);
    let star = rng.normal_vector(d, (sigma_sq / d as f64).sqrt());
    Ok(QuadraticTask::new(h, star, 0.3)?.into())
}

struct GeneralizationCheck;

impl TheoremCheck for GeneralizationCheck {
    fn name(&self) -> &'static str {
        "generalization"
    }

    fn suite(&self) -> Suite {
        Suite::Generalization
    }

    fn run(&self, opts: &CheckOptions) -> Result<Vec<CheckOutcome>> {
        let mut rng = opts.rng("generalization");
        let draws = 10_000;
        let mut out = Vec::new();
        for (a, k, s2) in GAP_GRID {
            let fam = TaskFamily::new(ParameterVector::from_slice(&[1.0, -1.0, 0.5]), s2, a, 0.2)?;
            let est = monte_carlo_gap(
                draws,
                &mut rng,
                |r| fam.sample(k, r),
                |r| Ok(fam.sample_task(r).into()),
            )?;
            let want = quadratic_gap(a, k, s2);
            out.push(
                CheckOutcome::upper(
                    format!("generalization.isotropic.a{a}.k{k}.s{s2}"),
                    (est.mean - want).abs(),
                    3.0 * est.standard_error,
                    0.0,
                )
                .with_detail(format!(
                    "gap {} ± {} vs {want}",
                    est.mean, est.standard_error
                )),
            );
        }
        for (lmin, lmax, k) in [(0.5, 1.0, 2), (0.5, 2.5, 4), (0.2, 2.0, 3)] {
            let (d, s2) = (3, 0.6);
            let est = monte_carlo_gap(
                draws,
                &mut rng,
                |r| {
                    TaskSet::new(
                        (0..k)
                            .map(|_| anisotropic_task(d, lmin, lmax, s2, r))
                            .collect::<Result<Vec<_>>>()?,
                    )
                },
                |r| anisotropic_task(d, lmin, lmax, s2, r),
            )?;
            let bound = general_gap_bound(&CurvatureBounds::new(lmin, lmax)?, k, s2);
            out.push(
                CheckOutcome::upper(
                    format!("generalization.anisotropic.kappa{}.k{k}", lmax / lmin),
                    est.mean,
                    bound,
                    0.0,
                )
                .with_detail(format!("gap {} ± {}", est.mean, est.standard_error)),
            );
        }
        Ok(out)
    }
}

/// Exact expected pseudo-gradient of the fixture used by the scale check.
pub fn interaction_term_norm(
    ts: &TaskSet,
    theta: &ParameterVector,
    cfg: &NexusConfig,
) -> Result<f64> {
    let exact = expected_pseudo_gradient_exact(ts, theta, cfg)?;
    let (a1, _) = crate::oracles::expansion_terms(ts, theta, cfg)?;
    Ok(exact.distance(&a1.scaled(cfg.gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for n in Suite::NAMES {
            assert_eq!(n.parse::<Suite>().unwrap().to_string(), n);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn outcome_rules() {
        assert_eq!(
            CheckOutcome::upper("x", 1.0, 1.0, 0.0).status,
            CheckStatus::Pass
        );
        assert_eq!(
            CheckOutcome::upper("x", 1.1, 1.0, 0.05).status,
            CheckStatus::Fail
        );
        assert_eq!(
            CheckOutcome::within("x", 3.1, 3.0, 0.2).status,
            CheckStatus::Pass
        );
        assert!(CheckOutcome::info("x", 5.0, 1.0).passed());
    }

    #[test]
    fn convergence_suite_passes() {
        let r = CheckRegistry::default().run(Suite::Convergence, &CheckOptions::default());
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn nsgd_identity_suite_passes() {
        let r = CheckRegistry::default().run(Suite::NsgdIdentity, &CheckOptions::default());
        assert!(r.passed, "{r:#?}");
    }

    #[test]
    fn huge_gamma_fails_the_second_order_suite() {
        let opts = CheckOptions {
            gamma: Some(10.0),
            ..CheckOptions::default()
        };
        let r = CheckRegistry::default().run(Suite::SecondOrder, &opts);
        assert!(!r.passed);
        let failed: Vec<_> = r
            .outcomes
            .iter()
            .filter(|o| o.status == CheckStatus::Fail)
            .collect();
        assert!(failed.iter().all(|o| o.measured > o.bound), "{failed:#?}");
    }
}
