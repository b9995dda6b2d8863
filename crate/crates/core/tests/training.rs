//! Training loop behaviour through the public API.

use nexus_core::nexus::{
    train, BatchStream, NexusConfig, Sampling, StrategyRegistry, TrainSettings,
};
use nexus_core::optimizers::{AdamWHyper, Schedule};
use nexus_core::tasks::TaskFamily;
use nexus_core::{ParameterVector, RngStream, TaskSet};

fn family(seed: u64) -> (TaskSet, ParameterVector) {
    let mut rng = RngStream::new(seed);
    let fam = TaskFamily::new(ParameterVector::zeros(6), 1.0, 1.0, 0.0).unwrap();
    let ts = fam.sample(4, &mut rng).unwrap();
    (ts, rng.normal_vector(6, 3.0))
}

fn run(strategy: &str, seed: u64, steps: usize) -> nexus_core::nexus::Trajectory {
    let (ts, theta0) = family(seed);
    let cfg = NexusConfig::new(0.1, 4);
    let mut st = StrategyRegistry::default().build(strategy, &cfg).unwrap();
    let mut stream = BatchStream::full(
        Sampling::Permuted,
        ts.len(),
        RngStream::new(seed).substream("batches"),
    );
    let settings = TrainSettings {
        total_steps: steps,
        accum_steps: 4,
        metric_cadence: 10,
        clip_norm: Some(1.0),
        schedule: Schedule::constant(0.05, steps),
        adamw: AdamWHyper::default(),
    };
    train(
        &ts,
        &theta0,
        &mut st,
        &mut stream,
        &settings,
        None,
        &mut |_| Ok(()),
    )
    .unwrap()
}

#[test]
fn every_registered_strategy_reduces_the_train_loss() {
    for name in StrategyRegistry::default().names() {
        let tr = run(name, 4, 200);
        let (first, last) = (tr.rows[0].train_loss, tr.last_row().unwrap().train_loss);
        assert!(last < first, "{name}: {first} -> {last}");
    }
}

#[test]
fn identical_inputs_give_identical_trajectories() {
    let a = run("nexus_adamw", 9, 50);
    let b = run("nexus_adamw", 9, 50);
    assert_eq!(a, b);
    let c = run("nexus_adamw", 10, 50);
    assert_ne!(a.final_theta, c.final_theta);
}

#[test]
fn nexus_spends_one_gradient_per_inner_step() {
    let tr = run("nexus_adamw", 1, 30);
    assert_eq!(tr.grad_evals, 30 * 4);
}
