//! The check registry end to end at its default settings.

use nexus_core::checks::{CheckOptions, CheckRegistry, CheckStatus, Suite};

#[test]
fn every_default_suite_passes() {
    let report = CheckRegistry::default().run(Suite::All, &CheckOptions::default());
    for o in &report.outcomes {
        assert!(
            o.passed(),
            "{} {:?} measured={} bound={}",
            o.check_name,
            o.status,
            o.measured,
            o.bound
        );
    }
    assert!(report.passed);
    for s in Suite::NAMES.iter().filter(|n| **n != "all") {
        assert!(
            report.outcomes.iter().any(|o| o.check_name.starts_with(s)),
            "no rows for suite {s}"
        );
    }
}

#[test]
fn reports_are_reproducible_for_a_seed() {
    let opts = CheckOptions {
        seed: 77,
        gamma: None,
    };
    let reg = CheckRegistry::default();
    let a = reg.run(Suite::SecondOrder, &opts);
    let b = reg.run(Suite::SecondOrder, &opts);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn failing_rows_exceed_their_bound() {
    let opts = CheckOptions {
        seed: 3,
        gamma: Some(10.0),
    };
    let report = CheckRegistry::default().run(Suite::SecondOrder, &opts);
    assert!(!report.passed);
    let failed: Vec<_> = report
        .outcomes
        .iter()
        .filter(|o| o.status == CheckStatus::Fail)
        .collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|o| o.measured > o.bound + o.tolerance));
}
