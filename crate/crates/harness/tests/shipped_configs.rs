use std::path::{Path, PathBuf};

use nexus_harness::ExperimentConfig;

fn shipped() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_shipped_config_loads_and_round_trips() {
    let files = shipped();
    assert!(files.len() >= 4);
    for f in files {
        let cfg = ExperimentConfig::load(&f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        let again =
            ExperimentConfig::from_toml_str(&cfg.to_toml_string(), f.parent().unwrap(), &[])
                .unwrap();
        assert_eq!(cfg, again, "{}", f.display());
    }
}

#[test]
fn paired_configs_differ_only_in_name_and_optimizer() {
    for (a, b) in [
        ("quadratic_adamw", "quadratic_nexus"),
        ("mlp_adamw", "mlp_nexus"),
    ] {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut x = ExperimentConfig::load(&dir.join(format!("{a}.toml"))).unwrap();
        let y = ExperimentConfig::load(&dir.join(format!("{b}.toml"))).unwrap();
        assert_ne!(x.optimizer, y.optimizer);
        x.name = y.name.clone();
        x.optimizer = y.optimizer.clone();
        assert_eq!(x, y);
    }
}
