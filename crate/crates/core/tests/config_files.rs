use std::fs;
use std::path::PathBuf;

use bec_fem::config::ExperimentConfig;

fn repo_dir(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

#[test]
fn shipped_configs_parse() {
    let mut count = 0;
    for entry in fs::read_dir(repo_dir("configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_path(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(cfg.output.starts_with(path.parent().unwrap()));
        count += 1;
    }
    assert!(count >= 4);
}

/// Replays the fuzz corpus through the fuzz targets' invariants.
#[test]
fn fuzz_corpus_invariants() {
    for target in ["config_parse", "config_roundtrip"] {
        for entry in fs::read_dir(repo_dir("fuzz/corpus").join(target)).unwrap() {
            let bytes = fs::read(entry.unwrap().path()).unwrap();
            let Ok(text) = std::str::from_utf8(&bytes) else {
                continue;
            };
            if let Ok(cfg) = ExperimentConfig::parse(text) {
                assert!(cfg.validate().is_ok());
                assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
            }
        }
    }
}
