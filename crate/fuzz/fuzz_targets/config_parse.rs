#![no_main]

use bec_fem::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // must never panic; accepted configs must pass their own validation
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            assert!(cfg.validate().is_ok());
            let _ = cfg.problem().mesh(cfg.levels[0]);
        }
    }
});
