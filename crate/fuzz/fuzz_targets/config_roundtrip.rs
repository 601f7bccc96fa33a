#![no_main]

use bec_fem::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = ExperimentConfig::parse(text) else {
        return;
    };
    let back = ExperimentConfig::parse(&cfg.to_toml()).expect("serialized config parses");
    assert_eq!(back, cfg);
});
