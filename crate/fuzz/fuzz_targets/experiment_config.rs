#![no_main]
use drcut::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = drcut::io::mem::toml::<ExperimentConfig>(s) {
            let _ = cfg.validate();
        }
    }
});
