#![no_main]
use drcut::sim::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = drcut::io::mem::toml::<ScenarioConfig>(s) {
            let _ = cfg.validate();
        }
    }
});
