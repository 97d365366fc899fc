#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = drcut::io::mem::hazard_model(s) {
        let _ = model.rate(1.0, 0.5, 0.0);
        let _ = model.integrate(0.0, 5.0, 0.0, 0.0);
    }
});
