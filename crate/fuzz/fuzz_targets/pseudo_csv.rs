#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = drcut::io::mem::pseudo(s) {
        assert!(rows.iter().all(|r| r.value.is_finite() && r.w.is_finite()));
    }
});
