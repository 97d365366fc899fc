#![no_main]
use libfuzzer_sys::fuzz_target;

// both readers must reject or accept without panicking; accepted
// subjects always satisfy the path invariants
fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(subjects) = drcut::io::mem::observed_cohort(s, 5.0) {
        for subj in &subjects {
            assert!(subj.validate(5.0).is_ok());
        }
    }
    if let Ok(full) = drcut::io::mem::full_cohort(s, 5.0) {
        for f in &full {
            assert!(f.validate(5.0).is_ok());
        }
    }
});
