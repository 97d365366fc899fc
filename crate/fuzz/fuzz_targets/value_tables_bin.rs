#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tables) = drcut::io::mem::tables(data) {
        let w = tables.grid.w_nodes[0];
        let _ = tables.v1(0.0, w);
        let _ = tables.marginal_truth(w);
        assert_eq!(drcut::io::encode_tables(&tables), data);
    }
});
