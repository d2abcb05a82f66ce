#![no_main]

use comparables::predictor::{read_witnesses, write_witnesses};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(witnesses) = read_witnesses(data) else {
        return;
    };
    let mut out = Vec::new();
    if write_witnesses(&mut out, &witnesses).is_ok() {
        let again = read_witnesses(out.as_slice()).unwrap();
        assert_eq!(witnesses.len(), again.len());
    }
});
