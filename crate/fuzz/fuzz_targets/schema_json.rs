#![no_main]

use comparables::dataset::AttributeSchema;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(schema) = AttributeSchema::from_json(text) {
            let header = schema.header();
            assert_eq!(header.len(), schema.len() + 6);
        }
    }
});
