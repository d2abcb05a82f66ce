#![no_main]

use comparables::dataset::{parse_csv_reader, write_csv, AttributeSchema};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let schema = AttributeSchema::continuous(&["living_area", "rooms"]).unwrap();
    let Ok((props, _report)) = parse_csv_reader(data, &schema) else {
        return;
    };
    // Accepted rows must survive a write/parse round trip unchanged.
    let mut out = Vec::new();
    write_csv(&mut out, &schema, &props).unwrap();
    let (again, report) = parse_csv_reader(out.as_slice(), &schema).unwrap();
    assert!(report.rejected.is_empty());
    assert_eq!(props, again);
});
