#![no_main]

use comparables::dataset::AttributeSchema;
use comparables::similarity::SimilarityGenome;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let schema = AttributeSchema::continuous(&["living_area", "rooms", "age"]).unwrap();
    if let Ok(genome) = SimilarityGenome::from_json(text, &schema) {
        let back = SimilarityGenome::from_json(&genome.to_json(&schema), &schema).unwrap();
        assert_eq!(genome, back);
    }
});
