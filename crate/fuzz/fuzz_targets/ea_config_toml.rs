#![no_main]

use comparables::evolution::EaConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = EaConfig::from_toml(text) {
            let back = EaConfig::from_toml(&config.to_toml()).unwrap();
            assert_eq!(config, back);
        }
    }
});
