#![no_main]

use active_sysid::config::{apply_override, ExperimentConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let specs: Vec<String> = text.lines().map(str::to_string).collect();
        let mut value = serde_json::to_value(ExperimentConfig::default()).unwrap();
        for spec in &specs {
            let _ = apply_override(&mut value, spec);
        }
        let _ = ExperimentConfig::default_with_overrides(&specs);
    }
});
