#![no_main]

use libfuzzer_sys::fuzz_target;
use mvib::experiments::{builtin_model, ExperimentConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(c) = ExperimentConfig::from_json_str(s) {
        let _ = c.validate();
        let m = builtin_model("eq16").unwrap();
        let _ = c.validate_for(&m);
        let _ = c.resolved_dims(&m);
    }
});
