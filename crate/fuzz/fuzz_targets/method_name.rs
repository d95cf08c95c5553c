#![no_main]

use libfuzzer_sys::fuzz_target;
use mvib::evaluation::Method;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = s.parse::<Method>() {
        assert_eq!(m.as_str(), s);
    }
});
