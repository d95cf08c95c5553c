#![no_main]

use libfuzzer_sys::fuzz_target;
use mvib::experiments::builtin_model;
use mvib::Dataset;

fuzz_target!(|data: &[u8]| {
    let m = builtin_model("eq16").unwrap();
    if let Ok(d) = Dataset::read_csv(&m, data, 0) {
        let mut out = Vec::new();
        d.write_csv(&mut out).expect("write");
        let again = Dataset::read_csv(&m, out.as_slice(), 0).expect("round trip");
        assert_eq!(again.records(), d.records());
    }
});
