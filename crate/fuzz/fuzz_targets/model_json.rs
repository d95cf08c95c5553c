#![no_main]

use libfuzzer_sys::fuzz_target;
use mvib::JointModel;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(m) = JointModel::from_json_str(s) {
        // Anything accepted must survive a round trip.
        let again = JointModel::from_json_str(&m.to_json_string()).expect("round trip");
        assert_eq!(again.num_views(), m.num_views());
        assert_eq!(again.alphabet_sizes(), m.alphabet_sizes());
    }
});
