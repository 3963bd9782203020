#![no_main]

use fapsm::combiner::{format_weights, parse_weights};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(w) = parse_weights(text) {
        assert_eq!(parse_weights(&format_weights(&w)).unwrap(), w);
    }
});
