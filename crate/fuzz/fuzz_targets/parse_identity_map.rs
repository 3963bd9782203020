#![no_main]

use fapsm::store::{format_identity_map, parse_identity_map};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_identity_map(text) {
        assert_eq!(parse_identity_map(&format_identity_map(&map)).unwrap(), map);
    }
});
