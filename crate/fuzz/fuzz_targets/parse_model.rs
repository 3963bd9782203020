#![no_main]

use fapsm::associative::parse_model;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse_model(text) {
        assert_eq!(parse_model(&model.to_string()).unwrap(), model);
    }
});
