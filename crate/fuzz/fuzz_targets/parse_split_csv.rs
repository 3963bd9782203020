#![no_main]

use fapsm::evaluation::{format_split_csv, parse_split_csv, significance_report};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(results) = parse_split_csv(text) {
        let _ = significance_report(&results, 0.10, Some(1.96));
        let again = parse_split_csv(&format_split_csv(&results)).unwrap();
        assert_eq!(again.accuracies, results.accuracies);
    }
});
