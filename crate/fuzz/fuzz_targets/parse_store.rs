#![no_main]

use fapsm::store::{format_gallery, format_probes, parse_store};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(store) = parse_store(text) else { return };
    if let Ok(gallery) = store.clone().into_gallery() {
        let again = parse_store(&format_gallery(&gallery)).unwrap().into_gallery().unwrap();
        assert_eq!(again, gallery);
    }
    if let Ok(probes) = store.into_probes() {
        if let Some(dims) = probes.dims() {
            let again = parse_store(&format_probes(&probes, dims)).unwrap().into_probes().unwrap();
            assert_eq!(again, probes);
        }
    }
});
