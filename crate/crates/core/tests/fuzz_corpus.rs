//! Replays the checked-in fuzz seeds, plus every truncation of each seed,
//! through the same properties the fuzz targets check.

use std::path::PathBuf;

use fapsm::associative::parse_model;
use fapsm::combiner::{format_weights, parse_weights};
use fapsm::config::parse_config;
use fapsm::evaluation::{format_split_csv, parse_split_csv, significance_report};
use fapsm::store::{format_gallery, format_identity_map, format_probes, parse_identity_map, parse_store};

fn seeds(target: &str) -> Vec<String> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds for {target}");
    files.iter().map(|p| std::fs::read_to_string(p).unwrap()).collect()
}

/// Each seed followed by all its proper prefixes ending on a char boundary.
fn inputs(target: &str) -> Vec<String> {
    let mut out = Vec::new();
    for seed in seeds(target) {
        for (i, _) in seed.char_indices() {
            out.push(seed[..i].to_owned());
        }
        out.push(seed);
    }
    out
}

#[test]
fn store_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_store") {
        let Ok(store) = parse_store(&text) else { continue };
        parsed += 1;
        if let Ok(gallery) = store.clone().into_gallery() {
            assert_eq!(parse_store(&format_gallery(&gallery)).unwrap().into_gallery().unwrap(), gallery);
        }
        if let Ok(probes) = store.into_probes() {
            if let Some(dims) = probes.dims() {
                let again = parse_store(&format_probes(&probes, dims)).unwrap().into_probes().unwrap();
                assert_eq!(again, probes);
            }
        }
    }
    assert!(parsed >= 4);
}

#[test]
fn model_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_model") {
        if let Ok(model) = parse_model(&text) {
            parsed += 1;
            assert_eq!(parse_model(&model.to_string()).unwrap(), model);
        }
    }
    assert!(parsed >= 3);
}

#[test]
fn weights_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_weights") {
        if let Ok(w) = parse_weights(&text) {
            parsed += 1;
            assert_eq!(parse_weights(&format_weights(&w)).unwrap(), w);
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn config_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_config") {
        if let Ok(map) = parse_config(&text) {
            parsed += 1;
            let _ = map.pipeline();
            let _ = map.synth();
        }
    }
    assert!(parsed >= 2);
    let full = seeds("parse_config");
    assert!(parse_config(&full[0]).unwrap().pipeline().is_ok());
    assert!(parse_config(&full[1]).unwrap().synth().is_ok());
}

#[test]
fn split_csv_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_split_csv") {
        if let Ok(results) = parse_split_csv(&text) {
            parsed += 1;
            let _ = significance_report(&results, 0.10, Some(1.96));
            assert_eq!(parse_split_csv(&format_split_csv(&results)).unwrap().accuracies, results.accuracies);
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn identity_map_seeds() {
    let mut parsed = 0;
    for text in inputs("parse_identity_map") {
        if let Ok(map) = parse_identity_map(&text) {
            parsed += 1;
            assert_eq!(parse_identity_map(&format_identity_map(&map)).unwrap(), map);
        }
    }
    assert!(parsed >= 1);
}
