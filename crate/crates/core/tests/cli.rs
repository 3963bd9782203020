use std::path::Path;
use std::process::{Command, Output};

use fapsm::store::read_probes;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fapsm"))
        .current_dir(dir)
        .args(args)
        .env_remove("FAPSM_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {report}"))
}

fn setup(dir: &Path) {
    ok(
        dir,
        &[
            "generate",
            "--gallery=g.sig",
            "--probes=p.sig",
            "--test_probes=t.sig",
            "--identities=10",
            "--probes_per_identity=5",
            "--b=16",
            "--m=4",
            "--noise_sigma=0.25",
            "--occlusion_prob=0.1",
            "--corruption_probs=0,0,0,0.6",
            "--seed=3",
        ],
    );
    ok(dir, &["train", "--gallery=g.sig", "--probes=p.sig", "--model=model.txt", "--weights=w.txt"]);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
    assert_eq!(run(d, &["train", "--gallery=missing.sig", "--probes=missing.sig", "--model=m", "--weights=w"]).status.code(), Some(2));
    setup(d);
    assert_eq!(run(d, &["train", "--gallery=g.sig", "--probes=p.sig", "--model=m2", "--weights=w2", "--lambda1=0"]).status.code(), Some(1));
    // every patch rejected, so weight learning has nothing to fit
    let out = run(d, &["train", "--gallery=g.sig", "--probes=p.sig", "--model=m2", "--weights=w2", "--threshold=1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weight learning"));
}

#[test]
fn corrupt_model_header_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let model = std::fs::read_to_string(d.join("model.txt")).unwrap();
    std::fs::write(d.join("bad.txt"), model.replacen("fapsm-model v1", "fapsm-model v9", 1)).unwrap();
    let out = run(d, &["match", "--gallery=g.sig", "--probes=t.sig", "--model=bad.txt", "--weights=w.txt", "--output=out.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model file"));
    assert!(!d.join("out.csv").exists());
}

#[test]
fn match_on_training_probes_reproduces_training_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let report = ok(d, &["train", "--gallery=g.sig", "--probes=p.sig", "--model=model.txt", "--weights=w.txt"]);
    let lines = ok(d, &["match", "--gallery=g.sig", "--probes=p.sig", "--model=model.txt", "--weights=w.txt"]);
    let probes = read_probes(&d.join("p.sig")).unwrap();
    let truth = probes.labels().unwrap();
    let mut hits = 0;
    let mut count = 0;
    for (i, line) in lines.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[0], i.to_string());
        hits += usize::from(fields[1].parse::<i64>().unwrap() == truth[i].0);
        count += 1;
    }
    assert_eq!(count, truth.len());
    let accuracy = hits as f64 / count as f64;
    assert_eq!(value(&report, "fapsm_rank1"), accuracy.to_string());

    let eval = ok(d, &["evaluate", "--gallery=g.sig", "--probes=p.sig", "--model=model.txt", "--weights=w.txt"]);
    assert_eq!(value(&eval, "fapsm_rank1"), value(&report, "fapsm_rank1"));
    assert_eq!(value(&eval, "baseline_rank1"), value(&report, "baseline_rank1"));
    assert!(eval.contains("patch,local_rank1,global_rank1\n"));
}

#[test]
fn config_file_from_environment_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    std::fs::write(
        &cfg,
        "# synthetic run\nidentities = 4\nprobes_per_identity = 2\nb = 8\nm = 2\ngallery = g.sig\nprobes = p.sig\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fapsm"))
        .current_dir(d)
        .args(["generate", "--identities=5"])
        .env("FAPSM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "gallery=5 probes=10\n");
    assert_eq!(read_probes(&d.join("p.sig")).unwrap().dims(), Some((8, 2)));

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fapsm"))
        .current_dir(d)
        .arg("generate")
        .env("FAPSM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn rejected_probes_fall_back_to_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let model = std::fs::read_to_string(d.join("model.txt")).unwrap();
    let header = model.lines().next().unwrap();
    let t = header.split(' ').find(|f| f.starts_with("t=")).unwrap();
    std::fs::write(d.join("strict.txt"), model.replacen(t, "t=1", 1)).unwrap();
    let lines = ok(d, &["match", "--gallery=g.sig", "--probes=t.sig", "--model=strict.txt", "--weights=w.txt"]);
    assert!(!lines.is_empty());
    for line in lines.lines() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!((f[1], f[2]), (f[3], f[4]), "{line}");
    }
}

fn stats(dir: &Path, csv: &str) -> Output {
    std::fs::write(dir.join("splits.csv"), csv).unwrap();
    run(dir, &["stats", "--splits=splits.csv"])
}

#[test]
fn stats_report_significance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("split,fapsm,baseline\n");
    for i in 0..30 {
        let (a, b) = match i {
            0..=20 => (0.80, 0.78),
            21..=28 => (0.77, 0.79),
            _ => (0.75, 0.75),
        };
        csv.push_str(&format!("{},{a},{b}\n", i + 1));
    }
    let out = stats(d, &csv);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ranks: Vec<f64> = value(&text, "avg_ranks").split(',').map(|r| r.parse().unwrap()).collect();
    assert_eq!(ranks.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>(), vec![1.28, 1.72]);
    assert_eq!(value(&text, "significant_pairs"), "fapsm:baseline");

    let same: String = std::iter::once("split,a,b\n".to_owned())
        .chain((1..=5).map(|i| format!("{i},0.{i},0.{i}\n")))
        .collect();
    let text = String::from_utf8(stats(d, &same).stdout).unwrap();
    assert_eq!(value(&text, "significant_pairs"), "");
    assert_eq!(value(&text, "friedman_chi2"), "0");

    let out = stats(d, "split,a,b\n1,0.5,0.4\n2,0.5,oops\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn sweep_on_clean_data_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["generate", "--gallery=g.sig", "--probes=p.sig", "--identities=6", "--probes_per_identity=2", "--b=16", "--m=3"]);
    let report = ok(d, &["sweep", "--gallery=g.sig", "--probes=p.sig"]);
    for t in ["0.2", "0.3", "0.4", "0.5", "0.6"] {
        assert!(report.contains(&format!("\n{t},1\n")), "{report}");
    }
    assert_eq!(value(&report, "best_t"), "0.2");
}
