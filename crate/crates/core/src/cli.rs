//! Command-line interface: `generate`, `train`, `match`, `evaluate`,
//! `sweep` and `stats`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::{Args, Parser, Subcommand};

use crate::associative::parse_model;
use crate::combiner::{format_weights, parse_weights};
use crate::config::{parse_config, ConfigMap};
use crate::error::{FapsmError, Result};
use crate::evaluation::{parse_split_csv, rank1_accuracy, significance_report, sweep_threshold, DEFAULT_SWEEP};
use crate::local::local_match;
use crate::pipeline::{identify_local, train, TrainedMatcher};
use crate::signature::validate_pairing;
use crate::store::{read_gallery, read_probes, read_text, write_gallery, write_probes, write_text};
use crate::synth;

pub const CONFIG_ENV: &str = "FAPSM_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "fapsm", version, about = "Fully associative patch-based 1-to-N signature matcher")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub settings: Settings,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic gallery and labeled probe store(s).
    Generate,
    /// Learn the associative model and patch weights from labeled probes.
    Train,
    /// Identify every probe; one CSV line per probe.
    Match,
    /// Baseline vs. learned rank-1 and per-patch accuracies on labeled probes.
    Evaluate,
    /// Training rank-1 for each candidate threshold.
    Sweep,
    /// Friedman / Bonferroni-Dunn comparison from a split-results CSV.
    Stats,
}

/// Every setting can come from the config file or a flag of the same name.
#[derive(Debug, Default, Args)]
pub struct Settings {
    /// Config file (defaults to $FAPSM_CONFIG)
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true)]
    pub lambda1: Option<String>,
    #[arg(long, global = true)]
    pub lambda2: Option<String>,
    #[arg(long, global = true)]
    pub threshold: Option<String>,
    /// kernel | linear
    #[arg(long, global = true)]
    pub mode: Option<String>,
    /// gaussian | linear
    #[arg(long, global = true)]
    pub kernel: Option<String>,
    #[arg(long, global = true)]
    pub sigma: Option<String>,
    #[arg(long, global = true)]
    pub nk: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    #[arg(long, global = true)]
    pub identities: Option<String>,
    #[arg(long = "probes_per_identity", global = true)]
    pub probes_per_identity: Option<String>,
    #[arg(long, global = true)]
    pub b: Option<String>,
    #[arg(long, global = true)]
    pub m: Option<String>,
    #[arg(long = "noise_sigma", global = true)]
    pub noise_sigma: Option<String>,
    #[arg(long = "occlusion_prob", global = true)]
    pub occlusion_prob: Option<String>,
    #[arg(long = "corruption_probs", global = true)]
    pub corruption_probs: Option<String>,
    #[arg(long, global = true)]
    pub gallery: Option<String>,
    #[arg(long, global = true)]
    pub probes: Option<String>,
    #[arg(long = "test_probes", global = true)]
    pub test_probes: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub weights: Option<String>,
    #[arg(long, global = true)]
    pub output: Option<String>,
    #[arg(long, global = true)]
    pub splits: Option<String>,
    #[arg(long, global = true)]
    pub thresholds: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    #[arg(long = "q_alpha", global = true)]
    pub q_alpha: Option<String>,
}

impl Settings {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let fields: [(&'static str, &Option<String>); 25] = [
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("threshold", &self.threshold),
            ("mode", &self.mode),
            ("kernel", &self.kernel),
            ("sigma", &self.sigma),
            ("nk", &self.nk),
            ("seed", &self.seed),
            ("identities", &self.identities),
            ("probes_per_identity", &self.probes_per_identity),
            ("b", &self.b),
            ("m", &self.m),
            ("noise_sigma", &self.noise_sigma),
            ("occlusion_prob", &self.occlusion_prob),
            ("corruption_probs", &self.corruption_probs),
            ("gallery", &self.gallery),
            ("probes", &self.probes),
            ("test_probes", &self.test_probes),
            ("model", &self.model),
            ("weights", &self.weights),
            ("output", &self.output),
            ("splits", &self.splits),
            ("thresholds", &self.thresholds),
            ("alpha", &self.alpha),
            ("q_alpha", &self.q_alpha),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Config file values overlaid with flags.
    pub fn resolve(&self) -> Result<ConfigMap> {
        let path = self.config.clone().or_else(|| std::env::var(CONFIG_ENV).ok());
        let mut map = match path {
            Some(p) => parse_config(&read_text(Path::new(&p))?)?,
            None => ConfigMap::default(),
        };
        for (k, v) in self.overrides() {
            map.set(k, v.clone())?;
        }
        Ok(map)
    }
}

/// Writes to `output` when configured, else returns the text for stdout.
fn emit(cfg: &ConfigMap, text: String) -> Result<Option<String>> {
    match cfg.path("output") {
        Some(p) => write_text(&p, &text).map(|_| None),
        None => Ok(Some(text)),
    }
}

fn load_matcher(cfg: &ConfigMap) -> Result<TrainedMatcher> {
    let model = parse_model(&read_text(&cfg.require_path("model")?)?).map_err(|e| e.in_stage("model file"))?;
    let weights =
        parse_weights(&read_text(&cfg.require_path("weights")?)?).map_err(|e| e.in_stage("weights file"))?;
    if model.num_patches() != weights.len() {
        return Err(FapsmError::DimensionMismatch(format!(
            "model has m={}, weights have m={}",
            model.num_patches(),
            weights.len()
        )));
    }
    Ok(TrainedMatcher { model, weights })
}

pub fn cmd_generate(cfg: &ConfigMap) -> Result<Option<String>> {
    let synth_cfg = cfg.synth()?;
    let gallery_path = cfg.require_path("gallery")?;
    let probes_path = cfg.require_path("probes")?;
    let protos = synth::prototypes(&synth_cfg)?;
    let gallery = synth::gallery_from_prototypes(&protos)?;
    let probes = synth::probes_from_prototypes(&synth_cfg, &protos, "probes")?;
    let dims = (synth_cfg.feature_dim, synth_cfg.num_patches);
    write_gallery(&gallery_path, &gallery)?;
    write_probes(&probes_path, &probes, dims)?;
    let mut report = format!("gallery={} probes={}", gallery.len(), probes.len());
    if let Some(test_path) = cfg.path("test_probes") {
        let test = synth::probes_from_prototypes(&synth_cfg, &protos, "test-probes")?;
        write_probes(&test_path, &test, dims)?;
        let _ = write!(report, " test_probes={}", test.len());
    }
    report.push('\n');
    Ok(Some(report))
}

pub fn cmd_train(cfg: &ConfigMap) -> Result<Option<String>> {
    let pipeline = cfg.pipeline()?;
    let gallery = read_gallery(&cfg.require_path("gallery")?)?;
    let probes = read_probes(&cfg.require_path("probes")?)?;
    let model_path = cfg.require_path("model")?;
    let weights_path = cfg.require_path("weights")?;
    let (matcher, summary) = train(&gallery, &probes, &pipeline)?;
    write_text(&model_path, &matcher.model.to_string())?;
    write_text(&weights_path, &format_weights(&matcher.weights))?;
    let q: Vec<String> = matcher.weights.weights.iter().map(|v| v.to_string()).collect();
    let text = format!(
        "training_probes={}\nbaseline_rank1={}\nfapsm_rank1={}\nmode={}\nsupports={}\nweights={}\n",
        summary.num_probes,
        summary.baseline_accuracy,
        summary.fapsm_accuracy,
        matcher.model.mode(),
        matcher.model.num_supports(),
        q.join(",")
    );
    emit(cfg, text)
}

pub fn cmd_match(cfg: &ConfigMap) -> Result<Option<String>> {
    let matcher = load_matcher(cfg)?;
    let gallery = read_gallery(&cfg.require_path("gallery")?)?;
    let probes = read_probes(&cfg.require_path("probes")?)?;
    let local = local_match(&gallery, &probes).map_err(|e| e.in_stage("local matching"))?;
    let (ids, _) = identify_local(&matcher, &local)?;
    let mut out = String::new();
    for (i, r) in ids.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{}",
            r.final_identity, r.final_score, r.baseline_identity, r.baseline_score
        );
    }
    emit(cfg, out)
}

pub fn cmd_evaluate(cfg: &ConfigMap) -> Result<Option<String>> {
    let matcher = load_matcher(cfg)?;
    let gallery = read_gallery(&cfg.require_path("gallery")?)?;
    let probes = read_probes(&cfg.require_path("probes")?)?;
    validate_pairing(&gallery, &probes).into_result()?;
    let truth = probes.labels()?;
    let local = local_match(&gallery, &probes).map_err(|e| e.in_stage("local matching"))?;
    let (ids, global) = identify_local(&matcher, &local)?;
    let finals: Vec<_> = ids.iter().map(|r| r.final_identity).collect();
    let baselines: Vec<_> = ids.iter().map(|r| r.baseline_identity).collect();

    let n = truth.len();
    let mut out = format!(
        "probes={n}\nbaseline_rank1={}\nfapsm_rank1={}\npatch,local_rank1,global_rank1\n",
        rank1_accuracy(&baselines, truth)?,
        rank1_accuracy(&finals, truth)?
    );
    for j in 0..local.num_patches() {
        let col = |m: &nalgebra::DMatrix<crate::signature::Identity>| {
            (0..n).filter(|&i| m[(i, j)] == truth[i]).count() as f64 / n as f64
        };
        let _ = writeln!(out, "{},{},{}", j + 1, col(&local.identities), col(&global.identities));
    }
    emit(cfg, out)
}

pub fn cmd_sweep(cfg: &ConfigMap) -> Result<Option<String>> {
    let pipeline = cfg.pipeline()?;
    let gallery = read_gallery(&cfg.require_path("gallery")?)?;
    let probes = read_probes(&cfg.require_path("probes")?)?;
    let candidates = cfg.get_list("thresholds")?.unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    let report = sweep_threshold(&gallery, &probes, &candidates, &pipeline)?;
    emit(cfg, report.to_string())
}

pub fn cmd_stats(cfg: &ConfigMap) -> Result<Option<String>> {
    let results = parse_split_csv(&read_text(&cfg.require_path("splits")?)?)?;
    let alpha = cfg.get_f64("alpha")?.unwrap_or(0.10);
    let report = significance_report(&results, alpha, cfg.get_f64("q_alpha")?)?;
    emit(cfg, format!("{report}\n{}", report.key_values()))
}

pub fn run(cli: &Cli) -> Result<Option<String>> {
    let cfg = cli.settings.resolve()?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Match => cmd_match(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Stats => cmd_stats(&cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(Some(text)) => {
            print!("{text}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_class() as i32
        }
    }
}
