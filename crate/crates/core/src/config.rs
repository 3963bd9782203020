//! `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are shared by
//! every subcommand; each command reads the ones it needs. Command-line flags
//! with the same names override file values.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::associative::KernelSpec;
use crate::error::{FapsmError, Result};
use crate::pipeline::{LearnerMode, PipelineConfig};
use crate::synth::SynthConfig;

pub const KNOWN_KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "threshold",
    "mode",
    "kernel",
    "sigma",
    "nk",
    "seed",
    "identities",
    "probes_per_identity",
    "b",
    "m",
    "noise_sigma",
    "occlusion_prob",
    "corruption_probs",
    "gallery",
    "probes",
    "test_probes",
    "model",
    "weights",
    "output",
    "splits",
    "thresholds",
    "alpha",
    "q_alpha",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, (usize, String)>,
}

fn check_key(key: &str, line: usize) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        Ok(())
    } else {
        Err(FapsmError::parse(line, format!("unknown key \"{key}\"")))
    }
}

pub fn parse_config(text: &str) -> Result<ConfigMap> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| FapsmError::parse(line_no, "expected \"key = value\""))?;
        let (key, value) = (key.trim(), value.trim());
        check_key(key, line_no)?;
        if values.insert(key.to_owned(), (line_no, value.to_owned())).is_some() {
            return Err(FapsmError::parse(line_no, format!("duplicate key \"{key}\"")));
        }
    }
    Ok(ConfigMap { values })
}

impl ConfigMap {
    /// Sets a value from the command line, replacing any file value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key, 0)?;
        self.values.insert(key.to_owned(), (0, value.into()));
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| FapsmError::parse(*line, format!("invalid value \"{v}\" for {key}"))),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get_parsed(key)
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get_parsed(key)
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get_parsed(key)
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| FapsmError::parse(*line, format!("invalid list item \"{x}\" for {key}")))
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| FapsmError::InvalidArgument(format!("missing required setting \"{key}\"")))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        if let Some(v) = self.get_f64("lambda1")? {
            c.lambda1 = v;
        }
        if let Some(v) = self.get_f64("lambda2")? {
            c.lambda2 = v;
        }
        if let Some(v) = self.get_f64("threshold")? {
            c.threshold = v;
        }
        c.mode = match self.get_str("mode") {
            None | Some("kernel") => LearnerMode::Kernel,
            Some("linear") => LearnerMode::Linear,
            Some(other) => return Err(FapsmError::InvalidArgument(format!("unknown mode \"{other}\""))),
        };
        let sigma = self.get_f64("sigma")?;
        c.kernel = match self.get_str("kernel") {
            None | Some("gaussian") => KernelSpec::gaussian(sigma.unwrap_or(crate::associative::DEFAULT_SIGMA))?,
            Some("linear") => KernelSpec::Linear,
            Some(other) => return Err(FapsmError::InvalidArgument(format!("unknown kernel \"{other}\""))),
        };
        c.n_k = self.get_usize("nk")?;
        if let Some(v) = self.get_u64("seed")? {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let mut c = SynthConfig::default();
        if let Some(v) = self.get_usize("identities")? {
            c.identities = v;
        }
        if let Some(v) = self.get_usize("probes_per_identity")? {
            c.probes_per_identity = v;
        }
        if let Some(v) = self.get_usize("b")? {
            c.feature_dim = v;
        }
        if let Some(v) = self.get_usize("m")? {
            c.num_patches = v;
        }
        if let Some(v) = self.get_f64("noise_sigma")? {
            c.noise_sigma = v;
        }
        if let Some(v) = self.get_f64("occlusion_prob")? {
            c.occlusion_prob = v;
        }
        c.corruption_probs = match self.get_list("corruption_probs")? {
            Some(v) => v,
            None => vec![0.0; c.num_patches],
        };
        if let Some(v) = self.get_u64("seed")? {
            c.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}
