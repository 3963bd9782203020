//! End-to-end training and matching.

use crate::associative::{
    corrected_matrix, fit_kernel, fit_linear, globalize, linear_model, AssociativeModel, GlobalMatchResult,
    KernelSpec, DEFAULT_LAMBDA1, DEFAULT_THRESHOLD,
};
use crate::combiner::{decision_matrix, final_identity, fit_weights, PatchWeights, DEFAULT_LAMBDA2};
use crate::error::{FapsmError, Result};
use crate::evaluation::rank1_accuracy;
use crate::local::{local_match, LocalMatchResult};
use crate::seeding::derive_seed;
use crate::signature::{validate_pairing, Gallery, Identity, ProbeSet};

pub const DEFAULT_MAX_SUPPORTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LearnerMode {
    Linear,
    Kernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub threshold: f64,
    pub mode: LearnerMode,
    pub kernel: KernelSpec,
    /// Retained kernel rows; `None` means `min(n, 1000)`.
    pub n_k: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            threshold: DEFAULT_THRESHOLD,
            mode: LearnerMode::Kernel,
            kernel: KernelSpec::default(),
            n_k: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FapsmError::InvalidArgument(m));
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be positive, got {}", self.lambda1));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return bad(format!("lambda2 must be positive, got {}", self.lambda2));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if let KernelSpec::Gaussian { sigma } = self.kernel {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return bad(format!("sigma must be positive, got {sigma}"));
            }
        }
        if self.n_k == Some(0) {
            return bad("n_k must be at least 1".into());
        }
        Ok(())
    }
}

/// Learned associative model and patch weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedMatcher {
    pub model: AssociativeModel,
    pub weights: PatchWeights,
}

/// Per-probe outcome of matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Identification {
    /// `Identity::NONE` when every patch was rejected and no baseline exists.
    pub final_identity: Identity,
    pub final_score: f64,
    pub baseline_identity: Identity,
    pub baseline_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSummary {
    pub baseline_accuracy: f64,
    pub fapsm_accuracy: f64,
    pub num_probes: usize,
}

/// Fits the threshold-independent associative model on local match results.
pub fn fit_model(local: &LocalMatchResult, truth: &[Identity], config: &PipelineConfig) -> Result<AssociativeModel> {
    let d = corrected_matrix(local, Some(truth)).map_err(|e| e.in_stage("corrected matrix"))?;
    let model = match config.mode {
        LearnerMode::Linear => fit_linear(&local.scores, &d, config.lambda1)
            .and_then(|w| linear_model(w, config.lambda1, config.threshold))
            .map_err(|e| e.in_stage("linear ridge fit"))?,
        LearnerMode::Kernel => {
            let n = local.num_probes();
            let n_k = config.n_k.unwrap_or(DEFAULT_MAX_SUPPORTS).min(n);
            fit_kernel(
                &local.scores,
                &d,
                config.lambda1,
                config.kernel,
                n_k,
                derive_seed(config.seed, "kernel-sample"),
            )
            .map_err(|e| e.in_stage("kernel ridge fit"))?
        }
    };
    model.with_threshold(config.threshold)
}

/// Learns patch weights for a model already carrying its threshold.
pub fn fit_patch_weights(
    model: &AssociativeModel,
    local: &LocalMatchResult,
    truth: &[Identity],
    lambda2: f64,
) -> Result<(PatchWeights, GlobalMatchResult)> {
    let global = globalize(model, local).map_err(|e| e.in_stage("globalize"))?;
    let h = decision_matrix(&global, truth).map_err(|e| e.in_stage("decision matrix"))?;
    let weights = fit_weights(&h, lambda2).map_err(|e| e.in_stage("weight learning"))?;
    Ok((weights, global))
}

/// Final identities for already-globalized rows.
pub fn combine(
    local: &LocalMatchResult,
    global: &GlobalMatchResult,
    weights: &PatchWeights,
) -> Result<Vec<Identification>> {
    (0..local.num_probes())
        .map(|i| {
            let g: Vec<Identity> = global.identities.row(i).iter().copied().collect();
            let y: Vec<f64> = global.scores.row(i).iter().copied().collect();
            let baseline = (local.baseline_identities[i], local.baseline_scores[i]);
            let (final_identity, final_score) = match final_identity(&g, &y, weights, Some(baseline)) {
                Ok(v) => v,
                Err(FapsmError::NoCandidates) => (Identity::NONE, 0.0),
                Err(e) => return Err(e.in_stage("final identity")),
            };
            Ok(Identification {
                final_identity,
                final_score,
                baseline_identity: baseline.0,
                baseline_score: baseline.1,
            })
        })
        .collect()
}

pub fn train(gallery: &Gallery, probes: &ProbeSet, config: &PipelineConfig) -> Result<(TrainedMatcher, TrainingSummary)> {
    config.validate()?;
    validate_pairing(gallery, probes).into_result()?;
    let truth = probes.labels()?;
    let local = local_match(gallery, probes).map_err(|e| e.in_stage("local matching"))?;
    let model = fit_model(&local, truth, config)?;
    let (weights, global) = fit_patch_weights(&model, &local, truth, config.lambda2)?;
    let ids = combine(&local, &global, &weights)?;
    let summary = summarize(&ids, truth)?;
    Ok((TrainedMatcher { model, weights }, summary))
}

pub fn summarize(ids: &[Identification], truth: &[Identity]) -> Result<TrainingSummary> {
    let finals: Vec<Identity> = ids.iter().map(|r| r.final_identity).collect();
    let baselines: Vec<Identity> = ids.iter().map(|r| r.baseline_identity).collect();
    Ok(TrainingSummary {
        baseline_accuracy: rank1_accuracy(&baselines, truth)?,
        fapsm_accuracy: rank1_accuracy(&finals, truth)?,
        num_probes: truth.len(),
    })
}

/// Matching steps: local match, global scores, thresholding, weighted vote.
pub fn identify_local(matcher: &TrainedMatcher, local: &LocalMatchResult) -> Result<(Vec<Identification>, GlobalMatchResult)> {
    if matcher.model.num_patches() != local.num_patches() || matcher.weights.len() != local.num_patches() {
        return Err(FapsmError::DimensionMismatch(format!(
            "model m={}, weights m={}, probes m={}",
            matcher.model.num_patches(),
            matcher.weights.len(),
            local.num_patches()
        )));
    }
    let global = globalize(&matcher.model, local).map_err(|e| e.in_stage("globalize"))?;
    let ids = combine(local, &global, &matcher.weights)?;
    Ok((ids, global))
}

pub fn identify(matcher: &TrainedMatcher, gallery: &Gallery, probes: &ProbeSet) -> Result<Vec<Identification>> {
    let local = local_match(gallery, probes).map_err(|e| e.in_stage("local matching"))?;
    identify_local(matcher, &local).map(|(ids, _)| ids)
}
