//! Seeded synthetic galleries and probe sets.
//!
//! Every identity gets one unit-norm prototype per patch. Gallery signatures
//! are the prototypes themselves. A probe starts from its identity's
//! prototypes; each patch may be swapped for another identity's prototype
//! (probability `corruption_probs[j]`), is perturbed by Gaussian noise and
//! re-normalized, and is finally occluded with probability `occlusion_prob`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FapsmError, Result};
use crate::seeding::derive_seed;
use crate::signature::{Gallery, GalleryEntry, Identity, ProbeSet, Signature};

const MAX_PROTOTYPE_COSINE: f64 = 0.999;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub identities: usize,
    pub probes_per_identity: usize,
    pub feature_dim: usize,
    pub num_patches: usize,
    pub noise_sigma: f64,
    pub occlusion_prob: f64,
    /// One entry per patch.
    pub corruption_probs: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            identities: 50,
            probes_per_identity: 10,
            feature_dim: 512,
            num_patches: 8,
            noise_sigma: 0.0,
            occlusion_prob: 0.0,
            corruption_probs: vec![0.0; 8],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FapsmError::InvalidArgument(msg));
        if self.identities < 2 {
            return bad(format!("need at least 2 identities, got {}", self.identities));
        }
        if self.feature_dim == 0 || self.num_patches == 0 {
            return bad("feature dimension and patch count must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.occlusion_prob) {
            return bad(format!("occlusion_prob {} outside [0, 1]", self.occlusion_prob));
        }
        if self.corruption_probs.len() != self.num_patches {
            return bad(format!(
                "{} corruption probabilities for {} patches",
                self.corruption_probs.len(),
                self.num_patches
            ));
        }
        if let Some(p) = self.corruption_probs.iter().find(|&&p| !prob(p)) {
            return bad(format!("corruption probability {p} outside [0, 1]"));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut impl Rng, b: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Per-identity `b x m` prototype matrices, identity `i + 1` at index `i`.
pub fn prototypes(config: &SynthConfig) -> Result<Vec<DMatrix<f64>>> {
    config.validate()?;
    let (b, m) = (config.feature_dim, config.num_patches);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "prototypes"));
    let mut protos: Vec<DMatrix<f64>> = Vec::with_capacity(config.identities);
    for _ in 0..config.identities {
        let mut mat = DMatrix::zeros(b, m);
        for j in 0..m {
            let mut draws = 0;
            let v = loop {
                let v = random_unit(&mut rng, b);
                if protos.iter().all(|p| p.column(j).dot(&v) < MAX_PROTOTYPE_COSINE) {
                    break v;
                }
                draws += 1;
                if draws > 10_000 {
                    return Err(FapsmError::InvalidArgument(format!(
                        "cannot draw {} distinct prototypes in {b} dimensions",
                        config.identities
                    )));
                }
            };
            mat.set_column(j, &v);
        }
        protos.push(mat);
    }
    Ok(protos)
}

pub fn gallery_from_prototypes(protos: &[DMatrix<f64>]) -> Result<Gallery> {
    let entries = protos
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Ok(GalleryEntry {
                identity: Identity(i as i64 + 1),
                signature: Signature::new(p.clone(), vec![true; p.ncols()])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Gallery::new(entries)
}

fn synth_probe(config: &SynthConfig, protos: &[DMatrix<f64>], owner: usize, rng: &mut impl Rng) -> Result<Signature> {
    let (b, m, l) = (config.feature_dim, config.num_patches, protos.len());
    let mut features = DMatrix::zeros(b, m);
    let mut occlusion = vec![true; m];
    for j in 0..m {
        let source = if rng.random_bool(config.corruption_probs[j]) {
            let other = rng.random_range(0..l - 1);
            if other >= owner { other + 1 } else { other }
        } else {
            owner
        };
        let mut v = protos[source].column(j).clone_owned();
        if config.noise_sigma > 0.0 {
            for x in v.iter_mut() {
                *x += config.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let norm = v.norm();
            if norm > 0.0 {
                v /= norm;
            } else {
                v = protos[source].column(j).clone_owned();
            }
        }
        features.set_column(j, &v);
        occlusion[j] = !rng.random_bool(config.occlusion_prob);
    }
    Signature::new(features, occlusion)
}

/// Labeled probes for every identity, drawn from the named stream. Each
/// probe has its own RNG, seeded from `(seed, stream, probe index)`.
pub fn probes_from_prototypes(config: &SynthConfig, protos: &[DMatrix<f64>], stream: &str) -> Result<ProbeSet> {
    config.validate()?;
    let per = config.probes_per_identity;
    let mut samples = Vec::with_capacity(protos.len() * per);
    let mut labels = Vec::with_capacity(protos.len() * per);
    for owner in 0..protos.len() {
        for r in 0..per {
            let index = owner * per + r;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("{stream}/{index}")));
            samples.push(synth_probe(config, protos, owner, &mut rng)?);
            labels.push(Identity(owner as i64 + 1));
        }
    }
    ProbeSet::new(samples, Some(labels))
}

/// Gallery plus one labeled probe set.
pub fn generate(config: &SynthConfig) -> Result<(Gallery, ProbeSet)> {
    let protos = prototypes(config)?;
    Ok((gallery_from_prototypes(&protos)?, probes_from_prototypes(config, &protos, "probes")?))
}

/// Gallery plus two independent labeled probe sets (training, testing).
pub fn generate_split(config: &SynthConfig) -> Result<(Gallery, ProbeSet, ProbeSet)> {
    let protos = prototypes(config)?;
    Ok((
        gallery_from_prototypes(&protos)?,
        probes_from_prototypes(config, &protos, "probes")?,
        probes_from_prototypes(config, &protos, "test-probes")?,
    ))
}
