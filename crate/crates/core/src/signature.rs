//! Signatures, galleries and probe sets.
//!
//! A signature is a `b x m` feature matrix (one column per patch) paired with
//! a per-patch occlusion flag. Galleries and probe sets are immutable once
//! built; every constructor checks the invariants the scoring code relies on.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVectorView};

use crate::error::{FapsmError, Result};

/// Opaque subject label. Gallery identities are positive; `-1` is reserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identity(pub i64);

impl Identity {
    /// Sentinel for rejected, occluded or unknown entries.
    pub const NONE: Identity = Identity(-1);

    pub fn is_none(self) -> bool {
        self == Identity::NONE
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for Identity {
    fn from(v: i64) -> Self {
        Identity(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    features: DMatrix<f64>,
    occlusion: Vec<bool>,
}

impl Signature {
    /// Builds a signature from a `b x m` feature matrix and `m` visibility
    /// flags (`true` = non-occluded).
    pub fn new(features: DMatrix<f64>, occlusion: Vec<bool>) -> Result<Self> {
        let (b, m) = features.shape();
        if b == 0 || m == 0 {
            return Err(FapsmError::InvalidSignature(format!("empty feature matrix {b}x{m}")));
        }
        if occlusion.len() != m {
            return Err(FapsmError::InvalidSignature(format!(
                "occlusion has {} flags, expected {m}",
                occlusion.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(FapsmError::InvalidSignature(format!(
                "non-finite feature at row {}, patch {}",
                pos % b,
                pos / b
            )));
        }
        for (j, &visible) in occlusion.iter().enumerate() {
            if visible && features.column(j).norm_squared() == 0.0 {
                return Err(FapsmError::InvalidSignature(format!(
                    "non-occluded patch {j} has a zero feature vector"
                )));
            }
        }
        Ok(Signature { features, occlusion })
    }

    /// Builds a signature from patch columns.
    pub fn from_patches(patches: &[Vec<f64>], occlusion: Vec<bool>) -> Result<Self> {
        let b = patches.first().map_or(0, Vec::len);
        if patches.iter().any(|p| p.len() != b) {
            return Err(FapsmError::InvalidSignature("patches differ in length".into()));
        }
        let features = DMatrix::from_fn(b, patches.len(), |i, j| patches[j][i]);
        Signature::new(features, occlusion)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_patches(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn patch(&self, j: usize) -> DVectorView<'_, f64> {
        self.features.column(j)
    }

    pub fn occlusion(&self) -> &[bool] {
        &self.occlusion
    }

    pub fn is_visible(&self, j: usize) -> bool {
        self.occlusion[j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GalleryEntry {
    pub identity: Identity,
    pub signature: Signature,
}

/// Ordered, nonempty list of enrolled signatures with unique identities.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
}

impl Gallery {
    pub fn new(entries: Vec<GalleryEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| FapsmError::InvalidGallery("gallery is empty".into()))?;
        let (b, m) = (first.signature.feature_dim(), first.signature.num_patches());
        let mut seen = HashSet::with_capacity(entries.len());
        for (idx, e) in entries.iter().enumerate() {
            if e.identity.0 <= 0 {
                return Err(FapsmError::InvalidGallery(format!(
                    "entry {idx}: identity {} is not a positive label",
                    e.identity
                )));
            }
            if !seen.insert(e.identity) {
                return Err(FapsmError::InvalidGallery(format!(
                    "duplicate identity {}",
                    e.identity
                )));
            }
            let (eb, em) = (e.signature.feature_dim(), e.signature.num_patches());
            if (eb, em) != (b, m) {
                return Err(FapsmError::DimensionMismatch(format!(
                    "gallery entry {idx} is {eb}x{em}, expected {b}x{m}"
                )));
            }
        }
        Ok(Gallery { entries })
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.entries[0].signature.feature_dim()
    }

    pub fn num_patches(&self) -> usize {
        self.entries[0].signature.num_patches()
    }

    pub fn identities(&self) -> impl Iterator<Item = Identity> + '_ {
        self.entries.iter().map(|e| e.identity)
    }

    pub fn contains(&self, id: Identity) -> bool {
        self.entries.iter().any(|e| e.identity == id)
    }
}

/// Query signatures, optionally labeled with their true identities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    samples: Vec<Signature>,
    identities: Option<Vec<Identity>>,
}

impl ProbeSet {
    pub fn new(samples: Vec<Signature>, identities: Option<Vec<Identity>>) -> Result<Self> {
        if let Some(ids) = &identities {
            if ids.len() != samples.len() {
                return Err(FapsmError::DimensionMismatch(format!(
                    "{} labels for {} probes",
                    ids.len(),
                    samples.len()
                )));
            }
        }
        if let Some(first) = samples.first() {
            let dims = (first.feature_dim(), first.num_patches());
            if let Some(i) = samples
                .iter()
                .position(|s| (s.feature_dim(), s.num_patches()) != dims)
            {
                return Err(FapsmError::DimensionMismatch(format!(
                    "probe {i} differs in shape from probe 0"
                )));
            }
        }
        Ok(ProbeSet { samples, identities })
    }

    pub fn samples(&self) -> &[Signature] {
        &self.samples
    }

    pub fn identities(&self) -> Option<&[Identity]> {
        self.identities.as_deref()
    }

    /// True labels, or `MissingLabels` for a blind probe set.
    pub fn labels(&self) -> Result<&[Identity]> {
        self.identities().ok_or(FapsmError::MissingLabels)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(b, m)` of the probes, if any.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.feature_dim(), s.num_patches()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    FeatureDim { gallery: usize, probes: usize },
    PatchCount { gallery: usize, probes: usize },
    UnknownLabel { probe: usize, identity: Identity },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeatureDim { gallery, probes } => {
                write!(f, "feature dimension b differs: gallery {gallery}, probes {probes}")
            }
            Violation::PatchCount { gallery, probes } => {
                write!(f, "patch count m differs: gallery {gallery}, probes {probes}")
            }
            Violation::UnknownLabel { probe, identity } => {
                write!(f, "probe {probe}: label {identity} is not in the gallery")
            }
        }
    }
}

/// Every incompatibility found between a gallery and a probe set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts the first violation into an error; dimension problems take
    /// precedence over label problems.
    pub fn into_result(self) -> Result<()> {
        let first = self.violations.into_iter().next();
        match first {
            None => Ok(()),
            Some(v @ (Violation::FeatureDim { .. } | Violation::PatchCount { .. })) => {
                Err(FapsmError::DimensionMismatch(v.to_string()))
            }
            Some(Violation::UnknownLabel { identity, .. }) => Err(FapsmError::UnknownLabel(identity.0)),
        }
    }
}

pub fn validate_pairing(gallery: &Gallery, probes: &ProbeSet) -> ValidationReport {
    let mut violations = Vec::new();
    if let Some((b, m)) = probes.dims() {
        if b != gallery.feature_dim() {
            violations.push(Violation::FeatureDim { gallery: gallery.feature_dim(), probes: b });
        }
        if m != gallery.num_patches() {
            violations.push(Violation::PatchCount { gallery: gallery.num_patches(), probes: m });
        }
    }
    if let Some(ids) = probes.identities() {
        let known: HashSet<Identity> = gallery.identities().collect();
        violations.extend(
            ids.iter()
                .enumerate()
                .filter(|(_, id)| !known.contains(id))
                .map(|(probe, &identity)| Violation::UnknownLabel { probe, identity }),
        );
    }
    ValidationReport { violations }
}

/// Maps external subject names to integer identities, assigned densely from 1
/// in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdentityMap {
    by_name: BTreeMap<String, Identity>,
    names: Vec<String>,
}

impl IdentityMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Identity {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        self.names.push(name.to_owned());
        let id = Identity(self.names.len() as i64);
        self.by_name.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<Identity> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: Identity) -> Option<&str> {
        usize::try_from(id.0 - 1).ok().and_then(|i| self.names.get(i)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// `(identity, name)` pairs in identity order.
    pub fn iter(&self) -> impl Iterator<Item = (Identity, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (Identity(i as i64 + 1), n.as_str()))
    }
}
