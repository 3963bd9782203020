//! Per-patch local matching and the holistic baseline score.

use nalgebra::{DMatrix, DVectorView};
use rayon::prelude::*;

use crate::error::{FapsmError, Result};
use crate::signature::{validate_pairing, Gallery, Identity, ProbeSet, Signature, Violation};

/// Output of local matching for a probe set.
///
/// `identities` and `scores` are `n x m`. Occluded or unmatchable patches carry
/// `Identity::NONE` and score 0. A probe with no patch comparable to any
/// gallery entry gets a `NONE` baseline identity and score 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMatchResult {
    pub identities: DMatrix<Identity>,
    pub scores: DMatrix<f64>,
    pub baseline_identities: Vec<Identity>,
    pub baseline_scores: Vec<f64>,
}

impl LocalMatchResult {
    pub fn num_probes(&self) -> usize {
        self.identities.nrows()
    }

    pub fn num_patches(&self) -> usize {
        self.identities.ncols()
    }
}

pub fn cosine_score(u: DVectorView<'_, f64>, v: DVectorView<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(FapsmError::DimensionMismatch(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(FapsmError::ZeroVector);
    }
    Ok(u.dot(&v) / (nu * nv))
}

/// Occlusion-masked mean patch cosine between two signatures, with the number
/// of mutually visible patches it averaged over.
pub fn baseline_score(gallery: &Signature, probe: &Signature) -> Result<(f64, usize)> {
    if gallery.features().shape() != probe.features().shape() {
        return Err(FapsmError::DimensionMismatch(format!(
            "signatures {:?} and {:?}",
            gallery.features().shape(),
            probe.features().shape()
        )));
    }
    let mut sum = 0.0;
    let mut k = 0;
    for j in 0..gallery.num_patches() {
        if gallery.is_visible(j) && probe.is_visible(j) {
            sum += cosine_score(gallery.patch(j), probe.patch(j))?;
            k += 1;
        }
    }
    if k == 0 {
        return Err(FapsmError::IncomparablePair);
    }
    Ok((sum / k as f64, k))
}

struct ProbeRow {
    identities: Vec<Identity>,
    scores: Vec<f64>,
    baseline: (Identity, f64),
}

fn match_probe(gallery: &Gallery, probe: &Signature) -> Result<ProbeRow> {
    let m = gallery.num_patches();
    let mut best: Vec<Option<(f64, Identity)>> = vec![None; m];
    let mut best_baseline: Option<(f64, Identity)> = None;

    for entry in gallery.entries() {
        let g = &entry.signature;
        let mut sum = 0.0;
        let mut k = 0usize;
        for j in 0..m {
            if !(g.is_visible(j) && probe.is_visible(j)) {
                continue;
            }
            let c = cosine_score(g.patch(j), probe.patch(j))?;
            sum += c;
            k += 1;
            // strict comparison keeps the lowest gallery index on ties
            if best[j].is_none_or(|(b, _)| c > b) {
                best[j] = Some((c, entry.identity));
            }
        }
        if k > 0 {
            let s = sum / k as f64;
            if best_baseline.is_none_or(|(b, _)| s > b) {
                best_baseline = Some((s, entry.identity));
            }
        }
    }

    let (identities, scores) = best
        .into_iter()
        .map(|b| match b {
            Some((c, id)) => (id, c.max(0.0)),
            None => (Identity::NONE, 0.0),
        })
        .unzip();
    let baseline = best_baseline.map_or((Identity::NONE, 0.0), |(s, id)| (id, s));
    Ok(ProbeRow { identities, scores, baseline })
}

/// Matches every probe patch against the same patch of every gallery entry.
pub fn local_match(gallery: &Gallery, probes: &ProbeSet) -> Result<LocalMatchResult> {
    if gallery.is_empty() {
        return Err(FapsmError::InvalidGallery("gallery is empty".into()));
    }
    // labels are not read here, only shapes
    if let Some(v) = validate_pairing(gallery, probes)
        .violations
        .into_iter()
        .find(|v| !matches!(v, Violation::UnknownLabel { .. }))
    {
        return Err(FapsmError::DimensionMismatch(v.to_string()));
    }

    let rows = probes
        .samples()
        .par_iter()
        .map(|p| match_probe(gallery, p))
        .collect::<Result<Vec<_>>>()?;

    let n = rows.len();
    let m = gallery.num_patches();
    let identities = DMatrix::from_fn(n, m, |i, j| rows[i].identities[j]);
    let scores = DMatrix::from_fn(n, m, |i, j| rows[i].scores[j]);
    let (baseline_identities, baseline_scores) = rows.iter().map(|r| r.baseline).unzip();
    Ok(LocalMatchResult { identities, scores, baseline_identities, baseline_scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::GalleryEntry;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[3.0, 4.0]);
        assert_abs_diff_eq!(cosine_score(a.as_view(), a.as_view()).unwrap(), 1.0, epsilon = 1e-15);
        let (x, y) = (v(&[1.0, 0.0]), v(&[0.0, 1.0]));
        assert_eq!(cosine_score(x.as_view(), y.as_view()).unwrap(), 0.0);
        let d = v(&[1.0, 1.0]);
        assert_abs_diff_eq!(
            cosine_score(d.as_view(), x.as_view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        let z = v(&[0.0, 0.0]);
        assert!(matches!(cosine_score(z.as_view(), x.as_view()), Err(FapsmError::ZeroVector)));
    }

    fn unit(b: usize, k: usize) -> Vec<f64> {
        let mut e = vec![0.0; b];
        e[k] = 1.0;
        e
    }

    #[test]
    fn self_match_baseline() {
        let patches: Vec<_> = (0..8).map(|j| unit(8, j)).collect();
        let s = Signature::from_patches(&patches, vec![true; 8]).unwrap();
        let (score, k) = baseline_score(&s, &s).unwrap();
        assert_abs_diff_eq!(score, 1.0, epsilon = 1e-15);
        assert_eq!(k, 8);
    }

    #[test]
    fn baseline_masks_occluded_patches() {
        // patch 0 cosine 0.8, patch 1 cosine 0.6, rest occluded on one side
        let g_patches = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        let p_patches = vec![vec![0.8, 0.6], vec![0.6, 0.8], vec![-1.0, 0.0], vec![-1.0, 0.0]];
        let g = Signature::from_patches(&g_patches, vec![true, true, false, true]).unwrap();
        let p = Signature::from_patches(&p_patches, vec![true, true, true, false]).unwrap();
        let (s, k) = baseline_score(&g, &p).unwrap();
        assert_abs_diff_eq!(s, 0.7, epsilon = 1e-15);
        assert_eq!(k, 2);
    }

    #[test]
    fn fully_occluded_probe_is_incomparable() {
        let g = Signature::from_patches(&[vec![1.0], vec![1.0]], vec![true, true]).unwrap();
        let p = Signature::from_patches(&[vec![1.0], vec![1.0]], vec![false, false]).unwrap();
        assert!(matches!(baseline_score(&g, &p), Err(FapsmError::IncomparablePair)));
    }

    /// Gallery of `l` identities whose patch-j prototypes are orthonormal basis
    /// vectors, distinct per identity.
    fn orthogonal_gallery(l: usize, m: usize) -> (Gallery, Vec<Vec<Vec<f64>>>) {
        let protos: Vec<Vec<Vec<f64>>> =
            (0..l).map(|i| (0..m).map(|j| unit(l * m, i * m + j)).collect()).collect();
        let entries = protos
            .iter()
            .enumerate()
            .map(|(i, p)| GalleryEntry {
                identity: Identity(i as i64 + 1),
                signature: Signature::from_patches(p, vec![true; m]).unwrap(),
            })
            .collect();
        (Gallery::new(entries).unwrap(), protos)
    }

    #[test]
    fn duplicate_of_gallery_entry_wins_every_patch() {
        let (g, protos) = orthogonal_gallery(6, 8);
        let probe = Signature::from_patches(&protos[4], vec![true; 8]).unwrap();
        let r = local_match(&g, &ProbeSet::new(vec![probe], None).unwrap()).unwrap();
        for j in 0..8 {
            assert_eq!(r.identities[(0, j)], Identity(5));
            assert_eq!(r.scores[(0, j)], 1.0);
        }
        assert_eq!(r.baseline_identities, vec![Identity(5)]);
    }

    #[test]
    fn mixed_probe_rows() {
        let (g, protos) = orthogonal_gallery(3, 8);
        let mut patches = protos[1].clone();
        patches[7] = protos[2][7].clone();
        let probe = Signature::from_patches(&patches, vec![true; 8]).unwrap();
        let mut occl = vec![true; 8];
        occl[2] = false;
        let occluded = Signature::from_patches(&patches, occl).unwrap();
        let r = local_match(&g, &ProbeSet::new(vec![probe, occluded], None).unwrap()).unwrap();

        // brute-force oracle for the first row
        let expected: Vec<Identity> = (0..8)
            .map(|j| {
                let mut best = (f64::NEG_INFINITY, Identity::NONE);
                for (i, p) in protos.iter().enumerate() {
                    let c: f64 = p[j].iter().zip(&patches[j]).map(|(a, b)| a * b).sum();
                    if c > best.0 {
                        best = (c, Identity(i as i64 + 1));
                    }
                }
                best.1
            })
            .collect();
        let row: Vec<Identity> = (0..8).map(|j| r.identities[(0, j)]).collect();
        assert_eq!(row, expected);
        assert_eq!(
            row,
            [2, 2, 2, 2, 2, 2, 2, 3].map(Identity).to_vec()
        );
        assert_eq!(r.identities[(1, 2)], Identity::NONE);
        assert_eq!(r.scores[(1, 2)], 0.0);
    }

    #[test]
    fn gallery_occluded_patch_excluded_and_ties_lowest_index() {
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g1 = Signature::from_patches(&p, vec![false, true]).unwrap();
        let g2 = Signature::from_patches(&p, vec![true, true]).unwrap();
        let g3 = Signature::from_patches(&p, vec![true, true]).unwrap();
        let gallery = Gallery::new(vec![
            GalleryEntry { identity: Identity(10), signature: g1 },
            GalleryEntry { identity: Identity(20), signature: g2 },
            GalleryEntry { identity: Identity(30), signature: g3 },
        ])
        .unwrap();
        let probe = Signature::from_patches(&p, vec![true, true]).unwrap();
        let r = local_match(&gallery, &ProbeSet::new(vec![probe], None).unwrap()).unwrap();
        assert_eq!(r.identities[(0, 0)], Identity(20));
        assert_eq!(r.identities[(0, 1)], Identity(10));
        // all three have baseline 1.0; lowest index wins
        assert_eq!(r.baseline_identities[0], Identity(10));
    }

    #[test]
    fn patch_occluded_across_gallery() {
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = Signature::from_patches(&p, vec![true, false]).unwrap();
        let gallery = Gallery::new(vec![GalleryEntry { identity: Identity(1), signature: g }]).unwrap();
        let probe = Signature::from_patches(&p, vec![true, true]).unwrap();
        let r = local_match(&gallery, &ProbeSet::new(vec![probe], None).unwrap()).unwrap();
        assert_eq!(r.identities[(0, 1)], Identity::NONE);
        assert_eq!(r.scores[(0, 1)], 0.0);
    }

    #[test]
    fn negative_cosines_clipped() {
        let g = Signature::from_patches(&[vec![1.0, 0.0]], vec![true]).unwrap();
        let gallery = Gallery::new(vec![GalleryEntry { identity: Identity(1), signature: g }]).unwrap();
        let probe = Signature::from_patches(&[vec![-1.0, 0.1]], vec![true]).unwrap();
        let r = local_match(&gallery, &ProbeSet::new(vec![probe], None).unwrap()).unwrap();
        assert_eq!(r.identities[(0, 0)], Identity(1));
        assert_eq!(r.scores[(0, 0)], 0.0);
        assert!(r.baseline_scores[0] < 0.0);
    }
}
