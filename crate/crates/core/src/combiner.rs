//! Sparse non-negative patch weighting and the final identity vote.
//!
//! Weights minimize `‖e' − H'q‖² + λ₂‖q‖₁` over `q ≥ 0`, where `H` holds ±1
//! patch correctness after thresholding and the extra row `[1 … 1]` of `H'`
//! (target 1) softly asks the weights to sum to one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::associative::GlobalMatchResult;
use crate::error::{FapsmError, Result};
use crate::signature::Identity;
use crate::store::{content_lines, header_value, parse_floats, parse_header_fields, parse_num};

pub const DEFAULT_LAMBDA2: f64 = 0.01;
const MAX_SWEEPS: usize = 10_000;
const STEP_TOL: f64 = 1e-10;
const KKT_TOL: f64 = 1e-6;

/// `h_ij = +1` iff the global identity `g_ij` equals the true label.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionMatrix(pub DMatrix<f64>);

pub fn decision_matrix(global: &GlobalMatchResult, truth: &[Identity]) -> Result<DecisionMatrix> {
    let g = &global.identities;
    if truth.len() != g.nrows() {
        return Err(FapsmError::DimensionMismatch(format!(
            "{} truth labels for {} probes",
            truth.len(),
            g.nrows()
        )));
    }
    Ok(DecisionMatrix(DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| {
        if g[(i, j)] == truth[i] && !g[(i, j)].is_none() {
            1.0
        } else {
            -1.0
        }
    })))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchWeights {
    pub weights: Vec<f64>,
    pub lambda2: f64,
}

impl PatchWeights {
    pub fn new(weights: Vec<f64>, lambda2: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(FapsmError::InvalidArgument("no patch weights".into()));
        }
        if weights.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
            return Err(FapsmError::InvalidArgument("patch weights must be finite and non-negative".into()));
        }
        if weights.iter().all(|&q| q == 0.0) {
            return Err(FapsmError::AllWeightsZero { lambda2 });
        }
        Ok(PatchWeights { weights, lambda2 })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Quadratic form of the augmented least-squares problem:
/// objective = `const − 2cᵀq + qᵀGq + λ₂Σq`.
struct Augmented {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    constant: f64,
}

impl Augmented {
    fn new(h: &DMatrix<f64>) -> Self {
        let (n, m) = h.shape();
        let mut aug = DMatrix::zeros(n + 1, m);
        aug.rows_mut(0, n).copy_from(h);
        aug.row_mut(n).fill(1.0);
        let ones = DVector::from_element(n + 1, 1.0);
        Augmented { gram: aug.tr_mul(&aug), corr: aug.tr_mul(&ones), constant: (n + 1) as f64 }
    }

    fn objective(&self, q: &DVector<f64>, lambda2: f64) -> f64 {
        self.constant - 2.0 * self.corr.dot(q) + q.dot(&(&self.gram * q)) + lambda2 * q.sum()
    }

    /// Gradient of the smooth part plus λ₂ (the ℓ1 term's slope on q ≥ 0).
    fn gradient(&self, q: &DVector<f64>, lambda2: f64) -> DVector<f64> {
        (&self.gram * q - &self.corr) * 2.0 + DVector::from_element(q.len(), lambda2)
    }

    fn kkt_residual(&self, q: &DVector<f64>, lambda2: f64) -> f64 {
        self.gradient(q, lambda2)
            .iter()
            .zip(q.iter())
            .map(|(&g, &qi)| if qi > 0.0 { g.abs() } else { (-g).max(0.0) })
            .fold(0.0, f64::max)
    }
}

/// Objective `‖e' − H'q‖² + λ₂‖q‖₁` evaluated directly.
pub fn weight_objective(h: &DecisionMatrix, q: &[f64], lambda2: f64) -> f64 {
    let data: f64 = h
        .0
        .row_iter()
        .map(|r| {
            let margin: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            (1.0 - margin).powi(2)
        })
        .sum();
    let sum: f64 = q.iter().sum();
    data + (1.0 - sum).powi(2) + lambda2 * q.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent with non-negative soft-thresholding, started
/// from uniform weights.
pub fn fit_weights(h: &DecisionMatrix, lambda2: f64) -> Result<PatchWeights> {
    let (n, m) = h.0.shape();
    if n == 0 || m == 0 {
        return Err(FapsmError::InvalidArgument(format!("decision matrix is {n}x{m}")));
    }
    if !(lambda2 > 0.0 && lambda2.is_finite()) {
        return Err(FapsmError::InvalidArgument(format!("lambda2 must be positive, got {lambda2}")));
    }
    let prob = Augmented::new(&h.0);
    let mut q = DVector::from_element(m, 1.0 / m as f64);

    for _ in 0..MAX_SWEEPS {
        let mut max_step: f64 = 0.0;
        for j in 0..m {
            let others = prob.gram.row(j).transpose().dot(&q) - prob.gram[(j, j)] * q[j];
            let updated = ((prob.corr[j] - others - lambda2 / 2.0) / prob.gram[(j, j)]).max(0.0);
            max_step = max_step.max((updated - q[j]).abs());
            q[j] = updated;
        }
        if max_step < STEP_TOL && prob.kkt_residual(&q, lambda2) <= KKT_TOL {
            return PatchWeights::new(q.iter().copied().collect(), lambda2);
        }
    }
    Err(FapsmError::NotConverged { sweeps: MAX_SWEEPS, residual: prob.kkt_residual(&q, lambda2) })
}

#[doc(hidden)]
pub fn augmented_objective(h: &DecisionMatrix, q: &[f64], lambda2: f64) -> f64 {
    Augmented::new(&h.0).objective(&DVector::from_column_slice(q), lambda2)
}

/// Weighted vote over the surviving patch identities, plus the baseline's
/// rank-1 identity voting with weight 1 and its holistic score.
///
/// Ties go to the smaller identity.
pub fn final_identity(
    g: &[Identity],
    y: &[f64],
    q: &PatchWeights,
    baseline: Option<(Identity, f64)>,
) -> Result<(Identity, f64)> {
    if g.len() != y.len() || g.len() != q.len() {
        return Err(FapsmError::DimensionMismatch(format!(
            "identity row {}, score row {}, weights {}",
            g.len(),
            y.len(),
            q.len()
        )));
    }
    let mut votes: BTreeMap<Identity, f64> = BTreeMap::new();
    for ((&id, &score), &w) in g.iter().zip(y).zip(&q.weights) {
        if !id.is_none() {
            *votes.entry(id).or_insert(0.0) += w * score;
        }
    }
    if let Some((id, s)) = baseline.filter(|(id, _)| !id.is_none()) {
        *votes.entry(id).or_insert(0.0) += s;
    }
    let mut best: Option<(Identity, f64)> = None;
    for (id, v) in votes {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((id, v));
        }
    }
    best.ok_or(FapsmError::NoCandidates)
}

const WEIGHTS_MAGIC: &str = "fapsm-weights v1";

pub fn format_weights(w: &PatchWeights) -> String {
    let mut out = format!("{WEIGHTS_MAGIC} m={} lambda2={}\n", w.len(), w.lambda2);
    for (i, v) in w.weights.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
    out
}

pub fn parse_weights(text: &str) -> Result<PatchWeights> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| FapsmError::Format("empty weights file".into()))?;
    let fields = parse_header_fields(header, WEIGHTS_MAGIC, hl)?;
    let m: usize = parse_num(header_value(&fields, "m", hl)?, hl, "m")?;
    let lambda2: f64 = parse_num(header_value(&fields, "lambda2", hl)?, hl, "lambda2")?;
    let (line_no, line) = lines
        .next()
        .ok_or_else(|| FapsmError::Format("weights file has no weight line".into()))?;
    let weights = parse_floats(line, line_no)?;
    if weights.len() != m {
        return Err(FapsmError::parse(line_no, format!("{} weights, header says m={m}", weights.len())));
    }
    if let Some((extra, _)) = lines.next() {
        return Err(FapsmError::parse(extra, "trailing data after weights"));
    }
    PatchWeights::new(weights, lambda2).map_err(|e| FapsmError::parse(line_no, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(v: &[i64]) -> Vec<Identity> {
        v.iter().copied().map(Identity).collect()
    }

    fn global(rows: &[&[i64]]) -> GlobalMatchResult {
        let m = rows[0].len();
        let flat: Vec<Identity> = rows.iter().flat_map(|r| ids(r)).collect();
        GlobalMatchResult {
            scores: DMatrix::zeros(rows.len(), m),
            identities: DMatrix::from_row_slice(rows.len(), m, &flat),
        }
    }

    #[test]
    fn decision_matrix_examples() {
        let h = decision_matrix(&global(&[&[2, 3, -1], &[1, 1, 1]]), &ids(&[2, 1])).unwrap();
        assert_eq!(h.0.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, -1.0]);
        assert!(h.0.row(1).iter().all(|&v| v == 1.0));
        assert!(decision_matrix(&global(&[&[1]]), &ids(&[1, 2])).is_err());
    }

    #[test]
    fn one_patch_closed_form() {
        for (n, lambda2) in [(1usize, 0.01), (5, 0.5), (20, 3.0)] {
            let h = DecisionMatrix(DMatrix::from_element(n, 1, 1.0));
            let q = fit_weights(&h, lambda2).unwrap();
            let expected = ((2.0 * (n + 1) as f64 - lambda2) / (2.0 * (n + 1) as f64)).max(0.0);
            assert_abs_diff_eq!(q.weights[0], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn reliable_patch_dominates() {
        let mut h = DMatrix::from_element(10, 2, 1.0);
        h.column_mut(1).fill(-1.0);
        let h = DecisionMatrix(h);
        let q = fit_weights(&h, 0.01).unwrap();

        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for a in 0..=2000 {
            for b in 0..=2000 {
                let cand = [a as f64 * 1e-3, b as f64 * 1e-3];
                let f = weight_objective(&h, &cand, 0.01);
                if f < best.0 {
                    best = (f, cand);
                }
            }
        }
        assert!(q.weights[0] > q.weights[1]);
        assert!(q.weights[1] < 1e-9);
        assert_abs_diff_eq!(q.weights[0], best.1[0], epsilon = 2e-3);
        assert_abs_diff_eq!(q.weights[1], best.1[1], epsilon = 2e-3);
    }

    #[test]
    fn full_shrinkage_is_reported() {
        let h = DecisionMatrix(DMatrix::from_element(4, 3, 1.0));
        // 2·(H'ᵀe')_j = 2·5 = 10 is the largest useful penalty
        assert!(matches!(fit_weights(&h, 10.5), Err(FapsmError::AllWeightsZero { .. })));
        assert!(fit_weights(&h, 9.5).is_ok());
    }

    #[test]
    fn all_wrong_patches_shrink_to_zero() {
        let h = DecisionMatrix(DMatrix::from_element(6, 2, -1.0));
        assert!(matches!(fit_weights(&h, 0.01), Err(FapsmError::AllWeightsZero { .. })));
    }

    #[test]
    fn objectives_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = DecisionMatrix(DMatrix::from_fn(7, 3, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }));
        let q = [0.2, 0.0, 0.7];
        assert_abs_diff_eq!(weight_objective(&h, &q, 0.3), augmented_objective(&h, &q, 0.3), epsilon = 1e-12);
    }

    fn random_h(rng: &mut impl Rng, n: usize, m: usize) -> DecisionMatrix {
        let bias: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..0.95)).collect();
        DecisionMatrix(DMatrix::from_fn(n, m, |_, j| if rng.random_bool(bias[j]) { 1.0 } else { -1.0 }))
    }

    #[test]
    fn no_feasible_perturbation_improves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let h = random_h(&mut rng, 40, 5);
            let q = fit_weights(&h, 0.01).unwrap();
            let base = weight_objective(&h, &q.weights, 0.01);
            for _ in 0..1000 {
                let cand: Vec<f64> = q
                    .weights
                    .iter()
                    .map(|&w| (w + rng.random_range(-1e-3..=1e-3)).max(0.0))
                    .collect();
                assert!(weight_objective(&h, &cand, 0.01) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn permuting_patches_permutes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_h(&mut rng, 60, 4);
        let q = fit_weights(&h, 0.01).unwrap();
        let perm = [2usize, 0, 3, 1];
        let hp = DecisionMatrix(DMatrix::from_fn(60, 4, |i, j| h.0[(i, perm[j])]));
        let qp = fit_weights(&hp, 0.01).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(qp.weights[j], q.weights[perm[j]], epsilon = 1e-7);
        }

        let g = ids(&[3, 1, 3, 2]);
        let y = [0.6, 0.9, 0.5, 0.4];
        let gp: Vec<Identity> = perm.iter().map(|&p| g[p]).collect();
        let yp: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
        assert_eq!(
            final_identity(&g, &y, &q, None).unwrap().0,
            final_identity(&gp, &yp, &qp, None).unwrap().0
        );
    }

    #[test]
    fn final_identity_examples() {
        let q = PatchWeights::new(vec![1.0], 0.01).unwrap();
        assert_eq!(final_identity(&ids(&[5]), &[0.9], &q, None).unwrap(), (Identity(5), 0.9));

        let q = PatchWeights::new(vec![0.5, 0.3, 0.2], 0.01).unwrap();
        let g = ids(&[1, 2, 1]);
        let y = [0.8, 0.9, 0.7];
        let (u, s) = final_identity(&g, &y, &q, None).unwrap();
        assert_eq!(u, Identity(1));
        assert_abs_diff_eq!(s, 0.54, epsilon = 1e-12);

        let (u, s) = final_identity(&g, &y, &q, Some((Identity(2), 0.5))).unwrap();
        assert_eq!(u, Identity(2));
        assert_abs_diff_eq!(s, 0.77, epsilon = 1e-12);
    }

    #[test]
    fn final_identity_degenerate_rows() {
        let q = PatchWeights::new(vec![0.5, 0.5], 0.01).unwrap();
        let rejected = ids(&[-1, -1]);
        assert!(matches!(final_identity(&rejected, &[0.1, 0.2], &q, None), Err(FapsmError::NoCandidates)));
        assert_eq!(
            final_identity(&rejected, &[0.1, 0.2], &q, Some((Identity(8), 0.3))).unwrap(),
            (Identity(8), 0.3)
        );
        // equal votes: smaller identity wins
        assert_eq!(final_identity(&ids(&[4, 2]), &[0.5, 0.5], &q, None).unwrap().0, Identity(2));
    }

    #[test]
    fn weights_file_round_trip_and_errors() {
        let w = PatchWeights::new(vec![0.25, 0.0, 0.1234567890123456], 0.01).unwrap();
        assert_eq!(parse_weights(&format_weights(&w)).unwrap(), w);
        assert!(parse_weights("fapsm-weights v1 m=2 lambda2=0.01\n0.5\n").is_err());
        assert!(parse_weights("fapsm-weights v1 m=1 lambda2=0.01\n-0.5\n").is_err());
        assert!(parse_weights("fapsm-weights v1 m=1 lambda2=0.01\n0\n").is_err());
        assert!(parse_weights("fapsm-weights v1 m=1 lambda2=0.01\n1\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn decision_entries_are_signs(seed in any::<u64>(), n in 1usize..8, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DMatrix::from_fn(n, m, |_, _| Identity(rng.random_range(-1..4)));
            let truth: Vec<Identity> = (0..n).map(|_| Identity(rng.random_range(1..4))).collect();
            let h = decision_matrix(&GlobalMatchResult { scores: DMatrix::zeros(n, m), identities: g }, &truth).unwrap();
            prop_assert!(h.0.iter().all(|&v| v == 1.0 || v == -1.0));
        }

        #[test]
        fn vote_is_scale_invariant_in_weights(
            seed in any::<u64>(), scale in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<Identity> = (0..6).map(|_| Identity(rng.random_range(-1..4))).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let w: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.01).collect();
            let q = PatchWeights::new(w.clone(), 0.01).unwrap();
            let qs = PatchWeights::new(w.iter().map(|v| v * scale).collect(), 0.01).unwrap();
            let a = final_identity(&g, &y, &q, None).ok().map(|r| r.0);
            let b = final_identity(&g, &y, &qs, None).ok().map(|r| r.0);
            prop_assert_eq!(a, b);
        }
    }
}
