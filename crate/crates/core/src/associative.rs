//! Fully associative learning.
//!
//! Local patch scores `Z` (n x m) are mapped to global patch scores `Y` by a
//! ridge-regressed weight structure trained to predict which local patch
//! decisions were correct. Two forms are supported: a linear `m x m` matrix
//! `W = (ZᵀZ + λ₁I)⁻¹ZᵀD`, and its kernelized dual over a random subset of
//! training rows, `y = K(z, supports)·(K(supports, supports) + λ₁I)⁻¹·D_sel`.
//! Global identities keep the local identity where `y ≥ t` and are rejected
//! otherwise.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FapsmError, Result};
use crate::local::LocalMatchResult;
use crate::signature::Identity;
use crate::store::{content_lines, header_value, parse_floats, parse_header_fields, parse_num};

pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_LAMBDA1: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 0.4;

/// Binary supervision: `d_ij = 1` iff local patch identity `p_ij` equals the
/// true label `c_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectedMatrix(pub DMatrix<f64>);

pub fn corrected_matrix(local: &LocalMatchResult, truth: Option<&[Identity]>) -> Result<CorrectedMatrix> {
    let truth = truth.ok_or(FapsmError::MissingLabels)?;
    let p = &local.identities;
    if truth.len() != p.nrows() {
        return Err(FapsmError::DimensionMismatch(format!(
            "{} truth labels for {} probes",
            truth.len(),
            p.nrows()
        )));
    }
    Ok(CorrectedMatrix(DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
        if p[(i, j)] == truth[i] && !truth[i].is_none() {
            1.0
        } else {
            0.0
        }
    })))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// `exp(-‖a - b‖² / (2σ²))`
    Gaussian { sigma: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: DEFAULT_SIGMA }
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(KernelSpec::Gaussian { sigma })
        } else {
            Err(FapsmError::InvalidArgument(format!("gaussian sigma must be positive, got {sigma}")))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Gaussian { sigma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    Linear(DMatrix<f64>),
    Kernel {
        /// `n_k x m`, rows are retained training local-score vectors.
        supports: DMatrix<f64>,
        /// `n_k x m` dual coefficients.
        alpha: DMatrix<f64>,
    },
}

/// Trained associative weight structure plus the hyperparameters it was
/// trained and thresholded with.
#[derive(Clone, Debug, PartialEq)]
pub struct AssociativeModel {
    pub weights: Weights,
    pub lambda1: f64,
    pub kernel: KernelSpec,
    pub threshold: f64,
}

impl AssociativeModel {
    pub fn num_patches(&self) -> usize {
        match &self.weights {
            Weights::Linear(w) => w.ncols(),
            Weights::Kernel { supports, .. } => supports.ncols(),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self.weights {
            Weights::Linear(_) => "linear",
            Weights::Kernel { .. } => "kernel",
        }
    }

    pub fn num_supports(&self) -> usize {
        match &self.weights {
            Weights::Linear(_) => 0,
            Weights::Kernel { supports, .. } => supports.nrows(),
        }
    }

    pub fn with_threshold(mut self, t: f64) -> Result<Self> {
        check_threshold(t)?;
        self.threshold = t;
        Ok(self)
    }
}

pub(crate) fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FapsmError::InvalidArgument(format!("threshold must lie in [0, 1], got {t}")))
    }
}

fn check_lambda(lambda1: f64) -> Result<()> {
    if lambda1 > 0.0 && lambda1.is_finite() {
        Ok(())
    } else {
        Err(FapsmError::InvalidArgument(format!("lambda1 must be positive, got {lambda1}")))
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FapsmError::NonFinite(what.to_owned()))
    }
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky and checks
/// the residual.
fn spd_solve(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| FapsmError::SolveFailed("system matrix is not positive definite".into()))?;
    let x = chol.solve(b);
    let residual = (&a * &x - b).amax();
    let scale = 1.0_f64.max(a.amax() * x.amax() * a.nrows() as f64).max(b.amax());
    if !residual.is_finite() || residual > 1e-8 * scale {
        return Err(FapsmError::SolveFailed(format!("residual {residual:e} exceeds tolerance")));
    }
    Ok(x)
}

/// Ridge solution `W = (ZᵀZ + λ₁I)⁻¹ZᵀD`.
pub fn fit_linear(z: &DMatrix<f64>, d: &CorrectedMatrix, lambda1: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda1)?;
    if z.shape() != d.0.shape() {
        return Err(FapsmError::DimensionMismatch(format!(
            "Z is {:?}, D is {:?}",
            z.shape(),
            d.0.shape()
        )));
    }
    check_finite(z, "local score matrix")?;
    check_finite(&d.0, "corrected matrix")?;
    let m = z.ncols();
    let gram = z.tr_mul(z) + DMatrix::identity(m, m) * lambda1;
    spd_solve(gram, &z.tr_mul(&d.0))
}

/// Kernel ridge fit over `n_k` rows sampled uniformly without replacement.
pub fn fit_kernel(
    z: &DMatrix<f64>,
    d: &CorrectedMatrix,
    lambda1: f64,
    kernel: KernelSpec,
    n_k: usize,
    seed: u64,
) -> Result<AssociativeModel> {
    check_lambda(lambda1)?;
    let n = z.nrows();
    if z.shape() != d.0.shape() {
        return Err(FapsmError::DimensionMismatch(format!(
            "Z is {:?}, D is {:?}",
            z.shape(),
            d.0.shape()
        )));
    }
    if n_k == 0 || n_k > n {
        return Err(FapsmError::InvalidArgument(format!("n_k = {n_k} outside 1..={n}")));
    }
    check_finite(z, "local score matrix")?;
    check_finite(&d.0, "corrected matrix")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, n_k).into_vec();
    rows.sort_unstable();

    let supports = z.select_rows(rows.iter());
    let targets = d.0.select_rows(rows.iter());
    let support_rows: Vec<Vec<f64>> = supports.row_iter().map(|r| r.iter().copied().collect()).collect();
    let gram = DMatrix::from_fn(n_k, n_k, |i, j| {
        kernel.eval(&support_rows[i], &support_rows[j]) + if i == j { lambda1 } else { 0.0 }
    });
    let alpha = spd_solve(gram, &targets)?;
    Ok(AssociativeModel {
        weights: Weights::Kernel { supports, alpha },
        lambda1,
        kernel,
        threshold: DEFAULT_THRESHOLD,
    })
}

/// Wraps a linear weight matrix as a model.
pub fn linear_model(w: DMatrix<f64>, lambda1: f64, threshold: f64) -> Result<AssociativeModel> {
    check_threshold(threshold)?;
    if !w.is_square() {
        return Err(FapsmError::DimensionMismatch(format!("W is {:?}", w.shape())));
    }
    check_finite(&w, "weight matrix")?;
    Ok(AssociativeModel { weights: Weights::Linear(w), lambda1, kernel: KernelSpec::Linear, threshold })
}

/// Global score row for one local score row.
pub fn predict_global(model: &AssociativeModel, z: &[f64]) -> Result<Vec<f64>> {
    let m = model.num_patches();
    if z.len() != m {
        return Err(FapsmError::DimensionMismatch(format!("score row of length {}, model has m={m}", z.len())));
    }
    match &model.weights {
        Weights::Linear(w) => Ok((RowDVector::from_row_slice(z) * w).iter().copied().collect()),
        Weights::Kernel { supports, alpha } => {
            let mut y = vec![0.0; m];
            let mut row = vec![0.0; m];
            for s in 0..supports.nrows() {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = supports[(s, j)];
                }
                let k = model.kernel.eval(z, &row);
                if k != 0.0 {
                    for (j, yj) in y.iter_mut().enumerate() {
                        *yj += k * alpha[(s, j)];
                    }
                }
            }
            Ok(y)
        }
    }
}

/// Global scores `Y` and thresholded identities `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMatchResult {
    pub scores: DMatrix<f64>,
    pub identities: DMatrix<Identity>,
}

/// `g = p` where `y ≥ t`, otherwise rejected.
pub fn threshold_identities(
    scores: &DMatrix<f64>,
    local_ids: &DMatrix<Identity>,
    t: f64,
) -> DMatrix<Identity> {
    DMatrix::from_fn(scores.nrows(), scores.ncols(), |i, j| {
        if scores[(i, j)] >= t {
            local_ids[(i, j)]
        } else {
            Identity::NONE
        }
    })
}

pub fn global_scores(model: &AssociativeModel, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rows = z
        .row_iter()
        .map(|r| predict_global(model, &r.iter().copied().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(z.nrows(), model.num_patches(), |i, j| rows[i][j]))
}

pub fn globalize(model: &AssociativeModel, local: &LocalMatchResult) -> Result<GlobalMatchResult> {
    let scores = global_scores(model, &local.scores)?;
    let identities = threshold_identities(&scores, &local.identities, model.threshold);
    Ok(GlobalMatchResult { scores, identities })
}

const MODEL_MAGIC: &str = "fapsm-model v1";

fn write_rows(out: &mut String, m: &DMatrix<f64>) {
    for r in m.row_iter() {
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
}

impl fmt::Display for AssociativeModel {
    /// Model file text; floats in shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sigma = match self.kernel {
            KernelSpec::Gaussian { sigma } => sigma,
            KernelSpec::Linear => DEFAULT_SIGMA,
        };
        let mut out = format!(
            "{MODEL_MAGIC} mode={} m={} lambda1={} t={} kernel={} sigma={} nk={}\n",
            self.mode(),
            self.num_patches(),
            self.lambda1,
            self.threshold,
            self.kernel.kind(),
            sigma,
            self.num_supports()
        );
        match &self.weights {
            Weights::Linear(w) => write_rows(&mut out, w),
            Weights::Kernel { supports, alpha } => {
                write_rows(&mut out, supports);
                write_rows(&mut out, alpha);
            }
        }
        f.write_str(&out)
    }
}

pub fn parse_model(text: &str) -> Result<AssociativeModel> {
    let mut lines = content_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| FapsmError::Format("empty model file".into()))?;
    let fields = parse_header_fields(header, MODEL_MAGIC, hl)?;
    let mode = header_value(&fields, "mode", hl)?;
    let m: usize = parse_num(header_value(&fields, "m", hl)?, hl, "m")?;
    let lambda1: f64 = parse_num(header_value(&fields, "lambda1", hl)?, hl, "lambda1")?;
    let t: f64 = parse_num(header_value(&fields, "t", hl)?, hl, "t")?;
    let kind = header_value(&fields, "kernel", hl)?;
    let sigma: f64 = parse_num(header_value(&fields, "sigma", hl)?, hl, "sigma")?;
    let nk: usize = parse_num(header_value(&fields, "nk", hl)?, hl, "nk")?;
    check_lambda(lambda1).map_err(|e| FapsmError::parse(hl, e.to_string()))?;
    check_threshold(t).map_err(|e| FapsmError::parse(hl, e.to_string()))?;
    if m == 0 {
        return Err(FapsmError::parse(hl, "m must be at least 1"));
    }
    let kernel = match kind {
        "linear" => KernelSpec::Linear,
        "gaussian" => KernelSpec::gaussian(sigma).map_err(|e| FapsmError::parse(hl, e.to_string()))?,
        other => return Err(FapsmError::parse(hl, format!("unknown kernel \"{other}\""))),
    };
    let row_count = match mode {
        "linear" => m,
        "kernel" => {
            if nk == 0 {
                return Err(FapsmError::parse(hl, "kernel model needs nk >= 1"));
            }
            nk.checked_mul(2).ok_or_else(|| FapsmError::parse(hl, "nk too large"))?
        }
        other => return Err(FapsmError::parse(hl, format!("unknown mode \"{other}\""))),
    };

    let mut data = Vec::new();
    let mut read = 0usize;
    for (line_no, line) in lines {
        if read == row_count {
            return Err(FapsmError::parse(line_no, "trailing data after model rows"));
        }
        let row = parse_floats(line, line_no)?;
        if row.len() != m {
            return Err(FapsmError::parse(line_no, format!("row has {} values, expected m={m}", row.len())));
        }
        data.extend(row);
        read += 1;
    }
    if read != row_count {
        return Err(FapsmError::Format(format!("model has {read} rows, expected {row_count}")));
    }
    let weights = if mode == "linear" {
        Weights::Linear(DMatrix::from_row_slice(m, m, &data))
    } else {
        let (s, a) = data.split_at(nk * m);
        Weights::Kernel {
            supports: DMatrix::from_row_slice(nk, m, s),
            alpha: DMatrix::from_row_slice(nk, m, a),
        }
    };
    Ok(AssociativeModel { weights, lambda1, kernel, threshold: t })
}
