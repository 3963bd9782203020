//! Rank-1 accuracy, threshold sweeps and the Friedman / Iman-Davenport /
//! Bonferroni-Dunn comparison of methods over data splits.

use std::fmt::{self, Write as _};

use crate::associative::check_threshold;
use crate::error::{FapsmError, Result};
use crate::local::local_match;
use crate::pipeline::{combine, fit_model, fit_patch_weights, summarize, PipelineConfig};
use crate::signature::{validate_pairing, Gallery, Identity, ProbeSet};

pub const DEFAULT_SWEEP: [f64; 5] = [0.2, 0.3, 0.4, 0.5, 0.6];

pub fn rank1_accuracy(predictions: &[Identity], truth: &[Identity]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(FapsmError::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(FapsmError::InvalidArgument("rank-1 accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t && !p.is_none()).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub threshold: f64,
    /// Training rank-1, or the reason the pipeline could not be trained.
    pub accuracy: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub baseline_accuracy: f64,
    pub best_threshold: f64,
    pub best_accuracy: f64,
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "t,fapsm_rank1")?;
        for e in &self.entries {
            match &e.accuracy {
                Ok(a) => writeln!(f, "{},{a}", e.threshold)?,
                Err(msg) => writeln!(f, "{},failed: {msg}", e.threshold)?,
            }
        }
        writeln!(f, "baseline_rank1={}", self.baseline_accuracy)?;
        writeln!(f, "best_t={}", self.best_threshold)?;
        writeln!(f, "best_rank1={}", self.best_accuracy)
    }
}

/// Trains the pipeline once per candidate threshold on labeled probes and
/// picks the threshold with the best training rank-1 (smaller `t` on ties).
///
/// Candidates for which weight learning fails are listed with their error and
/// skipped; if all fail, the first failure is returned.
pub fn sweep_threshold(
    gallery: &Gallery,
    probes: &ProbeSet,
    candidates: &[f64],
    config: &PipelineConfig,
) -> Result<SweepReport> {
    if candidates.is_empty() {
        return Err(FapsmError::InvalidArgument("empty threshold candidate list".into()));
    }
    for &t in candidates {
        check_threshold(t)?;
    }
    config.validate()?;
    validate_pairing(gallery, probes).into_result()?;
    let truth = probes.labels()?;

    // local matching and the associative fit do not depend on t
    let local = local_match(gallery, probes).map_err(|e| e.in_stage("local matching"))?;
    let base = fit_model(&local, truth, config)?;

    let mut entries = Vec::with_capacity(candidates.len());
    let mut first_err = None;
    let mut baseline_accuracy = None;
    for &t in candidates {
        let model = base.clone().with_threshold(t)?;
        let run = fit_patch_weights(&model, &local, truth, config.lambda2)
            .and_then(|(w, global)| combine(&local, &global, &w))
            .and_then(|ids| summarize(&ids, truth));
        let accuracy = match run {
            Ok(s) => {
                baseline_accuracy.get_or_insert(s.baseline_accuracy);
                Ok(s.fapsm_accuracy)
            }
            Err(e) => {
                let msg = e.to_string();
                first_err.get_or_insert(e);
                Err(msg)
            }
        };
        entries.push(SweepEntry { threshold: t, accuracy });
    }

    let mut best: Option<(f64, f64)> = None;
    for e in &entries {
        if let Ok(a) = e.accuracy {
            let better = match best {
                None => true,
                Some((bt, ba)) => a > ba || (a == ba && e.threshold < bt),
            };
            if better {
                best = Some((e.threshold, a));
            }
        }
    }
    match (best, baseline_accuracy) {
        (Some((best_threshold, best_accuracy)), Some(baseline_accuracy)) => {
            Ok(SweepReport { entries, baseline_accuracy, best_threshold, best_accuracy })
        }
        _ => Err(first_err.expect("every candidate failed")),
    }
}

/// Per-split accuracies of several methods.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitResults {
    pub method_names: Vec<String>,
    /// One row per split, one column per method.
    pub accuracies: Vec<Vec<f64>>,
}

impl SplitResults {
    pub fn new(method_names: Vec<String>, accuracies: Vec<Vec<f64>>) -> Result<Self> {
        let k = method_names.len();
        if k < 2 {
            return Err(FapsmError::InvalidArgument(format!("need at least 2 methods, got {k}")));
        }
        if accuracies.len() < 2 {
            return Err(FapsmError::InvalidArgument(format!(
                "need at least 2 splits, got {}",
                accuracies.len()
            )));
        }
        for (i, row) in accuracies.iter().enumerate() {
            if row.len() != k {
                return Err(FapsmError::DimensionMismatch(format!("split {i} has {} values for {k} methods", row.len())));
            }
            if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
                return Err(FapsmError::InvalidArgument(format!("split {i}: accuracy {a} outside [0, 1]")));
            }
        }
        Ok(SplitResults { method_names, accuracies })
    }

    pub fn num_splits(&self) -> usize {
        self.accuracies.len()
    }

    pub fn num_methods(&self) -> usize {
        self.method_names.len()
    }
}

/// Parses `split,<method1>,<method2>,...` CSV.
pub fn parse_split_csv(text: &str) -> Result<SplitResults> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| FapsmError::parse(1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("split") {
        return Err(FapsmError::parse(1, "header must start with \"split\""));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            FapsmError::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != names.len() + 1 {
            return Err(FapsmError::parse(line, format!("{} fields, expected {}", record.len(), names.len() + 1)));
        }
        let row = record
            .iter()
            .skip(1)
            .map(|v| {
                let a: f64 = v
                    .parse()
                    .map_err(|_| FapsmError::parse(line, format!("invalid accuracy \"{v}\"")))?;
                if (0.0..=1.0).contains(&a) {
                    Ok(a)
                } else {
                    Err(FapsmError::parse(line, format!("accuracy {a} outside [0, 1]")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    SplitResults::new(names, rows)
}

pub fn format_split_csv(results: &SplitResults) -> String {
    let mut out = String::from("split");
    for n in &results.method_names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (i, row) in results.accuracies.iter().enumerate() {
        let _ = write!(out, "{}", i + 1);
        for a in row {
            let _ = write!(out, ",{a}");
        }
        out.push('\n');
    }
    out
}

/// Mean rank of each method over splits; rank 1 is the best accuracy and
/// tied accuracies share the mean of the ranks they span.
pub fn average_ranks(results: &SplitResults) -> Vec<f64> {
    let k = results.num_methods();
    let mut totals = vec![0.0; k];
    for row in &results.accuracies {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let mut start = 0;
        while start < k {
            let mut end = start + 1;
            while end < k && row[order[end]] == row[order[start]] {
                end += 1;
            }
            // positions start..end hold ranks start+1 ..= end
            let shared = (start + 1 + end) as f64 / 2.0;
            for &method in &order[start..end] {
                totals[method] += shared;
            }
            start = end;
        }
    }
    let n = results.num_splits() as f64;
    totals.into_iter().map(|t| t / n).collect()
}

/// Friedman chi-square and the Iman-Davenport F statistic from average ranks.
pub fn friedman_iman(ranks: &[f64], n: usize, k: usize) -> Result<(f64, f64)> {
    let chi2 = friedman_chi2(ranks, n, k)?;
    let nf = n as f64;
    let denom = nf * (k as f64 - 1.0) - chi2;
    if denom <= 0.0 {
        return Err(FapsmError::Degenerate(format!(
            "Iman-Davenport denominator N(k-1) - chi2 = {denom} is not positive"
        )));
    }
    Ok((chi2, (nf - 1.0) * chi2 / denom))
}

fn friedman_chi2(ranks: &[f64], n: usize, k: usize) -> Result<f64> {
    if k < 2 || n < 2 {
        return Err(FapsmError::InvalidArgument(format!("need k >= 2 and N >= 2, got k={k}, N={n}")));
    }
    if ranks.len() != k {
        return Err(FapsmError::DimensionMismatch(format!("{} ranks for k={k}", ranks.len())));
    }
    let (nf, kf) = (n as f64, k as f64);
    let sum_sq: f64 = ranks.iter().map(|r| r * r).sum();
    let chi2 = 12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0);
    // rounding can leave a tiny negative value for equal ranks
    Ok(chi2.max(0.0))
}

pub fn bonferroni_dunn_cd(q_alpha: f64, k: usize, n: usize) -> Result<f64> {
    if !(q_alpha > 0.0 && q_alpha.is_finite()) {
        return Err(FapsmError::InvalidArgument(format!("q_alpha must be positive, got {q_alpha}")));
    }
    if k < 2 || n < 1 {
        return Err(FapsmError::InvalidArgument(format!("need k >= 2 and N >= 1, got k={k}, N={n}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    Ok(q_alpha * (kf * (kf + 1.0) / (6.0 * nf)).sqrt())
}

/// Two-tailed Bonferroni-Dunn critical values for k = 2..=10.
const Q_ALPHA_005: [f64; 9] = [1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.724, 2.773];
const Q_ALPHA_010: [f64; 9] = [1.65, 1.960, 2.128, 2.241, 2.326, 2.394, 2.450, 2.498, 2.539];

pub fn q_alpha(alpha: f64, k: usize) -> Result<f64> {
    let table = if alpha == 0.05 {
        &Q_ALPHA_005
    } else if alpha == 0.10 {
        &Q_ALPHA_010
    } else {
        return Err(FapsmError::InvalidArgument(format!(
            "no built-in critical value for alpha={alpha}; supply q_alpha explicitly"
        )));
    };
    k.checked_sub(2)
        .and_then(|i| table.get(i))
        .copied()
        .ok_or_else(|| FapsmError::InvalidArgument(format!("no built-in critical value for k={k}; supply q_alpha")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatReport {
    pub method_names: Vec<String>,
    pub num_splits: usize,
    pub avg_ranks: Vec<f64>,
    pub friedman_chi2: f64,
    /// `None` when the Iman-Davenport denominator vanishes (maximal separation).
    pub iman_f: Option<f64>,
    pub alpha: f64,
    pub q_alpha: f64,
    pub critical_difference: f64,
    /// Index pairs `(a, b)`, `a < b`, with `|R_a - R_b| > CD`.
    pub significant_pairs: Vec<(usize, usize)>,
}

/// Report from average ranks directly.
pub fn significance_from_ranks(
    method_names: Vec<String>,
    ranks: &[f64],
    n: usize,
    alpha: f64,
    q_override: Option<f64>,
) -> Result<StatReport> {
    let k = ranks.len();
    if method_names.len() != k {
        return Err(FapsmError::DimensionMismatch(format!("{} names for {k} ranks", method_names.len())));
    }
    let q = match q_override {
        Some(q) => q,
        None => q_alpha(alpha, k)?,
    };
    let friedman_chi2 = friedman_chi2(ranks, n, k)?;
    let iman_f = match friedman_iman(ranks, n, k) {
        Ok((_, f)) => Some(f),
        Err(FapsmError::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let cd = bonferroni_dunn_cd(q, k, n)?;
    let mut significant_pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if (ranks[a] - ranks[b]).abs() > cd {
                significant_pairs.push((a, b));
            }
        }
    }
    Ok(StatReport {
        method_names,
        num_splits: n,
        avg_ranks: ranks.to_vec(),
        friedman_chi2,
        iman_f,
        alpha,
        q_alpha: q,
        critical_difference: cd,
        significant_pairs,
    })
}

pub fn significance_report(results: &SplitResults, alpha: f64, q_override: Option<f64>) -> Result<StatReport> {
    let ranks = average_ranks(results);
    significance_from_ranks(results.method_names.clone(), &ranks, results.num_splits(), alpha, q_override)
}

impl StatReport {
    /// Machine-readable `key=value` block.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "methods={}", self.method_names.join(","));
        let _ = writeln!(out, "splits={}", self.num_splits);
        let ranks: Vec<String> = self.avg_ranks.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "avg_ranks={}", ranks.join(","));
        let _ = writeln!(out, "friedman_chi2={}", self.friedman_chi2);
        match self.iman_f {
            Some(f) => writeln!(out, "iman_f={f}"),
            None => writeln!(out, "iman_f=inf"),
        }
        .ok();
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "q_alpha={}", self.q_alpha);
        let _ = writeln!(out, "critical_difference={}", self.critical_difference);
        let pairs: Vec<String> = self
            .significant_pairs
            .iter()
            .map(|&(a, b)| format!("{}:{}", self.method_names[a], self.method_names[b]))
            .collect();
        let _ = writeln!(out, "significant_pairs={}", pairs.join(","));
        out
    }
}

impl fmt::Display for StatReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = self.method_names.len();
        writeln!(f, "Friedman test over {} splits, {k} methods", self.num_splits)?;
        for (name, r) in self.method_names.iter().zip(&self.avg_ranks) {
            writeln!(f, "  {name:<24} average rank {r:.4}")?;
        }
        writeln!(f, "  chi2_F = {:.4} ({} degrees of freedom)", self.friedman_chi2, k - 1)?;
        match self.iman_f {
            Some(v) => writeln!(
                f,
                "  F_F = {v:.4} (F distribution, {} and {} degrees of freedom)",
                k - 1,
                (k - 1) * (self.num_splits - 1)
            )?,
            None => writeln!(f, "  F_F = inf (ranks are maximally separated)")?,
        }
        writeln!(
            f,
            "Bonferroni-Dunn: alpha = {}, q_alpha = {}, CD = {:.4}",
            self.alpha, self.q_alpha, self.critical_difference
        )?;
        if self.significant_pairs.is_empty() {
            writeln!(f, "  no significantly different pairs")?;
        }
        for &(a, b) in &self.significant_pairs {
            writeln!(
                f,
                "  {} vs {}: |{:.4} - {:.4}| = {:.4} > CD, significant",
                self.method_names[a],
                self.method_names[b],
                self.avg_ranks[a],
                self.avg_ranks[b],
                (self.avg_ranks[a] - self.avg_ranks[b]).abs()
            )?;
        }
        Ok(())
    }
}
