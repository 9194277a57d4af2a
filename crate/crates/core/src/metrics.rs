//! Selection and prediction scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks over tied blocks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// `(FDR, FOR)`; each is 0 when its denominator is empty.
pub fn fdr_for(selected: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if selected.len() != truth.len() {
        return Err(Error::LengthMismatch { left: selected.len(), right: truth.len() });
    }
    let (mut fp, mut claimed, mut fne, mut unclaimed) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(truth) {
        if s {
            claimed += 1;
            fp += !t as usize;
        } else {
            unclaimed += 1;
            fne += t as usize;
        }
    }
    Ok((fp as f64 / claimed.max(1) as f64, fne as f64 / unclaimed.max(1) as f64))
}

/// Mean squared entry of `Y - X B`.
pub fn prediction_mse(b_hat: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() != b_hat.nrows() || x.nrows() != y.nrows() || b_hat.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "X {:?}, B {:?}, Y {:?}",
            x.shape(),
            b_hat.shape(),
            y.shape()
        )));
    }
    let residual = y - x * b_hat;
    Ok(residual.norm_squared() / (y.nrows() * y.ncols()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub auc: f64,
    pub fdr: f64,
    pub for_rate: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error of the mean; SE is 0 for a single value.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSe { mean: f64::NAN, se: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanSe { mean, se: (var / n).sqrt() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub replicates: usize,
    pub auc: MeanSe,
    pub fdr: MeanSe,
    pub for_rate: MeanSe,
    pub mse: MeanSe,
}

pub fn summarize(results: &[EvaluationResult]) -> EvaluationSummary {
    let pick = |f: fn(&EvaluationResult) -> f64| mean_se(&results.iter().map(f).collect::<Vec<_>>());
    EvaluationSummary {
        replicates: results.len(),
        auc: pick(|r| r.auc),
        fdr: pick(|r| r.fdr),
        for_rate: pick(|r| r.for_rate),
        mse: pick(|r| r.mse),
    }
}
