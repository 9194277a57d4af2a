//! Posterior summaries and selection rules.
//!
//! Response subsets are bitmasks over `0..q` (bit `k` set means response `k`
//! is in the subset); public functions also accept index slices.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::model::PosteriorSamples;

/// Default lower bound on a subset's own PIP for it to be a best-subset candidate.
pub const DEFAULT_MIN_SUBSET_PIP: f64 = 0.5;

/// Largest number of responses for which all `2^q - 1` subsets are enumerated.
pub const MAX_SUBSET_RESPONSES: usize = 15;

fn require_draws(samples: &PosteriorSamples) -> Result<()> {
    if samples.is_empty() {
        Err(Error::EmptySamples)
    } else {
        Ok(())
    }
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let t = values.len();
    if t % 2 == 1 {
        values[t / 2]
    } else {
        0.5 * (values[t / 2 - 1] + values[t / 2])
    }
}

/// Entrywise posterior median of `B`; even draw counts average the two central values.
pub fn posterior_median_matrix(samples: &PosteriorSamples) -> Result<DMatrix<f64>> {
    require_draws(samples)?;
    let (p, q) = samples.draws[0].b.shape();
    let mut buf = vec![0.0; samples.len()];
    Ok(DMatrix::from_fn(p, q, |j, k| {
        for (slot, d) in buf.iter_mut().zip(&samples.draws) {
            *slot = d.b[(j, k)];
        }
        median_of(&mut buf)
    }))
}

/// Posterior mean of `B`, used for prediction.
pub fn posterior_mean_matrix(samples: &PosteriorSamples) -> Result<DMatrix<f64>> {
    require_draws(samples)?;
    let mut acc = DMatrix::zeros(samples.draws[0].b.nrows(), samples.draws[0].b.ncols());
    for d in &samples.draws {
        acc += &d.b;
    }
    Ok(acc / samples.len() as f64)
}

/// Fraction of draws with `z_gj,k = 1`, per entry.
pub fn entry_pip(samples: &PosteriorSamples) -> Result<DMatrix<f64>> {
    require_draws(samples)?;
    let (p, q) = samples.draws[0].z.shape();
    let mut counts = DMatrix::<f64>::zeros(p, q);
    for d in &samples.draws {
        for (c, &z) in counts.iter_mut().zip(d.z.iter()) {
            *c += z as u8 as f64;
        }
    }
    Ok(counts / samples.len() as f64)
}

/// Fraction of draws in which predictor `j` is active for at least one response.
pub fn predictor_pip(samples: &PosteriorSamples) -> Result<Vec<f64>> {
    require_draws(samples)?;
    let (p, q) = samples.draws[0].z.shape();
    let mut counts = vec![0usize; p];
    for d in &samples.draws {
        for (j, c) in counts.iter_mut().enumerate() {
            *c += (0..q).any(|k| d.z[(j, k)]) as usize;
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / samples.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BfdrSelection {
    /// Selected predictor indices (0-based), ascending.
    pub selected: Vec<usize>,
    /// Null-probability cutoff: predictors with `1 - PIP < t` are selected.
    pub cutoff: f64,
    /// Mean null probability among the selected predictors; 0 when nothing is selected.
    pub bfdr: f64,
    pub alpha: f64,
}

/// Selects the largest set of predictors, taken in order of increasing null
/// probability `1 - PIP`, whose mean null probability stays at most `alpha`.
pub fn bfdr_select(pips: &[f64], alpha: f64) -> Result<BfdrSelection> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("BFDR level {alpha} outside (0, 1)")));
    }
    if let Some(&bad) = pips.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidConfig(format!("PIP {bad} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..pips.len()).collect();
    order.sort_by(|&a, &b| (1.0 - pips[a]).total_cmp(&(1.0 - pips[b])).then(a.cmp(&b)));
    let mut running = 0.0;
    let mut count = 0;
    let mut bfdr = 0.0;
    for (i, &j) in order.iter().enumerate() {
        running += 1.0 - pips[j];
        let mean = running / (i + 1) as f64;
        if mean <= alpha {
            count = i + 1;
            bfdr = mean;
        }
    }
    // Later entries have larger null probabilities, so once the running mean
    // exceeds alpha it cannot come back down; `count` is the prefix length.
    let mut selected: Vec<usize> = order[..count].to_vec();
    let cutoff = selected.iter().map(|&j| 1.0 - pips[j]).fold(f64::NEG_INFINITY, f64::max);
    let cutoff = if count == 0 { 0.0 } else { cutoff + f64::EPSILON };
    selected.sort_unstable();
    Ok(BfdrSelection { selected, cutoff, bfdr, alpha })
}

/// Converts 0-based response indices to a subset mask.
pub fn subset_mask(subset: &[usize], q: usize) -> Result<u32> {
    if subset.is_empty() || q > MAX_SUBSET_RESPONSES || subset.iter().any(|&k| k >= q) {
        return Err(Error::EmptySubset { q });
    }
    Ok(subset.iter().fold(0u32, |m, &k| m | (1 << k)))
}

/// 0-based response indices of a subset mask.
pub fn mask_indices(mask: u32) -> Vec<usize> {
    (0..32).filter(|k| mask & (1 << k) != 0).collect()
}

/// Activity masks of every predictor in every draw, `masks[t * p + j]`.
fn activity_masks(samples: &PosteriorSamples) -> Vec<u32> {
    let (p, q) = samples.draws[0].z.shape();
    let mut out = Vec::with_capacity(samples.len() * p);
    for d in &samples.draws {
        for j in 0..p {
            out.push((0..q).fold(0u32, |m, k| m | ((d.z[(j, k)] as u32) << k)));
        }
    }
    out
}

/// Fraction of draws in which predictor `j` is active for every response in `subset`.
pub fn subset_pip(samples: &PosteriorSamples, j: usize, subset: &[usize]) -> Result<f64> {
    require_draws(samples)?;
    let (p, q) = samples.draws[0].z.shape();
    subset_mask(subset, q)?;
    if j >= p {
        return Err(Error::DimensionMismatch(format!("predictor {j} out of range for p = {p}")));
    }
    let hits = samples.draws.iter().filter(|d| subset.iter().all(|&k| d.z[(j, k)])).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// PIP of every subset mask `1..2^q` given per-draw activity masks.
///
/// Index `s` of the result holds the fraction of draws whose mask contains `s`.
fn all_subset_pips(masks: impl Iterator<Item = u32>, q: usize, draws: usize) -> Vec<f64> {
    let size = 1usize << q;
    let mut counts = vec![0u64; size];
    for m in masks {
        counts[m as usize] += 1;
    }
    // Superset sums: counts[s] becomes #{draws with mask ⊇ s}.
    for bit in 0..q {
        for s in 0..size {
            if s & (1 << bit) == 0 {
                counts[s] += counts[s | (1 << bit)];
            }
        }
    }
    counts.into_iter().map(|c| c as f64 / draws as f64).collect()
}

/// JSON has no infinities; they travel as the strings `"inf"` and `"-inf"`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    /// 0-based response indices.
    pub subset: Vec<usize>,
    pub pip: f64,
    pub reference_mean: f64,
    pub reference_sd: f64,
    /// `+inf` when the reference is degenerate and the observed PIP exceeds it.
    #[serde(with = "extended_float")]
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSubset {
    pub predictor: usize,
    pub subset: Vec<usize>,
    #[serde(with = "extended_float")]
    pub z: f64,
    pub pip: f64,
    pub scores: Vec<SubsetScore>,
}

fn z_score(pip: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        (pip - mean) / sd
    } else if pip > mean {
        f64::INFINITY
    } else if pip == mean {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Ranks subsets by Z, then by size, then lexicographically by response indices.
fn better(a: &SubsetScore, b: &SubsetScore) -> bool {
    if a.z != b.z {
        return a.z > b.z;
    }
    if a.subset.len() != b.subset.len() {
        return a.subset.len() > b.subset.len();
    }
    a.subset < b.subset
}

/// Best response subset of each selected predictor by the permutation Z-score.
///
/// Each replicate applies one uniformly random permutation to the `p * q`
/// cells of the inclusion array, identically in every draw, and recomputes
/// the subset PIPs at the selected predictors. The reference standard
/// deviation uses the `1/R` normalization.
///
/// Only subsets with PIP at least `min_pip` compete for the maximum (all
/// subsets if none qualifies). Large subsets almost never co-occur under the
/// permutation, so their reference is degenerate and any nonzero PIP would
/// otherwise win with an infinite Z.
pub fn best_subset_permutation(
    samples: &PosteriorSamples,
    selected: &[usize],
    permutations: usize,
    min_pip: f64,
    rng: &RngStream,
) -> Result<Vec<BestSubset>> {
    require_draws(samples)?;
    let (p, q) = samples.draws[0].z.shape();
    if q == 0 || q > MAX_SUBSET_RESPONSES {
        return Err(Error::InvalidConfig(format!("q = {q} outside 1..={MAX_SUBSET_RESPONSES}")));
    }
    if permutations < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 permutations, got {permutations}")));
    }
    if let Some(&j) = selected.iter().find(|&&j| j >= p) {
        return Err(Error::DimensionMismatch(format!("predictor {j} out of range for p = {p}")));
    }
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let t = samples.len();
    let size = 1usize << q;
    let masks = activity_masks(samples);
    let observed: Vec<Vec<f64>> =
        selected.iter().map(|&j| all_subset_pips((0..t).map(|i| masks[i * p + j]), q, t)).collect();

    // Cell (j, k) activity per draw, cell index j * q + k.
    let cells = p * q;
    let cell_bit = |i: usize, cell: usize| (masks[i * p + cell / q] >> (cell % q)) & 1;

    // Per replicate, per selected predictor, subset PIPs of the permuted array.
    let replicate_pips: Vec<Vec<Vec<f64>>> = (0..permutations as u64)
        .into_par_iter()
        .map(|r| {
            let mut local = rng.substream(r);
            let mut perm: Vec<usize> = (0..cells).collect();
            perm.shuffle(&mut local);
            selected
                .iter()
                .map(|&j| {
                    let sources = &perm[j * q..(j + 1) * q];
                    let permuted = (0..t).map(|i| {
                        sources.iter().enumerate().fold(0u32, |m, (k, &c)| m | (cell_bit(i, c) << k))
                    });
                    all_subset_pips(permuted, q, t)
                })
                .collect()
        })
        .collect();

    let r = permutations as f64;
    let mut out = Vec::with_capacity(selected.len());
    for (si, &j) in selected.iter().enumerate() {
        let mut scores = Vec::with_capacity(size - 1);
        for s in 1..size {
            let mean = replicate_pips.iter().map(|rep| rep[si][s]).sum::<f64>() / r;
            let var = replicate_pips.iter().map(|rep| (rep[si][s] - mean).powi(2)).sum::<f64>() / r;
            let sd = var.sqrt();
            let pip = observed[si][s];
            scores.push(SubsetScore {
                subset: mask_indices(s as u32),
                pip,
                reference_mean: mean,
                reference_sd: sd,
                z: z_score(pip, mean, sd),
            });
        }
        let supported: Vec<&SubsetScore> = scores.iter().filter(|s| s.pip >= min_pip).collect();
        let candidates = if supported.is_empty() { scores.iter().collect() } else { supported };
        let best = (*candidates.iter().fold(&candidates[0], |acc, s| if better(s, acc) { s } else { acc })).clone();
        out.push(BestSubset { predictor: j, subset: best.subset, z: best.z, pip: best.pip, scores });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub b_hat: DMatrix<f64>,
    pub entry_pip: DMatrix<f64>,
    pub predictor_pip: Vec<f64>,
    pub bfdr: BfdrSelection,
    pub best_subsets: Vec<BestSubset>,
    pub permutations: usize,
    pub min_subset_pip: f64,
    /// The unit shuffled by the permutation reference.
    pub permutation_unit: String,
    pub seed: u64,
}

pub const PERMUTATION_UNIT: &str = "cells of the per-draw inclusion array, same permutation in every draw";

/// Medians, PIPs, BFDR selection at `alpha`, and best subsets of the selected predictors.
///
/// `permutations = 0` skips the best-subset search.
pub fn build_report(
    samples: &PosteriorSamples,
    alpha: f64,
    permutations: usize,
    min_subset_pip: f64,
    seed: u64,
) -> Result<InferenceReport> {
    let b_hat = posterior_median_matrix(samples)?;
    let entry = entry_pip(samples)?;
    let pips = predictor_pip(samples)?;
    let bfdr = bfdr_select(&pips, alpha)?;
    let rng = RngStream::new(seed, 0);
    let best_subsets = if permutations == 0 {
        Vec::new()
    } else {
        best_subset_permutation(samples, &bfdr.selected, permutations, min_subset_pip, &rng)?
    };
    Ok(InferenceReport {
        b_hat,
        entry_pip: entry,
        predictor_pip: pips,
        bfdr,
        best_subsets,
        permutations,
        min_subset_pip,
        permutation_unit: PERMUTATION_UNIT.to_string(),
        seed,
    })
}
