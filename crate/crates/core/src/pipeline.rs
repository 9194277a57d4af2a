//! Simulate, fit, infer and score one scenario replicate.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{splitmix64, RngStream};
use crate::error::Result;
use crate::gibbs::{run_chains, SamplerConfig};
use crate::inference::{bfdr_select, build_report, entry_pip, InferenceReport, DEFAULT_MIN_SUBSET_PIP};
use crate::metrics::{auc, fdr_for, prediction_mse, summarize, EvaluationResult, EvaluationSummary};
use crate::model::{GroupedDesign, PosteriorSamples, PriorConfig, ResponseMatrix, ScenarioSpec};
use crate::simdata::simulate_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenario: ScenarioSpec,
    pub replicates: usize,
    pub sampler: SamplerConfig,
    pub priors: PriorConfig,
    pub alpha: f64,
    /// Permutation count for best-subset search; 0 skips it.
    pub permutations: usize,
    pub min_subset_pip: f64,
    pub seed: u64,
    /// Optional binary annotations applied to every replicate's design.
    #[serde(default)]
    pub annotations: Option<Vec<u8>>,
}

impl BenchConfig {
    pub fn new(scenario: ScenarioSpec, replicates: usize, seed: u64) -> Self {
        BenchConfig {
            scenario,
            replicates,
            sampler: SamplerConfig { iterations: 3000, burn_in: 1000, ..SamplerConfig::default() },
            priors: PriorConfig::default(),
            alpha: 0.1,
            permutations: 0,
            min_subset_pip: DEFAULT_MIN_SUBSET_PIP,
            seed,
            annotations: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// Scored on predictor PIPs against causal rows.
    pub predictor: EvaluationResult,
    /// Scored on entry PIPs against nonzero entries.
    pub entry: EvaluationResult,
    /// Test-set MSE of the true coefficients, the irreducible-noise floor.
    pub noise_mse: f64,
    /// Causal predictors whose best subset equals their true support.
    pub exact_subsets: Option<usize>,
    pub causal_predictors: usize,
    pub d1_mean: Option<f64>,
    pub predictor_pip: Vec<f64>,
}

/// Seed of the sampler for replicate `r`.
fn replicate_seed(seed: u64, r: usize) -> u64 {
    splitmix64(seed ^ splitmix64(r as u64 + 1))
}

/// Runs every configured chain and merges the draws.
pub fn fit(
    design: &GroupedDesign,
    y: &ResponseMatrix,
    priors: &PriorConfig,
    config: &SamplerConfig,
) -> Result<PosteriorSamples> {
    PosteriorSamples::merge(run_chains(design, y, priors, config)?)
}

pub fn run_replicate(cfg: &BenchConfig, r: usize) -> Result<ReplicateOutcome> {
    let master = RngStream::new(cfg.seed, 0).substream(r as u64);
    let mut train = simulate_dataset(&cfg.scenario, &mut master.substream(0))?;
    let test = simulate_dataset(&cfg.scenario, &mut master.substream(1))?;
    train.design.annotations = cfg.annotations.clone();
    let sampler = SamplerConfig { seed: replicate_seed(cfg.seed, r), ..cfg.sampler.clone() };
    let samples = fit(&train.design, &train.y, &cfg.priors, &sampler)?;
    let report = build_report(&samples, cfg.alpha, cfg.permutations, cfg.min_subset_pip, replicate_seed(cfg.seed ^ 0xA5A5, r))?;
    score(cfg, r, &samples, &report, &train.true_b, &test.design.x, &test.y.y)
}

fn score(
    cfg: &BenchConfig,
    r: usize,
    samples: &PosteriorSamples,
    report: &InferenceReport,
    true_b: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    y_test: &DMatrix<f64>,
) -> Result<ReplicateOutcome> {
    let (p, q) = true_b.shape();
    let causal: Vec<bool> = (0..p).map(|j| true_b.row(j).iter().any(|&v| v != 0.0)).collect();
    let mse = prediction_mse(&report.b_hat, x_test, y_test)?;
    let noise_mse = prediction_mse(true_b, x_test, y_test)?;

    let mut selected = vec![false; p];
    for &j in &report.bfdr.selected {
        selected[j] = true;
    }
    let (fdr, for_rate) = fdr_for(&selected, &causal)?;
    let predictor = EvaluationResult { auc: auc(&report.predictor_pip, &causal)?, fdr, for_rate, mse };

    let entry_scores: Vec<f64> = entry_pip(samples)?.iter().copied().collect();
    let entry_truth: Vec<bool> = true_b.iter().map(|&v| v != 0.0).collect();
    let entry_sel = bfdr_select(&entry_scores, cfg.alpha)?;
    let mut entry_selected = vec![false; p * q];
    for &i in &entry_sel.selected {
        entry_selected[i] = true;
    }
    let (efdr, efor) = fdr_for(&entry_selected, &entry_truth)?;
    let entry = EvaluationResult { auc: auc(&entry_scores, &entry_truth)?, fdr: efdr, for_rate: efor, mse };

    let exact_subsets = (cfg.permutations > 0).then(|| {
        report
            .best_subsets
            .iter()
            .filter(|b| causal[b.predictor])
            .filter(|b| {
                let truth: Vec<usize> = (0..q).filter(|&k| true_b[(b.predictor, k)] != 0.0).collect();
                b.subset == truth
            })
            .count()
    });
    let d1_mean = (!samples.d1.is_empty()).then(|| samples.d1.iter().sum::<f64>() / samples.d1.len() as f64);
    Ok(ReplicateOutcome {
        replicate: r,
        predictor,
        entry,
        noise_mse,
        exact_subsets,
        causal_predictors: causal.iter().filter(|&&c| c).count(),
        d1_mean,
        predictor_pip: report.predictor_pip.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub predictor: EvaluationSummary,
    pub entry: EvaluationSummary,
    pub noise_mse: f64,
    pub outcomes: Vec<ReplicateOutcome>,
}

/// Runs all replicates in parallel; outcomes come back in replicate order.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchSummary> {
    let outcomes: Vec<ReplicateOutcome> =
        (0..cfg.replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect::<Result<_>>()?;
    Ok(summarize_outcomes(outcomes))
}

pub fn summarize_outcomes(outcomes: Vec<ReplicateOutcome>) -> BenchSummary {
    let predictor: Vec<EvaluationResult> = outcomes.iter().map(|o| o.predictor).collect();
    let entry: Vec<EvaluationResult> = outcomes.iter().map(|o| o.entry).collect();
    let noise_mse = outcomes.iter().map(|o| o.noise_mse).sum::<f64>() / outcomes.len().max(1) as f64;
    BenchSummary { predictor: summarize(&predictor), entry: summarize(&entry), noise_mse, outcomes }
}
