//! Joint-distribution test of the Gibbs kernel.
//!
//! The marginal-conditional simulator draws parameters straight from the
//! prior. The successive-conditional simulator alternates one Gibbs sweep with
//! a fresh draw of `Y` given the current parameters; if every full conditional
//! is right, its stationary parameter marginal is again the prior. Means of a
//! handful of statistics are compared with z-scores, using batch means for the
//! autocorrelated successive-conditional chain.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GibbsKernel, ModelData, Transition};
use crate::distributions::{
    cholesky_lower, sample_beta, sample_inverse_gamma, sample_inverse_wishart, sample_mvnormal_chol, standard_normal,
    RngStream,
};
use crate::error::{Error, Result};
use crate::model::{assemble_b, BetaParams, ChainState, PriorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeDims {
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub q: usize,
}

impl GewekeDims {
    /// n = 20, two groups of two predictors, q = 2.
    pub fn tiny() -> Self {
        GewekeDims { n: 20, group_sizes: vec![2, 2], q: 2 }
    }

    pub fn p(&self) -> usize {
        self.group_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeStatistic {
    pub name: String,
    pub prior_mean: f64,
    pub chain_mean: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub draws: usize,
    pub statistics: Vec<GewekeStatistic>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.statistics.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        !self.statistics.is_empty() && self.statistics.iter().all(|s| s.z.is_finite() && s.z.abs() < threshold)
    }
}

/// Proper priors with finite fourth moments, so that every tracked statistic has a usable variance.
///
/// The default IW(q, I) and IG(0.01, 0.01) have no mean and cannot be used here.
pub fn geweke_priors(q: usize) -> PriorConfig {
    let df = q as f64 + 6.0;
    PriorConfig {
        beta_alpha: BetaParams::new(2.0, 2.0),
        beta_gamma: BetaParams::new(2.0, 2.0),
        beta_omega: BetaParams::new(2.0, 2.0),
        s2_shape: 6.0,
        s2_rate: 5.0,
        iw_df: Some(df),
        iw_scale: Some(DMatrix::identity(q, q) * (df - q as f64 - 1.0)),
        annotation_prior: None,
    }
}

const STAT_NAMES: [&str; 9] = [
    "s2",
    "trace_sigma",
    "sigma_12",
    "active_entries",
    "alpha_sum",
    "gamma_sum",
    "pi_alpha",
    "mean_b_sq",
    "mean_B_sq",
];

fn statistics(state: &ChainState, group_of: &[usize]) -> [f64; 9] {
    let z = state.inclusion_matrix(group_of);
    let big_b = assemble_b(state, group_of);
    let entries = (state.p() * state.q()) as f64;
    let off = if state.q() > 1 { state.sigma[(0, 1)] } else { 0.0 };
    [
        state.s2,
        state.sigma.trace(),
        off,
        z.iter().filter(|&&v| v).count() as f64,
        state.alpha.iter().filter(|&&v| v).count() as f64,
        state.gamma.iter().filter(|&&v| v).count() as f64,
        state.pi_alpha,
        state.b.norm_squared() / entries,
        big_b.norm_squared() / entries,
    ]
}

/// Draws every parameter from its prior; the residual is left as `-X B` for the caller to fix.
fn prior_draw(data: &ModelData, priors: &PriorConfig, rng: &mut RngStream) -> Result<ChainState> {
    let (p, q, groups) = (data.p(), data.q(), data.n_groups());
    let pi_alpha = sample_beta(priors.beta_alpha.a, priors.beta_alpha.b, rng)?;
    let alpha: Vec<bool> = (0..groups).map(|_| rng.random::<f64>() < pi_alpha).collect();
    let mut pi_gamma = Vec::with_capacity(groups);
    for _ in 0..groups {
        pi_gamma.push(sample_beta(priors.beta_gamma.a, priors.beta_gamma.b, rng)?);
    }
    let gamma: Vec<bool> = (0..p).map(|j| rng.random::<f64>() < pi_gamma[data.group_of[j] - 1]).collect();
    let mut pi_omega = Vec::with_capacity(p);
    for _ in 0..p {
        pi_omega.push(sample_beta(priors.beta_omega.a, priors.beta_omega.b, rng)?);
    }
    let omega = DMatrix::from_fn(p, q, |j, _| rng.random::<f64>() < pi_omega[j]);
    let sigma = sample_inverse_wishart(priors.df(q), &priors.scale(q), rng)?;
    let s2 = sample_inverse_gamma(priors.s2_shape, priors.s2_rate, rng)?;
    let chol = cholesky_lower(&(&sigma * s2), "s2 * Sigma")?;
    let zero = DVector::zeros(q);
    let mut b = DMatrix::zeros(p, q);
    for j in 0..p {
        b.set_row(j, &sample_mvnormal_chol(&zero, &chol, rng).transpose());
    }
    let mut state = ChainState {
        b,
        alpha,
        gamma,
        omega,
        sigma,
        s2,
        pi_alpha,
        pi_gamma,
        pi_omega,
        annotation: None,
        residual: DMatrix::zeros(data.n(), q),
    };
    state.residual = -(&data.x * assemble_b(&state, &data.group_of));
    Ok(state)
}

/// Replaces `Y` by a fresh draw from the likelihood and resets the cached residual.
fn resimulate_y(state: &mut ChainState, data: &mut ModelData, rng: &mut RngStream) -> Result<()> {
    let (n, q) = (data.n(), data.q());
    let chol = cholesky_lower(&state.sigma, "Sigma")?;
    let noise = DMatrix::from_fn(n, q, |_, _| standard_normal(rng)) * chol.transpose();
    let fitted = &data.x * assemble_b(state, &data.group_of);
    data.y = &fitted + &noise;
    state.residual = noise;
    Ok(())
}

struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(k: usize) -> Self {
        Moments { sum: vec![0.0; k], sum_sq: vec![0.0; k] }
    }

    fn push(&mut self, v: &[f64]) {
        for (i, &x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sum_sq[i] += x * x;
        }
    }
}

/// Geweke test of the standard kernel under `priors`.
pub fn geweke_validation(priors: &PriorConfig, dims: &GewekeDims, draws: usize, rng: &mut RngStream) -> Result<GewekeReport> {
    geweke_validation_with(&GibbsKernel::new(priors.clone()), dims, draws, rng)
}

/// Geweke test of an arbitrary kernel; `draws` samples from each simulator.
pub fn geweke_validation_with(
    kernel: &GibbsKernel,
    dims: &GewekeDims,
    draws: usize,
    rng: &mut RngStream,
) -> Result<GewekeReport> {
    const BATCHES: usize = 50;
    if draws < BATCHES * 2 {
        return Err(Error::InvalidConfig(format!("Geweke test needs at least {} draws, got {draws}", BATCHES * 2)));
    }
    if dims.q < 2 || dims.n == 0 || dims.group_sizes.is_empty() || dims.group_sizes.contains(&0) {
        return Err(Error::InvalidConfig(format!("unusable Geweke dimensions {dims:?}")));
    }
    let priors = &kernel.priors;
    priors.validate(dims.q)?;
    let (n, p, q) = (dims.n, dims.p(), dims.q);
    let group_of: Vec<usize> =
        dims.group_sizes.iter().enumerate().flat_map(|(g, &m)| std::iter::repeat_n(g + 1, m)).collect();
    let mut design_rng = rng.substream(0);
    let x = DMatrix::from_fn(n, p, |_, _| standard_normal(&mut design_rng));
    let mut data = ModelData::from_parts(x, DMatrix::zeros(n, q), group_of, None);

    let mut mc_rng = rng.substream(1);
    let mut mc = Moments::new(STAT_NAMES.len());
    for _ in 0..draws {
        let state = prior_draw(&data, priors, &mut mc_rng)?;
        mc.push(&statistics(&state, &data.group_of));
    }

    let mut sc_rng = rng.substream(2);
    let mut state = prior_draw(&data, priors, &mut sc_rng)?;
    resimulate_y(&mut state, &mut data, &mut sc_rng)?;
    let batch_len = draws / BATCHES;
    let used = batch_len * BATCHES;
    let mut batch_means = vec![vec![0.0; STAT_NAMES.len()]; BATCHES];
    let mut sc = Moments::new(STAT_NAMES.len());
    for it in 0..used {
        kernel
            .step(&mut state, &data, &mut sc_rng)
            .map_err(|e| Error::NumericalBreakdown { sweep: it, source: Box::new(e) })?;
        resimulate_y(&mut state, &mut data, &mut sc_rng)?;
        let s = statistics(&state, &data.group_of);
        sc.push(&s);
        for (acc, v) in batch_means[it / batch_len].iter_mut().zip(s) {
            *acc += v / batch_len as f64;
        }
    }

    let statistics = STAT_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let nm = draws as f64;
            let mc_mean = mc.sum[i] / nm;
            let mc_var = (mc.sum_sq[i] / nm - mc_mean * mc_mean).max(0.0) * nm / (nm - 1.0);
            let sc_mean = sc.sum[i] / used as f64;
            let bm_var = batch_means.iter().map(|b| (b[i] - sc_mean).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
            let se = (mc_var / nm + bm_var / BATCHES as f64).sqrt();
            let z = if se > 0.0 { (sc_mean - mc_mean) / se } else if sc_mean == mc_mean { 0.0 } else { f64::INFINITY };
            GewekeStatistic { name: name.to_string(), prior_mean: mc_mean, chain_mean: sc_mean, z }
        })
        .collect();
    Ok(GewekeReport { draws, statistics })
}
