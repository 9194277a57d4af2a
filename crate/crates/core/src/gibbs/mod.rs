//! Gibbs sampler over the three-level indicator hierarchy.
//!
//! One sweep updates, in order: the effect sizes `b`, the indicators
//! (`alpha_g`, then for each predictor `gamma_gj` followed by `omega_gj,1..q`),
//! `Sigma`, `s2`, and finally either the Beta-distributed inclusion
//! probabilities or the probit annotation prior.
//!
//! Indicator updates hold `b` fixed, so each Bernoulli full conditional only
//! needs the change in the matrix-normal log-likelihood between the two values
//! of the indicator. The residual `Y - X B` is cached in the state and updated
//! by rank-one corrections after every change to `B`.

pub mod geweke;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    cholesky_lower, logit, sample_bernoulli_logodds, sample_beta, sample_inverse_gamma, sample_inverse_wishart,
    sample_mvnormal_chol, sample_truncated_normal, standard_normal, RngStream, Side,
};
use crate::error::{Error, Result};
use crate::model::{
    assemble_b, validate_dataset, AnnotationState, ChainState, Draw, GroupedDesign, PosteriorSamples, PriorConfig,
    ResponseMatrix, SampleMetadata, TraceStats,
};
use crate::normal;

/// Hyperparameter values held constant in test mode. Probabilities may equal 1 (forced inclusion).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedHyperparameters {
    pub sigma: DMatrix<f64>,
    pub s2: f64,
    pub pi_alpha: f64,
    pub pi_gamma: f64,
    pub pi_omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub annotation_prior_enabled: bool,
    /// When set, `Sigma`, `s2` and every `pi` stay at these values and are never updated.
    #[serde(default)]
    pub fixed: Option<FixedHyperparameters>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 7500,
            burn_in: 2500,
            thin: 1,
            chains: 1,
            seed: 0,
            annotation_prior_enabled: false,
            fixed: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of draws each chain records.
    pub fn recorded_draws(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Validated data with the derived quantities the sweeps need.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// 1-based group id per predictor.
    pub group_of: Vec<usize>,
    /// 0-based predictor indices per group, ascending.
    pub members: Vec<Vec<usize>>,
    pub col_norm2: Vec<f64>,
    pub annotations: Option<Vec<bool>>,
}

impl ModelData {
    pub fn new(design: &GroupedDesign, y: &ResponseMatrix) -> Result<Self> {
        let (design, y) = validate_dataset(design.clone(), y.clone())?;
        Ok(Self::from_parts(design.x, y.y, design.group_of, design.annotations))
    }

    /// Builds data without validation; callers guarantee the dataset invariants.
    pub fn from_parts(x: DMatrix<f64>, y: DMatrix<f64>, group_of: Vec<usize>, annotations: Option<Vec<u8>>) -> Self {
        let n_groups = group_of.iter().copied().max().unwrap_or(0);
        let mut members = vec![Vec::new(); n_groups];
        for (j, &g) in group_of.iter().enumerate() {
            members[g - 1].push(j);
        }
        let col_norm2 = (0..x.ncols()).map(|j| x.column(j).norm_squared()).collect();
        ModelData {
            x,
            y,
            group_of,
            members,
            col_norm2,
            annotations: annotations.map(|a| a.into_iter().map(|v| v == 1).collect()),
        }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `E[:, k] -= x * delta`.
fn axpy_column(residual: &mut DMatrix<f64>, k: usize, x: &[f64], delta: f64) {
    if delta == 0.0 {
        return;
    }
    let n = x.len();
    let col = &mut residual.as_mut_slice()[k * n..(k + 1) * n];
    for (e, &xi) in col.iter_mut().zip(x) {
        *e -= xi * delta;
    }
}

/// `xᵀ E` for one predictor column.
fn project_residual(residual: &DMatrix<f64>, x: &[f64]) -> DVector<f64> {
    let n = x.len();
    let q = residual.ncols();
    DVector::from_fn(q, |k, _| dot(x, &residual.as_slice()[k * n..(k + 1) * n]))
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?
        .inverse();
    let mut inv = inv;
    crate::distributions::symmetrize(&mut inv);
    Ok(inv)
}

/// Sample covariance of the columns of `y`, ridged until it factorizes with a sane condition.
pub fn regularized_covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, q) = y.shape();
    let mut cov = DMatrix::<f64>::zeros(q, q);
    if n >= 2 {
        let means: Vec<f64> = (0..q).map(|k| y.column(k).mean()).collect();
        for a in 0..q {
            for b in 0..=a {
                let s: f64 = (0..n).map(|i| (y[(i, a)] - means[a]) * (y[(i, b)] - means[b])).sum();
                let v = s / (n as f64 - 1.0);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
    }
    let scale = (cov.trace() / q as f64).max(1e-8);
    let well_conditioned = |m: &DMatrix<f64>| match m.clone().cholesky() {
        Some(c) => {
            let l = c.unpack();
            let d: Vec<f64> = (0..q).map(|i| l[(i, i)] * l[(i, i)]).collect();
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(0.0, f64::max);
            lo > 1e-10 * hi && lo > 0.0
        }
        None => false,
    };
    let mut delta = 1e-8 * scale;
    let mut out = cov.clone();
    while !well_conditioned(&out) {
        out = &cov + DMatrix::identity(q, q) * delta;
        delta *= 10.0;
    }
    out
}

/// Initial state: every indicator on, `b = 0`, `Sigma` from the response covariance, `s2 = 1`, all π = 0.5.
pub fn init_state(data: &ModelData, priors: &PriorConfig, annotation_enabled: bool) -> Result<ChainState> {
    let (p, q) = (data.p(), data.q());
    priors.validate(q)?;
    let annotation = if annotation_enabled {
        let ann = data.annotations.as_ref().ok_or(Error::MissingAnnotations)?;
        let mu_d = priors.annotation_prior.map(|a| a.mu_d).unwrap_or(0.0);
        Some((ann, AnnotationState { d0: 0.0, d1: mu_d, t: vec![0.0; p] }))
    } else {
        None
    };
    let pi_gamma = match &annotation {
        Some((ann, a)) => ann.iter().map(|&on| probit_probability(a.d0 + if on { a.d1 } else { 0.0 })).collect(),
        None => vec![0.5; data.n_groups()],
    };
    Ok(ChainState {
        b: DMatrix::zeros(p, q),
        alpha: vec![true; data.n_groups()],
        gamma: vec![true; p],
        omega: DMatrix::from_element(p, q, true),
        sigma: regularized_covariance(&data.y),
        s2: 1.0,
        pi_alpha: 0.5,
        pi_gamma,
        pi_omega: vec![0.5; p],
        annotation: annotation.map(|(_, a)| a),
        residual: data.y.clone(),
    })
}

/// Overwrites the hyperparameters of `state` with fixed test-mode values.
pub fn apply_fixed(state: &mut ChainState, fixed: &FixedHyperparameters) {
    state.sigma = fixed.sigma.clone();
    state.s2 = fixed.s2;
    state.pi_alpha = fixed.pi_alpha;
    state.pi_gamma.iter_mut().for_each(|v| *v = fixed.pi_gamma);
    state.pi_omega.iter_mut().for_each(|v| *v = fixed.pi_omega);
}

fn probit_probability(eta: f64) -> f64 {
    normal::cdf(eta).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Row `j` of `B` under the current indicators.
fn active_row(state: &ChainState, data: &ModelData, j: usize) -> DVector<f64> {
    let q = state.q();
    DVector::from_fn(q, |k, _| if state.z(&data.group_of, j, k) { state.b[(j, k)] } else { 0.0 })
}

/// Precision matrix and mean of the full conditional of row `j` of `b`.
///
/// `r` is `x_jᵀ E_0`, the projection of the residual with row `j`'s contribution removed.
pub fn b_row_conditional(
    sigma_inv: &DMatrix<f64>,
    s2: f64,
    mask: &[bool],
    col_norm2: f64,
    r: &DVector<f64>,
) -> Result<(DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let q = mask.len();
    let mut precision = sigma_inv / s2;
    for a in 0..q {
        for c in 0..q {
            if mask[a] && mask[c] {
                precision[(a, c)] += col_norm2 * sigma_inv[(a, c)];
            }
        }
    }
    let s_r = sigma_inv * r;
    let rhs = DVector::from_fn(q, |k, _| if mask[k] { s_r[k] } else { 0.0 });
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("b full-conditional precision".into()))?;
    Ok((chol.solve(&rhs), chol))
}

/// Redraws each row `b_gj` from its q-variate normal full conditional.
pub fn update_b(state: &mut ChainState, data: &ModelData, rng: &mut RngStream) -> Result<()> {
    let q = state.q();
    let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
    let prior_chol = cholesky_lower(&(&state.sigma * state.s2), "s2 * Sigma")?;
    let zero = DVector::zeros(q);
    for j in 0..data.p() {
        let mask: Vec<bool> = (0..q).map(|k| state.z(&data.group_of, j, k)).collect();
        if !mask.iter().any(|&m| m) {
            let draw = sample_mvnormal_chol(&zero, &prior_chol, rng);
            state.b.set_row(j, &draw.transpose());
            continue;
        }
        let x = data.column(j);
        let nx2 = data.col_norm2[j];
        let old_row = active_row(state, data, j);
        let r = project_residual(&state.residual, x) + &old_row * nx2;
        let (mean, chol) = b_row_conditional(&sigma_inv, state.s2, &mask, nx2, &r)?;
        let z = DVector::from_fn(q, |_, _| standard_normal(rng));
        let noise = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite(format!("b full-conditional factor, row {}", j + 1)))?;
        let draw = mean + noise;
        for k in 0..q {
            let new = if mask[k] { draw[k] } else { 0.0 };
            axpy_column(&mut state.residual, k, x, new - old_row[k]);
        }
        state.b.set_row(j, &draw.transpose());
    }
    Ok(())
}

/// Redraws every `alpha_g`, `gamma_gj` and `omega_gj,k` with `b` held fixed.
pub fn update_indicators(state: &mut ChainState, data: &ModelData, rng: &mut RngStream) -> Result<()> {
    let (n, q) = (data.n(), state.q());
    let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
    let logit_alpha = logit(state.pi_alpha);
    for (g, rows) in data.members.iter().enumerate() {
        // Group contribution X_g (gamma ⊙ omega ⊙ b)_g as if the group were open.
        let mut contribution = DMatrix::<f64>::zeros(n, q);
        let mut any_active = false;
        for &j in rows {
            if !state.gamma[j] {
                continue;
            }
            let x = data.column(j);
            for k in 0..q {
                if state.omega[(j, k)] && state.b[(j, k)] != 0.0 {
                    any_active = true;
                    axpy_column(&mut contribution, k, x, -state.b[(j, k)]);
                }
            }
        }
        let current = state.alpha[g];
        let logodds = if any_active {
            let base = if current { &state.residual + &contribution } else { state.residual.clone() };
            let cross = contribution.tr_mul(&base);
            let gram = contribution.tr_mul(&contribution);
            let mut delta = 0.0;
            for a in 0..q {
                for c in 0..q {
                    delta += (cross[(a, c)] - 0.5 * gram[(a, c)]) * sigma_inv[(c, a)];
                }
            }
            logit_alpha + delta
        } else {
            logit_alpha
        };
        let next = sample_bernoulli_logodds(logodds, rng);
        if next != current {
            if next {
                state.residual -= &contribution;
            } else {
                state.residual += &contribution;
            }
            state.alpha[g] = next;
        }

        for &j in rows {
            update_predictor_indicators(state, data, &sigma_inv, g, j, rng);
        }
    }
    Ok(())
}

fn update_predictor_indicators(
    state: &mut ChainState,
    data: &ModelData,
    sigma_inv: &DMatrix<f64>,
    g: usize,
    j: usize,
    rng: &mut RngStream,
) {
    let q = state.q();
    let x = data.column(j);
    let nx2 = data.col_norm2[j];
    let open = state.alpha[g];
    let old_row = active_row(state, data, j);
    // xᵀ E0 with row j's contribution removed; invariant to row j's indicators.
    let r = project_residual(&state.residual, x) + &old_row * nx2;
    let s_r = sigma_inv * &r;

    // gamma_gj
    let on_row = DVector::from_fn(q, |k, _| if open && state.omega[(j, k)] { state.b[(j, k)] } else { 0.0 });
    let mut logodds = logit(state.pi_gamma_of(&data.group_of, j));
    if on_row.iter().any(|&v| v != 0.0) {
        let quad = (sigma_inv * &on_row).dot(&on_row);
        logodds += s_r.dot(&on_row) - 0.5 * nx2 * quad;
    }
    let gamma = sample_bernoulli_logodds(logodds, rng);
    if gamma != state.gamma[j] {
        let new_row = if gamma { on_row.clone() } else { DVector::zeros(q) };
        for k in 0..q {
            axpy_column(&mut state.residual, k, x, new_row[k] - old_row[k]);
        }
        state.gamma[j] = gamma;
    }

    // omega_gj,k
    let logit_omega = logit(state.pi_omega[j]);
    if !(open && state.gamma[j]) {
        for k in 0..q {
            state.omega[(j, k)] = sample_bernoulli_logodds(logit_omega, rng);
        }
        return;
    }
    let mut row = DVector::from_fn(q, |k, _| if state.omega[(j, k)] { state.b[(j, k)] } else { 0.0 });
    for k in 0..q {
        let bk = state.b[(j, k)];
        let current = state.omega[(j, k)];
        row[k] = 0.0;
        let s_off = sigma_inv.row(k).transpose().dot(&row);
        let delta = bk * s_r[k] - 0.5 * nx2 * (2.0 * bk * s_off + bk * bk * sigma_inv[(k, k)]);
        let next = sample_bernoulli_logodds(logit_omega + delta, rng);
        if next {
            row[k] = bk;
        }
        if next != current {
            axpy_column(&mut state.residual, k, x, if next { bk } else { -bk });
            state.omega[(j, k)] = next;
        }
    }
}

/// Full-conditional inverse-Wishart parameters `(df, scale)` for `Sigma`.
pub fn sigma_posterior(state: &ChainState, data: &ModelData, priors: &PriorConfig) -> (f64, DMatrix<f64>) {
    let q = state.q();
    let df = priors.df(q) + (data.n() + data.p()) as f64;
    let mut scale = priors.scale(q) + state.residual.tr_mul(&state.residual) + state.b.tr_mul(&state.b) / state.s2;
    crate::distributions::symmetrize(&mut scale);
    (df, scale)
}

pub fn update_sigma(state: &mut ChainState, data: &ModelData, priors: &PriorConfig, rng: &mut RngStream) -> Result<()> {
    let (df, scale) = sigma_posterior(state, data, priors);
    state.sigma = sample_inverse_wishart(df, &scale, rng)?;
    Ok(())
}

/// Full-conditional inverse-gamma parameters `(shape, rate)` for `s2`.
pub fn s2_posterior(state: &ChainState, priors: &PriorConfig) -> Result<(f64, f64)> {
    let (p, q) = (state.p(), state.q());
    let sigma_inv = spd_inverse(&state.sigma, "Sigma")?;
    let quad = (&state.b * &sigma_inv).component_mul(&state.b).sum();
    Ok((priors.s2_shape + 0.5 * (p * q) as f64, priors.s2_rate + 0.5 * quad))
}

pub fn update_s2(state: &mut ChainState, priors: &PriorConfig, rng: &mut RngStream) -> Result<()> {
    let (shape, rate) = s2_posterior(state, priors)?;
    state.s2 = sample_inverse_gamma(shape, rate, rng)?;
    Ok(())
}

/// Conjugate Beta updates of `pi_alpha`, the per-group `pi_gamma` (unless the annotation prior
/// owns them) and the per-predictor `pi_omega`.
pub fn update_pis(state: &mut ChainState, data: &ModelData, priors: &PriorConfig, rng: &mut RngStream) -> Result<()> {
    let q = state.q();
    let on = state.alpha.iter().filter(|&&a| a).count() as f64;
    let n_groups = state.alpha.len() as f64;
    state.pi_alpha = sample_beta(priors.beta_alpha.a + on, priors.beta_alpha.b + n_groups - on, rng)?;
    if state.annotation.is_none() {
        for (g, rows) in data.members.iter().enumerate() {
            let on = rows.iter().filter(|&&j| state.gamma[j]).count() as f64;
            let m = rows.len() as f64;
            state.pi_gamma[g] = sample_beta(priors.beta_gamma.a + on, priors.beta_gamma.b + m - on, rng)?;
        }
    }
    for j in 0..state.p() {
        let on = (0..q).filter(|&k| state.omega[(j, k)]).count() as f64;
        state.pi_omega[j] = sample_beta(priors.beta_omega.a + on, priors.beta_omega.b + q as f64 - on, rng)?;
    }
    Ok(())
}

/// Probit data-augmentation update of `(t, d0, d1)` and the induced per-predictor `pi_gamma`.
pub fn update_annotation_prior(
    state: &mut ChainState,
    data: &ModelData,
    priors: &PriorConfig,
    rng: &mut RngStream,
) -> Result<()> {
    let ann = data.annotations.as_ref().ok_or(Error::MissingAnnotations)?;
    let prior = priors.annotation_prior.unwrap_or_default();
    let (v0, v1) = prior.variances();
    let a = state.annotation.as_mut().ok_or(Error::MissingAnnotations)?;
    let p = ann.len();

    for j in 0..p {
        let eta = a.d0 + if ann[j] { a.d1 } else { 0.0 };
        let side = if state.gamma[j] { Side::RightOfZero } else { Side::LeftOfZero };
        a.t[j] = sample_truncated_normal(eta, 1.0, side, rng)?;
    }

    // Bivariate normal regression of t on (1, A) with unit noise variance.
    let n_ann = ann.iter().filter(|&&v| v).count() as f64;
    let sum_t: f64 = a.t.iter().sum();
    let sum_t_ann: f64 = a.t.iter().zip(ann).filter(|(_, &v)| v).map(|(t, _)| t).sum();
    let precision = DMatrix::from_row_slice(2, 2, &[p as f64 + 1.0 / v0, n_ann, n_ann, n_ann + 1.0 / v1]);
    let rhs = DVector::from_vec(vec![sum_t, sum_t_ann + prior.mu_d / v1]);
    let chol = precision
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("annotation coefficient precision".into()))?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_fn(2, |_, _| standard_normal(rng));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::NotPositiveDefinite("annotation coefficient factor".into()))?;
    let d = mean + noise;
    a.d0 = d[0];
    a.d1 = d[1];
    for j in 0..p {
        state.pi_gamma[j] = probit_probability(a.d0 + if ann[j] { a.d1 } else { 0.0 });
    }
    Ok(())
}

/// Deliberate defects used to check that the validation suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelMutation {
    /// Draws `s2` with half of its full-conditional rate.
    HalvedS2Rate,
}

/// One full Gibbs sweep as a state transition.
pub trait Transition {
    fn step(&self, state: &mut ChainState, data: &ModelData, rng: &mut RngStream) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct GibbsKernel {
    pub priors: PriorConfig,
    /// Hyperparameters stay fixed when set.
    pub fixed: Option<FixedHyperparameters>,
    pub mutation: Option<KernelMutation>,
}

impl GibbsKernel {
    pub fn new(priors: PriorConfig) -> Self {
        GibbsKernel { priors, fixed: None, mutation: None }
    }

    pub fn with_mutation(mut self, mutation: KernelMutation) -> Self {
        self.mutation = Some(mutation);
        self
    }
}

impl Transition for GibbsKernel {
    fn step(&self, state: &mut ChainState, data: &ModelData, rng: &mut RngStream) -> Result<()> {
        update_b(state, data, rng)?;
        update_indicators(state, data, rng)?;
        if self.fixed.is_some() {
            return Ok(());
        }
        update_sigma(state, data, &self.priors, rng)?;
        match self.mutation {
            Some(KernelMutation::HalvedS2Rate) => {
                let (shape, rate) = s2_posterior(state, &self.priors)?;
                state.s2 = sample_inverse_gamma(shape, 0.5 * rate, rng)?;
            }
            None => update_s2(state, &self.priors, rng)?,
        }
        update_pis(state, data, &self.priors, rng)?;
        if state.annotation.is_some() {
            update_annotation_prior(state, data, &self.priors, rng)?;
        }
        Ok(())
    }
}

/// Matrix-normal log-likelihood of `Y` given the cached residual and `Sigma`.
pub fn log_likelihood(state: &ChainState, data: &ModelData) -> Result<f64> {
    let chol = state
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma".into()))?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sigma_inv = chol.inverse();
    let quad = (&state.residual * &sigma_inv).component_mul(&state.residual).sum();
    let (n, q) = (data.n() as f64, data.q() as f64);
    Ok(-0.5 * quad - 0.5 * n * log_det - 0.5 * n * q * (2.0 * std::f64::consts::PI).ln())
}

/// `Y - X B` computed from scratch.
pub fn recompute_residual(state: &ChainState, data: &ModelData) -> DMatrix<f64> {
    &data.y - &data.x * assemble_b(state, &data.group_of)
}

fn record(state: &ChainState, data: &ModelData, sweep: usize) -> Result<(Draw, TraceStats)> {
    let z = state.inclusion_matrix(&data.group_of);
    let b = assemble_b(state, &data.group_of);
    let active_entries = z.iter().filter(|&&v| v).count();
    let trace = TraceStats { sweep, log_likelihood: log_likelihood(state, data)?, active_entries };
    Ok((Draw { z, b }, trace))
}

/// Runs one chain on already-prepared data.
pub fn run_chain_on(
    data: &ModelData,
    priors: &PriorConfig,
    config: &SamplerConfig,
    stream_id: u64,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed, stream_id);
    let mut state = init_state(data, priors, config.annotation_prior_enabled)?;
    if let Some(fixed) = &config.fixed {
        apply_fixed(&mut state, fixed);
    }
    let kernel = GibbsKernel { priors: priors.clone(), fixed: config.fixed.clone(), mutation: None };
    let capacity = config.recorded_draws();
    let mut samples = PosteriorSamples {
        draws: Vec::with_capacity(capacity),
        sigma: Vec::with_capacity(capacity),
        s2: Vec::with_capacity(capacity),
        d1: Vec::new(),
        trace: Vec::with_capacity(capacity),
        metadata: SampleMetadata {
            seed: config.seed,
            stream_ids: vec![stream_id],
            iterations: config.iterations,
            burn_in: config.burn_in,
            thin: config.thin,
            n: data.n(),
            p: data.p(),
            q: data.q(),
        },
    };
    let progress_every = (config.iterations / 10).max(1);
    for sweep in 0..config.iterations {
        kernel
            .step(&mut state, data, &mut rng)
            .map_err(|e| Error::NumericalBreakdown { sweep, source: Box::new(e) })?;
        if sweep >= config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            let (draw, trace) =
                record(&state, data, sweep).map_err(|e| Error::NumericalBreakdown { sweep, source: Box::new(e) })?;
            log::trace!(
                "chain {stream_id} sweep {sweep}: loglik {:.3}, active {}",
                trace.log_likelihood,
                trace.active_entries
            );
            samples.draws.push(draw);
            samples.trace.push(trace);
            samples.sigma.push(state.sigma.clone());
            samples.s2.push(state.s2);
            if let Some(a) = &state.annotation {
                samples.d1.push(a.d1);
            }
        }
        if (sweep + 1) % progress_every == 0 {
            log::debug!("chain {stream_id}: {}/{} sweeps", sweep + 1, config.iterations);
        }
    }
    Ok(samples)
}

/// Validates the dataset and runs one chain with stream id `stream_id`.
pub fn run_chain(
    design: &GroupedDesign,
    y: &ResponseMatrix,
    priors: &PriorConfig,
    config: &SamplerConfig,
    stream_id: u64,
) -> Result<PosteriorSamples> {
    let data = ModelData::new(design, y)?;
    run_chain_on(&data, priors, config, stream_id)
}

/// Runs `config.chains` chains in parallel, one per stream id `0..chains`.
pub fn run_chains(
    design: &GroupedDesign,
    y: &ResponseMatrix,
    priors: &PriorConfig,
    config: &SamplerConfig,
) -> Result<Vec<PosteriorSamples>> {
    config.validate()?;
    let data = ModelData::new(design, y)?;
    (0..config.chains as u64)
        .into_par_iter()
        .map(|c| run_chain_on(&data, priors, config, c))
        .collect()
}

#[cfg(test)]
mod tests;
