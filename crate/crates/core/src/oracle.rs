//! Closed-form posterior under an orthogonal design.
//!
//! With `XᵀX = n I` and a diagonal `Sigma`, every entry decouples into a
//! normal-means problem with a spike-and-slab prior: the posterior of
//! `beta_gj,k` is a point mass at zero with weight `1 - l` plus
//! `N((1 - D_n) b, (1 - D_n) Sigma_kk / n)` with weight `l`, where `b` is the
//! least-squares estimate and `D_n = 1 / (1 + n s2)`.

use serde::{Deserialize, Serialize};

use crate::distributions::logistic;
use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalContext {
    pub n: f64,
    pub s2: f64,
    pub sigma_kk: f64,
    /// Prior inclusion probability `pi_alpha * pi_gamma * pi_omega`.
    pub pi_star: f64,
}

impl OrthogonalContext {
    pub fn new(n: f64, s2: f64, sigma_kk: f64, pi_star: f64) -> Result<Self> {
        let ctx = OrthogonalContext { n, s2, sigma_kk, pi_star };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n >= 1.0 && self.n.is_finite()) {
            return Err(Error::InvalidContext(format!("n = {} must be at least 1", self.n)));
        }
        if !(self.s2 > 0.0 && self.s2.is_finite()) {
            return Err(Error::InvalidContext(format!("s2 = {} must be positive", self.s2)));
        }
        if !(self.sigma_kk > 0.0 && self.sigma_kk.is_finite()) {
            return Err(Error::InvalidContext(format!("Sigma_kk = {} must be positive", self.sigma_kk)));
        }
        if !(self.pi_star > 0.0 && self.pi_star < 1.0) {
            return Err(Error::InvalidContext(format!("pi* = {} outside (0, 1)", self.pi_star)));
        }
        Ok(())
    }

    pub fn d_n(&self) -> f64 {
        1.0 / (1.0 + self.n * self.s2)
    }

    /// Mean and standard deviation of the slab component of the posterior.
    pub fn slab_posterior(&self, beta_ls: f64) -> (f64, f64) {
        let shrink = 1.0 - self.d_n();
        (shrink * beta_ls, (shrink * self.sigma_kk / self.n).sqrt())
    }
}

/// Log posterior odds of `z = 1` against `z = 0`.
///
/// The marginal of `beta_ls` is `N(0, Sigma_kk (s2 + 1/n))` under the slab and
/// `N(0, Sigma_kk / n)` under the spike; their ratio gives
/// `logit(pi*) - log(1 + n s2) / 2 + (1 - D_n) n beta_ls² / (2 Sigma_kk)`.
pub fn inclusion_log_odds(beta_ls: f64, ctx: &OrthogonalContext) -> Result<f64> {
    ctx.validate()?;
    let prior = ctx.pi_star.ln() - (-ctx.pi_star).ln_1p();
    let occam = -0.5 * (ctx.n * ctx.s2).ln_1p();
    let fit = 0.5 * (1.0 - ctx.d_n()) * ctx.n * beta_ls * beta_ls / ctx.sigma_kk;
    Ok(prior + occam + fit)
}

/// Posterior probability `l` that the entry is nonzero.
pub fn inclusion_probability(beta_ls: f64, ctx: &OrthogonalContext) -> Result<f64> {
    Ok(logistic(inclusion_log_odds(beta_ls, ctx)?))
}

/// Closed-form posterior median, a soft-thresholded shrunken least-squares estimate.
pub fn posterior_median_threshold(beta_ls: f64, ctx: &OrthogonalContext) -> Result<f64> {
    let l = inclusion_probability(beta_ls, ctx)?;
    if l <= 0.5 {
        return Ok(0.0);
    }
    let (mean, sd) = ctx.slab_posterior(beta_ls.abs());
    let magnitude = (mean - sd * normal::quantile(1.0 / (2.0 * l))).max(0.0);
    Ok(beta_ls.signum() * magnitude)
}

/// Median of the spike-and-slab posterior found by bisection on its CDF.
pub fn numeric_posterior_median(beta_ls: f64, ctx: &OrthogonalContext) -> Result<f64> {
    const TOL: f64 = 1e-10;
    let l = inclusion_probability(beta_ls, ctx)?;
    let (mean, sd) = ctx.slab_posterior(beta_ls);
    let cdf = |m: f64| {
        let slab = l * normal::cdf((m - mean) / sd);
        if m >= 0.0 {
            slab + (1.0 - l)
        } else {
            slab
        }
    };
    // The atom at zero holds the median whenever the jump straddles 1/2.
    let below_zero = l * normal::cdf(-mean / sd);
    if below_zero <= 0.5 && cdf(0.0) >= 0.5 {
        return Ok(0.0);
    }
    let half_width = beta_ls.abs() + 10.0 * (ctx.sigma_kk / ctx.n).sqrt();
    let (mut lo, mut hi) = if below_zero > 0.5 { (-half_width, 0.0) } else { (0.0, half_width) };
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if cdf(mid) >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One point of the oracle self-consistency grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta_ls: f64,
    pub n: f64,
    pub s2: f64,
    pub sigma_kk: f64,
    pub pi_star: f64,
    pub closed_form: f64,
    pub numeric: f64,
    pub abs_diff: f64,
}

/// The default comparison grid.
pub fn default_grid() -> Vec<OrthogonalContext> {
    let mut out = Vec::new();
    for &n in &[10.0, 100.0, 1000.0] {
        for &s2 in &[0.01, 0.1, 1.0, 10.0] {
            for &sigma_kk in &[0.5, 1.0, 2.0] {
                for &pi_star in &[0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                    out.push(OrthogonalContext { n, s2, sigma_kk, pi_star });
                }
            }
        }
    }
    out
}

/// `beta_ls` values spanning [-3, 3] in `steps` points.
pub fn beta_grid(steps: usize) -> Vec<f64> {
    (0..steps).map(|i| -3.0 + 6.0 * i as f64 / (steps - 1) as f64).collect()
}

/// Compares the closed form with the numeric median on every `(beta_ls, ctx)` pair.
pub fn grid_comparison(contexts: &[OrthogonalContext], betas: &[f64]) -> Result<Vec<GridPoint>> {
    let mut out = Vec::with_capacity(contexts.len() * betas.len());
    for ctx in contexts {
        for &beta_ls in betas {
            let closed_form = posterior_median_threshold(beta_ls, ctx)?;
            let numeric = numeric_posterior_median(beta_ls, ctx)?;
            out.push(GridPoint {
                beta_ls,
                n: ctx.n,
                s2: ctx.s2,
                sigma_kk: ctx.sigma_kk,
                pi_star: ctx.pi_star,
                closed_form,
                numeric,
                abs_diff: (closed_form - numeric).abs(),
            });
        }
    }
    Ok(out)
}
