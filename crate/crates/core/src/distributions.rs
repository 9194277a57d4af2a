//! Seeded samplers for the distribution families used by the Gibbs kernel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counter-based random stream identified by `(seed, stream_id)`.
///
/// Each stream id selects an independent ChaCha8 keystream under the same key, so
/// chains and replicates can run in any order or in parallel without changing draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Deterministic child stream; depends only on `(seed, stream_id, index)`.
    pub fn substream(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0x9E37_79B9))), index)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter { name, value })
    }
}

/// Lower Cholesky factor, or `NotPositiveDefinite`.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// `mean + L z` with `z` standard normal, where `L` is a lower Cholesky factor.
pub fn sample_mvnormal_chol<R: Rng + ?Sized>(mean: &DVector<f64>, chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| standard_normal(rng));
    mean + chol * z
}

pub fn sample_mvnormal<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    if cov.shape() != (mean.len(), mean.len()) {
        return Err(Error::DimensionMismatch(format!(
            "covariance {:?} for mean of length {}",
            cov.shape(),
            mean.len()
        )));
    }
    let l = cholesky_lower(cov, "covariance")?;
    Ok(sample_mvnormal_chol(mean, &l, rng))
}

fn chi_squared<R: Rng + ?Sized>(df: f64, rng: &mut R) -> f64 {
    // df > 0 is guaranteed by callers.
    2.0 * Gamma::new(0.5 * df, 1.0).expect("positive shape").sample(rng)
}

/// Draw from the inverse-Wishart with `df` degrees of freedom and scale `scale`.
///
/// Uses the Bartlett factor `A` of a standard Wishart: with `scale = L Lᵀ`,
/// the draw is `(L A⁻ᵀ)(L A⁻ᵀ)ᵀ`, which is the inverse of a Wishart(df, scale⁻¹) draw.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let q = scale.nrows();
    if scale.ncols() != q {
        return Err(Error::DimensionMismatch("inverse-Wishart scale must be square".into()));
    }
    if !(df >= q as f64) || !df.is_finite() {
        return Err(Error::DegreesOfFreedomTooSmall { df, dim: q });
    }
    let l = cholesky_lower(scale, "inverse-Wishart scale")?;
    let mut a = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        a[(i, i)] = chi_squared(df - i as f64, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    // Kᵀ = A⁻¹ Lᵀ
    let kt = a
        .solve_lower_triangular(&l.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("Bartlett factor".into()))?;
    let mut sigma = kt.transpose() * &kt;
    symmetrize(&mut sigma);
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("inverse-Wishart draw".into()));
    }
    Ok(sigma)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Draw from IG(shape, rate), whose density is proportional to `x^(-shape-1) exp(-rate / x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    require_positive("shape", shape)?;
    require_positive("rate", rate)?;
    let g = Gamma::new(shape, 1.0 / rate).expect("validated parameters").sample(rng);
    Ok((1.0 / g.max(f64::MIN_POSITIVE)).min(f64::MAX))
}

/// Draw from Beta(a, b), kept inside the open unit interval.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    require_positive("a", a)?;
    require_positive("b", b)?;
    let x: f64 = Beta::new(a, b).expect("validated parameters").sample(rng);
    Ok(x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    LeftOfZero,
    RightOfZero,
}

/// Standard normal conditioned on `z > lower`.
fn standard_normal_above<R: Rng + ?Sized>(lower: f64, rng: &mut R) -> f64 {
    if lower < 0.25 {
        loop {
            let z = standard_normal(rng);
            if z > lower {
                return z;
            }
        }
    }
    // Exponential proposal with the optimal rate for this bound.
    let lambda = 0.5 * (lower + (lower * lower + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = lower + e / lambda;
        let u: f64 = rng.sample(Open01);
        if u.ln() <= -0.5 * (z - lambda) * (z - lambda) {
            return z;
        }
    }
}

/// Normal(mean, sd²) restricted to one side of zero.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, side: Side, rng: &mut R) -> Result<f64> {
    require_positive("sd", sd)?;
    let (m, sign) = match side {
        Side::RightOfZero => (mean, 1.0),
        Side::LeftOfZero => (-mean, -1.0),
    };
    loop {
        let z = standard_normal_above(-m / sd, rng);
        let x = m + sd * z;
        if x > 0.0 {
            return Ok(sign * x);
        }
    }
}

/// Probability `1 / (1 + exp(-logodds))` without overflow.
pub fn logistic(logodds: f64) -> f64 {
    if logodds >= 0.0 {
        1.0 / (1.0 + (-logodds).exp())
    } else {
        let e = logodds.exp();
        e / (1.0 + e)
    }
}

pub fn sample_bernoulli_logodds<R: Rng + ?Sized>(logodds: f64, rng: &mut R) -> bool {
    debug_assert!(!logodds.is_nan(), "NaN log-odds");
    if logodds == f64::INFINITY {
        return true;
    }
    if logodds == f64::NEG_INFINITY {
        return false;
    }
    let u: f64 = rng.random();
    u < logistic(logodds)
}

/// `ln(p / (1 - p))`, with ±∞ at the endpoints.
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// One sample-mean check against an analytic mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    /// Monte Carlo standard error, `sd / sqrt(draws)`.
    pub standard_error: f64,
}

impl MomentCheck {
    fn from_draws(name: &str, expected: f64, sd: f64, xs: impl Iterator<Item = f64>) -> Self {
        let (mut sum, mut count) = (0.0, 0usize);
        for x in xs {
            sum += x;
            count += 1;
        }
        MomentCheck {
            name: name.to_string(),
            expected,
            observed: sum / count as f64,
            standard_error: sd / (count as f64).sqrt(),
        }
    }

    /// Deviation in units of the standard error.
    pub fn z(&self) -> f64 {
        (self.observed - self.expected) / self.standard_error
    }

    pub fn passes(&self, within_se: f64) -> bool {
        self.z().abs() <= within_se
    }
}

/// Sample means of every sampler family against closed-form moments.
pub fn moment_suite(draws: usize, seed: u64) -> Result<Vec<MomentCheck>> {
    if draws < 2 {
        return Err(Error::InvalidConfig("moment suite needs at least 2 draws".into()));
    }
    let root = RngStream::new(seed, 0);
    let mut checks = Vec::new();

    let mut rng = root.substream(0);
    let xs = (0..draws).map(|_| standard_normal(&mut rng));
    checks.push(MomentCheck::from_draws("normal mean", 0.0, 1.0, xs));

    // E[x0 x1] = rho, Var(x0 x1) = 1 + rho^2 for unit-variance bivariate normals.
    let mut rng = root.substream(1);
    let rho = 0.9;
    let l = cholesky_lower(&DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]), "cov")?;
    let zero = DVector::zeros(2);
    let xs = (0..draws).map(|_| {
        let v = sample_mvnormal_chol(&zero, &l, &mut rng);
        v[0] * v[1]
    });
    checks.push(MomentCheck::from_draws("mvnormal cross moment", rho, (1.0 + rho * rho).sqrt(), xs));

    // IW(6, I_2): mean I/3, Var(S11) = 2/9, Var(S12) = 1/12.
    let mut rng = root.substream(2);
    let scale = DMatrix::identity(2, 2);
    let iw: Vec<DMatrix<f64>> = (0..draws).map(|_| sample_inverse_wishart(6.0, &scale, &mut rng)).collect::<Result<_>>()?;
    checks.push(MomentCheck::from_draws("inverse wishart diagonal", 1.0 / 3.0, (2.0f64 / 9.0).sqrt(), iw.iter().map(|s| s[(0, 0)])));
    checks.push(MomentCheck::from_draws("inverse wishart off-diagonal", 0.0, (1.0f64 / 12.0).sqrt(), iw.iter().map(|s| s[(0, 1)])));

    // IG(3, 2): mean 1, variance 1.
    let mut rng = root.substream(3);
    let xs: Vec<f64> = (0..draws).map(|_| sample_inverse_gamma(3.0, 2.0, &mut rng)).collect::<Result<_>>()?;
    checks.push(MomentCheck::from_draws("inverse gamma mean", 1.0, 1.0, xs.into_iter()));

    let mut rng = root.substream(4);
    for &(a, b) in &[(3.0f64, 3.0f64), (2.0, 5.0), (0.5, 0.5)] {
        let mean = a / (a + b);
        let sd = (a * b / ((a + b) * (a + b) * (a + b + 1.0))).sqrt();
        let xs: Vec<f64> = (0..draws).map(|_| sample_beta(a, b, &mut rng)).collect::<Result<_>>()?;
        checks.push(MomentCheck::from_draws(&format!("beta({a}, {b}) mean"), mean, sd, xs.into_iter()));
    }

    // N(mu, sd^2) below zero: upper standardized bound c = -mu/sd, ratio h = phi(c)/Phi(c),
    // mean mu - sd h, variance sd^2 (1 - c h - h^2). Mirrored for the right side.
    let mut rng = root.substream(5);
    for &(mu, sd, side) in &[(1.0f64, 2.0f64, Side::LeftOfZero), (0.0, 1.0, Side::RightOfZero), (-2.0, 1.0, Side::RightOfZero)] {
        let (m, sign) = match side {
            Side::LeftOfZero => (mu, 1.0),
            Side::RightOfZero => (-mu, -1.0),
        };
        let c = -m / sd;
        let h = crate::normal::pdf(c) / crate::normal::cdf(c);
        let mean = sign * (m - sd * h);
        let tsd = sd * (1.0 - c * h - h * h).sqrt();
        let xs: Vec<f64> = (0..draws).map(|_| sample_truncated_normal(mu, sd, side, &mut rng)).collect::<Result<_>>()?;
        checks.push(MomentCheck::from_draws(&format!("truncated normal({mu}, {sd}) {side:?}"), mean, tsd, xs.into_iter()));
    }

    let mut rng = root.substream(6);
    let p = logistic(0.7);
    let xs = (0..draws).map(|_| sample_bernoulli_logodds(0.7, &mut rng) as u8 as f64);
    checks.push(MomentCheck::from_draws("bernoulli(logistic 0.7)", p, (p * (1.0 - p)).sqrt(), xs));
    Ok(checks)
}
