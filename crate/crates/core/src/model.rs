//! Domain types shared by the sampler, inference and simulation code.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationIssue};

/// Predictor matrix (n × p) with a disjoint group labelling and optional binary annotations.
///
/// Group ids are 1-based, as in the on-disk format. They need not be contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDesign {
    pub x: DMatrix<f64>,
    pub group_of: Vec<usize>,
    pub annotations: Option<Vec<u8>>,
}

impl GroupedDesign {
    pub fn new(x: DMatrix<f64>, group_of: Vec<usize>, annotations: Option<Vec<u8>>) -> Self {
        GroupedDesign { x, group_of, annotations }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of groups, i.e. the largest group id.
    pub fn n_groups(&self) -> usize {
        self.group_of.iter().copied().max().unwrap_or(0)
    }

    /// Predictor indices (0-based) of each group, ascending; index `g` holds group id `g + 1`.
    pub fn group_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_groups()];
        for (j, &g) in self.group_of.iter().enumerate() {
            if g >= 1 {
                members[g - 1].push(j);
            }
        }
        members
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.group_members().iter().map(Vec::len).collect()
    }

    fn issues(&self) -> Vec<ValidationIssue> {
        let mut issues = Vec::new();
        let p = self.p();
        if self.group_of.len() != p {
            issues.push(ValidationIssue::DimensionMismatch {
                what: "group vector length".into(),
                expected: p,
                found: self.group_of.len(),
            });
        }
        for (j, &g) in self.group_of.iter().enumerate() {
            if g == 0 {
                issues.push(ValidationIssue::BadGroupIndex {
                    predictor: j + 1,
                    group: g,
                    reason: "group ids are 1-based".into(),
                });
            }
        }
        let n_groups = self.n_groups();
        if n_groups > 0 {
            let mut seen = vec![false; n_groups];
            for &g in &self.group_of {
                if g >= 1 {
                    seen[g - 1] = true;
                }
            }
            for (g, present) in seen.iter().enumerate() {
                if !present {
                    issues.push(ValidationIssue::BadGroupIndex {
                        predictor: 0,
                        group: g + 1,
                        reason: format!("group {} has no members (ids must cover 1..={n_groups})", g + 1),
                    });
                }
            }
        }
        non_finite_issues(&self.x, "X", &mut issues);
        if let Some(a) = &self.annotations {
            if a.len() != p {
                issues.push(ValidationIssue::DimensionMismatch {
                    what: "annotation vector length".into(),
                    expected: p,
                    found: a.len(),
                });
            }
            for (j, &v) in a.iter().enumerate() {
                if v > 1 {
                    issues.push(ValidationIssue::BadAnnotation { predictor: j + 1, value: v.to_string() });
                }
            }
        }
        issues
    }
}

fn non_finite_issues(m: &DMatrix<f64>, name: &'static str, issues: &mut Vec<ValidationIssue>) {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                issues.push(ValidationIssue::NonFiniteValue { matrix: name, row: r + 1, col: c + 1 });
            }
        }
    }
}

/// Response matrix (n × q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub y: DMatrix<f64>,
}

impl ResponseMatrix {
    pub fn new(y: DMatrix<f64>) -> Self {
        ResponseMatrix { y }
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }
}

/// Checks the design/response pair, collecting every violation rather than stopping at the first.
pub fn validate_dataset(design: GroupedDesign, y: ResponseMatrix) -> Result<(GroupedDesign, ResponseMatrix)> {
    let mut issues = design.issues();
    if y.n() != design.n() {
        issues.push(ValidationIssue::DimensionMismatch {
            what: "response row count".into(),
            expected: design.n(),
            found: y.n(),
        });
    }
    if y.q() < 2 {
        issues.push(ValidationIssue::DimensionMismatch {
            what: "response column count (q >= 2)".into(),
            expected: 2,
            found: y.q(),
        });
    }
    non_finite_issues(&y.y, "Y", &mut issues);
    if issues.is_empty() {
        Ok((design, y))
    } else {
        Err(Error::Validation(issues))
    }
}

/// Parameters `(a, b)` of a Beta prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { a: 1.0, b: 1.0 };

    pub fn new(a: f64, b: f64) -> Self {
        BetaParams { a, b }
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        Self::UNIFORM
    }
}

/// Probit prior on per-predictor inclusion probabilities driven by binary annotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPrior {
    pub mu_d: f64,
    /// When set, `d0`/`d1` get the large fixed prior variance below instead of the explicit ones.
    pub use_jeffreys_variances: bool,
    #[serde(default = "default_vague_variance")]
    pub d0_variance: f64,
    #[serde(default = "default_vague_variance")]
    pub d1_variance: f64,
}

fn default_vague_variance() -> f64 {
    AnnotationPrior::VAGUE_VARIANCE
}

impl AnnotationPrior {
    pub const VAGUE_VARIANCE: f64 = 100.0;

    pub fn new(mu_d: f64) -> Self {
        AnnotationPrior {
            mu_d,
            use_jeffreys_variances: true,
            d0_variance: Self::VAGUE_VARIANCE,
            d1_variance: Self::VAGUE_VARIANCE,
        }
    }

    /// Prior variances `(var d0, var d1)` actually used by the sampler.
    pub fn variances(&self) -> (f64, f64) {
        if self.use_jeffreys_variances {
            (Self::VAGUE_VARIANCE, Self::VAGUE_VARIANCE)
        } else {
            (self.d0_variance, self.d1_variance)
        }
    }
}

impl Default for AnnotationPrior {
    fn default() -> Self {
        Self::new(0.0)
    }
}

/// Hyperparameters of every prior in the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub beta_alpha: BetaParams,
    pub beta_gamma: BetaParams,
    pub beta_omega: BetaParams,
    pub s2_shape: f64,
    pub s2_rate: f64,
    /// Inverse-Wishart degrees of freedom; `None` means `q`.
    pub iw_df: Option<f64>,
    /// Inverse-Wishart scale; `None` means the identity.
    pub iw_scale: Option<DMatrix<f64>>,
    pub annotation_prior: Option<AnnotationPrior>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            beta_alpha: BetaParams::UNIFORM,
            beta_gamma: BetaParams::UNIFORM,
            beta_omega: BetaParams::UNIFORM,
            s2_shape: 0.01,
            s2_rate: 0.01,
            iw_df: None,
            iw_scale: None,
            annotation_prior: None,
        }
    }
}

impl PriorConfig {
    pub fn df(&self, q: usize) -> f64 {
        self.iw_df.unwrap_or(q as f64)
    }

    pub fn scale(&self, q: usize) -> DMatrix<f64> {
        self.iw_scale.clone().unwrap_or_else(|| DMatrix::identity(q, q))
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let positive = [
            ("beta_alpha.a", self.beta_alpha.a),
            ("beta_alpha.b", self.beta_alpha.b),
            ("beta_gamma.a", self.beta_gamma.a),
            ("beta_gamma.b", self.beta_gamma.b),
            ("beta_omega.a", self.beta_omega.a),
            ("beta_omega.b", self.beta_omega.b),
            ("s2_shape", self.s2_shape),
            ("s2_rate", self.s2_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveParameter { name, value: v });
            }
        }
        let df = self.df(q);
        if !(df >= q as f64) {
            return Err(Error::DegreesOfFreedomTooSmall { df, dim: q });
        }
        let scale = self.scale(q);
        if scale.nrows() != q || scale.ncols() != q {
            return Err(Error::DimensionMismatch(format!(
                "iw_scale is {}x{}, expected {q}x{q}",
                scale.nrows(),
                scale.ncols()
            )));
        }
        if (&scale - scale.transpose()).abs().max() > 1e-10 * scale.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite("iw_scale is not symmetric".into()));
        }
        if scale.cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("iw_scale".into()));
        }
        if let Some(ap) = &self.annotation_prior {
            let (v0, v1) = ap.variances();
            if !(v0 > 0.0) {
                return Err(Error::NonPositiveParameter { name: "d0_variance", value: v0 });
            }
            if !(v1 > 0.0) {
                return Err(Error::NonPositiveParameter { name: "d1_variance", value: v1 });
            }
        }
        Ok(())
    }
}

/// Latent quantities of the probit annotation prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationState {
    pub d0: f64,
    pub d1: f64,
    pub t: Vec<f64>,
}

/// Current values of every latent quantity of one Gibbs chain.
///
/// `residual` caches `Y - X B` and is kept in sync by every update that touches `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// Effect sizes, p × q.
    pub b: DMatrix<f64>,
    pub alpha: Vec<bool>,
    pub gamma: Vec<bool>,
    /// Response-specific indicators, p × q.
    pub omega: DMatrix<bool>,
    pub sigma: DMatrix<f64>,
    pub s2: f64,
    pub pi_alpha: f64,
    /// Per group, or per predictor when `annotation` is present.
    pub pi_gamma: Vec<f64>,
    /// Per predictor, shared across responses.
    pub pi_omega: Vec<f64>,
    pub annotation: Option<AnnotationState>,
    pub residual: DMatrix<f64>,
}

impl ChainState {
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn q(&self) -> usize {
        self.b.ncols()
    }

    /// Inclusion indicator `z = alpha_g * gamma_gj * omega_gj,k`.
    pub fn z(&self, group_of: &[usize], j: usize, k: usize) -> bool {
        self.alpha[group_of[j] - 1] && self.gamma[j] && self.omega[(j, k)]
    }

    pub fn inclusion_matrix(&self, group_of: &[usize]) -> DMatrix<bool> {
        DMatrix::from_fn(self.p(), self.q(), |j, k| self.z(group_of, j, k))
    }

    /// Inclusion probability of predictor `j`'s gamma indicator.
    pub fn pi_gamma_of(&self, group_of: &[usize], j: usize) -> f64 {
        if self.annotation.is_some() {
            self.pi_gamma[j]
        } else {
            self.pi_gamma[group_of[j] - 1]
        }
    }

    /// Checks the state invariants; `allow_unit_pi` admits π = 1 (forced-inclusion test mode).
    pub fn check_invariants(&self, allow_unit_pi: bool) -> Result<()> {
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("Sigma".into()));
        }
        if !(self.s2 > 0.0 && self.s2.is_finite()) {
            return Err(Error::NonPositiveParameter { name: "s2", value: self.s2 });
        }
        let ok = |p: f64| p > 0.0 && (p < 1.0 || (allow_unit_pi && p == 1.0));
        let all_pis = std::iter::once(self.pi_alpha)
            .chain(self.pi_gamma.iter().copied())
            .chain(self.pi_omega.iter().copied());
        for p in all_pis {
            if !ok(p) {
                return Err(Error::InvalidConfig(format!("probability {p} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

/// Coefficient matrix `B = Z ⊙ b` of a chain state.
pub fn assemble_b(state: &ChainState, group_of: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(state.p(), state.q(), |j, k| {
        if state.z(group_of, j, k) {
            state.b[(j, k)]
        } else {
            0.0
        }
    })
}

/// One recorded draw: inclusion indicators and coefficients, both p × q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub z: DMatrix<bool>,
    pub b: DMatrix<f64>,
}

/// Per-draw chain diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub sweep: usize,
    pub log_likelihood: f64,
    pub active_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub seed: u64,
    pub stream_ids: Vec<u64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n: usize,
    pub p: usize,
    pub q: usize,
}

/// Thinned post-burn-in draws of one or more chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub draws: Vec<Draw>,
    pub sigma: Vec<DMatrix<f64>>,
    pub s2: Vec<f64>,
    pub d1: Vec<f64>,
    pub trace: Vec<TraceStats>,
    pub metadata: SampleMetadata,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn p(&self) -> usize {
        self.metadata.p
    }

    pub fn q(&self) -> usize {
        self.metadata.q
    }

    /// Builds samples from bare inclusion arrays, with each coefficient equal to its indicator.
    pub fn from_inclusions(z: Vec<DMatrix<bool>>) -> Result<Self> {
        let first = z.first().ok_or(Error::EmptySamples)?;
        let (p, q) = first.shape();
        let draws: Vec<Draw> = z
            .into_iter()
            .map(|z| {
                let b = z.map(|v| if v { 1.0 } else { 0.0 });
                Draw { z, b }
            })
            .collect();
        let samples = PosteriorSamples {
            metadata: SampleMetadata {
                seed: 0,
                stream_ids: vec![0],
                iterations: draws.len(),
                burn_in: 0,
                thin: 1,
                n: 0,
                p,
                q,
            },
            draws,
            sigma: Vec::new(),
            s2: Vec::new(),
            d1: Vec::new(),
            trace: Vec::new(),
        };
        samples.check()?;
        Ok(samples)
    }

    /// Concatenates chains in order.
    pub fn merge(chains: Vec<PosteriorSamples>) -> Result<Self> {
        let mut iter = chains.into_iter();
        let mut out = iter.next().ok_or(Error::EmptySamples)?;
        for c in iter {
            if c.p() != out.p() || c.q() != out.q() {
                return Err(Error::DimensionMismatch("chains have different dimensions".into()));
            }
            out.draws.extend(c.draws);
            out.sigma.extend(c.sigma);
            out.s2.extend(c.s2);
            out.d1.extend(c.d1);
            out.trace.extend(c.trace);
            out.metadata.stream_ids.extend(c.metadata.stream_ids);
        }
        Ok(out)
    }

    /// Validates T ≥ 1, shapes, and that B vanishes wherever z does.
    pub fn check(&self) -> Result<()> {
        if self.draws.is_empty() {
            return Err(Error::EmptySamples);
        }
        for (t, d) in self.draws.iter().enumerate() {
            if d.z.shape() != (self.p(), self.q()) || d.b.shape() != (self.p(), self.q()) {
                return Err(Error::DimensionMismatch(format!("draw {t} has wrong shape")));
            }
            if d.z.iter().zip(d.b.iter()).any(|(&z, &b)| !z && b != 0.0) {
                return Err(Error::InvalidConfig(format!("draw {t} has a nonzero coefficient where z = 0")));
            }
        }
        Ok(())
    }
}

/// Identifier of a simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
    IV,
    V,
    Custom,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            "IV" | "4" => Ok(ScenarioId::IV),
            "V" | "5" => Ok(ScenarioId::V),
            "CUSTOM" => Ok(ScenarioId::Custom),
            _ => Err(Error::UnknownScenario(s.to_string())),
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
            ScenarioId::IV => "IV",
            ScenarioId::V => "V",
            ScenarioId::Custom => "Custom",
        };
        f.write_str(s)
    }
}

/// Generative truth of a simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub true_b: DMatrix<f64>,
    pub group_sizes: Vec<usize>,
    pub maf: f64,
    pub rho_within: f64,
    pub rho_between: f64,
    pub response_rho: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.true_b.shape() != (self.p, self.q) {
            return Err(Error::DimensionMismatch(format!(
                "true_B is {:?}, expected ({}, {})",
                self.true_b.shape(),
                self.p,
                self.q
            )));
        }
        if self.group_sizes.iter().sum::<usize>() != self.p || self.group_sizes.contains(&0) {
            return Err(Error::InvalidConfig("group sizes must be positive and sum to p".into()));
        }
        for (name, r) in [
            ("rho_within", self.rho_within),
            ("rho_between", self.rho_between),
            ("response_rho", self.response_rho),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("{name} = {r} outside [0, 1)")));
            }
        }
        if !(self.maf > 0.0 && self.maf <= 0.5) {
            return Err(Error::InvalidConfig(format!("maf = {} outside (0, 0.5]", self.maf)));
        }
        Ok(())
    }

    /// Row indices with at least one nonzero true coefficient.
    pub fn causal_rows(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.true_b.row(j).iter().any(|&v| v != 0.0)).collect()
    }
}
