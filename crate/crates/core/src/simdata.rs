//! Synthetic genotype designs and phenotypes.
//!
//! Genotypes come from a latent Gaussian haplotype model: each sample draws
//! two independent latent vectors with a block covariance (`rho_within`
//! inside an LD block, `rho_between` across blocks) and thresholds each
//! coordinate at the `1 - maf` quantile, so the allele sum is 0, 1 or 2.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distributions::{cholesky_lower, standard_normal, RngStream};
use crate::error::{Error, Result};
use crate::model::{GroupedDesign, ResponseMatrix, ScenarioId, ScenarioSpec};
use crate::normal;

pub const DEFAULT_MAF: f64 = 0.24;
pub const DEFAULT_RHO_WITHIN: f64 = 0.6;
pub const DEFAULT_RHO_BETWEEN: f64 = 0.3;
pub const DEFAULT_RESPONSE_RHO: f64 = 0.66;
const GROUP_SIZE_CYCLE: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeParams {
    pub n: usize,
    pub group_sizes: Vec<usize>,
    pub maf: f64,
    pub rho_within: f64,
    pub rho_between: f64,
}

impl GenotypeParams {
    /// Default block structure for `p` predictors.
    pub fn new(n: usize, p: usize) -> Self {
        GenotypeParams {
            n,
            group_sizes: cycled_group_sizes(p),
            maf: DEFAULT_MAF,
            rho_within: DEFAULT_RHO_WITHIN,
            rho_between: DEFAULT_RHO_BETWEEN,
        }
    }

    pub fn p(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maf > 0.0 && self.maf <= 0.5) {
            return Err(Error::InvalidConfig(format!("maf = {} outside (0, 0.5]", self.maf)));
        }
        if !(0.0 <= self.rho_between && self.rho_between <= self.rho_within && self.rho_within < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= rho_between ({}) <= rho_within ({}) < 1",
                self.rho_between, self.rho_within
            )));
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::InvalidConfig("group sizes must be positive".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        Ok(())
    }
}

/// Group sizes 5, 10, 20, 5, ... with the last group truncated so they sum to `p`.
pub fn cycled_group_sizes(p: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = p;
    for &m in GROUP_SIZE_CYCLE.iter().cycle() {
        if left == 0 {
            break;
        }
        let m = m.min(left);
        sizes.push(m);
        left -= m;
    }
    sizes
}

pub fn group_labels(group_sizes: &[usize]) -> Vec<usize> {
    group_sizes.iter().enumerate().flat_map(|(g, &m)| std::iter::repeat_n(g + 1, m)).collect()
}

/// Latent block covariance; errors unless it is positive definite.
pub fn latent_covariance(params: &GenotypeParams) -> Result<DMatrix<f64>> {
    let labels = group_labels(&params.group_sizes);
    let p = labels.len();
    let cov = DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else if labels[a] == labels[b] {
            params.rho_within
        } else {
            params.rho_between
        }
    });
    let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min_eig <= 1e-10 {
        return Err(Error::NotPositiveDefinite(format!("latent genotype covariance (min eigenvalue {min_eig:.3e})")));
    }
    Ok(cov)
}

pub fn simulate_genotypes(params: &GenotypeParams, rng: &mut RngStream) -> Result<GroupedDesign> {
    params.validate()?;
    let chol = cholesky_lower(&latent_covariance(params)?, "latent genotype covariance")?;
    let p = params.p();
    let threshold = normal::quantile(1.0 - params.maf);
    let mut x = DMatrix::zeros(params.n, p);
    let mut latent = vec![0.0; p];
    for i in 0..params.n {
        for _ in 0..2 {
            latent.iter_mut().for_each(|v| *v = standard_normal(rng));
            // Row i of L * latent, walking the lower triangle.
            for a in 0..p {
                let mut s = 0.0;
                for (b, &l) in latent.iter().enumerate().take(a + 1) {
                    s += chol[(a, b)] * l;
                }
                if s > threshold {
                    x[(i, a)] += 1.0;
                }
            }
        }
    }
    Ok(GroupedDesign::new(x, group_labels(&params.group_sizes), None))
}

/// Compound-symmetry covariance with unit variances.
pub fn compound_symmetry(q: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |a, b| if a == b { 1.0 } else { rho })
}

pub fn simulate_phenotypes(
    x: &DMatrix<f64>,
    true_b: &DMatrix<f64>,
    response_rho: f64,
    rng: &mut RngStream,
) -> Result<ResponseMatrix> {
    if x.ncols() != true_b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} columns but B has {} rows",
            x.ncols(),
            true_b.nrows()
        )));
    }
    let (n, q) = (x.nrows(), true_b.ncols());
    let chol = cholesky_lower(&compound_symmetry(q, response_rho), "response covariance")?;
    let noise = DMatrix::from_fn(n, q, |_, _| standard_normal(rng)) * chol.transpose();
    Ok(ResponseMatrix::new(x * true_b + noise))
}

/// Causal predictor positions: the middle of evenly spaced distinct groups, or
/// evenly spaced predictors when there are fewer groups than causal rows.
pub fn causal_positions(group_sizes: &[usize], s: usize) -> Vec<usize> {
    let g = group_sizes.len();
    let p: usize = group_sizes.iter().sum();
    if s == 0 {
        return Vec::new();
    }
    if s <= g {
        let starts: Vec<usize> = group_sizes
            .iter()
            .scan(0, |acc, &m| {
                let start = *acc;
                *acc += m;
                Some(start)
            })
            .collect();
        (0..s)
            .map(|i| {
                let grp = ((2 * i + 1) * g) / (2 * s);
                starts[grp] + group_sizes[grp] / 2
            })
            .collect()
    } else {
        (0..s).map(|i| ((2 * i + 1) * p) / (2 * s)).collect()
    }
}

/// Number of leading responses targeted by causal row `i` in the staircase layout.
fn staircase_width(i: usize, q: usize) -> usize {
    let steps = q.saturating_sub(1).max(1);
    q - (i % steps)
}

/// Coefficient matrix for a scenario; rows listed in `causal_positions` are nonzero.
pub fn scenario_coefficients(id: ScenarioId, p: usize, q: usize, group_sizes: &[usize]) -> Result<DMatrix<f64>> {
    let (s, heterogeneous) = match id {
        ScenarioId::I => (5, false),
        ScenarioId::II => (10, false),
        ScenarioId::III => (5, true),
        ScenarioId::IV => (10, true),
        ScenarioId::V => (5, true),
        ScenarioId::Custom => {
            return Err(Error::UnknownScenario("custom scenarios carry their own coefficients".into()));
        }
    };
    let positions = causal_positions(group_sizes, s);
    let mut b = DMatrix::zeros(p, q);
    for (i, &j) in positions.iter().enumerate() {
        let strength = match id {
            ScenarioId::I | ScenarioId::II => 1.0,
            ScenarioId::V if i < 2 => 0.5,
            _ => 0.25,
        };
        let width = if heterogeneous { staircase_width(i, q) } else { q };
        for k in 0..width {
            b[(j, k)] = strength;
        }
    }
    Ok(b)
}

/// Full generative description of a built-in scenario.
pub fn scenario(id: ScenarioId) -> Result<ScenarioSpec> {
    let (n, p, q) = match id {
        ScenarioId::V => (300, 500, 6),
        ScenarioId::Custom => return Err(Error::UnknownScenario("custom".into())),
        _ => (500, 100, 6),
    };
    let group_sizes = cycled_group_sizes(p);
    let true_b = scenario_coefficients(id, p, q, &group_sizes)?;
    Ok(ScenarioSpec {
        id,
        n,
        p,
        q,
        true_b,
        group_sizes,
        maf: DEFAULT_MAF,
        rho_within: DEFAULT_RHO_WITHIN,
        rho_between: DEFAULT_RHO_BETWEEN,
        response_rho: DEFAULT_RESPONSE_RHO,
    })
}

/// Replaces every nonzero coefficient of a scenario by `strength`.
pub fn with_signal_strength(mut spec: ScenarioSpec, strength: f64) -> ScenarioSpec {
    spec.true_b.iter_mut().filter(|v| **v != 0.0).for_each(|v| *v = strength);
    spec
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub design: GroupedDesign,
    pub y: ResponseMatrix,
    pub true_b: DMatrix<f64>,
}

/// Draws `X` and `Y` for a scenario.
pub fn simulate_dataset(spec: &ScenarioSpec, rng: &mut RngStream) -> Result<SimulatedDataset> {
    spec.validate()?;
    let params = GenotypeParams {
        n: spec.n,
        group_sizes: spec.group_sizes.clone(),
        maf: spec.maf,
        rho_within: spec.rho_within,
        rho_between: spec.rho_between,
    };
    let design = simulate_genotypes(&params, rng)?;
    let y = simulate_phenotypes(&design.x, &spec.true_b, spec.response_rho, rng)?;
    Ok(SimulatedDataset { design, y, true_b: spec.true_b.clone() })
}

/// Scenario with binary annotations where only annotated predictors are causal.
///
/// `annotated_fraction` of the predictors are annotated, evenly spread; the
/// first `causal` of them get coefficient `strength` on every response.
pub fn annotated_scenario(
    n: usize,
    p: usize,
    q: usize,
    annotated_fraction: f64,
    causal: usize,
    strength: f64,
) -> Result<(ScenarioSpec, Vec<u8>)> {
    let n_annotated = ((p as f64) * annotated_fraction).round() as usize;
    if causal > n_annotated || n_annotated > p {
        return Err(Error::InvalidConfig(format!(
            "{causal} causal predictors cannot fit into {n_annotated} annotated ones"
        )));
    }
    let annotated: Vec<usize> = (0..n_annotated).map(|i| ((2 * i + 1) * p) / (2 * n_annotated)).collect();
    let mut labels = vec![0u8; p];
    for &j in &annotated {
        labels[j] = 1;
    }
    let step = n_annotated / causal.max(1);
    let mut true_b = DMatrix::zeros(p, q);
    for i in 0..causal {
        true_b.row_mut(annotated[i * step]).fill(strength);
    }
    let spec = ScenarioSpec {
        id: ScenarioId::Custom,
        n,
        p,
        q,
        true_b,
        group_sizes: cycled_group_sizes(p),
        maf: DEFAULT_MAF,
        rho_within: DEFAULT_RHO_WITHIN,
        rho_between: DEFAULT_RHO_BETWEEN,
        response_rho: DEFAULT_RESPONSE_RHO,
    };
    Ok((spec, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn col(x: &DMatrix<f64>, j: usize) -> Vec<f64> {
        x.column(j).iter().copied().collect()
    }

    #[test]
    fn group_sizes_cycle_and_sum() {
        assert_eq!(cycled_group_sizes(100), vec![5, 10, 20, 5, 10, 20, 5, 10, 15]);
        assert_eq!(cycled_group_sizes(500).iter().sum::<usize>(), 500);
        assert_eq!(cycled_group_sizes(3), vec![3]);
    }

    #[test]
    fn independent_latents_give_uncorrelated_columns() {
        let params = GenotypeParams { n: 10_000, group_sizes: vec![3, 3], maf: 0.3, rho_within: 0.0, rho_between: 0.0 };
        let d = simulate_genotypes(&params, &mut RngStream::new(1, 0)).unwrap();
        for a in 0..6 {
            for b in 0..a {
                assert!(corr(&col(&d.x, a), &col(&d.x, b)).abs() < 0.05);
            }
        }
    }

    #[test]
    fn genotype_mean_matches_twice_maf() {
        let params = GenotypeParams { n: 10_000, ..GenotypeParams::new(10_000, 10) };
        let d = simulate_genotypes(&params, &mut RngStream::new(2, 0)).unwrap();
        assert!(d.x.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
        let se = (2.0 * 0.24 * 0.76 / 10_000f64).sqrt();
        for j in 0..10 {
            let m = d.x.column(j).mean();
            assert!((m - 0.48).abs() < 3.0 * se, "column {j}: mean {m}");
        }
    }

    #[test]
    fn block_structure_orders_correlations() {
        let params = GenotypeParams { n: 10_000, group_sizes: vec![4, 4], maf: 0.24, rho_within: 0.6, rho_between: 0.3 };
        let d = simulate_genotypes(&params, &mut RngStream::new(3, 0)).unwrap();
        let within = corr(&col(&d.x, 0), &col(&d.x, 1));
        let between = corr(&col(&d.x, 0), &col(&d.x, 5));
        assert!(within > between, "within {within}, between {between}");
        assert!(between > 0.05);
    }

    #[test]
    fn invalid_genotype_params_are_rejected() {
        let base = GenotypeParams::new(10, 10);
        assert!(simulate_genotypes(&GenotypeParams { maf: 0.6, ..base.clone() }, &mut RngStream::new(0, 0)).is_err());
        assert!(simulate_genotypes(
            &GenotypeParams { rho_between: 0.7, ..base.clone() },
            &mut RngStream::new(0, 0)
        )
        .is_err());
    }

    #[test]
    fn compound_symmetry_noise_moments() {
        let n = 10_000;
        let x = DMatrix::zeros(n, 2);
        let y = simulate_phenotypes(&x, &DMatrix::zeros(2, 3), 0.66, &mut RngStream::new(4, 0)).unwrap().y;
        for k in 0..3 {
            let v = y.column(k).variance();
            // Var of the sample variance of a unit normal is 2/n.
            assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "variance {v}");
        }
        let r = corr(&col(&y, 0), &col(&y, 1));
        assert!((r - 0.66).abs() < 3.0 * (1.0 - 0.66f64.powi(2)) / (n as f64).sqrt(), "corr {r}");
        let indep = simulate_phenotypes(&x, &DMatrix::zeros(2, 2), 0.0, &mut RngStream::new(5, 0)).unwrap().y;
        assert!(corr(&col(&indep, 0), &col(&indep, 1)).abs() < 0.04);
        assert!(simulate_phenotypes(&x, &DMatrix::zeros(3, 2), 0.0, &mut RngStream::new(5, 0)).is_err());
    }

    #[test]
    fn scenario_truths() {
        let one = scenario(ScenarioId::I).unwrap();
        assert_eq!((one.n, one.p, one.q), (500, 100, 6));
        let rows = one.causal_rows();
        assert_eq!(rows.len(), 5);
        for &j in &rows {
            assert!(one.true_b.row(j).iter().all(|&v| v == 1.0));
        }
        let groups = group_labels(&one.group_sizes);
        let mut distinct: Vec<usize> = rows.iter().map(|&j| groups[j]).collect();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);

        assert_eq!(scenario(ScenarioId::II).unwrap().causal_rows().len(), 10);

        let three = scenario(ScenarioId::III).unwrap();
        let widths: Vec<usize> =
            three.causal_rows().iter().map(|&j| three.true_b.row(j).iter().filter(|&&v| v != 0.0).count()).collect();
        assert_eq!(widths, vec![6, 5, 4, 3, 2]);
        assert!(three.true_b.iter().all(|&v| v == 0.0 || v == 0.25));

        let four = scenario(ScenarioId::IV).unwrap();
        assert_eq!(four.causal_rows().len(), 10);

        let five = scenario(ScenarioId::V).unwrap();
        assert_eq!((five.n, five.p), (300, 500));
        let mut strengths: Vec<f64> = five.causal_rows().iter().map(|&j| five.true_b[(j, 0)]).collect();
        strengths.sort_by(f64::total_cmp);
        assert_eq!(strengths, vec![0.25, 0.25, 0.25, 0.5, 0.5]);

        assert!(matches!(scenario(ScenarioId::Custom), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn staircase_rows_are_leading_responses() {
        for id in [ScenarioId::III, ScenarioId::IV, ScenarioId::V] {
            let s = scenario(id).unwrap();
            for j in s.causal_rows() {
                let width = s.true_b.row(j).iter().filter(|&&v| v != 0.0).count();
                assert!((0..width).all(|k| s.true_b[(j, k)] != 0.0));
                assert!(width >= 2);
            }
        }
    }

    #[test]
    fn datasets_are_reproducible() {
        let spec = scenario(ScenarioId::I).unwrap();
        let a = simulate_dataset(&spec, &mut RngStream::new(6, 3)).unwrap();
        let b = simulate_dataset(&spec, &mut RngStream::new(6, 3)).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&spec, &mut RngStream::new(6, 4)).unwrap();
        assert_ne!(a.design.x, c.design.x);
    }

    #[test]
    fn annotated_layout() {
        let (spec, labels) = annotated_scenario(200, 200, 3, 0.2, 10, 0.5).unwrap();
        assert_eq!(labels.iter().filter(|&&v| v == 1).count(), 40);
        let rows = spec.causal_rows();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|&j| labels[j] == 1));
        assert!(annotated_scenario(200, 200, 3, 0.01, 10, 0.5).is_err());
    }
}
