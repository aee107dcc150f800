//! Generative sampler for the trivariate system and the Monte Carlo cell
//! oracle used to cross-check the closed-form likelihood. Every draw comes
//! from a per-row (or per-block) counter-derived substream, so output is
//! bit-identical for a given seed regardless of how work is split across
//! threads.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::std_normal_quantile;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, ModelSpec, ParameterSet};

// SplitMix64 finalizer; decorrelates (seed, counter, salt) into substream
// seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic substream for one (seed, counter, salt) triple.
pub(crate) fn substream(seed: u64, counter: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(counter ^ mix(salt))))
}

/// Uniform draw strictly inside (0, 1), stable at the bit level.
#[inline]
pub(crate) fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.gen::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inverse-CDF sampling.
#[inline]
pub(crate) fn draw_normal(rng: &mut ChaCha8Rng) -> f64 {
    std_normal_quantile(open_unit(rng)).expect("open_unit stays inside (0,1)")
}

/// Deterministic stream of standard normal draws for a given seed; handy
/// for building ad-hoc synthetic columns in harnesses.
pub fn normal_stream(seed: u64) -> impl FnMut() -> f64 {
    let mut rng = substream(seed, 0, 7);
    move || draw_normal(&mut rng)
}

/// Marginal distribution of one simulated covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateRecipe {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    /// Category index 1..=k with the given shares.
    Categorical { shares: Vec<f64> },
}

impl CovariateRecipe {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            CovariateRecipe::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::Config(format!(
                        "recipe `{name}`: bernoulli p must lie in [0, 1], got {p}"
                    )));
                }
            }
            CovariateRecipe::Normal { mean, sd } => {
                if !mean.is_finite() || !(*sd >= 0.0) || !sd.is_finite() {
                    return Err(Error::Config(format!(
                        "recipe `{name}`: normal(mean, sd) needs finite mean and sd >= 0"
                    )));
                }
            }
            CovariateRecipe::Categorical { shares } => {
                if shares.is_empty() || shares.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::Config(format!(
                        "recipe `{name}`: categorical shares must be nonnegative and nonempty"
                    )));
                }
                let total: f64 = shares.iter().sum();
                if (total - 1.0).abs() > 1e-3 {
                    return Err(Error::Config(format!(
                        "recipe `{name}`: categorical shares sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            CovariateRecipe::Bernoulli { p } => {
                if open_unit(rng) < *p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateRecipe::Normal { mean, sd } => mean + sd * draw_normal(rng),
            CovariateRecipe::Categorical { shares } => {
                let total: f64 = shares.iter().sum();
                let u = open_unit(rng) * total;
                let mut acc = 0.0;
                for (i, s) in shares.iter().enumerate() {
                    acc += s;
                    if u < acc {
                        return (i + 1) as f64;
                    }
                }
                shares.len() as f64
            }
        }
    }
}

/// Everything needed to draw a synthetic dataset from known parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    pub true_params: ParameterSet,
    pub spec: ModelSpec,
    pub recipes: BTreeMap<String, CovariateRecipe>,
    /// Also emit the latent propensity columns `y2_star`, `y3_star`.
    pub emit_latents: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("simulation needs n >= 1".into()));
        }
        self.spec.validate()?;
        self.true_params
            .validate(&self.spec)
            .map_err(|e| Error::Config(format!("true_params invalid: {e}")))?;
        for name in self
            .spec
            .covariates_eq1
            .iter()
            .chain(&self.spec.covariates_eq2)
            .chain(&self.spec.covariates_eq3)
        {
            if !self.recipes.contains_key(name) {
                return Err(Error::Config(format!(
                    "no recipe covers spec column `{name}`"
                )));
            }
        }
        for (name, recipe) in &self.recipes {
            recipe.validate(name)?;
            if matches!(name.as_str(), "y1" | "y2" | "y3" | "y2_star" | "y3_star") {
                return Err(Error::Config(format!(
                    "recipe column `{name}` collides with an outcome column"
                )));
            }
        }
        Ok(())
    }
}

fn threshold_level(value: f64, mu: &[f64]) -> usize {
    // mu = [0, mu_2, ...]; level j iff mu_{j-1} < value <= mu_j with sentinels
    let mut level = 1;
    for &m in mu {
        if value > m {
            level += 1;
        }
    }
    level
}

/// Draw a dataset from the recursive data process: covariates from the
/// recipes, correlated errors through the Cholesky factor of the error
/// covariance, outcomes built recursively and the ordinal ones discretized
/// by the thresholds. Deterministic for a given seed.
pub fn sample_dataset(config: &SimConfig) -> Result<Dataset> {
    config.validate()?;
    let p = &config.true_params;
    let chol = linalg::cholesky(&p.error_covariance()).ok_or_else(|| {
        Error::Config("true parameter covariance is not positive definite".into())
    })?;
    let l = [
        [chol[[0, 0]], 0.0, 0.0],
        [chol[[1, 0]], chol[[1, 1]], 0.0],
        [chol[[2, 0]], chol[[2, 1]], chol[[2, 2]]],
    ];
    let names: Vec<&String> = config.recipes.keys().collect();
    let n = config.n;

    struct RowOut {
        covs: Vec<f64>,
        y1: f64,
        y2s: f64,
        y3s: f64,
    }

    let spec = &config.spec;
    let rows: Vec<RowOut> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng_cov = substream(config.seed, i as u64, 0);
            let covs: Vec<f64> = names
                .iter()
                .map(|name| config.recipes[*name].draw(&mut rng_cov))
                .collect();
            let mut rng_err = substream(config.seed, i as u64, 1);
            let z = [
                draw_normal(&mut rng_err),
                draw_normal(&mut rng_err),
                draw_normal(&mut rng_err),
            ];
            let eps = [
                l[0][0] * z[0],
                l[1][0] * z[0] + l[1][1] * z[1],
                l[2][0] * z[0] + l[2][1] * z[1] + l[2][2] * z[2],
            ];
            let value = |name: &str| -> f64 {
                let idx = names.iter().position(|n| n.as_str() == name).unwrap();
                covs[idx]
            };
            let index = |covariates: &[String], constant: bool, gamma: &[f64]| -> f64 {
                let mut acc = 0.0;
                let mut k = 0;
                if constant {
                    acc += gamma[0];
                    k = 1;
                }
                for name in covariates {
                    acc += gamma[k] * value(name);
                    k += 1;
                }
                acc
            };
            let y1 = index(&spec.covariates_eq1, spec.include_constant_eq1, &p.gamma1) + eps[0];
            let y2s =
                index(&spec.covariates_eq2, spec.include_constant_eq2, &p.gamma2)
                    + p.theta12 * y1
                    + eps[1];
            let y3s =
                index(&spec.covariates_eq3, spec.include_constant_eq3, &p.gamma3)
                    + p.theta13 * y1
                    + p.theta23 * y2s
                    + eps[2];
            RowOut {
                covs,
                y1,
                y2s,
                y3s,
            }
        })
        .collect();

    let mut ds = Dataset::new();
    for (j, name) in names.iter().enumerate() {
        ds.add_column((*name).clone(), rows.iter().map(|r| r.covs[j]).collect())?;
    }
    ds.add_column("y1".into(), rows.iter().map(|r| r.y1).collect())?;
    ds.add_column(
        "y2".into(),
        rows.iter()
            .map(|r| threshold_level(r.y2s, &p.mu2) as f64)
            .collect(),
    )?;
    ds.add_column(
        "y3".into(),
        rows.iter()
            .map(|r| threshold_level(r.y3s, &p.mu3) as f64)
            .collect(),
    )?;
    if config.emit_latents {
        ds.add_column("y2_star".into(), rows.iter().map(|r| r.y2s).collect())?;
        ds.add_column("y3_star".into(), rows.iter().map(|r| r.y3s).collect())?;
    }
    ds.y1_col = Some("y1".into());
    ds.y2_col = Some("y2".into());
    ds.y3_col = Some("y3".into());
    Ok(ds)
}

/// Monte Carlo estimate of the conditional cell grid by simulating the
/// reduced-form errors directly: returns cell frequencies and their binomial
/// standard errors.
pub fn mc_cell_probability(
    h2: f64,
    h3: f64,
    p: &ParameterSet,
    draws: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if draws < 10_000 {
        return Err(Error::Domain(format!(
            "Monte Carlo cell oracle needs at least 10^4 draws, got {draws}"
        )));
    }
    let one_m_r12sq = 1.0 - p.rho12 * p.rho12;
    let cov = p.theta23 * one_m_r12sq + (p.rho23 - p.rho12 * p.rho13);
    let var3 = p.theta23 * p.theta23 * one_m_r12sq
        + 2.0 * p.theta23 * (p.rho23 - p.rho12 * p.rho13)
        + (1.0 - p.rho13 * p.rho13);
    if !(one_m_r12sq > 0.0) {
        return Err(Error::Parameter(
            "reduced-form covariance is not positive definite (rho12)".into(),
        ));
    }
    let l11 = one_m_r12sq.sqrt();
    let l21 = cov / l11;
    let rem = var3 - l21 * l21;
    if !(rem > 0.0) {
        return Err(Error::Parameter(
            "reduced-form covariance is not positive definite".into(),
        ));
    }
    let l22 = rem.sqrt();
    let (j2_max, j3_max) = (p.mu2.len() + 1, p.mu3.len() + 1);
    let b_shift = h3 + p.theta23 * h2;

    const BLOCK: usize = 1 << 16;
    let blocks: Vec<(u64, usize)> = (0..draws)
        .step_by(BLOCK)
        .enumerate()
        .map(|(b, s)| (b as u64, (draws - s).min(BLOCK)))
        .collect();
    let counts: Vec<u64> = blocks
        .par_iter()
        .map(|&(block_id, len)| {
            let mut rng = substream(seed, block_id, 2);
            let mut local = vec![0u64; j2_max * j3_max];
            for _ in 0..len {
                let z1 = draw_normal(&mut rng);
                let z2 = draw_normal(&mut rng);
                let eta2 = l11 * z1;
                let eta3t = l21 * z1 + l22 * z2;
                let y2s = h2 + eta2;
                let y3s = b_shift + eta3t;
                let j2 = threshold_level(y2s, &p.mu2);
                let j3 = threshold_level(y3s, &p.mu3);
                local[(j2 - 1) * j3_max + (j3 - 1)] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; j2_max * j3_max],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let mut probs = Array2::zeros((j2_max, j3_max));
    let mut ses = Array2::zeros((j2_max, j3_max));
    let nf = draws as f64;
    for j2 in 0..j2_max {
        for j3 in 0..j3_max {
            let p_hat = counts[j2 * j3_max + j3] as f64 / nf;
            probs[[j2, j3]] = p_hat;
            ses[[j2, j3]] = (p_hat * (1.0 - p_hat) / nf).sqrt();
        }
    }
    Ok((probs, ses))
}

/// Everything needed to draw data from a known SEM: latent disturbances are
/// standard (unit variance, covariance from the parameter set), indicators
/// get independent normal measurement errors.
#[derive(Debug, Clone)]
pub struct SemSimConfig {
    pub n: usize,
    pub seed: u64,
    pub spec: crate::sem::SemSpec,
    pub params: crate::sem::SemParams,
    pub exogenous_recipes: BTreeMap<String, CovariateRecipe>,
}

/// Draw (indicators, exogenous) rows from the measurement and structural
/// equations; returns the dataset and the true latent values for each row.
pub fn sample_sem_dataset(config: &SemSimConfig) -> Result<(Dataset, Array2<f64>)> {
    config.spec.validate()?;
    if config.n < 1 {
        return Err(Error::Config("SEM simulation needs n >= 1".into()));
    }
    for name in &config.spec.exogenous {
        if !config.exogenous_recipes.contains_key(name) {
            return Err(Error::Config(format!(
                "no recipe covers SEM exogenous column `{name}`"
            )));
        }
    }
    for (name, recipe) in &config.exogenous_recipes {
        recipe.validate(name)?;
    }
    let (r, l, k) = (config.spec.r(), config.spec.l(), config.spec.k());
    let p = &config.params;
    if p.omega.shape() != [r, l] || p.tau.shape() != [l, k] || p.theta_diag.len() != r {
        return Err(Error::Config("SEM parameter shapes do not match the spec".into()));
    }
    let lnu = linalg::cholesky(&p.nu_cov).ok_or_else(|| {
        Error::Config("latent disturbance covariance is not positive definite".into())
    })?;
    let theta_sd: Vec<f64> = p.theta_diag.iter().map(|v| v.sqrt()).collect();

    struct Row {
        x: Vec<f64>,
        u: Vec<f64>,
        z: Vec<f64>,
    }
    let rows: Vec<Row> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut rng_x = substream(config.seed, i as u64, 4);
            let x: Vec<f64> = config
                .spec
                .exogenous
                .iter()
                .map(|name| config.exogenous_recipes[name].draw(&mut rng_x))
                .collect();
            let mut rng_z = substream(config.seed, i as u64, 5);
            let zdraw: Vec<f64> = (0..l).map(|_| draw_normal(&mut rng_z)).collect();
            let z: Vec<f64> = (0..l)
                .map(|a| {
                    let mut acc = 0.0;
                    for b in 0..=a {
                        acc += lnu[[a, b]] * zdraw[b];
                    }
                    for (c, xv) in x.iter().enumerate() {
                        acc += p.tau[[a, c]] * xv;
                    }
                    acc
                })
                .collect();
            let mut rng_u = substream(config.seed, i as u64, 6);
            let u: Vec<f64> = (0..r)
                .map(|row| {
                    let mut acc = theta_sd[row] * draw_normal(&mut rng_u);
                    for (a, zv) in z.iter().enumerate() {
                        acc += p.omega[[row, a]] * zv;
                    }
                    acc
                })
                .collect();
            Row { x, u, z }
        })
        .collect();

    let mut ds = Dataset::new();
    for (j, name) in config.spec.indicators.iter().enumerate() {
        ds.add_column(name.clone(), rows.iter().map(|row| row.u[j]).collect())?;
    }
    for (j, name) in config.spec.exogenous.iter().enumerate() {
        ds.add_column(name.clone(), rows.iter().map(|row| row.x[j]).collect())?;
    }
    let mut scores = Array2::zeros((config.n, l));
    for (i, row) in rows.iter().enumerate() {
        for a in 0..l {
            scores[[i, a]] = row.z[a];
        }
    }
    Ok((ds, scores))
}

/// Canned covariate recipes whose marginal shares follow the published
/// sample description (gender, race, education, employment, household
/// structure, income, parking, vehicle-decision roles).
#[allow(clippy::approx_constant)] // 0.318 is a sample mean, not 1/pi
pub fn paper_like_recipes() -> BTreeMap<String, CovariateRecipe> {
    let mut m = BTreeMap::new();
    m.insert("female".into(), CovariateRecipe::Bernoulli { p: 0.5039 });
    m.insert(
        "race".into(),
        CovariateRecipe::Categorical {
            shares: vec![0.6623, 0.1382, 0.0322, 0.0115, 0.1558],
        },
    );
    m.insert(
        "education".into(),
        CovariateRecipe::Categorical {
            shares: vec![0.0686, 0.2882, 0.3246, 0.3187],
        },
    );
    m.insert(
        "employment".into(),
        CovariateRecipe::Categorical {
            shares: vec![0.4827, 0.0638, 0.1097, 0.3439],
        },
    );
    m.insert(
        "children".into(),
        CovariateRecipe::Normal {
            mean: 0.318,
            sd: 0.715,
        },
    );
    m.insert(
        "teen_children".into(),
        CovariateRecipe::Normal {
            mean: 0.105,
            sd: 0.362,
        },
    );
    m.insert(
        "adults".into(),
        CovariateRecipe::Normal {
            mean: 2.038,
            sd: 0.855,
        },
    );
    m.insert(
        "income".into(),
        CovariateRecipe::Categorical {
            shares: vec![0.4233, 0.4799, 0.0968],
        },
    );
    m.insert("free_parking".into(), CovariateRecipe::Bernoulli { p: 0.9334 });
    m.insert(
        "parking_cost".into(),
        CovariateRecipe::Normal {
            mean: 0.502,
            sd: 7.336,
        },
    );
    m.insert(
        "decision_role".into(),
        CovariateRecipe::Categorical {
            shares: vec![0.4617, 0.2429, 0.2955],
        },
    );
    m
}

/// Demonstration data process: published structural effects, error
/// correlations and thresholds, with a small covariate set drawn from the
/// canned recipes plus two preference-score columns standing in for the
/// first-stage latent constructs (each exclusive to one ordinal equation,
/// which is what identifies the recursive effect separately from the error
/// correlation). The constants are tuned so both ordinal outcomes populate
/// all five levels with the familiar skew (most respondents concerned,
/// about a third accepting).
pub fn demo_config(n: usize, seed: u64) -> SimConfig {
    let mut spec = ModelSpec::new(5, 5);
    spec.covariates_eq1 = vec!["children".into(), "free_parking".into(), "female".into()];
    spec.covariates_eq2 = vec!["female".into(), "children".into(), "mobility_score".into()];
    spec.covariates_eq3 = vec!["female".into(), "free_parking".into(), "cost_score".into()];
    let params = ParameterSet {
        gamma1: vec![7.681, 0.124, 0.473, -0.150],
        gamma2: vec![3.270, 0.198, 0.067, -0.600],
        gamma3: vec![4.000, -0.150, -0.153, -1.019],
        theta12: -0.171,
        theta13: -0.233,
        theta23: -0.661,
        sigma1: 1.1,
        rho12: 0.248,
        rho13: 0.352,
        rho23: 0.530,
        mu2: vec![0.0, 0.432, 0.931, 1.552],
        mu3: vec![0.0, 0.432, 0.931, 1.552],
    };
    let all = paper_like_recipes();
    let mut recipes = BTreeMap::new();
    for name in ["children", "free_parking", "female"] {
        recipes.insert(name.to_string(), all[name].clone());
    }
    recipes.insert(
        "mobility_score".into(),
        CovariateRecipe::Normal { mean: 0.0, sd: 1.0 },
    );
    recipes.insert(
        "cost_score".into(),
        CovariateRecipe::Normal { mean: 0.0, sd: 1.0 },
    );
    SimConfig {
        n,
        seed,
        true_params: params,
        spec,
        recipes,
        emit_latents: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::chisq_sf;
    use crate::likelihood::cell_probability;
    use crate::model::{constrain, UnconstrainedParams};

    #[test]
    fn same_seed_gives_identical_datasets() {
        let cfg = demo_config(500, 99);
        let a = sample_dataset(&cfg).unwrap();
        let b = sample_dataset(&cfg).unwrap();
        for name in a.names() {
            assert_eq!(a.column(name).unwrap(), b.column(name).unwrap());
        }
        let cfg2 = demo_config(500, 100);
        let c = sample_dataset(&cfg2).unwrap();
        assert_ne!(a.column("y1").unwrap(), c.column("y1").unwrap());
    }

    #[test]
    fn cholesky_reproduces_error_covariance() {
        let spec = ModelSpec::new(5, 5);
        let dim = spec.param_count();
        let mut seed = 3u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 4.0
        };
        for _ in 0..100 {
            let u = UnconstrainedParams((0..dim).map(|_| next()).collect());
            let p = constrain(&u, &spec).unwrap();
            let sigma = p.error_covariance();
            let l = linalg::cholesky(&sigma).unwrap();
            let back = l.dot(&l.t());
            for i in 0..3 {
                for j in 0..3 {
                    assert!((back[[i, j]] - sigma[[i, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn independence_when_thetas_and_rhos_are_zero() {
        let mut cfg = demo_config(100_000, 7);
        cfg.true_params.theta12 = 0.0;
        cfg.true_params.theta13 = 0.0;
        cfg.true_params.theta23 = 0.0;
        cfg.true_params.rho12 = 0.0;
        cfg.true_params.rho13 = 0.0;
        cfg.true_params.rho23 = 0.0;
        cfg.true_params.gamma1 = vec![0.0; 4];
        cfg.true_params.gamma2 = vec![0.0; 4];
        cfg.true_params.gamma3 = vec![0.0; 4];
        cfg.true_params.sigma1 = 1.0;
        cfg.emit_latents = true;
        let ds = sample_dataset(&cfg).unwrap();
        let y1 = ds.column("y1").unwrap();
        let y2s = ds.column("y2_star").unwrap();
        let n = y1.len() as f64;
        let m1: f64 = y1.iter().sum::<f64>() / n;
        let m2: f64 = y2s.iter().sum::<f64>() / n;
        let mut c = 0.0;
        let mut v1 = 0.0;
        let mut v2 = 0.0;
        for i in 0..y1.len() {
            c += (y1[i] - m1) * (y2s[i] - m2);
            v1 += (y1[i] - m1).powi(2);
            v2 += (y2s[i] - m2).powi(2);
        }
        let corr = c / (v1.sqrt() * v2.sqrt());
        assert!(corr.abs() < 0.02, "corr = {corr}");
    }

    #[test]
    fn residual_moments_match_parameters() {
        let mut cfg = demo_config(200_000, 21);
        cfg.emit_latents = true;
        let ds = sample_dataset(&cfg).unwrap();
        let p = &cfg.true_params;
        let n = ds.n();
        let y1 = ds.column("y1").unwrap();
        let y2s = ds.column("y2_star").unwrap();
        let children = ds.column("children").unwrap();
        let parking = ds.column("free_parking").unwrap();
        let female = ds.column("female").unwrap();
        let mobility = ds.column("mobility_score").unwrap();
        let mut eps1 = Vec::with_capacity(n);
        let mut eps2 = Vec::with_capacity(n);
        for i in 0..n {
            let idx1 =
                p.gamma1[0] + p.gamma1[1] * children[i] + p.gamma1[2] * parking[i]
                    + p.gamma1[3] * female[i];
            let e1 = y1[i] - idx1;
            let idx2 = p.gamma2[0] + p.gamma2[1] * female[i] + p.gamma2[2] * children[i]
                + p.gamma2[3] * mobility[i];
            let e2 = y2s[i] - idx2 - p.theta12 * y1[i];
            eps1.push(e1);
            eps2.push(e2);
        }
        let nf = n as f64;
        let mean1: f64 = eps1.iter().sum::<f64>() / nf;
        let var1: f64 = eps1.iter().map(|e| (e - mean1).powi(2)).sum::<f64>() / nf;
        assert!(
            (var1 - p.sigma1 * p.sigma1).abs() < 3.0 * 2.0 / nf.sqrt(),
            "var(eps1) = {var1}"
        );
        let mean2: f64 = eps2.iter().sum::<f64>() / nf;
        let mut cov = 0.0;
        let mut v2 = 0.0;
        for i in 0..n {
            cov += (eps1[i] - mean1) * (eps2[i] - mean2);
            v2 += (eps2[i] - mean2).powi(2);
        }
        let corr = cov / ((var1 * nf).sqrt() * v2.sqrt());
        assert!((corr - p.rho12).abs() < 3.0 / nf.sqrt() * 2.0, "corr = {corr}");
    }

    #[test]
    fn mc_degenerate_case_is_uniform_quarters() {
        let spec = ModelSpec::new(2, 2);
        let p = constrain(&UnconstrainedParams::zeros(&spec), &spec).unwrap();
        let (probs, ses) = mc_cell_probability(0.0, 0.0, &p, 100_000, 5).unwrap();
        for j2 in 0..2 {
            for j3 in 0..2 {
                assert!(
                    (probs[[j2, j3]] - 0.25).abs() <= 3.0 * ses[[j2, j3]],
                    "cell ({j2},{j3}) = {}",
                    probs[[j2, j3]]
                );
            }
        }
    }

    #[test]
    fn mc_grid_matches_closed_form_cells() {
        let spec = ModelSpec::new(3, 3);
        let mut p = constrain(&UnconstrainedParams::zeros(&spec), &spec).unwrap();
        p.theta23 = -0.5;
        p.rho12 = 0.2;
        p.rho13 = 0.1;
        p.rho23 = 0.3;
        p.mu2 = vec![0.0, 1.0];
        p.mu3 = vec![0.0, 1.0];
        let (h2, h3) = (0.3, -0.2);
        let (probs, ses) = mc_cell_probability(h2, h3, &p, 2_000_000, 13).unwrap();
        let terms = ConditionalStub { h2, h3 }.terms(&p);
        for j2 in 1..=3usize {
            for j3 in 1..=3usize {
                let exact = cell_probability(&terms, &p, j2, j3).unwrap();
                let mc = probs[[j2 - 1, j3 - 1]];
                let se = ses[[j2 - 1, j3 - 1]].max(1e-9);
                assert!(
                    (exact - mc).abs() <= 3.5 * se,
                    "cell ({j2},{j3}): exact {exact} vs mc {mc} (se {se})"
                );
            }
        }
    }

    // helper to build ConditionalTerms at explicit (h2, h3)
    struct ConditionalStub {
        h2: f64,
        h3: f64,
    }
    impl ConditionalStub {
        fn terms(&self, p: &ParameterSet) -> crate::likelihood::ConditionalTerms {
            let scale = crate::likelihood::cell_scale(p).unwrap();
            crate::likelihood::ConditionalTerms {
                h2: self.h2,
                h3: self.h3,
                lambda2: scale.lambda2,
                lambda3: scale.lambda3,
                rho_tilde: scale.rho_tilde,
            }
        }
    }

    #[test]
    fn reduced_form_error_variance_matches_structural_composition() {
        // eta3_tilde = theta23 * eta2 + eta3, with (eta2, eta3) drawn from the
        // conditional (structural) covariance
        let spec = ModelSpec::new(3, 3);
        let mut p = constrain(&UnconstrainedParams::zeros(&spec), &spec).unwrap();
        p.theta23 = -0.661;
        p.rho12 = 0.248;
        p.rho13 = 0.352;
        p.rho23 = 0.530;
        let draws = 400_000;
        let mut rng = substream(17, 0, 9);
        let v2 = 1.0 - p.rho12 * p.rho12;
        let v3 = 1.0 - p.rho13 * p.rho13;
        let c23 = p.rho23 - p.rho12 * p.rho13;
        let l11 = v2.sqrt();
        let l21 = c23 / l11;
        let l22 = (v3 - l21 * l21).sqrt();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let z1 = draw_normal(&mut rng);
            let z2 = draw_normal(&mut rng);
            let eta2 = l11 * z1;
            let eta3 = l21 * z1 + l22 * z2;
            let composed = p.theta23 * eta2 + eta3;
            sum += composed;
            sumsq += composed * composed;
        }
        let nf = draws as f64;
        let var = sumsq / nf - (sum / nf).powi(2);
        let expected = p.theta23 * p.theta23 * v2 + 2.0 * p.theta23 * c23 + v3;
        // variance of a sample variance ~ 2 var^2 / n
        let se = (2.0 / nf).sqrt() * expected;
        assert!((var - expected).abs() < 3.0 * se, "var {var} vs {expected}");
    }

    #[test]
    fn structural_and_reduced_routes_agree_in_distribution() {
        let spec = ModelSpec::new(4, 4);
        let mut p = constrain(&UnconstrainedParams::zeros(&spec), &spec).unwrap();
        p.theta23 = 0.7;
        p.rho12 = 0.3;
        p.rho13 = -0.2;
        p.rho23 = 0.25;
        p.mu2 = vec![0.0, 0.7, 1.5];
        p.mu3 = vec![0.0, 0.6, 1.3];
        let (h2, h3) = (0.4, 0.1);
        let draws = 100_000usize;
        let cells = 16usize;
        for seed in 0..20u64 {
            // reduced route through the public oracle
            let (probs, _) = mc_cell_probability(h2, h3, &p, draws, seed).unwrap();
            // structural route drawn here
            let v2 = 1.0 - p.rho12 * p.rho12;
            let v3 = 1.0 - p.rho13 * p.rho13;
            let c23 = p.rho23 - p.rho12 * p.rho13;
            let l11 = v2.sqrt();
            let l21 = c23 / l11;
            let l22 = (v3 - l21 * l21).sqrt();
            let mut counts2 = vec![0u64; cells];
            let mut rng = substream(seed, 1, 3);
            for _ in 0..draws {
                let z1 = draw_normal(&mut rng);
                let z2 = draw_normal(&mut rng);
                let eta2 = l11 * z1;
                let eta3 = l21 * z1 + l22 * z2;
                let y2s = h2 + eta2;
                let y3s = h3 + p.theta23 * y2s + eta3;
                let j2 = threshold_level(y2s, &p.mu2);
                let j3 = threshold_level(y3s, &p.mu3);
                counts2[(j2 - 1) * 4 + (j3 - 1)] += 1;
            }
            // two-sample chi-square homogeneity over the grid
            let counts1: Vec<f64> = probs.iter().map(|&q| q * draws as f64).collect();
            let mut stat = 0.0;
            let mut df = 0usize;
            for c in 0..cells {
                let o1 = counts1[c];
                let o2 = counts2[c] as f64;
                let total = o1 + o2;
                if total < 5.0 {
                    continue;
                }
                let e = total / 2.0;
                stat += (o1 - e).powi(2) / e + (o2 - e).powi(2) / e;
                df += 1;
            }
            let pval = chisq_sf(stat, (df - 1) as u32).unwrap();
            assert!(
                pval > 0.01,
                "seed {seed}: homogeneity rejected, stat {stat}, p {pval}"
            );
        }
    }

    #[test]
    fn raising_the_recursive_effect_lifts_the_top_category_given_high_y2() {
        // Monte Carlo stochastic dominance: with everything else fixed, a
        // larger recursive coefficient raises the probability of the top
        // level of the second ordinal outcome among draws with a high first
        // propensity
        let spec = ModelSpec::new(3, 3);
        let base = constrain(&UnconstrainedParams::zeros(&spec), &spec).unwrap();
        let draws = 400_000usize;
        let top_share_given_high = |theta23: f64, seed: u64| -> (f64, f64) {
            let mut p = base.clone();
            p.theta23 = theta23;
            p.rho23 = 0.2;
            p.mu2 = vec![0.0, 1.0];
            p.mu3 = vec![0.0, 1.0];
            let v2 = 1.0 - p.rho12 * p.rho12;
            let c23 = p.rho23 - p.rho12 * p.rho13;
            let v3 = 1.0 - p.rho13 * p.rho13;
            let l11 = v2.sqrt();
            let l21 = c23 / l11;
            let l22 = (v3 - l21 * l21).sqrt();
            let mut rng = substream(seed, 0, 8);
            let (h2, h3) = (0.4, 0.1);
            let mut hits = 0usize;
            let mut high = 0usize;
            for _ in 0..draws {
                let z1 = draw_normal(&mut rng);
                let z2 = draw_normal(&mut rng);
                let eta2 = l11 * z1;
                let eta3 = l21 * z1 + l22 * z2;
                let y2s = h2 + eta2;
                let y3s = h3 + p.theta23 * y2s + eta3;
                if y2s > 1.0 {
                    high += 1;
                    if y3s > 1.0 {
                        hits += 1;
                    }
                }
            }
            let share = hits as f64 / high as f64;
            (share, (share * (1.0 - share) / high as f64).sqrt())
        };
        let (low, se_low) = top_share_given_high(0.1, 5);
        let (high, se_high) = top_share_given_high(0.8, 6);
        let se = (se_low * se_low + se_high * se_high).sqrt();
        assert!(
            high > low - 2.0 * se,
            "top-level share fell from {low} to {high} when theta23 increased"
        );
        assert!(high - low > 5.0 * se, "no detectable increase: {low} vs {high}");
    }

    #[test]
    fn joint_sample_frequencies_match_integrated_cells() {
        // the generative sampler against the closed-form conditional cells:
        // integrate the cells over the continuous outcome's density and
        // compare with empirical (y2, y3) frequencies at each distinct
        // covariate row
        use crate::likelihood::{cell_probability, cell_scale, ConditionalTerms};

        let mut spec = ModelSpec::new(3, 3);
        spec.covariates_eq1 = vec!["d".into()];
        spec.covariates_eq2 = vec!["d".into()];
        spec.covariates_eq3 = vec!["d".into()];
        let p = ParameterSet {
            gamma1: vec![0.5, 0.6],
            gamma2: vec![0.2, -0.4],
            gamma3: vec![-0.1, 0.3],
            theta12: -0.3,
            theta13: 0.25,
            theta23: -0.5,
            sigma1: 0.9,
            rho12: 0.3,
            rho13: -0.2,
            rho23: 0.4,
            mu2: vec![0.0, 0.9],
            mu3: vec![0.0, 0.8],
        };
        let mut recipes = BTreeMap::new();
        recipes.insert("d".into(), CovariateRecipe::Bernoulli { p: 0.4 });
        let cfg = SimConfig {
            n: 1_000_000,
            seed: 314,
            true_params: p.clone(),
            spec: spec.clone(),
            recipes,
            emit_latents: false,
        };
        let ds = sample_dataset(&cfg).unwrap();
        let d = ds.column("d").unwrap();
        let y2 = ds.column("y2").unwrap();
        let y3 = ds.column("y3").unwrap();

        // 96-point Gauss-Legendre over +-8 residual standard deviations
        let scale = cell_scale(&p).unwrap();
        let gl = gauss_legendre_96();
        for d_value in [0.0, 1.0] {
            let idx1 = p.gamma1[0] + p.gamma1[1] * d_value;
            let mut expected = [[0.0f64; 3]; 3];
            for &(w, t) in gl.iter() {
                let y1 = idx1 + 8.0 * p.sigma1 * t;
                let resid = y1 - idx1;
                let h2 = p.gamma2[0] + p.gamma2[1] * d_value + p.theta12 * y1
                    + p.rho12 / p.sigma1 * resid;
                let h3 = p.gamma3[0] + p.gamma3[1] * d_value + p.theta13 * y1
                    + p.rho13 / p.sigma1 * resid;
                let terms = ConditionalTerms {
                    h2,
                    h3,
                    lambda2: scale.lambda2,
                    lambda3: scale.lambda3,
                    rho_tilde: scale.rho_tilde,
                };
                let z = resid / p.sigma1;
                let density =
                    (-0.5 * z * z).exp() / (p.sigma1 * (2.0 * std::f64::consts::PI).sqrt());
                let jac = 8.0 * p.sigma1;
                for j2 in 1..=3usize {
                    for j3 in 1..=3usize {
                        expected[j2 - 1][j3 - 1] += w
                            * jac
                            * density
                            * cell_probability(&terms, &p, j2, j3).unwrap();
                    }
                }
            }
            // empirical frequencies at this covariate row
            let rows: Vec<usize> =
                (0..ds.n()).filter(|&i| d[i] == d_value).collect();
            let group_n = rows.len() as f64;
            for j2 in 1..=3usize {
                for j3 in 1..=3usize {
                    let count = rows
                        .iter()
                        .filter(|&&i| y2[i] as usize == j2 && y3[i] as usize == j3)
                        .count();
                    let observed = count as f64 / group_n;
                    let want = expected[j2 - 1][j3 - 1];
                    let se = (want * (1.0 - want) / group_n).sqrt().max(1e-9);
                    assert!(
                        (observed - want).abs() <= 3.0 * se,
                        "d={d_value}, cell ({j2},{j3}): observed {observed} vs integrated {want} (se {se})"
                    );
                }
            }
        }
    }

    // nodes/weights generated by Newton iteration on the Legendre recurrence
    fn gauss_legendre_96() -> Vec<(f64, f64)> {
        let n = 96usize;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0f64, 0.0f64);
                for j in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p2) / (j + 1) as f64;
                }
                let dp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
                let dx = p0 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let w = 2.0 / ((1.0 - x * x) * dp * dp);
                    out.push((w, x));
                    break;
                }
            }
        }
        out
    }

    #[test]
    fn recipes_match_published_shares() {
        let recipes = paper_like_recipes();
        let n = 1_000_000usize;
        let draw_col = |name: &str| -> Vec<f64> {
            let recipe = &recipes[name];
            (0..n)
                .map(|i| {
                    let mut rng = substream(424242, i as u64, 0);
                    recipe.draw(&mut rng)
                })
                .collect()
        };
        let female = draw_col("female");
        let share = female.iter().filter(|&&v| v == 1.0).count() as f64 / n as f64;
        assert!((share - 0.5039).abs() < 0.002, "female share {share}");

        let income = draw_col("income");
        let low = income.iter().filter(|&&v| v == 1.0).count() as f64 / n as f64;
        assert!((low - 0.4233).abs() < 0.002, "low income share {low}");

        let parking = draw_col("free_parking");
        let free = parking.iter().filter(|&&v| v == 1.0).count() as f64 / n as f64;
        assert!((free - 0.9334).abs() < 0.002, "free parking share {free}");
    }

    #[test]
    fn demo_outcomes_populate_all_levels_with_expected_skew() {
        let ds = sample_dataset(&demo_config(50_000, 3)).unwrap();
        let y2 = ds.column("y2").unwrap();
        let y3 = ds.column("y3").unwrap();
        let share = |col: &[f64], level: f64| {
            col.iter().filter(|&&v| v == level).count() as f64 / col.len() as f64
        };
        for level in 1..=5 {
            assert!(share(y2, level as f64) > 0.005, "y2 level {level} empty");
            assert!(share(y3, level as f64) > 0.005, "y3 level {level} empty");
        }
        // concern-style outcome: clear majority in the top two levels
        let concerned = share(y2, 4.0) + share(y2, 5.0);
        assert!(concerned > 0.55, "top-two share of y2 = {concerned}");
        // acceptance-style outcome: roughly a third in the top two levels
        let accepting = share(y3, 4.0) + share(y3, 5.0);
        assert!(
            (0.2..0.5).contains(&accepting),
            "top-two share of y3 = {accepting}"
        );
    }

    #[test]
    fn invalid_recipe_is_config_error() {
        let mut cfg = demo_config(10, 1);
        cfg.recipes.insert(
            "children".into(),
            CovariateRecipe::Categorical {
                shares: vec![0.5, 0.2],
            },
        );
        assert!(matches!(sample_dataset(&cfg), Err(Error::Config(_))));
        let mut cfg = demo_config(10, 1);
        cfg.recipes.remove("female");
        assert!(matches!(sample_dataset(&cfg), Err(Error::Config(_))));
    }
}
