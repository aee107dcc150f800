//! Post-estimation machinery: average marginal effects for the ordinal
//! equations, likelihood-ratio tests, and the fit statistics block
//! (likelihood-ratio index, per-observation AIC and BIC).

use crate::dist::{chisq_sf, std_normal_cdf, std_normal_pdf};
use crate::error::{Error, Result};
use crate::estimate::EstimationResult;
use crate::model::{linear_index, prepare, Dataset, ModelSpec};

/// Fit summary of one estimated model against the constants-only baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct FitStats {
    pub loglik: f64,
    pub n: usize,
    pub k_free: usize,
    pub rho_c_sq: f64,
    pub aic_per_obs: f64,
    pub bic_per_obs: f64,
}

/// Fit statistics from raw ingredients.
pub fn fit_stats_from_parts(
    loglik: f64,
    n: usize,
    k_free: usize,
    loglik_constants_only: f64,
) -> Result<FitStats> {
    if n == 0 {
        return Err(Error::Domain("fit statistics need n >= 1".into()));
    }
    let nf = n as f64;
    let k = k_free as f64;
    Ok(FitStats {
        loglik,
        n,
        k_free,
        rho_c_sq: 1.0 - loglik / loglik_constants_only,
        aic_per_obs: (2.0 * k - 2.0 * loglik) / nf,
        bic_per_obs: (k * nf.ln() - 2.0 * loglik) / nf,
    })
}

/// Fit statistics for an estimation result.
pub fn fit_stats(
    result: &EstimationResult,
    data: &Dataset,
    loglik_constants_only: f64,
) -> Result<FitStats> {
    fit_stats_from_parts(result.loglik, data.n(), result.k_free, loglik_constants_only)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrTest {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// Likelihood-ratio test of a restriction: -2 (restricted - unrestricted),
/// compared against the chi-square tail with `df` degrees of freedom.
pub fn lr_test(loglik_unrestricted: f64, loglik_restricted: f64, df: u32) -> Result<LrTest> {
    let statistic = -2.0 * (loglik_restricted - loglik_unrestricted);
    if statistic < -1e-6 {
        return Err(Error::Domain(format!(
            "negative likelihood-ratio statistic ({statistic}); the arguments are swapped"
        )));
    }
    let statistic = statistic.max(0.0);
    Ok(LrTest {
        statistic,
        df,
        p_value: chisq_sf(statistic, df)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableKind {
    Continuous,
    Dummy,
}

/// Average marginal effects of one variable on every level of one ordinal
/// equation.
#[derive(Debug, Clone)]
pub struct MarginalEffect {
    pub variable: String,
    pub equation: u8,
    pub kind: VariableKind,
    pub effects: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MarginalEffectsTable {
    pub rows: Vec<MarginalEffect>,
}

// Stacked single-equation view used by the marginal-effect formulas under
// the zero-error-correlation convention: regressor values per row and the
// matching coefficients, with the endogenous regressors included (the
// continuous outcome, and for the second ordinal equation the structural
// prediction of the first ordinal propensity).
struct StackedEquation {
    values: Vec<Vec<f64>>, // column-major, one vec per regressor
    kappa: Vec<f64>,
    names: Vec<String>,
    mu: Vec<f64>,
    levels: usize,
}

fn stacked_equation(
    result: &EstimationResult,
    data: &Dataset,
    spec: &ModelSpec,
    equation: u8,
) -> Result<StackedEquation> {
    let prep = prepare(data, spec)?;
    let p = &result.params;
    let (y1_name, y2_name, _) = data.outcome_cols()?;
    let n = prep.n();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut kappa = Vec::new();
    let mut names = Vec::new();

    let (covs, constant, gamma, mu, levels) = match equation {
        2 => (
            &spec.covariates_eq2,
            spec.include_constant_eq2,
            &p.gamma2,
            p.mu2.clone(),
            spec.j2,
        ),
        3 => (
            &spec.covariates_eq3,
            spec.include_constant_eq3,
            &p.gamma3,
            p.mu3.clone(),
            spec.j3,
        ),
        q => {
            return Err(Error::Spec(format!(
                "marginal effects are defined for equations 2 and 3, got {q}"
            )))
        }
    };
    let mut gi = 0;
    if constant {
        values.push(vec![1.0; n]);
        kappa.push(gamma[gi]);
        names.push("constant".to_string());
        gi += 1;
    }
    for c in covs {
        values.push(data.column(c).unwrap().to_vec());
        kappa.push(gamma[gi]);
        names.push(c.clone());
        gi += 1;
    }
    // endogenous regressors enter through their stacked coefficients
    values.push(prep.y1.clone());
    names.push(y1_name.to_string());
    kappa.push(if equation == 2 { p.theta12 } else { p.theta13 });
    if equation == 3 {
        // structural prediction of the first ordinal propensity
        let xb2 = linear_index(&prep.design.x2, &p.gamma2);
        let y2_hat: Vec<f64> = (0..n).map(|i| xb2[i] + p.theta12 * prep.y1[i]).collect();
        values.push(y2_hat);
        names.push(y2_name.to_string());
        kappa.push(p.theta23);
    }
    Ok(StackedEquation {
        values,
        kappa,
        names,
        mu,
        levels,
    })
}

fn extended(mu: &[f64]) -> Vec<f64> {
    let mut ext = Vec::with_capacity(mu.len() + 2);
    ext.push(f64::NEG_INFINITY);
    ext.extend_from_slice(mu);
    ext.push(f64::INFINITY);
    ext
}

#[inline]
fn pdf0(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        std_normal_pdf(x)
    }
}

/// P(level j) for a univariate ordered-probit index.
pub fn level_probability(mu: &[f64], index: f64, level: usize) -> f64 {
    let ext = extended(mu);
    std_normal_cdf(ext[level] - index) - std_normal_cdf(ext[level - 1] - index)
}

/// Average marginal effects of a continuous variable on each ordinal level
/// of equation `q`, per-row density differences averaged over the sample.
pub fn marginal_effect_continuous(
    result: &EstimationResult,
    data: &Dataset,
    spec: &ModelSpec,
    variable: &str,
    q: u8,
) -> Result<Vec<f64>> {
    let eq = stacked_equation(result, data, spec, q)?;
    let vi = eq
        .names
        .iter()
        .position(|n| n == variable)
        .ok_or_else(|| {
            Error::Spec(format!(
                "variable `{variable}` does not enter equation {q} (regressors: {:?})",
                eq.names
            ))
        })?;
    let n = eq.values[0].len();
    let ext = extended(&eq.mu);
    let kappa_v = eq.kappa[vi];
    let mut effects = vec![0.0; eq.levels];
    for i in 0..n {
        let index: f64 = eq
            .values
            .iter()
            .zip(&eq.kappa)
            .map(|(col, k)| col[i] * k)
            .sum();
        for j in 1..=eq.levels {
            effects[j - 1] += (pdf0(ext[j - 1] - index) - pdf0(ext[j] - index)) * kappa_v;
        }
    }
    for e in &mut effects {
        *e /= n as f64;
    }
    Ok(effects)
}

/// Marginal effect of a 0/1 variable on each ordinal level of equation `q`:
/// the discrete probability change from 0 to 1 with every other regressor
/// held at its sample mean.
pub fn marginal_effect_dummy(
    result: &EstimationResult,
    data: &Dataset,
    spec: &ModelSpec,
    variable: &str,
    q: u8,
) -> Result<Vec<f64>> {
    let eq = stacked_equation(result, data, spec, q)?;
    let vi = eq
        .names
        .iter()
        .position(|n| n == variable)
        .ok_or_else(|| {
            Error::Spec(format!(
                "variable `{variable}` does not enter equation {q} (regressors: {:?})",
                eq.names
            ))
        })?;
    if !eq.values[vi].iter().all(|&v| v == 0.0 || v == 1.0) {
        return Err(Error::Data(format!(
            "variable `{variable}` is not 0/1-valued; use the continuous marginal effect"
        )));
    }
    let n = eq.values[0].len() as f64;
    // index at sample means with the dummy itself at zero
    let mut base = 0.0;
    for (idx, (col, k)) in eq.values.iter().zip(&eq.kappa).enumerate() {
        if idx != vi {
            base += col.iter().sum::<f64>() / n * k;
        }
    }
    let with = base + eq.kappa[vi];
    let effects = (1..=eq.levels)
        .map(|j| level_probability(&eq.mu, with, j) - level_probability(&eq.mu, base, j))
        .collect();
    Ok(effects)
}

/// Marginal effects of every regressor of both ordinal equations, tagging
/// 0/1 data columns as dummies (the probability-difference form) and the
/// rest as continuous (the density-difference form).
pub fn marginal_effects_table(
    result: &EstimationResult,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<MarginalEffectsTable> {
    let mut rows = Vec::new();
    for q in [2u8, 3u8] {
        let eq = stacked_equation(result, data, spec, q)?;
        for (vi, name) in eq.names.iter().enumerate() {
            if name == "constant" {
                continue;
            }
            let is_dummy = eq.values[vi].iter().all(|&v| v == 0.0 || v == 1.0);
            let (kind, effects) = if is_dummy {
                (
                    VariableKind::Dummy,
                    marginal_effect_dummy(result, data, spec, name, q)?,
                )
            } else {
                (
                    VariableKind::Continuous,
                    marginal_effect_continuous(result, data, spec, name, q)?,
                )
            };
            rows.push(MarginalEffect {
                variable: name.clone(),
                equation: q,
                kind,
                effects,
            });
        }
    }
    Ok(MarginalEffectsTable { rows })
}
