//! Exact log-likelihood of the recursive trivariate system: the continuous
//! outcome contributes a normal density term, the two ordinal outcomes
//! contribute a bivariate-normal rectangle probability conditional on the
//! continuous outcome, with the reduced-form normalizers folding the
//! recursive coefficient and the error correlations into a single
//! correlation for the cell.

use ndarray::Array1;
use rayon::prelude::*;

use crate::dist::BvnCdf;
use crate::error::{Error, Result};
use crate::model::{
    constrain, linear_index, prepare, Dataset, ModelSpec, ParameterSet, Prepared,
    UnconstrainedParams,
};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
// Cell probabilities are floored here before taking logs so extreme
// parameter trials keep the line search finite.
const PROB_FLOOR: f64 = 1e-300;
// Central-difference step scale for the gradient; small enough that the
// truncation term stays below the roundoff noise of the summed likelihood.
const FD_STEP: f64 = 2.5e-6;
// Fixed row-block size; the parallel reduction sums whole blocks in order,
// so totals are bit-identical for any worker count.
const ROW_CHUNK: usize = 4096;

/// Auxiliary quantities of the conditional bivariate ordered-probit form:
/// shifted means for both ordinal propensities and the normalizers that map
/// the reduced-form errors to a standard bivariate normal.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalTerms {
    pub h2: f64,
    pub h3: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub rho_tilde: f64,
}

/// The parameter-only part of [`ConditionalTerms`]; constant across rows.
#[derive(Debug, Clone, Copy)]
pub struct CellScale {
    pub lambda2: f64,
    pub lambda3: f64,
    pub rho_tilde: f64,
}

/// Normalizers for the reduced-form errors: lambda2 scales the first ordinal
/// propensity, lambda3 the second (whose reduced-form error folds in the
/// recursive coefficient), rho_tilde is the correlation between the two.
pub fn cell_scale(p: &ParameterSet) -> Result<CellScale> {
    let one_m_r12sq = 1.0 - p.rho12 * p.rho12;
    let cov23 = p.rho23 - p.rho12 * p.rho13;
    let radicand = p.theta23 * p.theta23 * one_m_r12sq + 2.0 * p.theta23 * cov23
        + (1.0 - p.rho13 * p.rho13);
    if !(one_m_r12sq > 0.0) || !(radicand > 0.0) {
        return Err(Error::Parameter(
            "error correlations do not admit a proper reduced form (non positive definite)".into(),
        ));
    }
    let lambda2 = 1.0 / one_m_r12sq.sqrt();
    let lambda3 = 1.0 / radicand.sqrt();
    let rho_tilde = lambda2 * lambda3 * (p.theta23 * one_m_r12sq + cov23);
    Ok(CellScale {
        lambda2,
        lambda3,
        rho_tilde,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conditional shifted means and normalizers for one observation, given the
/// covariate rows of the three equations and the continuous outcome.
pub fn conditional_terms(
    p: &ParameterSet,
    w1: &[f64],
    w2: &[f64],
    w3: &[f64],
    y1: f64,
) -> Result<ConditionalTerms> {
    if w1.len() != p.gamma1.len() || w2.len() != p.gamma2.len() || w3.len() != p.gamma3.len() {
        return Err(Error::Spec(format!(
            "covariate row lengths ({}, {}, {}) do not match coefficient lengths ({}, {}, {})",
            w1.len(),
            w2.len(),
            w3.len(),
            p.gamma1.len(),
            p.gamma2.len(),
            p.gamma3.len()
        )));
    }
    let scale = cell_scale(p)?;
    let resid = y1 - dot(w1, &p.gamma1);
    Ok(ConditionalTerms {
        h2: dot(w2, &p.gamma2) + p.theta12 * y1 + p.rho12 / p.sigma1 * resid,
        h3: dot(w3, &p.gamma3) + p.theta13 * y1 + p.rho13 / p.sigma1 * resid,
        lambda2: scale.lambda2,
        lambda3: scale.lambda3,
        rho_tilde: scale.rho_tilde,
    })
}

// Extended threshold vector with the -inf / +inf sentinels for the extreme
// categories: ext[j-1] and ext[j] bracket level j (1-based).
fn extend_thresholds(mu: &[f64]) -> Vec<f64> {
    let mut ext = Vec::with_capacity(mu.len() + 2);
    ext.push(f64::NEG_INFINITY);
    ext.extend_from_slice(mu);
    ext.push(f64::INFINITY);
    ext
}

// Reflect an axis when the cell sits in its upper half, so the four corner
// values stay commensurate with the cell itself; without this, tail cells
// come out as the difference of near-equal large CDF values and the log
// likelihood inherits the cancellation noise.
#[inline]
fn should_flip(lo: f64, hi: f64) -> bool {
    if lo == f64::NEG_INFINITY {
        false
    } else if hi == f64::INFINITY {
        true
    } else {
        lo + hi > 0.0
    }
}

#[inline]
fn rectangle(bvn: &BvnCdf, a_lo: f64, a_hi: f64, b_lo: f64, b_hi: f64) -> f64 {
    let fx = should_flip(a_lo, a_hi);
    let fy = should_flip(b_lo, b_hi);
    let (a_lo, a_hi) = if fx { (-a_hi, -a_lo) } else { (a_lo, a_hi) };
    let (b_lo, b_hi) = if fy { (-b_hi, -b_lo) } else { (b_lo, b_hi) };
    let p = if fx != fy {
        bvn.eval_mirror(a_hi, b_hi) - bvn.eval_mirror(a_lo, b_hi)
            - bvn.eval_mirror(a_hi, b_lo)
            + bvn.eval_mirror(a_lo, b_lo)
    } else {
        bvn.eval(a_hi, b_hi) - bvn.eval(a_lo, b_hi) - bvn.eval(a_hi, b_lo)
            + bvn.eval(a_lo, b_lo)
    };
    p.clamp(0.0, 1.0)
}

/// P(y2 = j2, y3 = j3 | y1) from the four-corner decomposition, with
/// sentinel infinities at the extreme categories.
pub fn cell_probability(
    terms: &ConditionalTerms,
    p: &ParameterSet,
    j2: usize,
    j3: usize,
) -> Result<f64> {
    let (j2_max, j3_max) = (p.mu2.len() + 1, p.mu3.len() + 1);
    if j2 < 1 || j2 > j2_max || j3 < 1 || j3 > j3_max {
        return Err(Error::Domain(format!(
            "ordinal level out of range: ({j2}, {j3}) with {j2_max} and {j3_max} levels"
        )));
    }
    let bvn = BvnCdf::new(terms.rho_tilde)?;
    let ext2 = extend_thresholds(&p.mu2);
    let ext3 = extend_thresholds(&p.mu3);
    let b_shift = terms.h3 + p.theta23 * terms.h2;
    let a_lo = (ext2[j2 - 1] - terms.h2) * terms.lambda2;
    let a_hi = (ext2[j2] - terms.h2) * terms.lambda2;
    let b_lo = (ext3[j3 - 1] - b_shift) * terms.lambda3;
    let b_hi = (ext3[j3] - b_shift) * terms.lambda3;
    Ok(rectangle(&bvn, a_lo, a_hi, b_lo, b_hi))
}

/// One observation: outcomes plus the covariate rows of the three equations.
#[derive(Debug, Clone, Copy)]
pub struct ObsRow<'a> {
    pub y1: f64,
    pub y2: usize,
    pub y3: usize,
    pub w1: &'a [f64],
    pub w2: &'a [f64],
    pub w3: &'a [f64],
}

/// Per-observation log-likelihood: log cell probability plus the log of the
/// scaled normal density of the continuous outcome.
pub fn obs_loglik(p: &ParameterSet, row: &ObsRow) -> Result<f64> {
    let terms = conditional_terms(p, row.w1, row.w2, row.w3, row.y1)?;
    let cell = cell_probability(&terms, p, row.y2, row.y3)?;
    let z = (row.y1 - dot(row.w1, &p.gamma1)) / p.sigma1;
    let marginal = -p.sigma1.ln() - LN_SQRT_2PI - 0.5 * z * z;
    Ok(cell.max(PROB_FLOOR).ln() + marginal)
}

/// Evaluation engine holding the prepared design so repeated evaluations
/// (optimizer, gradients, Hessians) skip re-resolving columns.
#[derive(Debug, Clone)]
pub struct LoglikFn {
    spec: ModelSpec,
    prep: Prepared,
}

impl LoglikFn {
    pub fn new(data: &Dataset, spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            prep: prepare(data, spec)?,
        })
    }

    pub fn from_prepared(prep: Prepared, spec: &ModelSpec) -> Self {
        Self {
            spec: spec.clone(),
            prep,
        }
    }

    pub fn n(&self) -> usize {
        self.prep.n()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn prepared(&self) -> &Prepared {
        &self.prep
    }

    /// Total log-likelihood at a constrained parameter set. Rows are summed
    /// in fixed-size blocks so the result does not depend on worker count.
    pub fn sum_loglik(&self, p: &ParameterSet) -> Result<f64> {
        p.validate(&self.spec)?;
        let scale = cell_scale(p)?;
        let bvn = BvnCdf::new(scale.rho_tilde)?;
        let xb1 = linear_index(&self.prep.design.x1, &p.gamma1);
        let xb2 = linear_index(&self.prep.design.x2, &p.gamma2);
        let xb3 = linear_index(&self.prep.design.x3, &p.gamma3);
        let ext2 = extend_thresholds(&p.mu2);
        let ext3 = extend_thresholds(&p.mu3);
        let n = self.n();
        let ln_sigma = p.sigma1.ln();
        let inv_sigma = 1.0 / p.sigma1;
        let r12s = p.rho12 * inv_sigma;
        let r13s = p.rho13 * inv_sigma;

        let block = |range: std::ops::Range<usize>| -> f64 {
            let mut acc = 0.0;
            for i in range {
                let y1 = self.prep.y1[i];
                let resid = y1 - xb1[i];
                let h2 = xb2[i] + p.theta12 * y1 + r12s * resid;
                let h3 = xb3[i] + p.theta13 * y1 + r13s * resid;
                let b_shift = h3 + p.theta23 * h2;
                let j2 = self.prep.y2[i];
                let j3 = self.prep.y3[i];
                let a_lo = (ext2[j2 - 1] - h2) * scale.lambda2;
                let a_hi = (ext2[j2] - h2) * scale.lambda2;
                let b_lo = (ext3[j3 - 1] - b_shift) * scale.lambda3;
                let b_hi = (ext3[j3] - b_shift) * scale.lambda3;
                let cell = rectangle(&bvn, a_lo, a_hi, b_lo, b_hi);
                let z = resid * inv_sigma;
                acc += cell.max(PROB_FLOOR).ln() - ln_sigma - LN_SQRT_2PI - 0.5 * z * z;
            }
            acc
        };

        let starts: Vec<usize> = (0..n).step_by(ROW_CHUNK).collect();
        let partials: Vec<f64> = starts
            .par_iter()
            .map(|&s| block(s..(s + ROW_CHUNK).min(n)))
            .collect();
        Ok(partials.iter().sum())
    }

    /// Total log-likelihood at unconstrained coordinates.
    pub fn sum_loglik_u(&self, u: &UnconstrainedParams) -> Result<f64> {
        self.sum_loglik(&constrain(u, &self.spec)?)
    }

    /// Central-difference gradient of the total log-likelihood with respect
    /// to the unconstrained coordinates.
    pub fn gradient_u(&self, u: &UnconstrainedParams) -> Result<Vec<f64>> {
        let dim = u.len();
        if dim != self.spec.param_count() {
            return Err(Error::Spec(format!(
                "gradient requested at a vector of dimension {dim}, spec implies {}",
                self.spec.param_count()
            )));
        }
        (0..dim)
            .map(|i| {
                let h = FD_STEP * u.as_slice()[i].abs().max(1.0);
                let mut up = u.clone();
                up.0[i] += h;
                let mut dn = u.clone();
                dn.0[i] -= h;
                Ok((self.sum_loglik_u(&up)? - self.sum_loglik_u(&dn)?) / (2.0 * h))
            })
            .collect()
    }
}

/// Total log-likelihood over the dataset (fixed-order summation).
pub fn total_loglik(p: &ParameterSet, data: &Dataset, spec: &ModelSpec) -> Result<f64> {
    LoglikFn::new(data, spec)?.sum_loglik(p)
}

/// Gradient of `total_loglik` composed with `constrain`, by central finite
/// differences on the unconstrained scale.
pub fn loglik_gradient(
    u: &UnconstrainedParams,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    LoglikFn::new(data, spec)?.gradient_u(u)
}

/// Full grid of conditional cell probabilities for one observation.
pub fn cell_grid(terms: &ConditionalTerms, p: &ParameterSet) -> Result<Array1<f64>> {
    let (j2_max, j3_max) = (p.mu2.len() + 1, p.mu3.len() + 1);
    let mut out = Array1::zeros(j2_max * j3_max);
    for j2 in 1..=j2_max {
        for j3 in 1..=j3_max {
            out[(j2 - 1) * j3_max + (j3 - 1)] = cell_probability(terms, p, j2, j3)?;
        }
    }
    Ok(out)
}
