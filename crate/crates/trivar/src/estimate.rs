//! Maximum-likelihood estimation of the trivariate system: data-driven
//! starting values, quasi-Newton ascent with optional multi-start, standard
//! errors from the inverse observed information mapped to the constrained
//! scale by the delta method, and the three named restriction presets.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::dist::std_normal_cdf;
use crate::dist::std_normal_quantile;
use crate::error::{Error, Result};
use crate::inference::FitStats;
use crate::likelihood::LoglikFn;
use crate::linalg;
use crate::model::{
    constrain, Dataset, ModelSpec, ParameterSet, UnconstrainedParams,
};
use crate::optim::{self, fd_gradient, Objective, OptimOptions};
use crate::simulate::{open_unit, substream};

// second-difference step scale, fourth root of machine epsilon
const HESS_STEP: f64 = 1.220_703_125e-4;
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct EstimationOptions {
    pub max_iterations: usize,
    /// Euclidean norm of the per-observation (mean) log-likelihood gradient
    /// on the unconstrained scale.
    pub gradient_tolerance: f64,
    pub multistart_count: usize,
    pub seed: u64,
    pub start: Option<UnconstrainedParams>,
    pub compute_std_errors: bool,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            multistart_count: 1,
            seed: 0,
            start: None,
            compute_std_errors: true,
        }
    }
}

/// Named parameter restrictions mirroring the model-comparison exercises:
/// zero error correlations, zero recursive effects, or the constants-only
/// baseline (no covariates, independent equations).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    Independent,
    Nonrecursive,
    ConstantsOnly,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub params: ParameterSet,
    /// Standard errors on the constrained scale, aligned with
    /// `spec.param_names()`; NaN entries mark pinned parameters.
    pub std_errors: Option<Vec<f64>>,
    pub t_stats: Option<Vec<f64>>,
    /// Total log-likelihood at the optimum.
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub best_start_index: usize,
    /// Gradient norm (mean scale) at the reported optimum.
    pub gradient_norm: f64,
    /// Number of free (optimized) parameters.
    pub k_free: usize,
    /// The spec the parameters refer to (restrictions may drop covariates).
    pub spec: ModelSpec,
    pub fit: Option<FitStats>,
}

// Mask over the unconstrained vector; `Some(v)` pins a coordinate at v.
#[derive(Debug, Clone)]
struct Pinning {
    fixed: Vec<Option<f64>>,
}

impl Pinning {
    fn none(dim: usize) -> Self {
        Self {
            fixed: vec![None; dim],
        }
    }

    fn free_count(&self) -> usize {
        self.fixed.iter().filter(|f| f.is_none()).count()
    }

    fn to_full(&self, free: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.fixed.len());
        let mut it = free.iter();
        for f in &self.fixed {
            match f {
                Some(v) => out.push(*v),
                None => out.push(*it.next().expect("free vector too short")),
            }
        }
        out
    }

    fn free_subset(&self, full: &[f64]) -> Vec<f64> {
        full.iter()
            .zip(&self.fixed)
            .filter_map(|(v, f)| if f.is_none() { Some(*v) } else { None })
            .collect()
    }

    fn is_pinned(&self, idx: usize) -> bool {
        self.fixed[idx].is_some()
    }
}

struct NegMeanLoglik<'a> {
    ll: &'a LoglikFn,
    pins: &'a Pinning,
    inv_n: f64,
}

impl NegMeanLoglik<'_> {
    fn value_full(&self, full: &[f64]) -> f64 {
        let u = UnconstrainedParams(full.to_vec());
        match self.ll.sum_loglik_u(&u) {
            Ok(v) if v.is_finite() => -self.inv_n * v,
            _ => f64::INFINITY,
        }
    }
}

impl Objective for NegMeanLoglik<'_> {
    fn dim(&self) -> usize {
        self.pins.free_count()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_full(&self.pins.to_full(x))
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        fd_gradient(|z| self.value(z), x, optim::FD_REL_STEP)
    }
}

fn column_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma).powi(2);
        vb += (b[i] - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return if va == 0.0 && vb == 0.0 { 1.0 } else { 0.0 };
    }
    cov / (va.sqrt() * vb.sqrt())
}

// Names the offending columns when X'X is singular.
fn diagnose_collinearity(x: &Array2<f64>, names: &[String], eq: usize) -> Error {
    let k = x.ncols();
    let cols: Vec<Vec<f64>> = (0..k).map(|j| x.column(j).to_vec()).collect();
    for j in 0..k {
        let first = cols[j][0];
        if names[j] != "constant" && cols[j].iter().all(|&v| v == first) {
            return Error::Estimation(format!(
                "equation {eq}: column `{}` is constant and collinear with the intercept",
                names[j]
            ));
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            if column_correlation(&cols[i], &cols[j]).abs() > 1.0 - 1e-10 {
                return Error::Estimation(format!(
                    "equation {eq}: columns `{}` and `{}` are collinear",
                    names[i], names[j]
                ));
            }
        }
    }
    Error::Estimation(format!(
        "equation {eq}: design matrix is singular (columns {:?})",
        names
    ))
}

fn design_names(covariates: &[String], constant: bool) -> Vec<String> {
    let mut names = Vec::new();
    if constant {
        names.push("constant".to_string());
    }
    names.extend(covariates.iter().cloned());
    names
}

fn ols(x: &Array2<f64>, y: &[f64], names: &[String], eq: usize) -> Result<(Vec<f64>, f64)> {
    let xtx = x.t().dot(x);
    let l = linalg::cholesky(&xtx).ok_or_else(|| diagnose_collinearity(x, names, eq))?;
    let yv = Array1::from(y.to_vec());
    let xty = x.t().dot(&yv);
    let beta = linalg::chol_solve(&l, &xty);
    let fitted = x.dot(&beta);
    let n = y.len() as f64;
    let ssr: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let sigma = (ssr / n).sqrt().max(1e-6);
    Ok((beta.to_vec(), sigma))
}

// Univariate ordered-probit fit used only to seed the joint optimizer.
struct OrderedProbit<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    levels: usize,
}

impl OrderedProbit<'_> {
    fn unpack<'b>(&self, v: &'b [f64]) -> (&'b [f64], Vec<f64>) {
        let k = self.x.ncols();
        let mut mu = Vec::with_capacity(self.levels - 1);
        mu.push(0.0);
        for i in 0..self.levels - 2 {
            let prev = *mu.last().unwrap();
            mu.push(prev + v[k + i].exp());
        }
        (&v[..k], mu)
    }
}

impl Objective for OrderedProbit<'_> {
    fn dim(&self) -> usize {
        self.x.ncols() + self.levels - 2
    }

    fn value(&self, v: &[f64]) -> f64 {
        let (beta, mu) = self.unpack(v);
        let xb = self.x.dot(&Array1::from(beta.to_vec()));
        let mut ll = 0.0;
        for (i, &yi) in self.y.iter().enumerate() {
            let hi = if yi == self.levels {
                1.0
            } else {
                std_normal_cdf(mu[yi - 1] - xb[i])
            };
            let lo = if yi == 1 {
                0.0
            } else {
                std_normal_cdf(mu[yi - 2] - xb[i])
            };
            ll += (hi - lo).max(PROB_FLOOR).ln();
        }
        -ll / self.y.len() as f64
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        fd_gradient(|z| self.value(z), v, optim::FD_REL_STEP)
    }
}

fn category_shares(y: &[usize], levels: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; levels];
    for &v in y {
        counts[v - 1] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Estimation(format!(
            "ordinal category {} is never observed; estimation needs every category at least once",
            missing + 1
        )));
    }
    Ok(counts.iter().map(|&c| c as f64 / y.len() as f64).collect())
}

fn ordered_probit_start(
    x: &Array2<f64>,
    y: &[usize],
    levels: usize,
    has_constant: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let shares = category_shares(y, levels)?;
    let mut cum = 0.0;
    let mut quantiles = Vec::with_capacity(levels - 1);
    for share in shares.iter().take(levels - 1) {
        cum += share;
        quantiles.push(std_normal_quantile(cum.clamp(1e-9, 1.0 - 1e-9))?);
    }
    // identification: first threshold 0, location absorbed by the constant
    let constant0 = -quantiles[0];
    let mut v = vec![0.0; x.ncols()];
    if has_constant {
        v[0] = constant0;
    }
    for w in quantiles.windows(2) {
        v.push((w[1] - w[0]).max(1e-4).ln());
    }
    let probit = OrderedProbit { x, y, levels };
    let fit = optim::minimize(
        &probit,
        &v,
        &OptimOptions {
            max_iterations: 200,
            grad_tolerance: 1e-5,
            ..OptimOptions::default()
        },
    );
    let (beta, mu) = probit.unpack(&fit.x);
    Ok((beta.to_vec(), mu))
}

/// Data-driven starting point: OLS for the continuous equation, independent
/// univariate ordered-probit fits for the ordinal equations, recursive
/// effects and error correlations at zero.
pub fn default_start(data: &Dataset, spec: &ModelSpec) -> Result<UnconstrainedParams> {
    let ll = LoglikFn::new(data, spec)?;
    default_start_prepared(&ll, spec)
}

fn default_start_prepared(ll: &LoglikFn, spec: &ModelSpec) -> Result<UnconstrainedParams> {
    let prep = ll.prepared();
    let names1 = design_names(&spec.covariates_eq1, spec.include_constant_eq1);
    let (gamma1, sigma1) = ols(&prep.design.x1, &prep.y1, &names1, 1)?;
    let (gamma2, mu2) =
        ordered_probit_start(&prep.design.x2, &prep.y2, spec.j2, spec.include_constant_eq2)?;
    let (gamma3, mu3) =
        ordered_probit_start(&prep.design.x3, &prep.y3, spec.j3, spec.include_constant_eq3)?;
    let p = ParameterSet {
        gamma1,
        gamma2,
        gamma3,
        theta12: 0.0,
        theta13: 0.0,
        theta23: 0.0,
        sigma1,
        rho12: 0.0,
        rho13: 0.0,
        rho23: 0.0,
        mu2,
        mu3,
    };
    crate::model::unconstrain(&p, spec)
}

fn pinning_for(spec: &ModelSpec, restriction: Option<Restriction>) -> Pinning {
    let dim = spec.param_count();
    let mut pins = Pinning::none(dim);
    let base = spec.k_eq1() + spec.k_eq2() + spec.k_eq3();
    match restriction {
        None => {}
        Some(Restriction::Independent) => {
            for i in 0..3 {
                pins.fixed[base + 4 + i] = Some(0.0); // correlation angles
            }
        }
        Some(Restriction::Nonrecursive) => {
            for i in 0..3 {
                pins.fixed[base + i] = Some(0.0); // structural effects
            }
        }
        Some(Restriction::ConstantsOnly) => {
            for i in 0..3 {
                pins.fixed[base + i] = Some(0.0);
                pins.fixed[base + 4 + i] = Some(0.0);
            }
        }
    }
    pins
}

/// Constrained parameter values in `spec.param_names()` order.
pub fn constrained_vector(p: &ParameterSet) -> Vec<f64> {
    let mut v = Vec::new();
    v.extend_from_slice(&p.gamma1);
    v.extend_from_slice(&p.gamma2);
    v.extend_from_slice(&p.gamma3);
    v.push(p.theta12);
    v.push(p.theta13);
    v.push(p.theta23);
    v.push(p.sigma1);
    v.push(p.rho12);
    v.push(p.rho13);
    v.push(p.rho23);
    v.extend_from_slice(&p.mu2[1..]);
    v.extend_from_slice(&p.mu3[1..]);
    v
}


// Jacobian of the constrained parameter vector with respect to the free
// unconstrained coordinates, by central differences of the constrain map.
fn constrain_jacobian(
    spec: &ModelSpec,
    pins: &Pinning,
    free: &[f64],
) -> Result<Array2<f64>> {
    let rows = spec.param_count();
    let cols = free.len();
    let mut jac = Array2::<f64>::zeros((rows, cols));
    for j in 0..cols {
        let h = 1e-7 * free[j].abs().max(1.0);
        let mut up = free.to_vec();
        up[j] += h;
        let mut dn = free.to_vec();
        dn[j] -= h;
        let cu = constrained_vector(&constrain(
            &UnconstrainedParams(pins.to_full(&up)),
            spec,
        )?);
        let cd = constrained_vector(&constrain(
            &UnconstrainedParams(pins.to_full(&dn)),
            spec,
        )?);
        for i in 0..rows {
            jac[[i, j]] = (cu[i] - cd[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn estimate_with_pins(
    data: &Dataset,
    spec: &ModelSpec,
    options: &EstimationOptions,
    pins: &Pinning,
) -> Result<EstimationResult> {
    spec.validate()?;
    let ll = LoglikFn::new(data, spec)?;
    let n = ll.n();
    let k_free = pins.free_count();
    if n <= spec.param_count() {
        return Err(Error::Estimation(format!(
            "need more observations ({n}) than parameters ({})",
            spec.param_count()
        )));
    }
    // every ordinal category must be observed
    category_shares(&ll.prepared().y2, spec.j2)?;
    category_shares(&ll.prepared().y3, spec.j3)?;

    let start_full = match &options.start {
        Some(u) => {
            if u.len() != spec.param_count() {
                return Err(Error::Spec(format!(
                    "explicit start has dimension {}, spec implies {}",
                    u.len(),
                    spec.param_count()
                )));
            }
            u.clone()
        }
        None => default_start_prepared(&ll, spec)?,
    };
    let base_free = pins.free_subset(start_full.as_slice());

    let obj = NegMeanLoglik {
        ll: &ll,
        pins,
        inv_n: 1.0 / n as f64,
    };
    // diagonal curvature at the start point as a preconditioner; the
    // coordinate scales (coefficients vs. log-scale vs. angles) differ by
    // orders of magnitude and unscaled BFGS crawls along the valley
    let h0_diag = {
        let f0 = obj.value(&base_free);
        let diag: Vec<f64> = (0..base_free.len())
            .into_par_iter()
            .map(|i| {
                let h = HESS_STEP * base_free[i].abs().max(1.0);
                let mut up = base_free.clone();
                up[i] += h;
                let mut dn = base_free.clone();
                dn[i] -= h;
                let second = (obj.value(&up) - 2.0 * f0 + obj.value(&dn)) / (h * h);
                if second.is_finite() && second > 1e-8 {
                    1.0 / second
                } else {
                    1.0
                }
            })
            .collect();
        diag
    };
    let opt_opts = OptimOptions {
        max_iterations: options.max_iterations,
        grad_tolerance: options.gradient_tolerance,
        h0_diag: Some(h0_diag),
        trace: false,
    };

    let starts: Vec<Vec<f64>> = (0..options.multistart_count.max(1))
        .map(|s| {
            if s == 0 {
                base_free.clone()
            } else {
                let mut rng = substream(options.seed, s as u64, 11);
                base_free
                    .iter()
                    .map(|v| v + (open_unit(&mut rng) - 0.5))
                    .collect()
            }
        })
        .collect();

    let runs: Vec<(usize, optim::OptimResult)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, s)| (idx, optim::minimize(&obj, s, &opt_opts)))
        .collect();
    let (best_start_index, best) = runs
        .into_iter()
        .min_by(|(ia, ra), (ib, rb)| {
            ra.value
                .partial_cmp(&rb.value)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .expect("at least one start");

    let full_u = UnconstrainedParams(pins.to_full(&best.x));
    let params = constrain(&full_u, spec)?;
    let loglik = ll.sum_loglik(&params)?;

    let (std_errors, t_stats) = if options.compute_std_errors {
        match standard_errors(&obj, spec, pins, &best.x, n) {
            Some(se) => {
                let values = constrained_vector(&params);
                let t: Vec<f64> = values
                    .iter()
                    .zip(&se)
                    .map(|(v, s)| if *s > 0.0 { v / s } else { f64::NAN })
                    .collect();
                (Some(se), Some(t))
            }
            None => (None, None),
        }
    } else {
        (None, None)
    };

    Ok(EstimationResult {
        params,
        std_errors,
        t_stats,
        loglik,
        iterations: best.iterations,
        converged: best.converged,
        best_start_index,
        gradient_norm: best.grad_norm,
        k_free,
        spec: spec.clone(),
        fit: None,
    })
}

fn standard_errors(
    obj: &NegMeanLoglik,
    spec: &ModelSpec,
    pins: &Pinning,
    free: &[f64],
    n: usize,
) -> Option<Vec<f64>> {
    let h_mean = optim::fd_hessian(|z| obj.value(z), free, HESS_STEP);
    // observed information of the total log-likelihood
    let info = h_mean * n as f64;
    let l = linalg::cholesky(&info)?;
    let cov_free = linalg::chol_inverse(&l);
    let jac = constrain_jacobian(spec, pins, free).ok()?;
    let cov_c = jac.dot(&cov_free).dot(&jac.t());
    let mut out = Vec::with_capacity(spec.param_count());
    let mut free_of_full: Vec<Option<usize>> = Vec::with_capacity(spec.param_count());
    let mut fi = 0;
    for i in 0..spec.param_count() {
        if pins.is_pinned(i) {
            free_of_full.push(None);
        } else {
            free_of_full.push(Some(fi));
            fi += 1;
        }
    }
    for i in 0..spec.param_count() {
        let var = cov_c[[i, i]];
        // a pinned coordinate has no sampling variance to report
        if free_of_full[i].is_none() {
            out.push(f64::NAN);
        } else if var >= 0.0 {
            out.push(var.sqrt());
        } else {
            return None;
        }
    }
    Some(out)
}

/// Full-information maximum likelihood for the complete model.
pub fn estimate(
    data: &Dataset,
    spec: &ModelSpec,
    options: &EstimationOptions,
) -> Result<EstimationResult> {
    let pins = pinning_for(spec, None);
    estimate_with_pins(data, spec, options, &pins)
}

/// Maximize the same likelihood with the named parameters pinned at zero.
/// `ConstantsOnly` additionally drops all covariates (constants, scale and
/// thresholds stay free).
pub fn estimate_restricted(
    data: &Dataset,
    spec: &ModelSpec,
    options: &EstimationOptions,
    restriction: Restriction,
) -> Result<EstimationResult> {
    if restriction == Restriction::ConstantsOnly {
        let mut reduced = spec.clone();
        reduced.covariates_eq1 = Vec::new();
        reduced.covariates_eq2 = Vec::new();
        reduced.covariates_eq3 = Vec::new();
        reduced.include_constant_eq1 = true;
        reduced.include_constant_eq2 = true;
        reduced.include_constant_eq3 = true;
        let pins = pinning_for(&reduced, Some(restriction));
        return estimate_with_pins(data, &reduced, options, &pins);
    }
    let pins = pinning_for(spec, Some(restriction));
    estimate_with_pins(data, spec, options, &pins)
}
