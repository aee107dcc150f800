//! Step-one structural equation model with latent variables: maximum
//! likelihood covariance-structure fitting of the measurement and structural
//! equations, the usual covariance-residual fit indices, and regression
//! factor scores for use as second-stage covariates.
//!
//! Identification: latent disturbance variances are fixed at one and every
//! pattern loading is free; indicator error covariances are diagonal.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Dataset;
use crate::optim::{self, Objective, OptimOptions};

/// Which loadings and structural coefficients are free.
#[derive(Debug, Clone)]
pub struct SemSpec {
    pub indicators: Vec<String>,
    pub exogenous: Vec<String>,
    pub latents: Vec<String>,
    /// R x L mask: loading of indicator r on latent l.
    pub loading_pattern: Vec<Vec<bool>>,
    /// L x K mask: effect of exogenous k on latent l.
    pub structural_pattern: Vec<Vec<bool>>,
    /// Free correlations among latent disturbances (zero when false).
    pub free_latent_covariances: bool,
}

impl SemSpec {
    pub fn r(&self) -> usize {
        self.indicators.len()
    }

    pub fn l(&self) -> usize {
        self.latents.len()
    }

    pub fn k(&self) -> usize {
        self.exogenous.len()
    }

    /// Observed-moment dimension (indicators plus exogenous).
    pub fn p(&self) -> usize {
        self.r() + self.k()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indicators.is_empty() || self.latents.is_empty() {
            return Err(Error::Spec(
                "SEM needs at least one indicator and one latent".into(),
            ));
        }
        if self.loading_pattern.len() != self.r()
            || self.loading_pattern.iter().any(|row| row.len() != self.l())
        {
            return Err(Error::Spec(format!(
                "loading pattern must be {} x {}",
                self.r(),
                self.l()
            )));
        }
        if self.structural_pattern.len() != self.l()
            || self
                .structural_pattern
                .iter()
                .any(|row| row.len() != self.k())
        {
            return Err(Error::Spec(format!(
                "structural pattern must be {} x {}",
                self.l(),
                self.k()
            )));
        }
        for (r, row) in self.loading_pattern.iter().enumerate() {
            if !row.iter().any(|&b| b) {
                return Err(Error::Spec(format!(
                    "indicator `{}` loads on no latent",
                    self.indicators[r]
                )));
            }
        }
        for l in 0..self.l() {
            if !self.loading_pattern.iter().any(|row| row[l]) {
                return Err(Error::Spec(format!(
                    "latent `{}` has no indicator",
                    self.latents[l]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.indicators.iter().chain(&self.exogenous) {
            if !seen.insert(name) {
                return Err(Error::Spec(format!("duplicate SEM column `{name}`")));
            }
        }
        Ok(())
    }

    fn free_loadings(&self) -> usize {
        self.loading_pattern
            .iter()
            .flat_map(|row| row.iter())
            .filter(|&&b| b)
            .count()
    }

    fn free_structural(&self) -> usize {
        self.structural_pattern
            .iter()
            .flat_map(|row| row.iter())
            .filter(|&&b| b)
            .count()
    }

    fn free_latent_corrs(&self) -> usize {
        if self.free_latent_covariances {
            linalg::corr_angle_count(self.l())
        } else {
            0
        }
    }

    /// Number of estimated parameters (error variances included).
    pub fn free_parameter_count(&self) -> usize {
        self.free_loadings() + self.free_structural() + self.r() + self.free_latent_corrs()
    }

    /// Model degrees of freedom: distinct observed moments minus estimated
    /// parameters; the exogenous block is fitted exactly at its sample
    /// moments, which are counted as estimated.
    pub fn degrees_of_freedom(&self) -> i64 {
        let p = self.p() as i64;
        let t = self.free_parameter_count() as i64 + (self.k() * (self.k() + 1) / 2) as i64;
        p * (p + 1) / 2 - t
    }

    /// Names of the free parameters, in optimizer order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (r, row) in self.loading_pattern.iter().enumerate() {
            for (l, &free) in row.iter().enumerate() {
                if free {
                    names.push(format!("loading:{}~{}", self.indicators[r], self.latents[l]));
                }
            }
        }
        for (l, row) in self.structural_pattern.iter().enumerate() {
            for (k, &free) in row.iter().enumerate() {
                if free {
                    names.push(format!(
                        "structural:{}~{}",
                        self.latents[l], self.exogenous[k]
                    ));
                }
            }
        }
        for r in &self.indicators {
            names.push(format!("error_variance:{r}"));
        }
        if self.free_latent_covariances {
            for i in 1..self.l() {
                for j in 0..i {
                    names.push(format!(
                        "latent_corr:{}~{}",
                        self.latents[i], self.latents[j]
                    ));
                }
            }
        }
        names
    }
}

/// Dense parameter matrices conforming to a [`SemSpec`].
#[derive(Debug, Clone)]
pub struct SemParams {
    /// R x L loadings (zero where the pattern is fixed).
    pub omega: Array2<f64>,
    /// L x K structural coefficients.
    pub tau: Array2<f64>,
    /// Indicator error variances (diagonal of the measurement covariance).
    pub theta_diag: Vec<f64>,
    /// Latent disturbance covariance (unit diagonal).
    pub nu_cov: Array2<f64>,
}

impl SemParams {
    fn from_unconstrained(spec: &SemSpec, v: &[f64]) -> Result<Self> {
        let (r, l, k) = (spec.r(), spec.l(), spec.k());
        let mut omega = Array2::zeros((r, l));
        let mut pos = 0;
        for i in 0..r {
            for j in 0..l {
                if spec.loading_pattern[i][j] {
                    omega[[i, j]] = v[pos];
                    pos += 1;
                }
            }
        }
        let mut tau = Array2::zeros((l, k));
        for i in 0..l {
            for j in 0..k {
                if spec.structural_pattern[i][j] {
                    tau[[i, j]] = v[pos];
                    pos += 1;
                }
            }
        }
        let mut theta_diag = Vec::with_capacity(r);
        for _ in 0..r {
            theta_diag.push(v[pos].exp());
            pos += 1;
        }
        let nu_cov = if spec.free_latent_covariances {
            let angles = &v[pos..pos + linalg::corr_angle_count(l)];
            linalg::corr_from_angles(angles, l)?
        } else {
            Array2::eye(l)
        };
        Ok(Self {
            omega,
            tau,
            theta_diag,
            nu_cov,
        })
    }

    /// Free-parameter values in `spec.parameter_names()` order (error
    /// variances on their natural scale).
    pub fn free_values(&self, spec: &SemSpec) -> Vec<f64> {
        let mut v = Vec::new();
        for i in 0..spec.r() {
            for j in 0..spec.l() {
                if spec.loading_pattern[i][j] {
                    v.push(self.omega[[i, j]]);
                }
            }
        }
        for i in 0..spec.l() {
            for j in 0..spec.k() {
                if spec.structural_pattern[i][j] {
                    v.push(self.tau[[i, j]]);
                }
            }
        }
        v.extend_from_slice(&self.theta_diag);
        if spec.free_latent_covariances {
            for i in 1..spec.l() {
                for j in 0..i {
                    v.push(self.nu_cov[[i, j]]);
                }
            }
        }
        v
    }
}

/// Model-implied covariance of (indicators, exogenous), given the sample
/// covariance of the exogenous block.
pub fn implied_covariance(
    spec: &SemSpec,
    params: &SemParams,
    sx: &Array2<f64>,
) -> Result<Array2<f64>> {
    spec.validate()?;
    let (r, l, k) = (spec.r(), spec.l(), spec.k());
    if params.omega.shape() != [r, l]
        || params.tau.shape() != [l, k]
        || params.theta_diag.len() != r
        || params.nu_cov.shape() != [l, l]
        || sx.shape() != [k, k]
    {
        return Err(Error::Spec("SEM parameter shapes do not match the spec".into()));
    }
    let p = spec.p();
    let cov_z = params.tau.dot(sx).dot(&params.tau.t()) + &params.nu_cov;
    let mut uu = params.omega.dot(&cov_z).dot(&params.omega.t());
    for i in 0..r {
        for j in 0..i {
            let v = 0.5 * (uu[[i, j]] + uu[[j, i]]);
            uu[[i, j]] = v;
            uu[[j, i]] = v;
        }
    }
    let ux = params.omega.dot(&params.tau).dot(sx);
    let mut sigma = Array2::zeros((p, p));
    for i in 0..r {
        for j in 0..r {
            sigma[[i, j]] = uu[[i, j]] + if i == j { params.theta_diag[i] } else { 0.0 };
        }
        for j in 0..k {
            sigma[[i, r + j]] = ux[[i, j]];
            sigma[[r + j, i]] = ux[[i, j]];
        }
    }
    for i in 0..k {
        for j in 0..k {
            sigma[[r + i, r + j]] = sx[[i, j]];
        }
    }
    Ok(sigma)
}

/// Covariance-residual fit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SemFit {
    pub chi_square: f64,
    pub df: i64,
    pub p_value: f64,
    pub gfi: f64,
    pub agfi: f64,
    pub srmr: f64,
    pub rmsea: f64,
}

#[derive(Debug, Clone)]
pub struct SemResult {
    pub params: SemParams,
    /// Standard-error equivalents for the free parameters, in
    /// `spec.parameter_names()` order.
    pub std_errors: Option<Vec<f64>>,
    /// Minimized maximum-likelihood discrepancy.
    pub f_min: f64,
    pub fit: SemFit,
    /// Regression factor scores, n x L.
    pub scores: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SemOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub compute_std_errors: bool,
}

impl Default for SemOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-7,
            compute_std_errors: true,
        }
    }
}

struct Discrepancy<'a> {
    spec: &'a SemSpec,
    s: &'a Array2<f64>,
    sx: &'a Array2<f64>,
    ln_det_s: f64,
}

impl Discrepancy<'_> {
    fn f(&self, v: &[f64]) -> f64 {
        let params = match SemParams::from_unconstrained(self.spec, v) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        let sigma = match implied_covariance(self.spec, &params, self.sx) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        let l = match linalg::cholesky(&sigma) {
            Some(l) => l,
            None => return f64::INFINITY,
        };
        let p = self.spec.p();
        let inv = linalg::chol_inverse(&l);
        let mut trace = 0.0;
        for i in 0..p {
            for j in 0..p {
                trace += self.s[[i, j]] * inv[[j, i]];
            }
        }
        let val = linalg::chol_ln_det(&l) + trace - self.ln_det_s - p as f64;
        if val.is_finite() {
            val
        } else {
            f64::INFINITY
        }
    }
}

impl Objective for Discrepancy<'_> {
    fn dim(&self) -> usize {
        self.spec.free_parameter_count()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.f(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        optim::fd_gradient(|z| self.f(z), x, optim::FD_REL_STEP)
    }
}

fn sample_covariance(cols: &[&[f64]]) -> (Vec<f64>, Array2<f64>) {
    let p = cols.len();
    let n = cols[0].len();
    let means: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let mut s = Array2::zeros((p, p));
    for i in 0..p {
        for j in i..p {
            let mut acc = 0.0;
            for (a, b) in cols[i].iter().zip(cols[j]) {
                acc += (a - means[i]) * (b - means[j]);
            }
            let v = acc / (n as f64 - 1.0);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    (means, s)
}

fn collect_columns<'d>(data: &'d Dataset, names: &[String]) -> Result<Vec<&'d [f64]>> {
    names
        .iter()
        .map(|name| {
            let col = data
                .column(name)
                .ok_or_else(|| Error::Spec(format!("SEM column `{name}` not found")))?;
            if col.iter().any(|v| v.is_nan()) {
                return Err(Error::Data(format!("NaN in SEM column `{name}`")));
            }
            Ok(col)
        })
        .collect()
}

fn start_values(spec: &SemSpec, s: &Array2<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(spec.free_parameter_count());
    for (r, row) in spec.loading_pattern.iter().enumerate() {
        let sd = s[[r, r]].sqrt();
        let n_loads = row.iter().filter(|&&b| b).count().max(1);
        for &free in row {
            if free {
                v.push(0.5 * sd / (n_loads as f64).sqrt());
            }
        }
    }
    v.extend(std::iter::repeat_n(0.0, spec.free_structural()));
    for r in 0..spec.r() {
        v.push((0.5 * s[[r, r]]).max(1e-4).ln());
    }
    v.extend(std::iter::repeat_n(0.0, spec.free_latent_corrs()));
    v
}

fn fit_indices(
    spec: &SemSpec,
    s: &Array2<f64>,
    sigma: &Array2<f64>,
    f_min: f64,
    n: usize,
) -> Result<SemFit> {
    let p = spec.p();
    let df = spec.degrees_of_freedom();
    let n1 = (n - 1) as f64;
    let chi_square = (n1 * f_min).max(0.0);
    let p_value = if df >= 1 {
        crate::dist::chisq_sf(chi_square, df as u32)?
    } else {
        1.0
    };
    let l = linalg::cholesky(sigma)
        .ok_or_else(|| Error::Numerical("implied covariance is not positive definite".into()))?;
    let inv = linalg::chol_inverse(&l);
    // GFI = 1 - tr[(Sigma^-1 (S - Sigma))^2] / tr[(Sigma^-1 S)^2]
    let resid = s - sigma;
    let a = inv.dot(&resid);
    let b = inv.dot(s);
    let tr_sq = |m: &Array2<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..p {
            for j in 0..p {
                acc += m[[i, j]] * m[[j, i]];
            }
        }
        acc
    };
    let gfi = 1.0 - tr_sq(&a) / tr_sq(&b);
    let agfi = if df > 0 {
        1.0 - (p * (p + 1)) as f64 / (2.0 * df as f64) * (1.0 - gfi)
    } else {
        1.0
    };
    let mut srmr_acc = 0.0;
    for i in 0..p {
        for j in 0..=i {
            let denom = (s[[i, i]] * s[[j, j]]).sqrt();
            srmr_acc += (resid[[i, j]] / denom).powi(2);
        }
    }
    let srmr = (srmr_acc / (p * (p + 1) / 2) as f64).sqrt();
    let rmsea = if df > 0 {
        ((chi_square - df as f64).max(0.0) / (df as f64 * n1)).sqrt()
    } else {
        0.0
    };
    Ok(SemFit {
        chi_square,
        df,
        p_value,
        gfi,
        agfi,
        srmr,
        rmsea,
    })
}

/// Fit the SEM by minimizing the maximum-likelihood discrepancy between the
/// sample covariance of (indicators, exogenous) and the model-implied one.
pub fn fit_sem(data: &Dataset, spec: &SemSpec, options: &SemOptions) -> Result<SemResult> {
    spec.validate()?;
    if spec.degrees_of_freedom() < 0 {
        return Err(Error::Spec(format!(
            "SEM is over-parameterized: degrees of freedom = {}",
            spec.degrees_of_freedom()
        )));
    }
    let n = data.n();
    if n <= spec.free_parameter_count() + 1 {
        return Err(Error::Data(format!(
            "SEM needs more rows ({n}) than free parameters ({})",
            spec.free_parameter_count()
        )));
    }
    let all_names: Vec<String> = spec
        .indicators
        .iter()
        .chain(&spec.exogenous)
        .cloned()
        .collect();
    let cols = collect_columns(data, &all_names)?;
    let (_, s) = sample_covariance(&cols);
    let ls = linalg::cholesky(&s).ok_or_else(|| {
        Error::Data("sample covariance of the SEM block is not positive definite".into())
    })?;
    let ln_det_s = linalg::chol_ln_det(&ls);
    let sx = {
        let k = spec.k();
        let mut sx = Array2::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                sx[[i, j]] = s[[spec.r() + i, spec.r() + j]];
            }
        }
        sx
    };

    let obj = Discrepancy {
        spec,
        s: &s,
        sx: &sx,
        ln_det_s,
    };
    let x0 = start_values(spec, &s);
    let run = optim::minimize(
        &obj,
        &x0,
        &OptimOptions {
            max_iterations: options.max_iterations,
            grad_tolerance: options.gradient_tolerance,
            ..OptimOptions::default()
        },
    );
    let params = SemParams::from_unconstrained(spec, &run.x)?;
    let sigma = implied_covariance(spec, &params, &sx)?;
    let fit = fit_indices(spec, &s, &sigma, run.value.max(0.0), n)?;

    let std_errors = if options.compute_std_errors {
        sem_standard_errors(&obj, spec, &run.x, n)
    } else {
        None
    };

    let scores = factor_scores_from_params(data, spec, &params)?;
    Ok(SemResult {
        params,
        std_errors,
        f_min: run.value.max(0.0),
        fit,
        scores,
        converged: run.converged,
        iterations: run.iterations,
    })
}

// Standard errors of the free parameters: the log-likelihood is
// -(n-1)/2 * F up to a constant, so Cov = (2/(n-1)) * H_F^{-1}, mapped
// through the unconstrained-to-natural Jacobian for the error variances.
fn sem_standard_errors(
    obj: &Discrepancy,
    spec: &SemSpec,
    x: &[f64],
    n: usize,
) -> Option<Vec<f64>> {
    let h = optim::fd_hessian(|z| obj.f(z), x, 1.220_703_125e-4);
    let info = h * ((n - 1) as f64 / 2.0);
    let l = linalg::cholesky(&info)?;
    let cov_u = linalg::chol_inverse(&l);
    // natural-scale Jacobian is identity except exp on the variance block
    let dim = x.len();
    let var_start = spec.free_loadings() + spec.free_structural();
    let mut se = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut var = cov_u[[i, i]];
        if (var_start..var_start + spec.r()).contains(&i) {
            let deriv = x[i].exp();
            var *= deriv * deriv;
        }
        if spec.free_latent_covariances && i >= var_start + spec.r() {
            // angle coordinates: map through the correlation derivative
            let h = 1e-6;
            let mut up = x.to_vec();
            up[i] += h;
            let mut dn = x.to_vec();
            dn[i] -= h;
            let pu = SemParams::from_unconstrained(spec, &up).ok()?;
            let pd = SemParams::from_unconstrained(spec, &dn).ok()?;
            let vu = pu.free_values(spec);
            let vd = pd.free_values(spec);
            let deriv = (vu[i] - vd[i]) / (2.0 * h);
            var *= deriv * deriv;
        }
        if var < 0.0 {
            return None;
        }
        se.push(var.sqrt());
    }
    Some(se)
}

/// Regression factor scores: the conditional mean of the latents given the
/// indicators and exogenous values under the fitted model.
pub fn factor_scores(data: &Dataset, spec: &SemSpec, result: &SemResult) -> Result<Array2<f64>> {
    factor_scores_from_params(data, spec, &result.params)
}

fn factor_scores_from_params(
    data: &Dataset,
    spec: &SemSpec,
    params: &SemParams,
) -> Result<Array2<f64>> {
    let n = data.n();
    let (r, l) = (spec.r(), spec.l());
    let u_cols = collect_columns(data, &spec.indicators)?;
    let x_cols = collect_columns(data, &spec.exogenous)?;
    // A = nu omega' (omega nu omega' + Theta)^-1
    let var_u = {
        let mut m = params.omega.dot(&params.nu_cov).dot(&params.omega.t());
        for i in 0..r {
            m[[i, i]] += params.theta_diag[i];
        }
        m
    };
    let lchol = linalg::cholesky(&var_u).ok_or_else(|| {
        Error::Numerical("implied indicator covariance is singular; cannot score".into())
    })?;
    let inv = linalg::chol_inverse(&lchol);
    let a = params.nu_cov.dot(&params.omega.t()).dot(&inv);
    let mut scores = Array2::zeros((n, l));
    for i in 0..n {
        let x_i = Array1::from_iter(x_cols.iter().map(|c| c[i]));
        let structural = params.tau.dot(&x_i);
        let pred_u = params.omega.dot(&structural);
        let resid = Array1::from_iter(u_cols.iter().map(|c| c[i])) - pred_u;
        let z = &structural + &a.dot(&resid);
        for j in 0..l {
            scores[[i, j]] = z[j];
        }
    }
    Ok(scores)
}
