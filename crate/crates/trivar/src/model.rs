//! Data model for the trivariate system: the column-store dataset, the
//! per-equation covariate specification, the constrained parameter set with
//! its identification rules (first threshold fixed at zero, unit ordinal
//! error variances), and the unconstrained optimizer coordinates.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

/// Column-store dataset with named real-valued columns of equal length.
/// Missing values are represented as NaN; estimation entry points reject
/// NaN in any used column, so callers drop or impute first.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    /// Continuous outcome column (left-hand side of the linear equation).
    pub y1_col: Option<String>,
    /// First ordinal outcome column, values in {1..J2}.
    pub y2_col: Option<String>,
    /// Second ordinal outcome column, values in {1..J3}.
    pub y3_col: Option<String>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_columns(pairs: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut ds = Self::new();
        for (name, values) in pairs {
            ds.add_column(name, values)?;
        }
        Ok(ds)
    }

    pub fn add_column(&mut self, name: String, values: Vec<f64>) -> Result<()> {
        if self.index.contains_key(&name) {
            return Err(Error::Data(format!("duplicate column name `{name}`")));
        }
        if let Some(first) = self.cols.first() {
            if first.len() != values.len() {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, expected {}",
                    values.len(),
                    first.len()
                )));
            }
        }
        self.index.insert(name.clone(), self.cols.len());
        self.names.push(name);
        self.cols.push(values);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.cols.first().map_or(0, |c| c.len())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&i| self.cols[i].as_slice())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::Spec(format!("column `{name}` not found in dataset")))
    }

    /// Outcome column names, or an error if any is unset.
    pub fn outcome_cols(&self) -> Result<(&str, &str, &str)> {
        match (&self.y1_col, &self.y2_col, &self.y3_col) {
            (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
            _ => Err(Error::Spec(
                "dataset has no outcome columns designated (y1, y2, y3)".into(),
            )),
        }
    }

    /// Replace an existing column's values.
    pub fn replace_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let idx = *self
            .index
            .get(name)
            .ok_or_else(|| Error::Data(format!("column `{name}` not found")))?;
        if values.len() != self.n() {
            return Err(Error::Data(format!(
                "replacement for `{name}` has {} rows, expected {}",
                values.len(),
                self.n()
            )));
        }
        self.cols[idx] = values;
        Ok(())
    }

    /// Listwise deletion: drop every row holding a NaN in any of `used`,
    /// returning the filtered dataset (all columns kept) and the drop count.
    pub fn drop_missing(&self, used: &[String]) -> Result<(Dataset, usize)> {
        let mut keep = vec![true; self.n()];
        for name in used {
            let col = self.require(name)?;
            for (i, v) in col.iter().enumerate() {
                if v.is_nan() {
                    keep[i] = false;
                }
            }
        }
        let dropped = keep.iter().filter(|&&k| !k).count();
        let mut out = Dataset {
            y1_col: self.y1_col.clone(),
            y2_col: self.y2_col.clone(),
            y3_col: self.y3_col.clone(),
            ..Dataset::new()
        };
        for (name, col) in self.names.iter().zip(&self.cols) {
            let filtered: Vec<f64> = col
                .iter()
                .zip(&keep)
                .filter_map(|(v, &k)| if k { Some(*v) } else { None })
                .collect();
            out.add_column(name.clone(), filtered)?;
        }
        Ok((out, dropped))
    }
}

/// Which covariates enter which equation, and the ordinal level counts.
/// Latent-score columns are referenced by name exactly like exogenous
/// columns; the covariate lists are the stacked-regressor representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub covariates_eq1: Vec<String>,
    pub covariates_eq2: Vec<String>,
    pub covariates_eq3: Vec<String>,
    pub include_constant_eq1: bool,
    pub include_constant_eq2: bool,
    pub include_constant_eq3: bool,
    pub j2: usize,
    pub j3: usize,
}

impl ModelSpec {
    pub fn new(j2: usize, j3: usize) -> Self {
        Self {
            covariates_eq1: Vec::new(),
            covariates_eq2: Vec::new(),
            covariates_eq3: Vec::new(),
            include_constant_eq1: true,
            include_constant_eq2: true,
            include_constant_eq3: true,
            j2,
            j3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j2 < 2 || self.j3 < 2 {
            return Err(Error::Spec(format!(
                "ordinal level counts must be >= 2, got j2={}, j3={}",
                self.j2, self.j3
            )));
        }
        for (eq, list) in [
            ("1", &self.covariates_eq1),
            ("2", &self.covariates_eq2),
            ("3", &self.covariates_eq3),
        ] {
            let mut seen = std::collections::HashSet::new();
            for name in list {
                if !seen.insert(name) {
                    return Err(Error::Spec(format!(
                        "duplicate covariate `{name}` in equation {eq}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn k_eq1(&self) -> usize {
        self.covariates_eq1.len() + usize::from(self.include_constant_eq1)
    }

    pub fn k_eq2(&self) -> usize {
        self.covariates_eq2.len() + usize::from(self.include_constant_eq2)
    }

    pub fn k_eq3(&self) -> usize {
        self.covariates_eq3.len() + usize::from(self.include_constant_eq3)
    }

    /// Dimension of the unconstrained parameter vector.
    pub fn param_count(&self) -> usize {
        self.k_eq1() + self.k_eq2() + self.k_eq3() + 3 + 1 + 3 + (self.j2 - 2) + (self.j3 - 2)
    }

    /// Names of the constrained parameters, in vector order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.param_count());
        for (eq, list, constant) in [
            (1, &self.covariates_eq1, self.include_constant_eq1),
            (2, &self.covariates_eq2, self.include_constant_eq2),
            (3, &self.covariates_eq3, self.include_constant_eq3),
        ] {
            if constant {
                names.push(format!("gamma{eq}:constant"));
            }
            for c in list {
                names.push(format!("gamma{eq}:{c}"));
            }
        }
        names.push("theta12".into());
        names.push("theta13".into());
        names.push("theta23".into());
        names.push("sigma1".into());
        names.push("rho12".into());
        names.push("rho13".into());
        names.push("rho23".into());
        for j in 2..self.j2 {
            names.push(format!("mu2:{j}"));
        }
        for j in 2..self.j3 {
            names.push(format!("mu3:{j}"));
        }
        names
    }
}

/// Structural coefficients, thresholds, the scale of the continuous
/// equation, and the three error correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub gamma3: Vec<f64>,
    pub theta12: f64,
    pub theta13: f64,
    pub theta23: f64,
    pub sigma1: f64,
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
    /// Thresholds of the first ordinal equation; mu2[0] is fixed at 0 and
    /// the sentinels mu_0 = -inf, mu_J = +inf are implied.
    pub mu2: Vec<f64>,
    pub mu3: Vec<f64>,
}

impl ParameterSet {
    /// 3x3 error covariance matrix (unit variances on the ordinal errors).
    pub fn error_covariance(&self) -> Array2<f64> {
        let s = self.sigma1;
        ndarray::array![
            [s * s, self.rho12 * s, self.rho13 * s],
            [self.rho12 * s, 1.0, self.rho23],
            [self.rho13 * s, self.rho23, 1.0]
        ]
    }

    /// 3x3 error correlation matrix.
    pub fn error_correlation(&self) -> Array2<f64> {
        ndarray::array![
            [1.0, self.rho12, self.rho13],
            [self.rho12, 1.0, self.rho23],
            [self.rho13, self.rho23, 1.0]
        ]
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.gamma1.len() != spec.k_eq1()
            || self.gamma2.len() != spec.k_eq2()
            || self.gamma3.len() != spec.k_eq3()
        {
            return Err(Error::Spec(format!(
                "coefficient lengths ({}, {}, {}) do not match the spec ({}, {}, {})",
                self.gamma1.len(),
                self.gamma2.len(),
                self.gamma3.len(),
                spec.k_eq1(),
                spec.k_eq2(),
                spec.k_eq3()
            )));
        }
        if self.mu2.len() != spec.j2 - 1 || self.mu3.len() != spec.j3 - 1 {
            return Err(Error::Spec(format!(
                "threshold lengths ({}, {}) do not match the level counts ({}, {})",
                self.mu2.len(),
                self.mu3.len(),
                spec.j2,
                spec.j3
            )));
        }
        if !(self.sigma1 > 0.0) || !self.sigma1.is_finite() {
            return Err(Error::Parameter(format!(
                "sigma1 must be positive and finite, got {}",
                self.sigma1
            )));
        }
        for (name, mu) in [("mu2", &self.mu2), ("mu3", &self.mu3)] {
            if mu[0] != 0.0 {
                return Err(Error::Parameter(format!(
                    "{name}[0] must be fixed at zero, got {}",
                    mu[0]
                )));
            }
            for w in mu.windows(2) {
                if !(w[1] > w[0]) {
                    return Err(Error::Parameter(format!(
                        "{name} thresholds must be strictly increasing, got {mu:?}"
                    )));
                }
            }
        }
        if linalg::cholesky(&self.error_correlation()).is_none() {
            return Err(Error::Parameter(
                "error correlations do not form a positive definite matrix".into(),
            ));
        }
        Ok(())
    }
}

/// Flat optimizer coordinates; every real vector of the right dimension maps
/// to a valid [`ParameterSet`] through [`constrain`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams(pub Vec<f64>);

impl UnconstrainedParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self(vec![0.0; spec.param_count()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Map unconstrained optimizer coordinates to a valid parameter set:
/// sigma1 through exp, correlations through angle coordinates (always
/// positive definite), thresholds through positive increments above the
/// zero-fixed first threshold.
pub fn constrain(u: &UnconstrainedParams, spec: &ModelSpec) -> Result<ParameterSet> {
    spec.validate()?;
    if u.len() != spec.param_count() {
        return Err(Error::Spec(format!(
            "unconstrained vector has dimension {}, spec implies {}",
            u.len(),
            spec.param_count()
        )));
    }
    let v = u.as_slice();
    let (k1, k2, k3) = (spec.k_eq1(), spec.k_eq2(), spec.k_eq3());
    let mut pos = 0;
    let gamma1 = v[pos..pos + k1].to_vec();
    pos += k1;
    let gamma2 = v[pos..pos + k2].to_vec();
    pos += k2;
    let gamma3 = v[pos..pos + k3].to_vec();
    pos += k3;
    let theta12 = v[pos];
    let theta13 = v[pos + 1];
    let theta23 = v[pos + 2];
    pos += 3;
    let sigma1 = v[pos].exp();
    pos += 1;
    let corr = linalg::corr_from_angles(&v[pos..pos + 3], 3)?;
    pos += 3;
    let mut mu2 = Vec::with_capacity(spec.j2 - 1);
    mu2.push(0.0);
    for i in 0..spec.j2 - 2 {
        let prev = *mu2.last().unwrap();
        mu2.push(prev + v[pos + i].exp());
    }
    pos += spec.j2 - 2;
    let mut mu3 = Vec::with_capacity(spec.j3 - 1);
    mu3.push(0.0);
    for i in 0..spec.j3 - 2 {
        let prev = *mu3.last().unwrap();
        mu3.push(prev + v[pos + i].exp());
    }
    Ok(ParameterSet {
        gamma1,
        gamma2,
        gamma3,
        theta12,
        theta13,
        theta23,
        sigma1,
        rho12: corr[[1, 0]],
        rho13: corr[[2, 0]],
        rho23: corr[[2, 1]],
        mu2,
        mu3,
    })
}

/// Inverse of [`constrain`].
pub fn unconstrain(p: &ParameterSet, spec: &ModelSpec) -> Result<UnconstrainedParams> {
    p.validate(spec)?;
    let mut v = Vec::with_capacity(spec.param_count());
    v.extend_from_slice(&p.gamma1);
    v.extend_from_slice(&p.gamma2);
    v.extend_from_slice(&p.gamma3);
    v.push(p.theta12);
    v.push(p.theta13);
    v.push(p.theta23);
    v.push(p.sigma1.ln());
    v.extend(linalg::angles_from_corr(&p.error_correlation())?);
    for mu in [&p.mu2, &p.mu3] {
        for w in mu.windows(2) {
            v.push((w[1] - w[0]).ln());
        }
    }
    Ok(UnconstrainedParams(v))
}

/// Per-equation design matrices, constant column first when requested.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
    pub x3: Array2<f64>,
}

fn design_for(
    data: &Dataset,
    covariates: &[String],
    constant: bool,
    eq: usize,
) -> Result<Array2<f64>> {
    let n = data.n();
    let k = covariates.len() + usize::from(constant);
    let mut x = Array2::<f64>::zeros((n, k));
    let mut col = 0;
    if constant {
        x.column_mut(0).fill(1.0);
        col = 1;
    }
    for name in covariates {
        let values = data.column(name).ok_or_else(|| {
            Error::Spec(format!("equation {eq} references unknown column `{name}`"))
        })?;
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                return Err(Error::Data(format!(
                    "NaN in column `{name}` at row {i}; drop or impute missing values first"
                )));
            }
            x[[i, col]] = v;
        }
        col += 1;
    }
    Ok(x)
}

/// Build the three design matrices implied by the spec. Column order is the
/// spec order; rows follow dataset order.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    spec.validate()?;
    Ok(DesignMatrices {
        x1: design_for(data, &spec.covariates_eq1, spec.include_constant_eq1, 1)?,
        x2: design_for(data, &spec.covariates_eq2, spec.include_constant_eq2, 2)?,
        x3: design_for(data, &spec.covariates_eq3, spec.include_constant_eq3, 3)?,
    })
}

fn ordinal_column(data: &Dataset, name: &str, levels: usize) -> Result<Vec<usize>> {
    let col = data
        .column(name)
        .ok_or_else(|| Error::Spec(format!("ordinal outcome column `{name}` not found")))?;
    let mut out = Vec::with_capacity(col.len());
    for (i, &v) in col.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::Data(format!(
                "NaN in ordinal column `{name}` at row {i}"
            )));
        }
        let level = v.round();
        if (level - v).abs() > 1e-9 || level < 1.0 || level > levels as f64 {
            return Err(Error::Data(format!(
                "ordinal column `{name}` has value {v} at row {i}, expected an integer in 1..={levels}"
            )));
        }
        out.push(level as usize);
    }
    Ok(out)
}

/// Design matrices plus validated outcome vectors, the working form used by
/// the likelihood and the estimator.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub design: DesignMatrices,
    pub y1: Vec<f64>,
    /// 1-based ordinal levels.
    pub y2: Vec<usize>,
    pub y3: Vec<usize>,
}

impl Prepared {
    pub fn n(&self) -> usize {
        self.y1.len()
    }
}

/// Resolve designs and outcomes against the dataset, validating ordinal
/// ranges and rejecting NaN.
pub fn prepare(data: &Dataset, spec: &ModelSpec) -> Result<Prepared> {
    let (y1_name, y2_name, y3_name) = data.outcome_cols()?;
    let design = build_design(data, spec)?;
    let y1_raw = data
        .column(y1_name)
        .ok_or_else(|| Error::Spec(format!("continuous outcome column `{y1_name}` not found")))?;
    if let Some(i) = y1_raw.iter().position(|v| v.is_nan()) {
        return Err(Error::Data(format!(
            "NaN in continuous outcome `{y1_name}` at row {i}"
        )));
    }
    let (y2_name, y3_name) = (y2_name.to_string(), y3_name.to_string());
    Ok(Prepared {
        design,
        y1: y1_raw.to_vec(),
        y2: ordinal_column(data, &y2_name, spec.j2)?,
        y3: ordinal_column(data, &y3_name, spec.j3)?,
    })
}

/// Linear index X * gamma for one equation.
pub fn linear_index(x: &Array2<f64>, gamma: &[f64]) -> Array1<f64> {
    let g = Array1::from(gamma.to_vec());
    x.dot(&g)
}
