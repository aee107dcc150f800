//! Run configuration: a TOML document describing the data source, column
//! transforms, the optional SEM block, the trivariate model, estimation
//! options, and output paths. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use trivar::estimate::EstimationOptions;
use trivar::model::{Dataset, ModelSpec, ParameterSet};
use trivar::sem::SemSpec;
use trivar::simulate::{CovariateRecipe, SimConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataBlock,
    #[serde(default)]
    pub transforms: Vec<Transform>,
    #[serde(default)]
    pub sem: Option<SemBlock>,
    pub model: ModelBlock,
    #[serde(default)]
    pub estimation: EstimationBlock,
    pub outputs: OutputsBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_format() -> String {
    "csv".to_string()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transform {
    pub source: String,
    pub op: TransformOp,
    pub target: String,
    /// Reference level for dummy encoding.
    #[serde(default)]
    pub reference: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformOp {
    Log,
    Dummy,
    Standardize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemBlock {
    pub latents: Vec<String>,
    pub indicators: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    /// (indicator, latent) pairs marking free loadings.
    pub loadings: Vec<(String, String)>,
    /// (latent, exogenous) pairs marking free structural coefficients.
    #[serde(default)]
    pub structural: Vec<(String, String)>,
    #[serde(default)]
    pub free_latent_covariances: bool,
}

impl SemBlock {
    pub fn to_spec(&self) -> Result<SemSpec> {
        let find = |list: &[String], name: &str, what: &str| -> Result<usize> {
            list.iter()
                .position(|x| x == name)
                .with_context(|| format!("unknown {what} `{name}` in [sem]"))
        };
        let r = self.indicators.len();
        let l = self.latents.len();
        let k = self.exogenous.len();
        let mut loading_pattern = vec![vec![false; l]; r];
        for (ind, lat) in &self.loadings {
            let i = find(&self.indicators, ind, "indicator")?;
            let j = find(&self.latents, lat, "latent")?;
            loading_pattern[i][j] = true;
        }
        let mut structural_pattern = vec![vec![false; k]; l];
        for (lat, ex) in &self.structural {
            let i = find(&self.latents, lat, "latent")?;
            let j = find(&self.exogenous, ex, "exogenous column")?;
            structural_pattern[i][j] = true;
        }
        let spec = SemSpec {
            indicators: self.indicators.clone(),
            exogenous: self.exogenous.clone(),
            latents: self.latents.clone(),
            loading_pattern,
            structural_pattern,
            free_latent_covariances: self.free_latent_covariances,
        };
        spec.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub y1: String,
    pub y2: String,
    pub y3: String,
    #[serde(default)]
    pub covariates_y1: Vec<String>,
    #[serde(default)]
    pub covariates_y2: Vec<String>,
    #[serde(default)]
    pub covariates_y3: Vec<String>,
    #[serde(default = "default_true")]
    pub constant_y1: bool,
    #[serde(default = "default_true")]
    pub constant_y2: bool,
    #[serde(default = "default_true")]
    pub constant_y3: bool,
    /// Ordinal level counts; inferred from the data when absent.
    #[serde(default)]
    pub j2: Option<usize>,
    #[serde(default)]
    pub j3: Option<usize>,
    /// Extra restricted variants to estimate and test against the full
    /// model ("independent", "nonrecursive").
    #[serde(default)]
    pub restrictions: Vec<String>,
}

fn default_true() -> bool {
    true
}

impl ModelBlock {
    pub fn to_spec(&self, data: &Dataset) -> Result<ModelSpec> {
        let infer_levels = |col_name: &str| -> Result<usize> {
            let col = data
                .column(col_name)
                .with_context(|| format!("ordinal column `{col_name}` not found"))?;
            let max = col.iter().cloned().fold(f64::NAN, f64::max);
            if !max.is_finite() || max < 2.0 {
                bail!("cannot infer level count from column `{col_name}`");
            }
            Ok(max.round() as usize)
        };
        let j2 = match self.j2 {
            Some(j) => j,
            None => infer_levels(&self.y2)?,
        };
        let j3 = match self.j3 {
            Some(j) => j,
            None => infer_levels(&self.y3)?,
        };
        let mut spec = ModelSpec::new(j2, j3);
        spec.covariates_eq1 = self.covariates_y1.clone();
        spec.covariates_eq2 = self.covariates_y2.clone();
        spec.covariates_eq3 = self.covariates_y3.clone();
        spec.include_constant_eq1 = self.constant_y1;
        spec.include_constant_eq2 = self.constant_y2;
        spec.include_constant_eq3 = self.constant_y3;
        spec.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationBlock {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_gradient_tolerance")]
    pub gradient_tolerance: f64,
    #[serde(default = "default_multistart")]
    pub multistart_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub std_errors: bool,
}

fn default_max_iterations() -> usize {
    500
}

fn default_gradient_tolerance() -> f64 {
    1e-6
}

fn default_multistart() -> usize {
    1
}

impl Default for EstimationBlock {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            gradient_tolerance: default_gradient_tolerance(),
            multistart_count: default_multistart(),
            seed: 0,
            std_errors: true,
        }
    }
}

impl EstimationBlock {
    pub fn to_options(&self) -> EstimationOptions {
        EstimationOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            multistart_count: self.multistart_count,
            seed: self.seed,
            start: None,
            compute_std_errors: self.std_errors,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    pub report: Option<PathBuf>,
    pub results: Option<PathBuf>,
    /// Factor-score CSV emitted by the `sem` subcommand.
    #[serde(default)]
    pub scores: Option<PathBuf>,
}

pub fn load_run_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let config: RunConfig = toml::from_str(&text)
        .with_context(|| format!("invalid config `{}`", path.display()))?;
    if config.data.format != "csv" {
        bail!("unsupported data format `{}` (only csv)", config.data.format);
    }
    Ok((config, text))
}

// --- simulation configuration ------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub simulate: SimulateBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// `demo` draws from the canned demonstration process; custom runs
    /// need spec, params and recipes.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub spec: Option<SimSpecBlock>,
    #[serde(default)]
    pub params: Option<ParamsBlock>,
    #[serde(default)]
    pub recipes: Option<BTreeMap<String, RecipeBlock>>,
    #[serde(default)]
    pub emit_latents: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpecBlock {
    #[serde(default)]
    pub covariates_y1: Vec<String>,
    #[serde(default)]
    pub covariates_y2: Vec<String>,
    #[serde(default)]
    pub covariates_y3: Vec<String>,
    pub j2: usize,
    pub j3: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
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
    pub mu2: Vec<f64>,
    pub mu3: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum RecipeBlock {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Categorical { shares: Vec<f64> },
}

impl RecipeBlock {
    fn to_recipe(&self) -> CovariateRecipe {
        match self {
            RecipeBlock::Bernoulli { p } => CovariateRecipe::Bernoulli { p: *p },
            RecipeBlock::Normal { mean, sd } => CovariateRecipe::Normal {
                mean: *mean,
                sd: *sd,
            },
            RecipeBlock::Categorical { shares } => CovariateRecipe::Categorical {
                shares: shares.clone(),
            },
        }
    }
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config `{}`", path.display()))?;
    let file: SimulateFile = toml::from_str(&text)
        .with_context(|| format!("invalid config `{}`", path.display()))?;
    let block = file.simulate;
    if let Some(preset) = &block.preset {
        if preset != "demo" {
            bail!("unknown simulate preset `{preset}` (only `demo`)");
        }
        let mut cfg = trivar::simulate::demo_config(block.n, block.seed);
        cfg.emit_latents = block.emit_latents;
        return Ok(cfg);
    }
    let (Some(spec_block), Some(params), Some(recipes)) =
        (&block.spec, &block.params, &block.recipes)
    else {
        bail!("custom simulation needs [simulate.spec], [simulate.params] and [simulate.recipes]");
    };
    let mut spec = ModelSpec::new(spec_block.j2, spec_block.j3);
    spec.covariates_eq1 = spec_block.covariates_y1.clone();
    spec.covariates_eq2 = spec_block.covariates_y2.clone();
    spec.covariates_eq3 = spec_block.covariates_y3.clone();
    let true_params = ParameterSet {
        gamma1: params.gamma1.clone(),
        gamma2: params.gamma2.clone(),
        gamma3: params.gamma3.clone(),
        theta12: params.theta12,
        theta13: params.theta13,
        theta23: params.theta23,
        sigma1: params.sigma1,
        rho12: params.rho12,
        rho13: params.rho13,
        rho23: params.rho23,
        mu2: params.mu2.clone(),
        mu3: params.mu3.clone(),
    };
    let cfg = SimConfig {
        n: block.n,
        seed: block.seed,
        true_params,
        spec,
        recipes: recipes
            .iter()
            .map(|(k, v)| (k.clone(), v.to_recipe()))
            .collect(),
        emit_latents: block.emit_latents,
    };
    cfg.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(cfg)
}

// --- transforms ----------------------------------------------------------

/// Apply the configured transforms in order; each target must be new.
pub fn apply_transforms(data: &mut Dataset, transforms: &[Transform]) -> Result<()> {
    for t in transforms {
        let source = data
            .column(&t.source)
            .with_context(|| format!("transform source column `{}` not found", t.source))?
            .to_vec();
        match t.op {
            TransformOp::Log => {
                if source.iter().any(|&v| !v.is_nan() && v <= 0.0) {
                    bail!(
                        "log transform of `{}` requires strictly positive values",
                        t.source
                    );
                }
                let out: Vec<f64> = source.iter().map(|v| v.ln()).collect();
                data.add_column(t.target.clone(), out)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
            }
            TransformOp::Standardize => {
                let valid: Vec<f64> = source.iter().cloned().filter(|v| !v.is_nan()).collect();
                if valid.is_empty() {
                    bail!("standardize transform of `{}`: no observed values", t.source);
                }
                let n = valid.len() as f64;
                let mean = valid.iter().sum::<f64>() / n;
                let sd = (valid.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if sd == 0.0 {
                    bail!("standardize transform of `{}`: zero variance", t.source);
                }
                let out: Vec<f64> = source.iter().map(|v| (v - mean) / sd).collect();
                data.add_column(t.target.clone(), out)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
            }
            TransformOp::Dummy => {
                let reference = t.reference.with_context(|| {
                    format!("dummy transform of `{}` needs a reference level", t.source)
                })?;
                let mut levels: Vec<i64> = Vec::new();
                for (i, v) in source.iter().enumerate() {
                    if v.is_nan() {
                        continue;
                    }
                    let rounded = v.round();
                    if (rounded - v).abs() > 1e-9 {
                        bail!(
                            "dummy transform of `{}`: non-integer level {v} at row {i}",
                            t.source
                        );
                    }
                    let level = rounded as i64;
                    if !levels.contains(&level) {
                        levels.push(level);
                    }
                }
                levels.sort_unstable();
                if !levels.contains(&reference) {
                    bail!(
                        "dummy transform of `{}`: reference level {reference} not present (levels {levels:?})",
                        t.source
                    );
                }
                for level in levels.iter().filter(|&&l| l != reference) {
                    let out: Vec<f64> = source
                        .iter()
                        .map(|v| {
                            if v.is_nan() {
                                f64::NAN
                            } else if v.round() as i64 == *level {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    data.add_column(format!("{}_{level}", t.target), out)
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                }
            }
        }
    }
    Ok(())
}
