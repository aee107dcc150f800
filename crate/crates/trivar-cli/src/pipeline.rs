//! End-to-end estimation pipeline: load, transform, listwise-delete, fit
//! the optional first-stage SEM and append factor scores, estimate the full
//! trivariate model plus the requested restricted variants, run the
//! likelihood-ratio tests and fit statistics, compute marginal effects, and
//! write the report and the machine-readable result document.

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};


use trivar::estimate::{
    constrained_vector, estimate, estimate_restricted, EstimationResult, Restriction,
};
use trivar::inference::{fit_stats_from_parts, lr_test, marginal_effects_table, VariableKind};
use trivar::model::{Dataset, ModelSpec};
use trivar::sem::{fit_sem, SemOptions, SemResult, SemSpec};

use crate::config::{apply_transforms, RunConfig};
use crate::csvio;
use crate::resultdoc::{self, Doc};

pub struct PipelineOutcome {
    pub doc: Doc,
    pub doc_text: String,
    pub report: String,
}

fn config_echo(config: &RunConfig) -> Doc {
    let model = &config.model;
    let estimation = &config.estimation;
    Doc::obj(vec![
        (
            "data",
            Doc::obj(vec![
                ("path", Doc::Str(config.data.path.display().to_string())),
                ("format", Doc::Str(config.data.format.clone())),
            ]),
        ),
        (
            "transforms",
            Doc::Array(
                config
                    .transforms
                    .iter()
                    .map(|t| {
                        Doc::obj(vec![
                            ("source", Doc::Str(t.source.clone())),
                            (
                                "op",
                                Doc::Str(
                                    match t.op {
                                        crate::config::TransformOp::Log => "log",
                                        crate::config::TransformOp::Dummy => "dummy",
                                        crate::config::TransformOp::Standardize => "standardize",
                                    }
                                    .to_string(),
                                ),
                            ),
                            ("target", Doc::Str(t.target.clone())),
                            (
                                "reference",
                                t.reference.map_or(Doc::Null, Doc::Int),
                            ),
                        ])
                    })
                    .collect(),
            ),
        ),
        (
            "sem",
            match &config.sem {
                None => Doc::Null,
                Some(s) => Doc::obj(vec![
                    ("latents", Doc::strings(&s.latents)),
                    ("indicators", Doc::strings(&s.indicators)),
                    ("exogenous", Doc::strings(&s.exogenous)),
                    (
                        "loadings",
                        Doc::Array(
                            s.loadings
                                .iter()
                                .map(|(a, b)| {
                                    Doc::Array(vec![Doc::Str(a.clone()), Doc::Str(b.clone())])
                                })
                                .collect(),
                        ),
                    ),
                    (
                        "structural",
                        Doc::Array(
                            s.structural
                                .iter()
                                .map(|(a, b)| {
                                    Doc::Array(vec![Doc::Str(a.clone()), Doc::Str(b.clone())])
                                })
                                .collect(),
                        ),
                    ),
                    (
                        "free_latent_covariances",
                        Doc::Bool(s.free_latent_covariances),
                    ),
                ]),
            },
        ),
        (
            "model",
            Doc::obj(vec![
                ("y1", Doc::Str(model.y1.clone())),
                ("y2", Doc::Str(model.y2.clone())),
                ("y3", Doc::Str(model.y3.clone())),
                ("covariates_y1", Doc::strings(&model.covariates_y1)),
                ("covariates_y2", Doc::strings(&model.covariates_y2)),
                ("covariates_y3", Doc::strings(&model.covariates_y3)),
                ("constant_y1", Doc::Bool(model.constant_y1)),
                ("constant_y2", Doc::Bool(model.constant_y2)),
                ("constant_y3", Doc::Bool(model.constant_y3)),
                ("j2", model.j2.map_or(Doc::Null, |j| Doc::Int(j as i64))),
                ("j3", model.j3.map_or(Doc::Null, |j| Doc::Int(j as i64))),
                ("restrictions", Doc::strings(&model.restrictions)),
            ]),
        ),
        (
            "estimation",
            Doc::obj(vec![
                ("max_iterations", Doc::Int(estimation.max_iterations as i64)),
                ("gradient_tolerance", Doc::Float(estimation.gradient_tolerance)),
                ("multistart_count", Doc::Int(estimation.multistart_count as i64)),
                ("seed", Doc::Int(estimation.seed as i64)),
                ("std_errors", Doc::Bool(estimation.std_errors)),
            ]),
        ),
        (
            "outputs",
            Doc::obj(vec![
                (
                    "report",
                    config
                        .outputs
                        .report
                        .as_ref()
                        .map_or(Doc::Null, |p| Doc::Str(p.display().to_string())),
                ),
                (
                    "results",
                    config
                        .outputs
                        .results
                        .as_ref()
                        .map_or(Doc::Null, |p| Doc::Str(p.display().to_string())),
                ),
                (
                    "scores",
                    config
                        .outputs
                        .scores
                        .as_ref()
                        .map_or(Doc::Null, |p| Doc::Str(p.display().to_string())),
                ),
            ]),
        ),
    ])
}

fn estimation_doc(result: &EstimationResult, fit: Option<&Doc>) -> Doc {
    let names = result.spec.param_names();
    let estimates = constrained_vector(&result.params);
    Doc::obj(vec![
        ("param_names", Doc::strings(&names)),
        ("estimates", Doc::floats(&estimates)),
        (
            "std_errors",
            match &result.std_errors {
                Some(se) => Doc::floats(se),
                None => Doc::Null,
            },
        ),
        (
            "t_stats",
            match &result.t_stats {
                Some(t) => Doc::floats(t),
                None => Doc::Null,
            },
        ),
        ("loglik", Doc::Float(result.loglik)),
        ("iterations", Doc::Int(result.iterations as i64)),
        ("converged", Doc::Bool(result.converged)),
        ("gradient_norm", Doc::Float(result.gradient_norm)),
        ("best_start_index", Doc::Int(result.best_start_index as i64)),
        ("k_free", Doc::Int(result.k_free as i64)),
        (
            "covariates",
            Doc::obj(vec![
                ("y1", Doc::strings(&result.spec.covariates_eq1)),
                ("y2", Doc::strings(&result.spec.covariates_eq2)),
                ("y3", Doc::strings(&result.spec.covariates_eq3)),
            ]),
        ),
        ("fit", fit.cloned().unwrap_or(Doc::Null)),
    ])
}

fn sem_doc(spec: &SemSpec, result: &SemResult) -> Doc {
    let names = spec.parameter_names();
    let estimates = result.params.free_values(spec);
    Doc::obj(vec![
        ("latents", Doc::strings(&spec.latents)),
        ("indicators", Doc::strings(&spec.indicators)),
        ("exogenous", Doc::strings(&spec.exogenous)),
        ("param_names", Doc::strings(&names)),
        ("estimates", Doc::floats(&estimates)),
        (
            "std_errors",
            match &result.std_errors {
                Some(se) => Doc::floats(se),
                None => Doc::Null,
            },
        ),
        ("f_min", Doc::Float(result.f_min)),
        ("converged", Doc::Bool(result.converged)),
        ("iterations", Doc::Int(result.iterations as i64)),
        (
            "fit",
            Doc::obj(vec![
                ("chi_square", Doc::Float(result.fit.chi_square)),
                ("df", Doc::Int(result.fit.df)),
                ("p_value", Doc::Float(result.fit.p_value)),
                ("gfi", Doc::Float(result.fit.gfi)),
                ("agfi", Doc::Float(result.fit.agfi)),
                ("srmr", Doc::Float(result.fit.srmr)),
                ("rmsea", Doc::Float(result.fit.rmsea)),
            ]),
        ),
    ])
}

fn provenance_doc(seed: u64, config_text: &str) -> Doc {
    let mut hasher = Sha256::new();
    hasher.update(config_text.as_bytes());
    let hash = hasher.finalize();
    let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
    Doc::obj(vec![
        ("artifact", Doc::Str("trivar".into())),
        ("version", Doc::Str(env!("CARGO_PKG_VERSION").into())),
        ("seed", Doc::Int(seed as i64)),
        ("config_sha256", Doc::Str(hex)),
    ])
}

struct StageLog {
    sections: Vec<(String, Doc)>,
}

impl StageLog {
    fn partial_doc(&self) -> Doc {
        let mut fields = vec![(
            "status".to_string(),
            Doc::Str("partial (pipeline aborted)".into()),
        )];
        fields.extend(self.sections.clone());
        Doc::Object(fields)
    }
}

/// Run the full pipeline. On a stage failure, partial results (if any) are
/// written next to the configured results path with a `.quarantine` suffix.
pub fn run_pipeline(config: &RunConfig, config_text: &str) -> Result<PipelineOutcome> {
    let mut log = StageLog {
        sections: vec![(
            "provenance".into(),
            provenance_doc(config.estimation.seed, config_text),
        )],
    };
    match run_stages(config, &mut log) {
        Ok(outcome) => Ok(outcome),
        Err(e) => {
            if let Some(results) = &config.outputs.results {
                let mut quarantine = results.clone();
                quarantine.set_extension("quarantine.json");
                if resultdoc::write(&quarantine, &log.partial_doc()).is_ok() {
                    eprintln!(
                        "pipeline aborted; partial artifacts quarantined at `{}`",
                        quarantine.display()
                    );
                }
            }
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, log: &mut StageLog) -> Result<PipelineOutcome> {
    // stage: load
    let mut data = csvio::load_csv(&config.data.path).context("stage load")?;
    let n_loaded = data.n();

    // stage: transforms
    apply_transforms(&mut data, &config.transforms).context("stage transforms")?;

    // stage: bind outcomes
    data.y1_col = Some(config.model.y1.clone());
    data.y2_col = Some(config.model.y2.clone());
    data.y3_col = Some(config.model.y3.clone());
    for outcome in [&config.model.y1, &config.model.y2, &config.model.y3] {
        if !data.has_column(outcome) {
            bail!("stage bind-outcomes: outcome column `{outcome}` not found");
        }
    }

    // stage: listwise deletion over every used, already-present column
    let mut used: Vec<String> = vec![
        config.model.y1.clone(),
        config.model.y2.clone(),
        config.model.y3.clone(),
    ];
    if let Some(sem) = &config.sem {
        used.extend(sem.indicators.iter().cloned());
        used.extend(sem.exogenous.iter().cloned());
    }
    for cov in config
        .model
        .covariates_y1
        .iter()
        .chain(&config.model.covariates_y2)
        .chain(&config.model.covariates_y3)
    {
        if data.has_column(cov) {
            used.push(cov.clone());
        }
    }
    used.sort();
    used.dedup();
    let (mut data, dropped) = data
        .drop_missing(&used)
        .map_err(|e| anyhow::anyhow!("stage listwise-deletion: {e}"))?;
    if dropped > 0 {
        eprintln!("dropped {dropped} rows with missing values in used columns");
    }
    log.sections.push((
        "data".into(),
        Doc::obj(vec![
            ("path", Doc::Str(config.data.path.display().to_string())),
            ("n_loaded", Doc::Int(n_loaded as i64)),
            ("n_dropped_missing", Doc::Int(dropped as i64)),
            ("n_used", Doc::Int(data.n() as i64)),
        ]),
    ));

    // stage: ordinal labels remapped to contiguous 1..J by rank
    for outcome in [config.model.y2.clone(), config.model.y3.clone()] {
        remap_ordinal_labels(&mut data, &outcome)
            .with_context(|| format!("stage remap-ordinal `{outcome}`"))?;
    }

    // stage: first-stage SEM with factor scores appended as columns
    let mut sem_section = Doc::Null;
    if let Some(sem_block) = &config.sem {
        let sem_spec = sem_block.to_spec().context("stage sem-spec")?;
        let sem_result =
            fit_sem(&data, &sem_spec, &SemOptions::default()).context("stage sem-fit")?;
        for (j, latent) in sem_spec.latents.iter().enumerate() {
            let col: Vec<f64> = (0..data.n()).map(|i| sem_result.scores[[i, j]]).collect();
            data.add_column(latent.clone(), col)
                .map_err(|e| anyhow::anyhow!("stage sem-scores: {e}"))?;
        }
        sem_section = sem_doc(&sem_spec, &sem_result);
    }
    log.sections.push(("sem".into(), sem_section.clone()));

    // stage: model spec
    let spec: ModelSpec = config.model.to_spec(&data).context("stage model-spec")?;
    let options = config.estimation.to_options();

    // stage: full estimation
    let full = estimate(&data, &spec, &options).context("stage estimate-full")?;

    // stage: constants-only baseline for the likelihood-ratio index
    let constants = estimate_restricted(&data, &spec, &options, Restriction::ConstantsOnly)
        .context("stage estimate-constants-only")?;

    let full_fit = fit_stats_from_parts(full.loglik, data.n(), full.k_free, constants.loglik)
        .map_err(|e| anyhow::anyhow!("stage fit-stats: {e}"))?;
    let full_fit_doc = Doc::obj(vec![
        ("loglik", Doc::Float(full_fit.loglik)),
        ("n", Doc::Int(full_fit.n as i64)),
        ("k_free", Doc::Int(full_fit.k_free as i64)),
        ("rho_c_sq", Doc::Float(full_fit.rho_c_sq)),
        ("aic_per_obs", Doc::Float(full_fit.aic_per_obs)),
        ("bic_per_obs", Doc::Float(full_fit.bic_per_obs)),
    ]);
    log.sections.push((
        "full_model".into(),
        estimation_doc(&full, Some(&full_fit_doc)),
    ));

    // stage: requested restricted variants plus their tests
    let mut restricted_fields: Vec<(String, Doc)> = vec![(
        "constants_only".into(),
        estimation_doc(&constants, None),
    )];
    let mut lr_rows: Vec<Doc> = Vec::new();
    for name in &config.model.restrictions {
        let restriction = match name.as_str() {
            "independent" => Restriction::Independent,
            "nonrecursive" => Restriction::Nonrecursive,
            other => bail!("stage restrictions: unknown restriction `{other}`"),
        };
        let restricted = estimate_restricted(&data, &spec, &options, restriction)
            .with_context(|| format!("stage estimate-{name}"))?;
        let df = (full.k_free - restricted.k_free) as u32;
        let test = lr_test(full.loglik, restricted.loglik, df)
            .map_err(|e| anyhow::anyhow!("stage lr-test-{name}: {e}"))?;
        let rfit = fit_stats_from_parts(
            restricted.loglik,
            data.n(),
            restricted.k_free,
            constants.loglik,
        )
        .map_err(|e| anyhow::anyhow!("stage fit-stats-{name}: {e}"))?;
        let rfit_doc = Doc::obj(vec![
            ("loglik", Doc::Float(rfit.loglik)),
            ("n", Doc::Int(rfit.n as i64)),
            ("k_free", Doc::Int(rfit.k_free as i64)),
            ("rho_c_sq", Doc::Float(rfit.rho_c_sq)),
            ("aic_per_obs", Doc::Float(rfit.aic_per_obs)),
            ("bic_per_obs", Doc::Float(rfit.bic_per_obs)),
        ]);
        restricted_fields.push((name.clone(), estimation_doc(&restricted, Some(&rfit_doc))));
        lr_rows.push(Doc::obj(vec![
            ("name", Doc::Str(format!("{name}_vs_full"))),
            ("statistic", Doc::Float(test.statistic)),
            ("df", Doc::Int(test.df as i64)),
            ("p_value", Doc::Float(test.p_value)),
        ]));
    }
    log.sections
        .push(("restricted".into(), Doc::Object(restricted_fields)));
    log.sections.push(("lr_tests".into(), Doc::Array(lr_rows)));

    // stage: marginal effects of the full model
    let margins =
        marginal_effects_table(&full, &data, &spec).context("stage marginal-effects")?;
    let margin_rows: Vec<Doc> = margins
        .rows
        .iter()
        .map(|row| {
            Doc::obj(vec![
                ("variable", Doc::Str(row.variable.clone())),
                ("equation", Doc::Int(row.equation as i64)),
                (
                    "kind",
                    Doc::Str(
                        match row.kind {
                            VariableKind::Continuous => "continuous",
                            VariableKind::Dummy => "dummy",
                        }
                        .to_string(),
                    ),
                ),
                ("effects", Doc::floats(&row.effects)),
            ])
        })
        .collect();
    log.sections
        .push(("marginal_effects".into(), Doc::Array(margin_rows)));

    log.sections.push(("config".into(), config_echo(config)));

    // final document; the report is rendered from the parsed document so it
    // is a pure function of the bytes on disk
    let mut fields = Vec::new();
    std::mem::swap(&mut fields, &mut log.sections);
    let doc = Doc::Object(fields);
    let doc_text = resultdoc::render(&doc);
    let parsed: serde_json::Value =
        serde_json::from_str(&doc_text).context("stage render: document round trip")?;
    let report = crate::report::render_report(&parsed).context("stage report")?;
    Ok(PipelineOutcome {
        doc,
        doc_text,
        report,
    })
}

// Ordinal outcomes may arrive with arbitrary numeric labels; estimation
// expects contiguous integers starting at 1, so remap by rank and log any
// non-identity mapping.
fn remap_ordinal_labels(data: &mut Dataset, column: &str) -> Result<()> {
    let values = data
        .column(column)
        .with_context(|| format!("ordinal column `{column}` not found"))?
        .to_vec();
    let mut levels: Vec<f64> = Vec::new();
    for v in values.iter().filter(|v| !v.is_nan()) {
        if !levels.contains(v) {
            levels.push(*v);
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let identity = levels
        .iter()
        .enumerate()
        .all(|(i, &v)| v == (i + 1) as f64);
    if identity {
        return Ok(());
    }
    let remapped: Vec<f64> = values
        .iter()
        .map(|v| {
            if v.is_nan() {
                f64::NAN
            } else {
                (levels.iter().position(|l| l == v).unwrap() + 1) as f64
            }
        })
        .collect();
    eprintln!(
        "remapped {} distinct labels of `{column}` onto 1..={}",
        levels.len(),
        levels.len()
    );
    data.replace_column(column, remapped)
        .map_err(|e| anyhow::anyhow!("{e}"))
}

/// Write pipeline outputs to the configured paths (atomically).
pub fn write_outputs(config: &RunConfig, outcome: &PipelineOutcome) -> Result<()> {
    if let Some(path) = &config.outputs.results {
        crate::atomic_write(path, outcome.doc_text.as_bytes())?;
        eprintln!("wrote results to `{}`", path.display());
    }
    if let Some(path) = &config.outputs.report {
        crate::atomic_write(path, outcome.report.as_bytes())?;
        eprintln!("wrote report to `{}`", path.display());
    }
    Ok(())
}

/// First stage only: fit the SEM, write its result document and the factor
/// scores as CSV.
pub fn run_sem_only(config: &RunConfig, config_text: &str) -> Result<()> {
    let sem_block = config
        .sem
        .as_ref()
        .context("the sem subcommand needs a [sem] block in the config")?;
    let mut data = csvio::load_csv(&config.data.path).context("stage load")?;
    apply_transforms(&mut data, &config.transforms).context("stage transforms")?;
    let mut used: Vec<String> = sem_block.indicators.clone();
    used.extend(sem_block.exogenous.iter().cloned());
    used.sort();
    used.dedup();
    let (data, dropped) = data
        .drop_missing(&used)
        .map_err(|e| anyhow::anyhow!("stage listwise-deletion: {e}"))?;
    if dropped > 0 {
        eprintln!("dropped {dropped} rows with missing values in SEM columns");
    }
    let spec = sem_block.to_spec().context("stage sem-spec")?;
    let result = fit_sem(&data, &spec, &SemOptions::default()).context("stage sem-fit")?;
    let doc = Doc::Object(vec![
        (
            "provenance".into(),
            provenance_doc(config.estimation.seed, config_text),
        ),
        ("sem".into(), sem_doc(&spec, &result)),
    ]);
    let results_path = config
        .outputs
        .results
        .as_ref()
        .context("the sem subcommand needs outputs.results")?;
    resultdoc::write(results_path, &doc)?;
    eprintln!("wrote SEM results to `{}`", results_path.display());
    if let Some(scores_path) = &config.outputs.scores {
        let mut scores_ds = Dataset::new();
        for (j, latent) in spec.latents.iter().enumerate() {
            let col: Vec<f64> = (0..data.n()).map(|i| result.scores[[i, j]]).collect();
            scores_ds
                .add_column(latent.clone(), col)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
        }
        csvio::write_csv(scores_path, &scores_ds)?;
        eprintln!("wrote factor scores to `{}`", scores_path.display());
    }
    Ok(())
}
