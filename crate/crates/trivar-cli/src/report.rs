//! Human-readable report rendered from the parsed result document. The
//! layout groups coefficient/t-statistic pairs per outcome equation under
//! endogenous, latent, exogenous, error-correlation and threshold headings,
//! with a fit footer. Everything comes from the document, so re-rendering a
//! saved document reproduces the report byte for byte.

use anyhow::{Context, Result};
use serde_json::Value;

fn fnum(v: Option<f64>, width: usize, places: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:>width$.places$}"),
        _ => format!("{:>width$}", "-"),
    }
}

struct EquationTable {
    names: Vec<String>,
    estimates: Vec<f64>,
    t_stats: Vec<Option<f64>>,
}

impl EquationTable {
    fn from_doc(node: &Value) -> Result<Self> {
        let names: Vec<String> = node["param_names"]
            .as_array()
            .context("param_names missing")?
            .iter()
            .map(|v| v.as_str().unwrap_or("").to_string())
            .collect();
        let estimates: Vec<f64> = node["estimates"]
            .as_array()
            .context("estimates missing")?
            .iter()
            .map(|v| v.as_f64().unwrap_or(f64::NAN))
            .collect();
        let t_stats: Vec<Option<f64>> = match node["t_stats"].as_array() {
            Some(arr) => arr.iter().map(|v| v.as_f64()).collect(),
            None => vec![None; names.len()],
        };
        Ok(Self {
            names,
            estimates,
            t_stats,
        })
    }

    fn lookup(&self, name: &str) -> Option<(f64, Option<f64>)> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| (self.estimates[i], self.t_stats[i]))
    }
}

fn cell(table: &EquationTable, name: &str) -> String {
    match table.lookup(name) {
        Some((est, t)) => format!(
            "{} {}",
            fnum(Some(est), 10, 4),
            fnum(t.filter(|v| v.is_finite()), 9, 2)
        ),
        None => format!("{:>10} {:>9}", "-", "-"),
    }
}

fn push_row(out: &mut String, label: &str, cells: [String; 3]) {
    out.push_str(&format!(
        "  {label:<26} {}  {}  {}\n",
        cells[0], cells[1], cells[2]
    ));
}

/// Render the report text from a parsed result document.
pub fn render_report(doc: &Value) -> Result<String> {
    let mut out = String::new();
    out.push_str("Recursive trivariate model estimation\n");
    out.push_str("=====================================\n\n");

    let prov = &doc["provenance"];
    out.push_str(&format!(
        "artifact: trivar {}    seed: {}    config sha256: {}\n",
        prov["version"].as_str().unwrap_or("?"),
        prov["seed"].as_i64().unwrap_or(0),
        prov["config_sha256"].as_str().unwrap_or("?"),
    ));
    let data = &doc["data"];
    out.push_str(&format!(
        "data: {} ({} rows loaded, {} dropped for missing values, {} used)\n\n",
        data["path"].as_str().unwrap_or("?"),
        data["n_loaded"].as_i64().unwrap_or(0),
        data["n_dropped_missing"].as_i64().unwrap_or(0),
        data["n_used"].as_i64().unwrap_or(0),
    ));

    // optional first stage
    if !doc["sem"].is_null() {
        let sem = &doc["sem"];
        out.push_str("First stage: structural equation model\n");
        out.push_str("--------------------------------------\n");
        let fit = &sem["fit"];
        out.push_str(&format!(
            "converged: {} ({} iterations), discrepancy F = {:.6}\n",
            if sem["converged"].as_bool().unwrap_or(false) {
                "yes"
            } else {
                "NO"
            },
            sem["iterations"].as_i64().unwrap_or(0),
            sem["f_min"].as_f64().unwrap_or(f64::NAN),
        ));
        out.push_str(&format!(
            "chi-square = {:.3} (df = {}, p = {:.4}), GFI = {:.3}, AGFI = {:.3}, SRMR = {:.3}, RMSEA = {:.3}\n\n",
            fit["chi_square"].as_f64().unwrap_or(f64::NAN),
            fit["df"].as_i64().unwrap_or(0),
            fit["p_value"].as_f64().unwrap_or(f64::NAN),
            fit["gfi"].as_f64().unwrap_or(f64::NAN),
            fit["agfi"].as_f64().unwrap_or(f64::NAN),
            fit["srmr"].as_f64().unwrap_or(f64::NAN),
            fit["rmsea"].as_f64().unwrap_or(f64::NAN),
        ));
        out.push_str(&format!(
            "  {:<34} {:>10} {:>10} {:>9}\n",
            "parameter", "estimate", "std.err", "t-stat"
        ));
        let names = sem["param_names"].as_array().context("sem param_names")?;
        let estimates = sem["estimates"].as_array().context("sem estimates")?;
        let se = sem["std_errors"].as_array();
        for i in 0..names.len() {
            let s = se.and_then(|arr| arr.get(i)).and_then(|v| v.as_f64());
            let est = estimates[i].as_f64();
            let t = match (est, s) {
                (Some(e), Some(s)) if s > 0.0 => Some(e / s),
                _ => None,
            };
            out.push_str(&format!(
                "  {:<34} {} {} {}\n",
                names[i].as_str().unwrap_or("?"),
                fnum(est, 10, 4),
                fnum(s, 10, 4),
                fnum(t, 9, 2),
            ));
        }
        out.push('\n');
    }

    // second stage
    let full = &doc["full_model"];
    let table = EquationTable::from_doc(full)?;
    let model = &doc["config"]["model"];
    let y1 = model["y1"].as_str().unwrap_or("y1");
    let y2 = model["y2"].as_str().unwrap_or("y2");
    let y3 = model["y3"].as_str().unwrap_or("y3");

    out.push_str("Second stage: recursive trivariate model\n");
    out.push_str("----------------------------------------\n");
    out.push_str(&format!(
        "converged: {} ({} iterations, gradient norm {:.2e}, best start {})\n\n",
        if full["converged"].as_bool().unwrap_or(false) {
            "yes"
        } else {
            "NO"
        },
        full["iterations"].as_i64().unwrap_or(0),
        full["gradient_norm"].as_f64().unwrap_or(f64::NAN),
        doc["full_model"]["best_start_index"].as_i64().unwrap_or(0),
    ));

    out.push_str(&format!(
        "  {:<26} {:^20}  {:^20}  {:^20}\n",
        "", y3, y2, y1
    ));
    out.push_str(&format!(
        "  {:<26} {:>10} {:>9}  {:>10} {:>9}  {:>10} {:>9}\n",
        "variable", "coef.", "t-stat", "coef.", "t-stat", "coef.", "t-stat"
    ));

    // endogenous block
    out.push_str("Endogenous variables\n");
    push_row(
        &mut out,
        &format!("{y2} (propensity)"),
        [
            cell(&table, "theta23"),
            format!("{:>10} {:>9}", "-", "-"),
            format!("{:>10} {:>9}", "-", "-"),
        ],
    );
    push_row(
        &mut out,
        y1,
        [
            cell(&table, "theta13"),
            cell(&table, "theta12"),
            format!("{:>10} {:>9}", "-", "-"),
        ],
    );

    // covariate rows: latent variables (factor scores) first, then the rest
    let latents: Vec<String> = match doc["sem"]["latents"].as_array() {
        Some(arr) => arr
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        None => Vec::new(),
    };
    let covs = |key: &str| -> Vec<String> {
        full["covariates"][key]
            .as_array()
            .map(|arr| {
                arr.iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    };
    let mut all_covs: Vec<String> = vec!["constant".to_string()];
    for key in ["y3", "y2", "y1"] {
        for c in covs(key) {
            if !all_covs.contains(&c) {
                all_covs.push(c);
            }
        }
    }
    let (latent_rows, exo_rows): (Vec<&String>, Vec<&String>) = all_covs
        .iter()
        .partition(|c| latents.contains(c));

    let gamma_cells = |cov: &str| -> [String; 3] {
        [
            cell(&table, &format!("gamma3:{cov}")),
            cell(&table, &format!("gamma2:{cov}")),
            cell(&table, &format!("gamma1:{cov}")),
        ]
    };
    if !latent_rows.is_empty() {
        out.push_str("Latent variables\n");
        for cov in latent_rows {
            push_row(&mut out, cov, gamma_cells(cov));
        }
    }
    out.push_str("Exogenous variables\n");
    for cov in exo_rows {
        push_row(&mut out, cov, gamma_cells(cov));
    }

    out.push_str("Error correlations\n");
    push_row(
        &mut out,
        &format!("corr({y2}, {y3})"),
        [
            cell(&table, "rho23"),
            format!("{:>10} {:>9}", "-", "-"),
            format!("{:>10} {:>9}", "-", "-"),
        ],
    );
    push_row(
        &mut out,
        &format!("corr({y1}, {y3})"),
        [
            cell(&table, "rho13"),
            format!("{:>10} {:>9}", "-", "-"),
            format!("{:>10} {:>9}", "-", "-"),
        ],
    );
    push_row(
        &mut out,
        &format!("corr({y1}, {y2})"),
        [
            format!("{:>10} {:>9}", "-", "-"),
            cell(&table, "rho12"),
            format!("{:>10} {:>9}", "-", "-"),
        ],
    );
    out.push_str("Scale\n");
    push_row(
        &mut out,
        "sigma1",
        [
            format!("{:>10} {:>9}", "-", "-"),
            format!("{:>10} {:>9}", "-", "-"),
            cell(&table, "sigma1"),
        ],
    );

    out.push_str("Thresholds\n");
    let max_level = table
        .names
        .iter()
        .filter_map(|n| {
            n.strip_prefix("mu2:")
                .or_else(|| n.strip_prefix("mu3:"))
                .and_then(|s| s.parse::<usize>().ok())
        })
        .max()
        .unwrap_or(1);
    out.push_str("  (threshold 1 is fixed at zero)\n");
    for j in 2..=max_level {
        push_row(
            &mut out,
            &format!("threshold {j}"),
            [
                cell(&table, &format!("mu3:{j}")),
                cell(&table, &format!("mu2:{j}")),
                format!("{:>10} {:>9}", "-", "-"),
            ],
        );
    }

    // footer
    let fit = &full["fit"];
    out.push_str(&format!(
        "\nLL(beta) = {:.3}, rho_c^2 = {:.3}, AIC = {:.3}, BIC = {:.3} (per observation, k_free = {})\n",
        fit["loglik"].as_f64().unwrap_or(f64::NAN),
        fit["rho_c_sq"].as_f64().unwrap_or(f64::NAN),
        fit["aic_per_obs"].as_f64().unwrap_or(f64::NAN),
        fit["bic_per_obs"].as_f64().unwrap_or(f64::NAN),
        fit["k_free"].as_i64().unwrap_or(0),
    ));

    if let Some(tests) = doc["lr_tests"].as_array() {
        if !tests.is_empty() {
            out.push_str("\nLikelihood-ratio tests\n");
            for t in tests {
                out.push_str(&format!(
                    "  {:<24} chi-square = {:.3} (df = {}, p = {:.3e})\n",
                    t["name"].as_str().unwrap_or("?"),
                    t["statistic"].as_f64().unwrap_or(f64::NAN),
                    t["df"].as_i64().unwrap_or(0),
                    t["p_value"].as_f64().unwrap_or(f64::NAN),
                ));
            }
        }
    }

    if let Some(restricted) = doc["restricted"].as_object() {
        out.push_str("\nRestricted models\n");
        for (name, node) in restricted {
            out.push_str(&format!(
                "  {:<24} LL = {:.3} (k_free = {})\n",
                name,
                node["loglik"].as_f64().unwrap_or(f64::NAN),
                node["k_free"].as_i64().unwrap_or(0),
            ));
        }
    }

    if let Some(margins) = doc["marginal_effects"].as_array() {
        if !margins.is_empty() {
            out.push_str("\nAverage marginal effects on level probabilities\n");
            let levels = margins[0]["effects"].as_array().map_or(0, |a| a.len());
            out.push_str(&format!("  {:<22} {:<10} {:<12}", "variable", "equation", "kind"));
            for level in 1..=levels {
                out.push_str(&format!(" {:>9}", format!("level {level}")));
            }
            out.push('\n');
            for row in margins {
                let eq = match row["equation"].as_i64().unwrap_or(0) {
                    2 => y2,
                    3 => y3,
                    _ => "?",
                };
                out.push_str(&format!(
                    "  {:<22} {:<10} {:<12}",
                    row["variable"].as_str().unwrap_or("?"),
                    eq,
                    row["kind"].as_str().unwrap_or("?"),
                ));
                if let Some(effects) = row["effects"].as_array() {
                    for e in effects {
                        out.push_str(&fnum(e.as_f64(), 10, 4));
                    }
                }
                out.push('\n');
            }
        }
    }

    Ok(out)
}
