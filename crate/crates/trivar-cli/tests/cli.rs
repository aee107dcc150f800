//! Integration tests driving the compiled binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trivar::simulate::{normal_stream, sample_sem_dataset};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trivar")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SIM_TOML: &str = r#"
[simulate]
preset = "demo"
n = 2500
seed = 11
"#;

const RUN_TOML: &str = r#"
[data]
path = "demo.csv"

[model]
y1 = "y1"
y2 = "y2"
y3 = "y3"
covariates_y1 = ["children", "free_parking", "female"]
covariates_y2 = ["female", "children", "mobility_score"]
covariates_y3 = ["female", "free_parking", "cost_score"]
restrictions = ["independent"]

[estimation]
seed = 5
gradient_tolerance = 1e-4
std_errors = false

[outputs]
report = "out/report.txt"
results = "out/results.json"
"#;

#[test]
fn simulate_then_estimate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", SIM_TOML);
    let out = run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "demo.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("demo.csv").exists());

    write(dir.path(), "run.toml", RUN_TOML);
    let out = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.contains("Recursive trivariate model estimation"));
    assert!(report.contains("Likelihood-ratio tests"));
    assert!(report.contains("independent_vs_full"));

    // the machine-readable document round-trips into the identical report
    let doc = trivar_cli::resultdoc::read(&dir.path().join("out/results.json")).unwrap();
    let rerendered = trivar_cli::report::render_report(&doc).unwrap();
    assert_eq!(report, rerendered, "report is not a pure function of the document");

    // the LR test in the document is significant on correlated data
    let stat = doc["lr_tests"][0]["statistic"].as_f64().unwrap();
    let p = doc["lr_tests"][0]["p_value"].as_f64().unwrap();
    assert!(stat > 20.0, "LR statistic {stat}");
    assert!(p < 1e-3);

    // margins reads the saved document
    let out = run_in(
        dir.path(),
        &["margins", "--result", "out/results.json", "--variable", "cost_score", "--equation", "3"],
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("level  1") && text.contains("level  5"), "{text}");
}

#[test]
fn arbitrary_ordinal_labels_are_remapped() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", SIM_TOML);
    assert!(run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "demo.csv"])
        .status
        .success());
    // relabel y2 levels 1..5 as 10,20,30,40,50
    let text = std::fs::read_to_string(dir.path().join("demo.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let y2_idx = header.split(',').position(|h| h == "y2").unwrap();
    let mut out = header.clone();
    out.push('\n');
    for line in lines {
        let mut fields: Vec<String> = line.split(',').map(str::to_string).collect();
        let level: f64 = fields[y2_idx].parse().unwrap();
        fields[y2_idx] = format!("{}", level * 10.0);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    std::fs::write(dir.path().join("demo.csv"), out).unwrap();

    write(dir.path(), "run.toml", RUN_TOML);
    let run = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("remapped 5 distinct labels of `y2`"), "{err}");
}

#[test]
fn failed_stage_quarantines_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", SIM_TOML);
    assert!(run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "demo.csv"])
        .status
        .success());
    // an unknown restriction aborts after the full model is estimated
    let cfg = RUN_TOML.replace("restrictions = [\"independent\"]", "restrictions = [\"bogus\"]");
    write(dir.path(), "run.toml", &cfg);
    let out = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("quarantine"), "{err}");
    let quarantine = dir.path().join("out/results.quarantine.json");
    assert!(quarantine.exists());
    let doc = trivar_cli::resultdoc::read(&quarantine).unwrap();
    assert!(doc["status"].as_str().unwrap().contains("partial"));
    assert!(doc["full_model"]["loglik"].as_f64().is_some());
    // the real outputs were never written
    assert!(!dir.path().join("out/results.json").exists());
}

#[test]
fn header_only_csv_fails_cleanly_downstream() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("empty.csv"),
        "children,cost_score,female,free_parking,mobility_score,y1,y2,y3\n",
    )
    .unwrap();
    let cfg = RUN_TOML.replace("demo.csv", "empty.csv");
    write(dir.path(), "run.toml", &cfg);
    let out = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    // empty data fails a precondition with a stage-tagged message
    assert!(err.contains("stage"), "{err}");
    assert!(err.contains("y2") || err.contains("observations"), "{err}");
}

#[test]
fn unknown_subcommand_prints_usage_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["frobnicate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn unknown_config_key_fails_closed() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "bad.toml",
        "[data]\npath = \"x.csv\"\nbogus = 1\n\n[model]\ny1 = \"a\"\ny2 = \"b\"\ny3 = \"c\"\n\n[outputs]\n",
    );
    let out = run_in(dir.path(), &["estimate", "--config", "bad.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") || err.contains("unknown field"), "{err}");
}

#[test]
fn missing_column_is_named_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", SIM_TOML);
    assert!(run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "demo.csv"])
        .status
        .success());
    let cfg = RUN_TOML.replace("\"children\", \"free_parking\", \"female\"", "\"no_such_column\"");
    write(dir.path(), "run.toml", &cfg);
    let out = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no_such_column"), "{err}");
}

#[test]
fn compare_reproduces_published_statistic() {
    let dir = tempfile::tempdir().unwrap();
    // minimal documents carrying only the log-likelihood
    write(
        dir.path(),
        "full.json",
        "{\"full_model\": {\"loglik\": -16905.0}}\n",
    );
    write(
        dir.path(),
        "restricted.json",
        "{\"full_model\": {\"loglik\": -17078.0}}\n",
    );
    let out = run_in(
        dir.path(),
        &["compare", "--full", "full.json", "--restricted", "restricted.json", "--df", "3"],
    );
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("LR statistic = 346 "), "{text}");
}

#[test]
fn describe_reports_shares() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "sim.toml", SIM_TOML);
    assert!(run_in(dir.path(), &["simulate", "--config", "sim.toml", "--out", "demo.csv"])
        .status
        .success());
    let out = run_in(dir.path(), &["describe", "--data", "demo.csv"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("rows: 2500"));
    assert!(text.contains("female: category shares"), "{text}");
}

#[test]
fn custom_simulation_config_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "custom.toml",
        r#"
[simulate]
n = 200
seed = 3

[simulate.spec]
covariates_y1 = ["x"]
covariates_y2 = ["x"]
covariates_y3 = ["x"]
j2 = 3
j3 = 3

[simulate.params]
gamma1 = [1.0, 0.5]
gamma2 = [0.4, 0.3]
gamma3 = [0.2, -0.4]
theta12 = 0.0
theta13 = 0.0
theta23 = 0.0
sigma1 = 1.0
rho12 = 0.0
rho13 = 0.0
rho23 = 0.0
mu2 = [0.0, 0.8]
mu3 = [0.0, 0.9]

[simulate.recipes.x]
kind = "normal"
mean = 0.0
sd = 1.0
"#,
    );
    let out = run_in(dir.path(), &["simulate", "--config", "custom.toml", "--out", "c.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "x,y1,y2,y3");
    assert_eq!(text.lines().count(), 201);
}

// Two-stage pipeline: SEM first stage produces factor scores consumed as
// second-stage covariates referenced by latent name.
#[test]
fn two_stage_pipeline_with_sem_scores() {
    use std::collections::BTreeMap;
    use trivar::sem::{SemParams, SemSpec};
    use trivar::simulate::{CovariateRecipe, SemSimConfig};

    let spec = SemSpec {
        indicators: (1..=6).map(|i| format!("u{i}")).collect(),
        exogenous: vec!["x1".into()],
        latents: vec!["f1".into(), "f2".into()],
        loading_pattern: vec![
            vec![true, false],
            vec![true, false],
            vec![true, false],
            vec![false, true],
            vec![false, true],
            vec![false, true],
        ],
        structural_pattern: vec![vec![true], vec![true]],
        free_latent_covariances: false,
    };
    let mut omega = ndarray::Array2::zeros((6, 2));
    for (i, v) in [0.8, 0.7, 0.6].iter().enumerate() {
        omega[[i, 0]] = *v;
    }
    for (i, v) in [0.75, 0.7, 0.6].iter().enumerate() {
        omega[[3 + i, 1]] = *v;
    }
    let mut tau = ndarray::Array2::zeros((2, 1));
    tau[[0, 0]] = 0.4;
    tau[[1, 0]] = -0.3;
    let params = SemParams {
        omega,
        tau,
        theta_diag: vec![0.3; 6],
        nu_cov: ndarray::Array2::eye(2),
    };
    let mut recipes = BTreeMap::new();
    recipes.insert("x1".into(), CovariateRecipe::Normal { mean: 0.0, sd: 1.0 });
    let cfg = SemSimConfig {
        n: 2500,
        seed: 9,
        spec,
        params,
        exogenous_recipes: recipes,
    };
    let (mut ds, z) = sample_sem_dataset(&cfg).unwrap();

    // outcomes built on the true latents with independent errors
    let mut rng = normal_stream(77);
    let n = ds.n();
    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    let mut y3 = Vec::with_capacity(n);
    let x1 = ds.column("x1").unwrap().to_vec();
    for i in 0..n {
        let e1 = rng();
        let e2 = rng();
        let e3 = rng();
        let v1 = 7.0 + 0.3 * z[[i, 0]] + 0.2 * x1[i] + 1.0 * e1;
        let v2s = 0.8 - 0.5 * z[[i, 0]] + e2;
        let v3s = 0.6 + 0.6 * z[[i, 1]] + 0.1 * x1[i] + e3;
        let level = |v: f64| -> f64 {
            if v <= 0.0 {
                1.0
            } else if v <= 0.7 {
                2.0
            } else if v <= 1.4 {
                3.0
            } else {
                4.0
            }
        };
        y1.push(v1);
        y2.push(level(v2s));
        y3.push(level(v3s));
    }
    ds.add_column("y1".into(), y1).unwrap();
    ds.add_column("y2".into(), y2).unwrap();
    ds.add_column("y3".into(), y3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    trivar_cli::csvio::write_csv(&dir.path().join("two_stage.csv"), &ds).unwrap();
    write(
        dir.path(),
        "run.toml",
        r#"
[data]
path = "two_stage.csv"

[sem]
latents = ["f1", "f2"]
indicators = ["u1", "u2", "u3", "u4", "u5", "u6"]
exogenous = ["x1"]
loadings = [
  ["u1", "f1"], ["u2", "f1"], ["u3", "f1"],
  ["u4", "f2"], ["u5", "f2"], ["u6", "f2"],
]
structural = [["f1", "x1"], ["f2", "x1"]]

[model]
y1 = "y1"
y2 = "y2"
y3 = "y3"
covariates_y1 = ["f1", "x1"]
covariates_y2 = ["f1"]
covariates_y3 = ["f2", "x1"]

[estimation]
gradient_tolerance = 1e-4
std_errors = false

[outputs]
report = "report.txt"
results = "results.json"
"#,
    );
    let out = run_in(dir.path(), &["estimate", "--config", "run.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("First stage: structural equation model"), "{report}");
    assert!(report.contains("Latent variables"), "{report}");
    assert!(report.contains("loading:u1~f1"), "{report}");

    // the f1 coefficient in the y2 equation should be negative and sizable
    let doc = trivar_cli::resultdoc::read(&dir.path().join("results.json")).unwrap();
    let names: Vec<String> = doc["full_model"]["param_names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let estimates = doc["full_model"]["estimates"].as_array().unwrap();
    let idx = names.iter().position(|n| n == "gamma2:f1").unwrap();
    let coef = estimates[idx].as_f64().unwrap();
    assert!(coef < -0.2, "gamma2:f1 = {coef}");

    // sem subcommand emits scores
    write(
        dir.path(),
        "sem.toml",
        r#"
[data]
path = "two_stage.csv"

[sem]
latents = ["f1", "f2"]
indicators = ["u1", "u2", "u3", "u4", "u5", "u6"]
exogenous = ["x1"]
loadings = [
  ["u1", "f1"], ["u2", "f1"], ["u3", "f1"],
  ["u4", "f2"], ["u5", "f2"], ["u6", "f2"],
]
structural = [["f1", "x1"], ["f2", "x1"]]

[model]
y1 = "y1"
y2 = "y2"
y3 = "y3"

[outputs]
results = "sem_results.json"
scores = "scores.csv"
"#,
    );
    let out = run_in(dir.path(), &["sem", "--config", "sem.toml"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "f1,f2");
    assert_eq!(scores.lines().count(), 2501);
}
