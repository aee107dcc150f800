use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use trivar_cli::{config, csvio, describe, pipeline, resultdoc};

#[derive(Parser)]
#[command(
    name = "trivar",
    version,
    about = "Full-information maximum likelihood for a recursive trivariate model with one continuous and two ordinal outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full estimation pipeline described by a config file.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw a synthetic dataset from known parameters and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print marginal effects stored in a saved result document.
    Margins {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        variable: String,
        #[arg(long)]
        equation: u8,
    },
    /// Likelihood-ratio test between two saved results.
    Compare {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        restricted: PathBuf,
        #[arg(long)]
        df: u32,
    },
    /// Fit the first-stage SEM only; emit its results and factor scores.
    Sem {
        #[arg(long)]
        config: PathBuf,
    },
    /// Column summaries of a CSV file.
    Describe {
        #[arg(long)]
        data: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { config } => {
            let (cfg, text) = config::load_run_config(&config)?;
            let outcome = pipeline::run_pipeline(&cfg, &text)?;
            pipeline::write_outputs(&cfg, &outcome)?;
            if cfg.outputs.report.is_none() && cfg.outputs.results.is_none() {
                print!("{}", outcome.report);
            }
        }
        Command::Simulate { config, out } => {
            let sim = config::load_sim_config(&config)?;
            let ds = trivar::simulate::sample_dataset(&sim).map_err(|e| anyhow::anyhow!("{e}"))?;
            csvio::write_csv(&out, &ds)?;
            eprintln!("wrote {} simulated rows to `{}`", ds.n(), out.display());
        }
        Command::Margins {
            result,
            variable,
            equation,
        } => {
            if !(equation == 2 || equation == 3) {
                bail!("--equation must be 2 or 3");
            }
            let doc = resultdoc::read(&result)?;
            let margins = doc["marginal_effects"]
                .as_array()
                .context("result document has no marginal_effects section")?;
            let row = margins
                .iter()
                .find(|r| {
                    r["variable"].as_str() == Some(variable.as_str())
                        && r["equation"].as_i64() == Some(equation as i64)
                })
                .with_context(|| {
                    format!("no marginal effects stored for `{variable}` in equation {equation}")
                })?;
            println!(
                "variable: {variable}    equation: {equation}    kind: {}",
                row["kind"].as_str().unwrap_or("?")
            );
            let effects = row["effects"].as_array().context("malformed effects")?;
            for (i, e) in effects.iter().enumerate() {
                println!("level {:>2}: {:+.6}", i + 1, e.as_f64().unwrap_or(f64::NAN));
            }
        }
        Command::Compare {
            full,
            restricted,
            df,
        } => {
            let read_ll = |path: &PathBuf| -> Result<f64> {
                let doc = resultdoc::read(path)?;
                doc["full_model"]["loglik"]
                    .as_f64()
                    .with_context(|| format!("`{}` has no full_model.loglik", path.display()))
            };
            let ll_full = read_ll(&full)?;
            let ll_restricted = read_ll(&restricted)?;
            let test = trivar::inference::lr_test(ll_full, ll_restricted, df)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!(
                "LR statistic = {} (df = {}, p-value = {:.6e})",
                test.statistic, test.df, test.p_value
            );
        }
        Command::Sem { config } => {
            let (cfg, text) = config::load_run_config(&config)?;
            pipeline::run_sem_only(&cfg, &text)?;
        }
        Command::Describe { data } => {
            let ds = csvio::load_csv(&data)?;
            print!("{}", describe::describe(&ds));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
