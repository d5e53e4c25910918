//! Batch front end: validate and describe matched case-control data, fit
//! models from a declarative model file, compare fitted results, and generate
//! synthetic datasets.
//!
//! Exit codes: 0 success, 1 usage/parse error, 2 data validation failure,
//! 3 non-convergence.

mod modelfile;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mcclogit::dataset::{describe_with, validate_matching, TestVariant};
use mcclogit::estimate::{fit, EstimationResult, OptimOptions};
use mcclogit::inference::{fit_statistics, lr_test};
use mcclogit::report;
use mcclogit::synthlab::{generate, SyntheticTruth};
use mcclogit::{CaseControlDataset, Error};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mcclogit",
    version,
    about = "Matched case-control logit models: fixed, conditional, and random-parameters \
             (mixed) logit via maximum simulated likelihood over scrambled Halton draws"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Check the 1-case-to-m-controls stratum structure.
    Validate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2)]
        controls_per_case: usize,
    },
    /// Per-variable descriptive comparison of cases and controls.
    Describe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, default_value_t = 2)]
        controls_per_case: usize,
        /// Unequal-variance (Welch) t-test instead of the pooled form.
        #[arg(long)]
        welch: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Fit the model described by a model file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Override the model file's draw count.
        #[arg(long)]
        draws: Option<usize>,
        /// Override the model file's Halton seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value_t = 2)]
        controls_per_case: usize,
    },
    /// Compare two or more result documents (fit statistics and LR tests).
    Compare {
        #[arg(required = true, num_args = 2..)]
        results: Vec<PathBuf>,
    },
    /// Generate a synthetic dataset from a truth file.
    Simulate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendered message but use the exit-code contract
            // (help/version requests are success).
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if is_help { EXIT_OK } else { EXIT_USAGE });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<u8, (u8, Error)>;

fn usage(err: Error) -> (u8, Error) {
    (EXIT_USAGE, err)
}

fn load_data(path: &Path, controls_per_case: usize) -> Result<CaseControlDataset, (u8, Error)> {
    CaseControlDataset::load_csv_path(path, controls_per_case).map_err(usage)
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Validate {
            data,
            controls_per_case,
        } => {
            let dataset = load_data(&data, controls_per_case)?;
            let report = validate_matching(&dataset);
            print!("{}", report::render_matching_text(&report));
            println!(
                "Totals: {} cases, {} controls, {} observations",
                dataset.n_cases(),
                dataset.n_controls(),
                dataset.n()
            );
            Ok(if report.valid { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Describe {
            data,
            confidence,
            controls_per_case,
            welch,
            format,
        } => {
            let dataset = load_data(&data, controls_per_case)?;
            let variant = if welch {
                TestVariant::Welch
            } else {
                TestVariant::Pooled
            };
            let rows = describe_with(&dataset, confidence, variant).map_err(usage)?;
            match format {
                Format::Csv => print!("{}", report::describe_csv(&rows)),
                _ => print!("{}", report::render_describe_text(&rows, confidence)),
            }
            Ok(EXIT_OK)
        }
        Command::Fit {
            data,
            model,
            draws,
            seed,
            out,
            format,
            max_iterations,
            restarts,
            controls_per_case,
        } => {
            let dataset = load_data(&data, controls_per_case)?;
            let text = std::fs::read_to_string(&model).map_err(|e| usage(e.into()))?;
            let mut spec = modelfile::parse_model_file(&text).map_err(usage)?;
            if let Some(r) = draws {
                spec.draws = r;
            }
            if let Some(s) = seed {
                spec.halton.seed = s;
            }
            if spec.grouping == mcclogit::Grouping::Stratum && !dataset.matched_valid() {
                let report = validate_matching(&dataset);
                print!("{}", report::render_matching_text(&report));
                return Err((
                    EXIT_VALIDATION,
                    Error::invalid("stratum-level model needs a matched-valid dataset"),
                ));
            }
            let mut options = OptimOptions::default();
            if let Some(n) = max_iterations {
                options.max_iterations = n;
            }
            if let Some(r) = restarts {
                options.restarts = r;
            }
            let result = fit(&dataset, &spec, &options).map_err(|e| (EXIT_USAGE, e))?;
            write_fit_artifacts(&out, &result, format).map_err(|e| (EXIT_USAGE, e))?;
            let doc = report::report_doc(&result);
            print!("{}", report::render_report_text(&doc));
            if result.converged {
                Ok(EXIT_OK)
            } else {
                eprintln!("error: did not converge within the iteration budget");
                Ok(EXIT_NO_CONVERGENCE)
            }
        }
        Command::Compare { results } => {
            let mut loaded = Vec::new();
            for path in &results {
                let text = std::fs::read_to_string(path).map_err(|e| usage(e.into()))?;
                loaded.push(EstimationResult::from_json(&text).map_err(usage)?);
            }
            for pair in loaded.windows(2) {
                if pair[0].spec == pair[1].spec {
                    return Err(usage(Error::invalid(
                        "two results share an identical spec; nothing to compare",
                    )));
                }
            }
            print!("{}", render_comparison(&results, &loaded).map_err(usage)?);
            Ok(EXIT_OK)
        }
        Command::Simulate { truth, out } => {
            let text = std::fs::read_to_string(&truth).map_err(|e| usage(e.into()))?;
            let truth = SyntheticTruth::from_json(&text).map_err(usage)?;
            let dataset = generate(&truth).map_err(usage)?;
            dataset.write_csv_path(&out).map_err(|e| (EXIT_USAGE, e))?;
            let sidecar = out.with_extension("truth.json");
            std::fs::write(&sidecar, truth.to_json().map_err(usage)?)
                .map_err(|e| usage(e.into()))?;
            println!(
                "wrote {} observations ({} strata) to {} with truth sidecar {}",
                dataset.n(),
                dataset.strata().len(),
                out.display(),
                sidecar.display()
            );
            Ok(EXIT_OK)
        }
    }
}

fn write_fit_artifacts(
    out: &Path,
    result: &EstimationResult,
    format: Format,
) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("result.json"), result.to_json()?)?;
    let doc = report::report_doc(result);
    match format {
        Format::Text => std::fs::write(out.join("report.txt"), report::render_report_text(&doc))?,
        Format::Json => std::fs::write(out.join("report.json"), report::render_report_json(&doc)?)?,
        Format::Csv => {
            std::fs::write(out.join("coefficients.csv"), report::coefficients_csv(&doc))?;
            std::fs::write(out.join("effects.csv"), report::effects_csv(&doc))?;
        }
    }
    Ok(())
}

fn result_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().to_string());
    match stem {
        // `result.json` is the conventional artifact name; the directory is
        // the distinguishing part then.
        Some(s) if s == "result" => path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or(s),
        Some(s) => s,
        None => path.display().to_string(),
    }
}

fn render_comparison(paths: &[PathBuf], results: &[EstimationResult]) -> Result<String, Error> {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28}{:>6}{:>8}{:>12}{:>12}{:>10}{:>12}{:>8}\n",
        "Result", "n", "df", "L0", "Lc", "AIC", "FS-AIC", "R2"
    ));
    for (path, r) in paths.iter().zip(results) {
        let name = result_label(path);
        let stats = fit_statistics(r.ll_constant_only, r.ll_converged, r.k, r.n)?;
        out.push_str(&format!(
            "{:<28}{:>6}{:>8}{:>12.2}{:>12.2}{:>10.2}{:>12.2}{:>8.3}\n",
            name, r.n, r.k, r.ll_constant_only, r.ll_converged, stats.aic,
            stats.aic_finite_sample, stats.mcfadden_r2
        ));
    }
    out.push_str("\nLikelihood-ratio tests (nested pairs):\n");
    let mut any = false;
    for i in 0..results.len() {
        for j in 0..results.len() {
            if i == j {
                continue;
            }
            if let Ok(test) = lr_test(&results[i], &results[j]) {
                any = true;
                out.push_str(&format!(
                    "  {} -> {}: statistic {:.3}, df {}, p {:.4}\n",
                    result_label(&paths[i]),
                    result_label(&paths[j]),
                    test.statistic,
                    test.df,
                    test.p_value
                ));
            }
        }
    }
    if !any {
        out.push_str("  none\n");
    }
    Ok(out)
}
