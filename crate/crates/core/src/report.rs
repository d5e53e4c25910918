//! Renderers for the output tables: aligned plain text, a JSON document, and
//! CSV exports. Rendering is deterministic (no timestamps); text tables show
//! two decimals, machine-readable output keeps full precision.

use serde::{Deserialize, Serialize};

use crate::dataset::{DescriptiveRow, MatchingReport};
use crate::error::Result;
use crate::estimate::EstimationResult;
use crate::inference::{effects_table, fit_statistics, EffectRow, FitStatistics};

/// Role of one packed coefficient in the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientRole {
    Fixed,
    RandomMean,
    Scale,
    HeterogeneityInMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub role: CoefficientRole,
    pub beta: f64,
    pub std_error: Option<f64>,
    pub t_stat: Option<f64>,
}

/// Everything the rendered report shows, in one machine-readable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub kernel: crate::likelihood::KernelKind,
    pub n: usize,
    pub n_strata: usize,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub ll_constant_only: f64,
    pub ll_converged: f64,
    /// Undefined when n <= k + 1.
    pub fit_statistics: Option<FitStatistics>,
    pub coefficients: Vec<CoefficientRow>,
    pub effects: Vec<EffectRow>,
    pub hessian_note: Option<String>,
}

/// Assemble the report document for a fitted model.
pub fn report_doc(result: &EstimationResult) -> ReportDoc {
    let stats = fit_statistics(
        result.ll_constant_only,
        result.ll_converged,
        result.k,
        result.n,
    )
    .ok();
    let flat = result.params.pack();
    let se = |i: usize| result.std_errors.as_ref().map(|v| v[i]);
    let ts = |i: usize| result.t_stats.as_ref().map(|v| v[i]);

    let spec = &result.spec;
    let n_fixed = result.params.beta_fixed.len();
    let n_random = result.params.beta_random_means.len();
    let total_hm = result.params.xi.len();
    let mut coefficients = Vec::with_capacity(result.k);

    // Random coefficients first, each mean followed by its scale row,
    // then heterogeneity-in-means blocks, then the fixed block.
    let random_names: Vec<String> = {
        let mut names = Vec::new();
        if spec.random_intercept {
            names.push("constant".to_string());
        }
        names.extend(spec.randoms.iter().map(|r| r.name.clone()));
        names
    };
    for (m, name) in random_names.iter().enumerate() {
        let mean_i = n_fixed + m;
        coefficients.push(CoefficientRow {
            name: name.clone(),
            role: CoefficientRole::RandomMean,
            beta: flat[mean_i],
            std_error: se(mean_i),
            t_stat: ts(mean_i),
        });
        let sig_i = n_fixed + n_random + total_hm + m;
        coefficients.push(CoefficientRow {
            name: format!("{name} (scale)"),
            role: CoefficientRole::Scale,
            beta: flat[sig_i],
            std_error: se(sig_i),
            t_stat: ts(sig_i),
        });
    }
    let mut xi_pos = 0;
    let hm_start = usize::from(spec.random_intercept);
    for rc in &spec.randoms {
        for z in &rc.hm {
            let i = n_fixed + n_random + xi_pos;
            coefficients.push(CoefficientRow {
                name: format!("{} <- {z}", rc.name),
                role: CoefficientRole::HeterogeneityInMeans,
                beta: flat[i],
                std_error: se(i),
                t_stat: ts(i),
            });
            xi_pos += 1;
        }
    }
    let _ = hm_start;
    for (j, name) in result.param_names.iter().take(n_fixed).enumerate() {
        coefficients.push(CoefficientRow {
            name: name.clone(),
            role: CoefficientRole::Fixed,
            beta: flat[j],
            std_error: se(j),
            t_stat: ts(j),
        });
    }

    ReportDoc {
        kernel: result.kernel,
        n: result.n,
        n_strata: result.n_strata,
        k: result.k,
        converged: result.converged,
        iterations: result.iterations,
        ll_constant_only: result.ll_constant_only,
        ll_converged: result.ll_converged,
        fit_statistics: stats,
        coefficients,
        effects: effects_table(result),
        hessian_note: result.hessian_note.clone(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "---".to_string(),
    }
}

/// All four tables (fit statistics, coefficients, relative risks,
/// distribution effects) as aligned plain text.
pub fn render_report_text(doc: &ReportDoc) -> String {
    let mut out = String::new();
    out.push_str("=== Goodness of fit ===\n");
    out.push_str(&format!("{:<38}{}\n", "Number of observations", doc.n));
    out.push_str(&format!("{:<38}{}\n", "Number of strata", doc.n_strata));
    out.push_str(&format!("{:<38}{}\n", "Degrees of freedom", doc.k));
    out.push_str(&format!(
        "{:<38}{:.2}\n",
        "Log-likelihood with constant only, L0", doc.ll_constant_only
    ));
    out.push_str(&format!(
        "{:<38}{:.2}\n",
        "Log-likelihood at convergence, Lc", doc.ll_converged
    ));
    if let Some(s) = &doc.fit_statistics {
        out.push_str(&format!("{:<38}{:.2}\n", "Chi-square statistic", s.chi_square));
        out.push_str(&format!("{:<38}{:.2}\n", "AIC", s.aic));
        out.push_str(&format!("{:<38}{:.2}\n", "Finite sample AIC", s.aic_finite_sample));
        out.push_str(&format!(
            "{:<38}{:.3}\n",
            "McFadden pseudo R-squared", s.mcfadden_r2
        ));
    }
    out.push_str(&format!(
        "{:<38}{} ({} iterations)\n",
        "Converged",
        if doc.converged { "yes" } else { "no" },
        doc.iterations
    ));
    if let Some(note) = &doc.hessian_note {
        out.push_str(&format!("{:<38}{}\n", "Covariance note", note));
    }

    out.push_str("\n=== Coefficients ===\n");
    out.push_str(&format!(
        "{:<42}{:>12}{:>12}{:>10}\n",
        "Variable", "beta", "std.err", "t-stat"
    ));
    for row in &doc.coefficients {
        out.push_str(&format!(
            "{:<42}{:>12.3}{:>12}{:>10}\n",
            row.name,
            row.beta,
            fmt_opt(row.std_error),
            fmt_opt(row.t_stat),
        ));
    }

    out.push_str("\n=== Relative risks ===\n");
    out.push_str(&format!(
        "{:<42}{:>10}{:>22}\n",
        "Variable", "direction", "% change in risk"
    ));
    for row in &doc.effects {
        out.push_str(&format!(
            "{:<42}{:>10}{:>22.2}\n",
            row.variable, row.direction, row.pct_relative_risk
        ));
    }

    let random_rows: Vec<&EffectRow> =
        doc.effects.iter().filter(|r| r.share_above.is_some()).collect();
    if !random_rows.is_empty() {
        out.push_str("\n=== Distribution effects of random coefficients ===\n");
        out.push_str(&format!(
            "{:<42}{:>12}{:>14}{:>14}\n",
            "Variable", "mean", "above zero", "below zero"
        ));
        for row in random_rows {
            out.push_str(&format!(
                "{:<42}{:>12.3}{:>13.2}%{:>13.2}%\n",
                row.variable,
                row.beta,
                row.share_above.unwrap(),
                row.share_below.unwrap()
            ));
            if let Some(note) = &row.hm_note {
                out.push_str(&format!("    mean shifted by: {note}\n"));
            }
        }
    }
    out
}

pub fn render_report_json(doc: &ReportDoc) -> Result<String> {
    Ok(serde_json::to_string_pretty(doc)?)
}

/// CSV export of the coefficient table.
pub fn coefficients_csv(doc: &ReportDoc) -> String {
    let mut out = String::from("name,role,beta,std_error,t_stat\n");
    for row in &doc.coefficients {
        let role = match row.role {
            CoefficientRole::Fixed => "fixed",
            CoefficientRole::RandomMean => "random_mean",
            CoefficientRole::Scale => "scale",
            CoefficientRole::HeterogeneityInMeans => "hm",
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            escape_csv(&row.name),
            role,
            row.beta,
            row.std_error.map(|v| v.to_string()).unwrap_or_default(),
            row.t_stat.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    out
}

/// CSV export of the relative-risk / distribution-effects table.
pub fn effects_csv(doc: &ReportDoc) -> String {
    let mut out =
        String::from("variable,beta,pct_relative_risk,direction,share_above,share_below,hm_note\n");
    for row in &doc.effects {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            escape_csv(&row.variable),
            row.beta,
            row.pct_relative_risk,
            row.direction,
            row.share_above.map(|v| v.to_string()).unwrap_or_default(),
            row.share_below.map(|v| v.to_string()).unwrap_or_default(),
            escape_csv(row.hm_note.as_deref().unwrap_or("")),
        ));
    }
    out
}

fn escape_csv(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Descriptive case/control comparison table.
pub fn render_describe_text(rows: &[DescriptiveRow], confidence: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Descriptive statistics with two-sample mean comparison at {:.0}% confidence\n",
        confidence * 100.0
    ));
    out.push_str(&format!(
        "{:<32}{:>10}{:>9}{:>9}{:>9}{:>10}{:>9}{:>9}{:>9}{:>9}{:>9}\n",
        "Variable",
        "case mean",
        "sd",
        "min",
        "max",
        "ctrl mean",
        "sd",
        "min",
        "max",
        "t-stat",
        "verdict"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<32}{:>10.2}{:>9.2}{:>9.2}{:>9.2}{:>10.2}{:>9.2}{:>9.2}{:>9.2}{:>9.2}{:>9}\n",
            r.variable,
            r.mean_case,
            r.sd_case,
            r.min_case,
            r.max_case,
            r.mean_control,
            r.sd_control,
            r.min_control,
            r.max_control,
            r.t_statistic,
            r.verdict
        ));
    }
    out
}

pub fn describe_csv(rows: &[DescriptiveRow]) -> String {
    let mut out = String::from(
        "variable,mean_case,sd_case,min_case,max_case,\
         mean_control,sd_control,min_control,max_control,t_statistic,verdict\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            escape_csv(&r.variable),
            r.mean_case,
            r.sd_case,
            r.min_case,
            r.max_case,
            r.mean_control,
            r.sd_control,
            r.min_control,
            r.max_control,
            r.t_statistic,
            r.verdict
        ));
    }
    out
}

/// Per-stratum matching report.
pub fn render_matching_text(report: &MatchingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Matching check (1 case : {} controls per stratum): {}\n",
        report.controls_per_case,
        if report.valid { "VALID" } else { "INVALID" }
    ));
    out.push_str(&format!("Strata: {}\n", report.strata.len()));
    if !report.valid {
        out.push_str("Offending strata:\n");
        for &idx in &report.offending {
            let s = &report.strata[idx];
            out.push_str(&format!(
                "  {}: {} case(s), {} control(s)\n",
                s.stratum_id, s.cases, s.controls
            ));
        }
    }
    out
}
