//! Matched case-control data: loading, stratum validation, and descriptive
//! group comparisons.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::special;

/// One rider/record: binary outcome plus covariates, tagged with its stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: String,
    pub stratum_id: String,
    /// 1 = case (injury crash), 0 = control.
    pub outcome: u8,
    pub covariates: Vec<f64>,
}

impl Observation {
    #[inline]
    pub fn is_case(&self) -> bool {
        self.outcome == 1
    }
}

/// A stratum (matched triplet in the 1:2 design): member observation indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub id: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseControlDataset {
    observations: Vec<Observation>,
    covariate_names: Vec<String>,
    strata: Vec<Stratum>,
    n_cases: usize,
    controls_per_case: usize,
    matched_valid: bool,
}

impl CaseControlDataset {
    /// Assemble a dataset, building the stratum partition in order of first
    /// appearance and flagging it matched-valid when every stratum holds
    /// exactly one case and `controls_per_case` controls.
    pub fn new(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        controls_per_case: usize,
    ) -> Result<Self> {
        let k = covariate_names.len();
        let mut seen_units: HashMap<&str, ()> = HashMap::with_capacity(observations.len());
        let mut stratum_index: HashMap<String, usize> = HashMap::new();
        let mut strata: Vec<Stratum> = Vec::new();
        let mut n_cases = 0usize;
        for (i, obs) in observations.iter().enumerate() {
            if obs.covariates.len() != k {
                return Err(Error::invalid(format!(
                    "unit `{}` has {} covariates, expected {k}",
                    obs.unit_id,
                    obs.covariates.len()
                )));
            }
            if obs.outcome > 1 {
                return Err(Error::invalid(format!(
                    "unit `{}` has non-binary outcome {}",
                    obs.unit_id, obs.outcome
                )));
            }
            if seen_units.insert(&obs.unit_id, ()).is_some() {
                return Err(Error::invalid(format!("duplicate unit_id `{}`", obs.unit_id)));
            }
            if obs.is_case() {
                n_cases += 1;
            }
            let idx = *stratum_index.entry(obs.stratum_id.clone()).or_insert_with(|| {
                strata.push(Stratum {
                    id: obs.stratum_id.clone(),
                    members: Vec::new(),
                });
                strata.len() - 1
            });
            strata[idx].members.push(i);
        }
        let mut ds = CaseControlDataset {
            observations,
            covariate_names,
            strata,
            n_cases,
            controls_per_case,
            matched_valid: false,
        };
        ds.matched_valid = validate_matching(&ds).valid;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn n_cases(&self) -> usize {
        self.n_cases
    }

    pub fn n_controls(&self) -> usize {
        self.observations.len() - self.n_cases
    }

    pub fn controls_per_case(&self) -> usize {
        self.controls_per_case
    }

    pub fn matched_valid(&self) -> bool {
        self.matched_valid
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Observation index of the unique case in a stratum, if there is one.
    pub fn stratum_case(&self, stratum: usize) -> Option<usize> {
        let mut case = None;
        for &i in &self.strata[stratum].members {
            if self.observations[i].is_case() {
                if case.is_some() {
                    return None;
                }
                case = Some(i);
            }
        }
        case
    }

    /// Read the CSV wire format: UTF-8, comma separated, header row
    /// `unit_id,stratum_id,outcome,<covariate...>`, decimal point, LF or CRLF.
    pub fn load_csv<R: Read>(reader: R, controls_per_case: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(1, format!("cannot read header: {e}")))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 3 || cols[0] != "unit_id" || cols[1] != "stratum_id" || cols[2] != "outcome"
        {
            return Err(Error::parse(
                1,
                "header must start with `unit_id,stratum_id,outcome`".to_string(),
            ));
        }
        let covariate_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
        let width = cols.len();

        let mut observations = Vec::new();
        for (row_idx, record) in rdr.records().enumerate() {
            let line = row_idx + 2;
            let record = record.map_err(|e| Error::parse(line, format!("malformed row: {e}")))?;
            if record.len() != width {
                return Err(Error::parse(
                    line,
                    format!("wrong field count: got {}, expected {width}", record.len()),
                ));
            }
            let outcome = match record[2].trim() {
                "0" => 0u8,
                "1" => 1u8,
                tok => {
                    return Err(Error::parse(
                        line,
                        format!("non-binary outcome token `{tok}`"),
                    ))
                }
            };
            let mut covariates = Vec::with_capacity(width - 3);
            for (j, field) in record.iter().skip(3).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::parse(
                        line,
                        format!(
                            "non-numeric covariate `{}` in column `{}`",
                            field, covariate_names[j]
                        ),
                    )
                })?;
                covariates.push(v);
            }
            observations.push(Observation {
                unit_id: record[0].to_string(),
                stratum_id: record[1].to_string(),
                outcome,
                covariates,
            });
        }
        Self::new(observations, covariate_names, controls_per_case)
    }

    pub fn load_csv_path(path: &Path, controls_per_case: usize) -> Result<Self> {
        Self::load_csv(std::fs::File::open(path)?, controls_per_case)
    }

    /// Write the same CSV format back out, full f64 precision.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["unit_id".to_string(), "stratum_id".into(), "outcome".into()];
        header.extend(self.covariate_names.iter().cloned());
        wtr.write_record(&header)
            .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        for obs in &self.observations {
            let mut rec = vec![
                obs.unit_id.clone(),
                obs.stratum_id.clone(),
                obs.outcome.to_string(),
            ];
            rec.extend(obs.covariates.iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)
                .map_err(|e| Error::invalid(format!("csv write: {e}")))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Per-stratum case/control counts plus the global matched verdict.
#[derive(Debug, Clone)]
pub struct MatchingReport {
    pub valid: bool,
    pub controls_per_case: usize,
    pub strata: Vec<StratumCount>,
    /// Indices into `strata` of every offending stratum.
    pub offending: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StratumCount {
    pub stratum_id: String,
    pub cases: usize,
    pub controls: usize,
}

/// Check the 1-case-to-m-controls structure stratum by stratum.
pub fn validate_matching(dataset: &CaseControlDataset) -> MatchingReport {
    let m = dataset.controls_per_case;
    let mut counts = Vec::with_capacity(dataset.strata.len());
    let mut offending = Vec::new();
    for (idx, stratum) in dataset.strata.iter().enumerate() {
        let cases = stratum
            .members
            .iter()
            .filter(|&&i| dataset.observations[i].is_case())
            .count();
        let controls = stratum.members.len() - cases;
        if cases != 1 || controls != m {
            offending.push(idx);
        }
        counts.push(StratumCount {
            stratum_id: stratum.id.clone(),
            cases,
            controls,
        });
    }
    MatchingReport {
        valid: offending.is_empty(),
        controls_per_case: m,
        strata: counts,
        offending,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Verdict::Pass => "Pass",
            Verdict::Fail => "Fail",
        })
    }
}

/// Which two-sample t-test to run. The pooled (equal-variance) form is the
/// default; it reproduces the published verdict on the trip-mileage row where
/// the Welch form is marginally significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestVariant {
    #[default]
    Pooled,
    Welch,
}

/// One row of the descriptive comparison table.
#[derive(Debug, Clone)]
pub struct DescriptiveRow {
    pub variable: String,
    pub mean_case: f64,
    pub sd_case: f64,
    pub min_case: f64,
    pub max_case: f64,
    pub mean_control: f64,
    pub sd_control: f64,
    pub min_control: f64,
    pub max_control: f64,
    /// t for H0: mean_control - mean_case = 0 (control minus case in the
    /// numerator, matching the published table's convention).
    pub t_statistic: f64,
    pub verdict: Verdict,
}

/// Two-sample t statistic from group moments, (mean2 - mean1) / se.
///
/// A zero standard error with unequal means yields an infinite sentinel;
/// equal means yield exactly 0.
pub fn two_sample_t_from_moments(
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
    variant: TestVariant,
) -> f64 {
    let diff = mean2 - mean1;
    let (f1, f2) = (n1 as f64, n2 as f64);
    let se = match variant {
        TestVariant::Pooled => {
            let pooled_var =
                ((f1 - 1.0) * sd1 * sd1 + (f2 - 1.0) * sd2 * sd2) / (f1 + f2 - 2.0);
            (pooled_var * (1.0 / f1 + 1.0 / f2)).sqrt()
        }
        TestVariant::Welch => (sd1 * sd1 / f1 + sd2 * sd2 / f2).sqrt(),
    };
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Per-variable descriptive comparison with a pooled-variance t-test at the
/// given confidence level (normal critical value).
pub fn describe(dataset: &CaseControlDataset, confidence: f64) -> Result<Vec<DescriptiveRow>> {
    describe_with(dataset, confidence, TestVariant::Pooled)
}

pub fn describe_with(
    dataset: &CaseControlDataset,
    confidence: f64,
    variant: TestVariant,
) -> Result<Vec<DescriptiveRow>> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!(
            "confidence must lie in (0,1), got {confidence}"
        )));
    }
    let n1 = dataset.n_cases();
    let n2 = dataset.n_controls();
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid(format!(
            "degenerate group size: {n1} cases, {n2} controls (need >= 2 each)"
        )));
    }
    let crit = special::inverse_normal_cdf((1.0 + confidence) / 2.0);
    let mut rows = Vec::with_capacity(dataset.covariate_names.len());
    for (j, name) in dataset.covariate_names.iter().enumerate() {
        let stats = |case: bool| {
            let mut n = 0usize;
            let mut mean = 0.0;
            let mut m2 = 0.0;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for obs in &dataset.observations {
                if obs.is_case() == case {
                    let x = obs.covariates[j];
                    n += 1;
                    let delta = x - mean;
                    mean += delta / n as f64;
                    m2 += delta * (x - mean);
                    min = min.min(x);
                    max = max.max(x);
                }
            }
            let sd = (m2 / (n as f64 - 1.0)).sqrt();
            (mean, sd, min, max)
        };
        let (mean_case, sd_case, min_case, max_case) = stats(true);
        let (mean_control, sd_control, min_control, max_control) = stats(false);
        let t = two_sample_t_from_moments(
            mean_case,
            sd_case,
            n1,
            mean_control,
            sd_control,
            n2,
            variant,
        );
        let verdict = if t.abs() > crit {
            Verdict::Fail
        } else {
            Verdict::Pass
        };
        rows.push(DescriptiveRow {
            variable: name.clone(),
            mean_case,
            sd_case,
            min_case,
            max_case,
            mean_control,
            sd_control,
            min_control,
            max_control,
            t_statistic: t,
            verdict,
        });
    }
    Ok(rows)
}
