//! Synthetic matched case-control data with known truth, and independent
//! oracles (Gauss-Hermite quadrature, enumeration) for the simulated
//! likelihood machinery.
//!
//! Generation and estimation draw from separate sources on purpose: the data
//! generator uses a seeded ChaCha stream, the estimator uses Halton draws, so
//! recovery studies cannot cheat by sharing randomness.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CaseControlDataset, Observation};
use crate::error::{Error, Result};
use crate::likelihood::{sigmoid, Grouping, KernelKind, ModelSpec, ParameterVector};
use crate::mixing::{linear_factor, MixingKind};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    StandardNormal,
    Bernoulli(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Per stratum, draw m+1 members and select the case by the
    /// conditional-logit law over realized utilities.
    Conditional,
    /// Simulate Bernoulli outcomes over a pool, then sample 1 case and m
    /// controls per stratum.
    Population,
}

/// Everything needed to reproduce a synthetic dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub spec: ModelSpec,
    pub true_params: ParameterVector,
    pub n_strata: usize,
    pub controls_per_case: usize,
    /// Covariate laws in CSV column order.
    pub covariate_laws: Vec<(String, CovariateLaw)>,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl SyntheticTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SyntheticTruth> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationReport {
    pub pool_size: usize,
    pub pool_cases: usize,
}

/// Uniform draw strictly inside (0, 1).
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

struct TruthModel<'a> {
    truth: &'a SyntheticTruth,
    fixed_cols: Vec<usize>,
    random_cols: Vec<(Option<usize>, MixingKind, bool, Vec<usize>)>,
    has_constant: bool,
}

impl<'a> TruthModel<'a> {
    fn new(truth: &'a SyntheticTruth) -> Result<TruthModel<'a>> {
        truth.spec.validate()?;
        let lookup = |name: &str| {
            truth
                .covariate_laws
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid(format!("no covariate law for `{name}`")))
        };
        let mut fixed_cols = Vec::new();
        for name in &truth.spec.fixed {
            fixed_cols.push(lookup(name)?);
        }
        let mut random_cols = Vec::new();
        if truth.spec.random_intercept {
            random_cols.push((None, MixingKind::Normal, false, Vec::new()));
        }
        for rc in &truth.spec.randoms {
            let mut hm = Vec::new();
            for z in &rc.hm {
                hm.push(lookup(z)?);
            }
            if !hm.is_empty() && truth.spec.grouping == Grouping::Stratum {
                return Err(Error::invalid(
                    "stratum-level heterogeneity-in-means generation is not supported",
                ));
            }
            random_cols.push((Some(lookup(&rc.name)?), rc.kind, rc.negative, hm));
        }
        let has_constant = truth.spec.constant && !truth.spec.random_intercept;
        let total_hm: usize = random_cols.iter().map(|r| r.3.len()).sum();
        let expected =
            fixed_cols.len() + usize::from(has_constant) + 2 * random_cols.len() + total_hm;
        if truth.true_params.len() != expected {
            return Err(Error::invalid(format!(
                "true_params has {} entries, model needs {expected}",
                truth.true_params.len()
            )));
        }
        Ok(TruthModel {
            truth,
            fixed_cols,
            random_cols,
            has_constant,
        })
    }

    fn draw_covariates(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.truth
            .covariate_laws
            .iter()
            .map(|(_, law)| match law {
                CovariateLaw::StandardNormal => special::inverse_normal_cdf(open_unit(rng)),
                CovariateLaw::Bernoulli(q) => f64::from(open_unit(rng) < *q),
                CovariateLaw::Fixed(v) => *v,
            })
            .collect()
    }

    /// Realize the random coefficients for one unit (or one stratum).
    fn draw_coefs(&self, rng: &mut ChaCha8Rng, covs: Option<&[f64]>) -> Vec<f64> {
        let p = &self.truth.true_params;
        let mut xi_pos = 0usize;
        self.random_cols
            .iter()
            .enumerate()
            .map(|(m, (_, kind, negative, hm))| {
                let mut a = p.beta_random_means[m];
                for &zc in hm {
                    a += p.xi[xi_pos] * covs.expect("hm needs member covariates")[zc];
                    xi_pos += 1;
                }
                let sigma = p.sigma[m].abs();
                let u = open_unit(rng);
                let raw = match kind.draw_space() {
                    crate::quasirandom::DrawSpace::StandardNormal => {
                        special::inverse_normal_cdf(u)
                    }
                    crate::quasirandom::DrawSpace::Uniform01 => u,
                };
                let t = linear_factor(*kind, raw);
                match kind {
                    MixingKind::Lognormal => {
                        let sign = if *negative { -1.0 } else { 1.0 };
                        sign * (a + sigma * t).exp()
                    }
                    _ => a + sigma * t,
                }
            })
            .collect()
    }

    fn linear_index(&self, covs: &[f64], coefs: &[f64]) -> f64 {
        let p = &self.truth.true_params;
        let mut v = 0.0;
        let mut pos = 0;
        if self.has_constant {
            v += p.beta_fixed[0];
            pos = 1;
        }
        for (j, &col) in self.fixed_cols.iter().enumerate() {
            v += p.beta_fixed[pos + j] * covs[col];
        }
        for (coef, (col, _, _, _)) in coefs.iter().zip(&self.random_cols) {
            let x = match col {
                Some(c) => covs[*c],
                None => 1.0,
            };
            v += coef * x;
        }
        v
    }
}

/// Generate a dataset from the truth; see [`generate_with_report`] for the
/// population-pool statistics.
pub fn generate(truth: &SyntheticTruth) -> Result<CaseControlDataset> {
    generate_with_report(truth).map(|(d, _)| d)
}

pub fn generate_with_report(
    truth: &SyntheticTruth,
) -> Result<(CaseControlDataset, GenerationReport)> {
    if truth.n_strata == 0 {
        return Err(Error::invalid("n_strata must be >= 1"));
    }
    let model = TruthModel::new(truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let names: Vec<String> = truth.covariate_laws.iter().map(|(n, _)| n.clone()).collect();
    let m = truth.controls_per_case;

    let (observations, report) = match truth.mode {
        SamplingMode::Conditional => {
            let mut observations = Vec::with_capacity(truth.n_strata * (m + 1));
            for j in 0..truth.n_strata {
                let shared = if truth.spec.grouping == Grouping::Stratum {
                    Some(model.draw_coefs(&mut rng, None))
                } else {
                    None
                };
                let members: Vec<(Vec<f64>, f64)> = (0..=m)
                    .map(|_| {
                        let covs = model.draw_covariates(&mut rng);
                        let coefs = match &shared {
                            Some(c) => c.clone(),
                            None => model.draw_coefs(&mut rng, Some(&covs)),
                        };
                        let v = model.linear_index(&covs, &coefs);
                        (covs, v)
                    })
                    .collect();
                let vmax = members
                    .iter()
                    .map(|(_, v)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = members.iter().map(|(_, v)| (v - vmax).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut target = open_unit(&mut rng) * total;
                let mut case_pos = members.len() - 1;
                for (pos, w) in weights.iter().enumerate() {
                    if target < *w {
                        case_pos = pos;
                        break;
                    }
                    target -= w;
                }
                for (pos, (covs, _)) in members.into_iter().enumerate() {
                    observations.push(Observation {
                        unit_id: format!("s{j}m{pos}"),
                        stratum_id: format!("s{j}"),
                        outcome: u8::from(pos == case_pos),
                        covariates: covs,
                    });
                }
            }
            let report = GenerationReport {
                pool_size: observations.len(),
                pool_cases: truth.n_strata,
            };
            (observations, report)
        }
        SamplingMode::Population => {
            if truth.spec.grouping != Grouping::Individual {
                return Err(Error::invalid(
                    "population-mode generation needs grouping = individual",
                ));
            }
            let needed_cases = truth.n_strata;
            let needed_controls = truth.n_strata * m;
            let cap = 200 * truth.n_strata * (m + 1) + 10_000;
            let mut cases: Vec<Vec<f64>> = Vec::with_capacity(needed_cases);
            let mut controls: Vec<Vec<f64>> = Vec::with_capacity(needed_controls);
            let mut pool_size = 0usize;
            let mut pool_cases = 0usize;
            while cases.len() < needed_cases || controls.len() < needed_controls {
                if pool_size >= cap {
                    return Err(Error::invalid(format!(
                        "population pool exhausted after {cap} draws \
                         ({} cases / {} controls found)",
                        cases.len(),
                        controls.len()
                    )));
                }
                let covs = model.draw_covariates(&mut rng);
                let coefs = model.draw_coefs(&mut rng, Some(&covs));
                let v = model.linear_index(&covs, &coefs);
                let y = open_unit(&mut rng) < sigmoid(v);
                pool_size += 1;
                if y {
                    pool_cases += 1;
                    if cases.len() < needed_cases {
                        cases.push(covs);
                    }
                } else if controls.len() < needed_controls {
                    controls.push(covs);
                }
            }
            let mut observations = Vec::with_capacity(truth.n_strata * (m + 1));
            for (j, case) in cases.into_iter().enumerate() {
                observations.push(Observation {
                    unit_id: format!("s{j}m0"),
                    stratum_id: format!("s{j}"),
                    outcome: 1,
                    covariates: case,
                });
                for i in 0..m {
                    observations.push(Observation {
                        unit_id: format!("s{j}m{}", i + 1),
                        stratum_id: format!("s{j}"),
                        outcome: 0,
                        covariates: controls[j * m + i].clone(),
                    });
                }
            }
            (observations, GenerationReport { pool_size, pool_cases })
        }
    };
    let dataset = CaseControlDataset::new(observations, names, m)?;
    Ok((dataset, report))
}

/// Gauss-Hermite rule adapted to the standard normal weight: nodes `z_q` and
/// weights summing to one, so `E[f(Z)] ~ sum_q w_q f(z_q)`.
///
/// Golub-Welsch: eigendecomposition of the symmetric tridiagonal Jacobi
/// matrix with off-diagonal sqrt(k/2); weights are squared first eigenvector
/// components.
pub fn gauss_hermite_normal(nodes: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nodes < 2 {
        return Err(Error::invalid("quadrature needs at least 2 nodes"));
    }
    let mut jacobi = DMatrix::<f64>::zeros(nodes, nodes);
    for k in 1..nodes {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|q| {
            let t = eig.eigenvalues[q];
            let v0 = eig.eigenvectors[(0, q)];
            (std::f64::consts::SQRT_2 * t, v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(pairs.into_iter().unzip())
}

fn normal_randoms(spec: &ModelSpec) -> Result<Vec<(Option<String>, Vec<String>)>> {
    let mut out = Vec::new();
    if spec.random_intercept {
        out.push((None, Vec::new()));
    }
    for rc in &spec.randoms {
        if rc.kind != MixingKind::Normal {
            return Err(Error::invalid(format!(
                "quadrature oracle supports normal mixing only, got {}",
                rc.kind
            )));
        }
        out.push((Some(rc.name.clone()), rc.hm.clone()));
    }
    if out.is_empty() || out.len() > 2 {
        return Err(Error::invalid(
            "quadrature oracle supports 1 or 2 normal random coefficients",
        ));
    }
    Ok(out)
}

/// Gauss-Hermite replacement of the draw average in the simulated kernels,
/// for specs with one or two normal random coefficients. Tensor-product nodes
/// in two dimensions. The kernel follows the spec's grouping.
pub fn quadrature_loglik(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    nodes: usize,
) -> Result<f64> {
    let kind = KernelKind::for_spec(spec);
    quadrature_loglik_kernel(data, spec, params, nodes, kind)
}

/// Quadrature oracle for an explicit kernel kind (`Simulated`,
/// `SimulatedGrouped`, or stratum-grouped `SimulatedConditional`).
pub fn quadrature_loglik_kernel(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    nodes: usize,
    kind: KernelKind,
) -> Result<f64> {
    if nodes < 16 {
        return Err(Error::invalid("quadrature oracle needs >= 16 nodes"));
    }
    let randoms = normal_randoms(spec)?;
    let (z1, w1) = gauss_hermite_normal(nodes)?;
    // Tensor grid over 1 or 2 dimensions.
    let grid: Vec<(Vec<f64>, f64)> = if randoms.len() == 1 {
        z1.iter().zip(&w1).map(|(&z, &w)| (vec![z], w)).collect()
    } else {
        let mut grid = Vec::with_capacity(nodes * nodes);
        for (za, wa) in z1.iter().zip(&w1) {
            for (zb, wb) in z1.iter().zip(&w1) {
                grid.push((vec![*za, *zb], wa * wb));
            }
        }
        grid
    };

    let col = |name: &str| {
        data.covariate_index(name)
            .ok_or_else(|| Error::invalid(format!("unknown covariate `{name}`")))
    };
    let has_constant = spec.constant && !spec.random_intercept;
    let mut fixed_cols = Vec::new();
    for name in &spec.fixed {
        fixed_cols.push(col(name)?);
    }
    let mut random_cols: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (name, hm) in &randoms {
        let c = match name {
            Some(n) => Some(col(n)?),
            None => None,
        };
        let mut hm_cols = Vec::new();
        for z in hm {
            hm_cols.push(col(z)?);
        }
        random_cols.push((c, hm_cols));
    }

    let fixed_part = |i: usize| -> f64 {
        let x = &data.observations()[i].covariates;
        let mut v = 0.0;
        let mut pos = 0;
        if has_constant {
            v += params.beta_fixed[0];
            pos = 1;
        }
        for (j, &c) in fixed_cols.iter().enumerate() {
            v += params.beta_fixed[pos + j] * x[c];
        }
        v
    };
    // Linear index of observation i at quadrature point zs, reading the
    // heterogeneity-in-means shifters from observation z_obs.
    let index_at = |i: usize, zs: &[f64], z_obs: usize| -> f64 {
        let x = &data.observations()[i].covariates;
        let mut v = fixed_part(i);
        let mut xi_pos = 0;
        for (mm, (c, hm_cols)) in random_cols.iter().enumerate() {
            let mut a = params.beta_random_means[mm];
            for &zc in hm_cols {
                a += params.xi[xi_pos] * data.observations()[z_obs].covariates[zc];
                xi_pos += 1;
            }
            let coef = a + params.sigma[mm].abs() * zs[mm];
            let xv = match c {
                Some(cc) => x[*cc],
                None => 1.0,
            };
            v += coef * xv;
        }
        v
    };

    let mut ll = 0.0;
    match kind {
        KernelKind::Simulated => {
            for (i, obs) in data.observations().iter().enumerate() {
                let s = if obs.is_case() { 1.0 } else { -1.0 };
                let mut p = 0.0;
                for (zs, w) in &grid {
                    p += w * sigmoid(s * index_at(i, zs, i));
                }
                ll += p.ln();
            }
        }
        KernelKind::SimulatedGrouped => {
            for (j, stratum) in data.strata().iter().enumerate() {
                let case = data
                    .stratum_case(j)
                    .ok_or_else(|| Error::invalid("stratum without exactly one case"))?;
                let mut p = 0.0;
                for (zs, w) in &grid {
                    let mut q = 1.0;
                    for &i in &stratum.members {
                        let s = if data.observations()[i].is_case() { 1.0 } else { -1.0 };
                        q *= sigmoid(s * index_at(i, zs, case));
                    }
                    p += w * q;
                }
                ll += p.ln();
            }
        }
        KernelKind::SimulatedConditional => {
            if spec.grouping != Grouping::Stratum {
                return Err(Error::invalid(
                    "conditional quadrature oracle needs stratum grouping (shared draw)",
                ));
            }
            for (j, stratum) in data.strata().iter().enumerate() {
                let case = data
                    .stratum_case(j)
                    .ok_or_else(|| Error::invalid("stratum without exactly one case"))?;
                let mut p = 0.0;
                for (zs, w) in &grid {
                    let vals: Vec<f64> = stratum
                        .members
                        .iter()
                        .map(|&i| index_at(i, zs, case))
                        .collect();
                    let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = vals.iter().map(|v| (v - vmax).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    let case_pos = stratum.members.iter().position(|&i| i == case).unwrap();
                    p += w * weights[case_pos] / total;
                }
                ll += p.ln();
            }
        }
        _ => {
            return Err(Error::invalid(
                "quadrature oracle applies to simulated kernels only",
            ))
        }
    }
    Ok(ll)
}

/// Enumeration oracle for one stratum of the conditional logit: normalized
/// exp(x_i beta) weights over the members.
pub fn brute_force_conditional(covariates: &[Vec<f64>], beta: &[f64]) -> Result<Vec<f64>> {
    if covariates.len() < 2 {
        return Err(Error::invalid("stratum must have at least 2 members"));
    }
    let vals: Vec<f64> = covariates
        .iter()
        .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = vals.iter().map(|v| (v - vmax).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}
