//! Maximization of the likelihood kernels and post-optimization covariance.
//!
//! The optimizer is BFGS with a backtracking (sufficient-decrease) line
//! search, ascending the selected kernel. Convergence is declared when the
//! gradient infinity norm drops below `grad_tolerance` or the relative
//! log-likelihood change drops below `ll_rel_tolerance`; hitting
//! `max_iterations` returns a result flagged `converged = false`.
//!
//! Mixed-logit fits are staged: a fixed-parameter fit seeds the means, scales
//! start at 0.1, heterogeneity-in-means coefficients at 0. Scales are handled
//! by absolute-value reparameterization and reported as |sigma|.
//!
//! The covariance is the inverse of the negative finite-difference Hessian
//! (observed information); a Hessian that is not negative definite withholds
//! the standard errors and attaches condition diagnostics instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::CaseControlDataset;
use crate::error::{Error, Result};
use crate::likelihood::{
    build_model_draws, DrawsFingerprint, Kernel, KernelKind, ModelSpec, ParameterVector,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    pub max_iterations: usize,
    /// Infinity-norm gradient tolerance.
    pub grad_tolerance: f64,
    /// Relative log-likelihood change tolerance.
    pub ll_rel_tolerance: f64,
    pub initial_params: Option<ParameterVector>,
    /// Relative step for the finite-difference Hessian.
    pub hessian_step: f64,
    /// Total optimization attempts; attempts beyond the first start from
    /// seeded perturbations of the initial point and the best result wins.
    pub restarts: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iterations: 500,
            grad_tolerance: 1e-5,
            ll_rel_tolerance: 1e-8,
            initial_params: None,
            hessian_step: 1e-4,
            restarts: 1,
        }
    }
}

impl OptimOptions {
    fn validate(&self) -> Result<()> {
        if self.grad_tolerance <= 0.0 || self.ll_rel_tolerance <= 0.0 || self.hessian_step <= 0.0 {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTolerance,
    LlTolerance,
    MaxIterations,
    LineSearchFailure,
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Termination::GradTolerance | Termination::LlTolerance)
    }
}

/// Anything BFGS can climb.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.value(theta)?;
        let g = crate::likelihood::fd_gradient(|t| self.value(t), theta)?;
        Ok((v, g))
    }
}

impl Objective for Kernel<'_> {
    fn dim(&self) -> usize {
        self.k()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Kernel::value(self, theta)
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Kernel::value_and_grad(self, theta)
    }
}

#[derive(Debug, Clone)]
pub struct MaximizeOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value after each accepted step (starts at the initial value).
    pub trace: Vec<f64>,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// BFGS ascent of `obj` from `x0`.
pub fn maximize(obj: &dyn Objective, x0: &[f64], opts: &OptimOptions) -> Result<MaximizeOutcome> {
    opts.validate()?;
    let n = obj.dim();
    if x0.len() != n {
        return Err(Error::invalid(format!(
            "initial point has length {}, objective needs {n}",
            x0.len()
        )));
    }
    // Work on the negated objective so the update algebra is the textbook
    // minimization form.
    let eval = |theta: &[f64]| -> Result<(f64, DVector<f64>)> {
        let (v, g) = obj.value_and_grad(theta)?;
        Ok((-v, DVector::from_iterator(n, g.iter().map(|x| -x))))
    };

    let mut x = DVector::from_column_slice(x0);
    let (mut fx, mut gx) = eval(x.as_slice())?;
    if !fx.is_finite() {
        return Err(Error::Numerical(format!(
            "kernel is non-finite at the starting point (value {})",
            -fx
        )));
    }
    let mut trace = vec![-fx];
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;

    for iter in 0..opts.max_iterations {
        if gx.amax() < opts.grad_tolerance {
            termination = Termination::GradTolerance;
            break;
        }
        let mut d = -(&h * &gx);
        let mut slope = gx.dot(&d);
        if slope.is_nan() || slope >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -gx.clone();
            slope = -gx.dot(&gx);
        }

        let mut alpha = 1.0f64;
        let mut accepted: Option<(DVector<f64>, f64, DVector<f64>)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let xt = &x + &d * alpha;
            match eval(xt.as_slice()) {
                Ok((ft, gt)) if ft.is_finite() && ft <= fx + ARMIJO_C1 * alpha * slope => {
                    accepted = Some((xt, ft, gt));
                    break;
                }
                // Non-finite or insufficient decrease (or an interior
                // zero-probability sentinel): shrink the step.
                _ => alpha *= 0.5,
            }
        }
        let Some((xt, ft, gt)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        iterations = iter + 1;
        trace.push(-ft);

        let s = &xt - &x;
        let y = &gt - &gx;
        let sy = s.dot(&y);
        let rel_change = (ft - fx).abs() <= opts.ll_rel_tolerance * (1.0 + ft.abs());

        if sy > 1e-12 * s.norm() * y.norm() {
            if iterations == 1 {
                // Scale the initial inverse Hessian to the first curvature.
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let ident = DMatrix::<f64>::identity(n, n);
            let left = &ident - (&s * y.transpose()) * rho;
            let right = &ident - (&y * s.transpose()) * rho;
            h = &left * h * &right + (&s * s.transpose()) * rho;
        }

        x = xt;
        fx = ft;
        gx = gt;
        if rel_change {
            termination = Termination::LlTolerance;
            break;
        }
    }

    Ok(MaximizeOutcome {
        theta: x.as_slice().to_vec(),
        value: -fx,
        iterations,
        termination,
        trace,
    })
}

/// `maximize` with seeded multi-start; the best converged attempt wins,
/// falling back to the best value.
pub fn maximize_with_restarts(
    obj: &dyn Objective,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<MaximizeOutcome> {
    use rand::{Rng, SeedableRng};
    let mut best: Option<MaximizeOutcome> = None;
    for attempt in 0..opts.restarts {
        let start: Vec<f64> = if attempt == 0 {
            x0.to_vec()
        } else {
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(0xC0FFEE ^ (attempt as u64) << 17);
            x0.iter()
                .map(|&v| v + rng.random_range(-0.5..0.5) * (1.0 + v.abs()))
                .collect()
        };
        let outcome = match maximize(obj, &start, opts) {
            Ok(o) => o,
            Err(e) if attempt + 1 < opts.restarts => {
                // A perturbed start may be infeasible; keep trying.
                let _ = e;
                continue;
            }
            Err(e) => {
                if let Some(b) = best {
                    return Ok(b);
                }
                return Err(e);
            }
        };
        best = match best {
            None => Some(outcome),
            Some(b) => {
                let better = (outcome.termination.converged(), outcome.value)
                    > (b.termination.converged(), b.value);
                Some(if better { outcome } else { b })
            }
        };
    }
    Ok(best.expect("at least one attempt"))
}

/// Covariance, standard errors, and diagnostics at a converged optimum.
#[derive(Debug, Clone)]
pub struct CovarianceOutput {
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub note: Option<String>,
}

/// Inverse negative finite-difference Hessian of the objective at `theta`.
pub fn standard_errors(
    obj: &dyn Objective,
    theta: &[f64],
    hessian_step: f64,
) -> Result<CovarianceOutput> {
    let n = obj.dim();
    let f0 = obj.value(theta)?;
    let steps: Vec<f64> = theta
        .iter()
        .map(|t| hessian_step * t.abs().max(1.0))
        .collect();
    let mut work = theta.to_vec();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let probe = |work: &mut Vec<f64>, i: usize, di: f64, j: usize, dj: f64| -> Result<f64> {
        work[i] += di;
        work[j] += dj;
        let v = obj.value(work);
        work[i] -= di;
        work[j] -= dj;
        v
    };
    for i in 0..n {
        let hi = steps[i];
        let up = probe(&mut work, i, hi, i, 0.0)?;
        let down = probe(&mut work, i, -hi, i, 0.0)?;
        hess[(i, i)] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let pp = probe(&mut work, i, hi, j, hj)?;
            let pm = probe(&mut work, i, hi, j, -hj)?;
            let mp = probe(&mut work, i, -hi, j, hj)?;
            let mm = probe(&mut work, i, -hi, j, -hj)?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let neg_info = -hess;
    match nalgebra::linalg::Cholesky::new(neg_info.clone()) {
        Some(chol) => {
            let cov = chol.inverse();
            let std_errors: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
            let covariance = (0..n)
                .map(|i| (0..n).map(|j| cov[(i, j)]).collect())
                .collect();
            Ok(CovarianceOutput {
                covariance: Some(covariance),
                std_errors: Some(std_errors),
                note: None,
            })
        }
        None => {
            let eig = nalgebra::linalg::SymmetricEigen::new(neg_info);
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let bad = eig.eigenvalues.iter().filter(|&&l| l <= 0.0).count();
            Ok(CovarianceOutput {
                covariance: None,
                std_errors: None,
                note: Some(format!(
                    "information matrix not positive definite: {bad} nonpositive \
                     eigenvalue(s), eigenvalue range [{min:.3e}, {max:.3e}]"
                )),
            })
        }
    }
}

/// Closed-form constant-only fixed-logit fit: (beta0, log-likelihood).
pub fn constant_only_fit(data: &CaseControlDataset) -> Result<(f64, f64)> {
    let n1 = data.n_cases() as f64;
    let n0 = data.n_controls() as f64;
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::invalid(
            "constant-only fit needs both cases and controls",
        ));
    }
    let n = n1 + n0;
    let beta0 = (n1 / n0).ln();
    let ll = n1 * (n1 / n).ln() + n0 * (n0 / n).ln();
    Ok((beta0, ll))
}

/// Constant-only baseline likelihood for the kernel: the Bernoulli closed
/// form at the individual level, the uniform conditional likelihood
/// sum(ln 1/|stratum|) for stratum-level kernels.
pub fn baseline_loglik(data: &CaseControlDataset, kind: KernelKind) -> Result<f64> {
    if kind.is_stratum_level() {
        Ok(-data
            .strata()
            .iter()
            .map(|s| (s.members.len() as f64).ln())
            .sum::<f64>())
    } else {
        constant_only_fit(data).map(|(_, ll)| ll)
    }
}

/// A converged (or not) estimation run with everything the report tables need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub spec: ModelSpec,
    pub kernel: KernelKind,
    /// Reported parameters (scales as absolute values).
    pub params: ParameterVector,
    pub param_names: Vec<String>,
    pub covariance: Option<Vec<Vec<f64>>>,
    pub std_errors: Option<Vec<f64>>,
    pub t_stats: Option<Vec<f64>>,
    pub ll_converged: f64,
    pub ll_constant_only: f64,
    pub n: usize,
    pub n_strata: usize,
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub draws_fingerprint: Option<DrawsFingerprint>,
    pub hessian_note: Option<String>,
}

impl EstimationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<EstimationResult> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fit the kernel the spec selects.
pub fn fit(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    options: &OptimOptions,
) -> Result<EstimationResult> {
    fit_with_kernel(data, spec, KernelKind::for_spec(spec), options)
}

/// Fit a specific kernel (the conditional simulated kernel is only reachable
/// this way; `fit` covers the four spec-selected kernels).
pub fn fit_with_kernel(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    kind: KernelKind,
    options: &OptimOptions,
) -> Result<EstimationResult> {
    options.validate()?;
    let draws = build_model_draws(data, spec, kind)?;
    let kernel = Kernel::new(data, spec, kind, draws.as_ref())?;
    let x0 = match &options.initial_params {
        Some(p) => {
            let packed = p.pack();
            if packed.len() != kernel.k() {
                return Err(Error::invalid(format!(
                    "initial parameter vector has length {}, model needs {}",
                    packed.len(),
                    kernel.k()
                )));
            }
            packed
        }
        None => staged_initial_point(data, spec, kind)?,
    };
    let outcome = maximize_with_restarts(&kernel, &x0, options)?;
    let cov = standard_errors(&kernel, &outcome.theta, options.hessian_step)?;
    let raw = kernel.unpack(&outcome.theta);
    let params = raw.reported();
    let reported_flat = params.pack();
    let t_stats = cov.std_errors.as_ref().map(|ses| {
        reported_flat
            .iter()
            .zip(ses)
            .map(|(b, se)| if *se > 0.0 { b / se } else { f64::NAN })
            .collect()
    });
    Ok(EstimationResult {
        spec: spec.clone(),
        kernel: kind,
        params,
        param_names: kernel.param_names(),
        covariance: cov.covariance,
        std_errors: cov.std_errors,
        t_stats,
        ll_converged: outcome.value,
        ll_constant_only: baseline_loglik(data, kind)?,
        n: data.n(),
        n_strata: data.strata().len(),
        k: kernel.k(),
        converged: outcome.termination.converged(),
        iterations: outcome.iterations,
        termination: outcome.termination,
        draws_fingerprint: kernel.fingerprint(),
        hessian_note: cov.note,
    })
}

/// Seed a mixed fit from the fixed-parameter MLE: means from the staged
/// coefficients, scales at 0.1, heterogeneity-in-means coefficients at 0.
fn staged_initial_point(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    kind: KernelKind,
) -> Result<Vec<f64>> {
    let n_random = spec.n_random();
    let has_constant = spec.constant && !spec.random_intercept;
    let n_fixed = spec.fixed.len() + usize::from(has_constant);
    let total_hm: usize = spec.randoms.iter().map(|r| r.hm.len()).sum();

    if n_random == 0 {
        let mut x0 = vec![0.0; n_fixed];
        if has_constant && !kind.is_stratum_level() {
            x0[0] = constant_only_fit(data)?.0;
        }
        return Ok(x0);
    }

    // Stage: every random coefficient enters fixed.
    let mut stage_fixed = spec.fixed.clone();
    stage_fixed.extend(spec.randoms.iter().map(|r| r.name.clone()));
    let stage_conditional = matches!(kind, KernelKind::SimulatedConditional);
    let stage_spec = ModelSpec {
        constant: spec.constant && !stage_conditional,
        random_intercept: false,
        fixed: stage_fixed,
        randoms: Vec::new(),
        grouping: spec.grouping,
        draws: spec.draws,
        halton: spec.halton.clone(),
    };
    let stage_kind = if stage_conditional {
        KernelKind::Conditional
    } else {
        KernelKind::Fixed
    };
    let stage_kernel = Kernel::new(data, &stage_spec, stage_kind, None)?;
    let stage_n_fixed = stage_spec.fixed.len() + usize::from(stage_spec.constant);
    let mut stage_x0 = vec![0.0; stage_n_fixed];
    if stage_spec.constant {
        stage_x0[0] = constant_only_fit(data)?.0;
    }
    let staged = maximize(
        &stage_kernel,
        &stage_x0,
        &OptimOptions {
            max_iterations: 300,
            ..OptimOptions::default()
        },
    )?;

    // Map the staged coefficients into the mixed layout.
    let stage_const_off = usize::from(stage_spec.constant);
    let mut x0 = vec![0.0; n_fixed + 2 * n_random + total_hm];
    let mut pos = 0;
    if has_constant {
        x0[pos] = if stage_spec.constant { staged.theta[0] } else { 0.0 };
        pos += 1;
    }
    for j in 0..spec.fixed.len() {
        x0[pos] = staged.theta[stage_const_off + j];
        pos += 1;
    }
    let mut mean_pos = pos;
    if spec.random_intercept {
        x0[mean_pos] = if stage_spec.constant { staged.theta[0] } else { 0.0 };
        mean_pos += 1;
    }
    for (r_idx, rc) in spec.randoms.iter().enumerate() {
        let staged_val = staged.theta[stage_const_off + spec.fixed.len() + r_idx];
        x0[mean_pos] = match rc.kind {
            crate::mixing::MixingKind::Lognormal => staged_val.abs().max(0.01).ln(),
            _ => staged_val,
        };
        mean_pos += 1;
    }
    // xi entries stay 0; scales start at 0.1.
    for m in 0..n_random {
        x0[n_fixed + 2 * n_random + total_hm - n_random + m] = 0.1;
    }
    Ok(x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use crate::likelihood::{Grouping, RandomCoef};
    use crate::mixing::MixingKind;
    use crate::quasirandom::HaltonConfig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn value(&self, theta: &[f64]) -> crate::Result<f64> {
            Ok(-theta
                .iter()
                .zip(&self.center)
                .map(|(t, c)| (t - c) * (t - c))
                .sum::<f64>())
        }
        fn value_and_grad(&self, theta: &[f64]) -> crate::Result<(f64, Vec<f64>)> {
            let v = self.value(theta)?;
            let g = theta
                .iter()
                .zip(&self.center)
                .map(|(t, c)| -2.0 * (t - c))
                .collect();
            Ok((v, g))
        }
    }

    fn dataset_351_702(seed: u64) -> CaseControlDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut observations = Vec::new();
        for s in 0..351 {
            for m in 0..3 {
                observations.push(Observation {
                    unit_id: format!("u{s}_{m}"),
                    stratum_id: format!("s{s}"),
                    outcome: u8::from(m == 0),
                    covariates: vec![rng.random_range(-1.0..1.0)],
                });
            }
        }
        CaseControlDataset::new(observations, vec!["x".into()], 2).unwrap()
    }

    fn random_dataset(n_strata: usize, seed: u64, n_cov: usize) -> CaseControlDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut observations = Vec::new();
        for s in 0..n_strata {
            for m in 0..3 {
                let covariates = (0..n_cov).map(|_| rng.random_range(-1.5..1.5)).collect();
                observations.push(Observation {
                    unit_id: format!("u{s}_{m}"),
                    stratum_id: format!("s{s}"),
                    outcome: u8::from(m == 0),
                    covariates,
                });
            }
        }
        let names = (0..n_cov).map(|j| format!("x{j}")).collect();
        CaseControlDataset::new(observations, names, 2).unwrap()
    }

    #[test]
    fn quadratic_converges_fast() {
        let obj = Quadratic {
            center: vec![1.0, -2.5, 0.25, 7.0],
        };
        let outcome = maximize(&obj, &[0.0; 4], &OptimOptions::default()).unwrap();
        assert!(outcome.termination.converged());
        assert!(outcome.iterations <= 30, "{} iterations", outcome.iterations);
        for (t, c) in outcome.theta.iter().zip(&obj.center) {
            assert_abs_diff_eq!(*t, *c, epsilon = 1e-5);
        }
    }

    #[test]
    fn ascent_is_monotone() {
        let data = random_dataset(60, 9, 2);
        let spec = ModelSpec::fixed_only(&["x0", "x1"], true);
        let kernel = Kernel::new(&data, &spec, KernelKind::Fixed, None).unwrap();
        let outcome = maximize(&kernel, &[0.0, 0.0, 0.0], &OptimOptions::default()).unwrap();
        for w in outcome.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "descent step: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn constant_only_anchor_with_standard_errors() {
        let data = dataset_351_702(1);
        let spec = ModelSpec::fixed_only(&[], true);
        let result = fit(&data, &spec, &OptimOptions::default()).unwrap();
        assert!(result.converged);
        assert_abs_diff_eq!(result.params.beta_fixed[0], (0.5f64).ln(), epsilon = 1e-6);
        assert!((result.ll_converged - (-670.24)).abs() < 0.01);
        // Analytic Fisher information for the Bernoulli-logit constant.
        let se = result.std_errors.as_ref().unwrap()[0];
        let expected = 1.0 / (1053.0_f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        assert_abs_diff_eq!(se, expected, epsilon = 1e-3);
        assert_eq!(result.n, 1053);
        assert_eq!(result.k, 1);
    }

    #[test]
    fn t_stat_is_beta_over_se() {
        // A published coefficient of 1.38 with t 3.04 implies se 0.4539.
        let implied = 1.38 / 3.04;
        assert_abs_diff_eq!(implied, 0.4539, epsilon = 5e-4);
        assert_abs_diff_eq!(1.38 / 0.4539, 3.04, epsilon = 5e-3);
    }

    #[test]
    fn duplicating_observations_shrinks_ses_by_sqrt2() {
        let data = random_dataset(80, 33, 2);
        let spec = ModelSpec::fixed_only(&["x0", "x1"], true);
        let base = fit(&data, &spec, &OptimOptions::default()).unwrap();
        let mut doubled: Vec<Observation> = data.observations().to_vec();
        doubled.extend(data.observations().iter().map(|o| Observation {
            unit_id: format!("{}_dup", o.unit_id),
            stratum_id: format!("{}_dup", o.stratum_id),
            ..o.clone()
        }));
        let ddata =
            CaseControlDataset::new(doubled, data.covariate_names().to_vec(), 2).unwrap();
        let twice = fit(&ddata, &spec, &OptimOptions::default()).unwrap();
        let se1 = base.std_errors.as_ref().unwrap();
        let se2 = twice.std_errors.as_ref().unwrap();
        for (a, b) in se1.iter().zip(se2) {
            assert_abs_diff_eq!(b / a, 1.0 / 2f64.sqrt(), epsilon = 1e-3);
        }
    }

    #[test]
    fn covariate_scaling_invariance() {
        let data = random_dataset(100, 17, 2);
        let spec = ModelSpec::fixed_only(&["x0", "x1"], true);
        let base = fit(&data, &spec, &OptimOptions::default()).unwrap();
        let scaled: Vec<Observation> = data
            .observations()
            .iter()
            .map(|o| {
                let mut covs = o.covariates.clone();
                covs[0] *= 10.0;
                Observation {
                    covariates: covs,
                    ..o.clone()
                }
            })
            .collect();
        let sdata = CaseControlDataset::new(scaled, data.covariate_names().to_vec(), 2).unwrap();
        let rescaled = fit(&sdata, &spec, &OptimOptions::default()).unwrap();
        assert!((base.ll_converged - rescaled.ll_converged).abs() < 1e-6);
        let b = base.params.beta_fixed[1];
        let bs = rescaled.params.beta_fixed[1];
        assert_abs_diff_eq!(bs, b / 10.0, epsilon = 1e-6 * (1.0 + b.abs()));
        let t = base.t_stats.as_ref().unwrap()[1];
        let ts = rescaled.t_stats.as_ref().unwrap()[1];
        assert_abs_diff_eq!(t, ts, epsilon = 1e-3);
    }

    #[test]
    fn nesting_never_hurts_the_objective() {
        let data = random_dataset(90, 21, 3);
        let small = ModelSpec::fixed_only(&["x0"], true);
        let big = ModelSpec::fixed_only(&["x0", "x1", "x2"], true);
        let ll_small = fit(&data, &small, &OptimOptions::default())
            .unwrap()
            .ll_converged;
        let ll_big = fit(&data, &big, &OptimOptions::default()).unwrap().ll_converged;
        assert!(ll_big >= ll_small - 1e-6);
    }

    #[test]
    fn fitted_ll_respects_entropy_bound() {
        for seed in [3u64, 14, 25] {
            let data = random_dataset(50, seed, 2);
            let spec = ModelSpec::fixed_only(&["x0", "x1"], true);
            let result = fit(&data, &spec, &OptimOptions::default()).unwrap();
            let p = data.n_cases() as f64 / data.n() as f64;
            let entropy = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            let per_obs = result.ll_converged / data.n() as f64;
            assert!(per_obs <= 0.0);
            assert!(per_obs >= -entropy - 1e-9, "per-obs ll {per_obs} below bound");
        }
    }

    #[test]
    fn results_are_bit_reproducible() {
        let data = random_dataset(40, 77, 2);
        let spec = ModelSpec {
            constant: true,
            random_intercept: false,
            fixed: vec!["x0".into()],
            randoms: vec![RandomCoef {
                name: "x1".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Individual,
            draws: 50,
            halton: HaltonConfig::default(),
        };
        let a = fit(&data, &spec, &OptimOptions::default()).unwrap();
        let b = fit(&data, &spec, &OptimOptions::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.draws_fingerprint.unwrap().r, 50);
    }

    #[test]
    fn max_iterations_flags_non_convergence() {
        let data = random_dataset(60, 31, 2);
        let spec = ModelSpec::fixed_only(&["x0", "x1"], true);
        let result = fit(
            &data,
            &spec,
            &OptimOptions {
                max_iterations: 1,
                initial_params: Some(ParameterVector {
                    beta_fixed: vec![5.0, -4.0, 3.0],
                    beta_random_means: vec![],
                    xi: vec![],
                    sigma: vec![],
                }),
                ..OptimOptions::default()
            },
        )
        .unwrap();
        assert!(!result.converged);
        assert_eq!(result.termination, Termination::MaxIterations);
    }

    #[test]
    fn unusable_start_is_an_error() {
        // A start where every draw's probability underflows for some
        // observation cannot seed the optimizer.
        let data = random_dataset(10, 2, 2);
        let spec = ModelSpec {
            constant: false,
            random_intercept: false,
            fixed: vec!["x0".into()],
            randoms: vec![RandomCoef {
                name: "x1".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Individual,
            draws: 16,
            halton: HaltonConfig::default(),
        };
        let err = fit(
            &data,
            &spec,
            &OptimOptions {
                initial_params: Some(ParameterVector {
                    beta_fixed: vec![-40_000.0],
                    beta_random_means: vec![0.0],
                    xi: vec![],
                    sigma: vec![0.0001],
                }),
                ..OptimOptions::default()
            },
        )
        .unwrap_err();
        assert!(
            matches!(err, crate::Error::ZeroSimulatedProbability { .. }),
            "{err}"
        );
    }

    #[test]
    fn mixed_fit_smoke() {
        let data = random_dataset(120, 5, 2);
        let spec = ModelSpec {
            constant: true,
            random_intercept: false,
            fixed: vec!["x0".into()],
            randoms: vec![RandomCoef {
                name: "x1".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Individual,
            draws: 80,
            halton: HaltonConfig::default(),
        };
        let result = fit(&data, &spec, &OptimOptions::default()).unwrap();
        assert!(result.converged, "termination {:?}", result.termination);
        assert!(result.params.sigma[0] >= 0.0);
        assert_eq!(result.k, 4);
        assert_eq!(result.param_names.len(), 4);
        // The baseline for individual kernels is the Bernoulli closed form.
        assert_abs_diff_eq!(
            result.ll_constant_only,
            constant_only_fit(&data).unwrap().1,
            epsilon = 1e-12
        );
    }

    #[test]
    fn stratum_baseline_is_uniform_conditional() {
        let data = random_dataset(30, 6, 1);
        let ll = baseline_loglik(&data, KernelKind::Conditional).unwrap();
        assert_abs_diff_eq!(ll, 30.0 * (1f64 / 3.0).ln(), epsilon = 1e-12);
    }
}
