//! Log-likelihood kernels for matched case-control logit models.
//!
//! Five kernels share one evaluation engine:
//!
//! * [`KernelKind::Fixed`] — plain logit over independent observations.
//! * [`KernelKind::Conditional`] — conditional (fixed-effects) logit over
//!   matched strata; stratum-constant effects cancel.
//! * [`KernelKind::Simulated`] — mixed logit, coefficients realized per
//!   observation from its own draw block and averaged over R draws.
//! * [`KernelKind::SimulatedGrouped`] — mixed logit with one coefficient draw
//!   shared by all members of a stratum; per draw the members' outcome
//!   probabilities are multiplied before averaging.
//! * [`KernelKind::SimulatedConditional`] — the matched-design conditional
//!   likelihood with random coefficients: per draw, the probability that the
//!   observed case is the stratum's case under the conditional-logit law.
//!
//! Random-coefficient means can shift with observed covariates
//! (heterogeneity-in-means). At the individual level the shifters are read
//! from each observation; at the stratum level from the stratum's case.
//!
//! Kernels are pure in `(dataset, spec, params, draws)` and sum their terms
//! in dataset order, so repeated evaluations are bit-identical.
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

use crate::dataset::CaseControlDataset;
use crate::error::{Error, Result};
use crate::mixing::{linear_factor, MixingKind};
use crate::quasirandom::{build_draws, DrawLevel, DrawMatrix, DrawSpace, HaltonConfig, DIMENSION_CAP};
use crate::special;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Individual,
    Stratum,
}

/// One random coefficient declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomCoef {
    pub name: String,
    pub kind: MixingKind,
    /// Negative branch for a lognormal coefficient.
    #[serde(default)]
    pub negative: bool,
    /// Covariates whose values shift this coefficient's mean.
    #[serde(default)]
    pub hm: Vec<String>,
}

/// Declarative model description: which covariates enter fixed, which random
/// (and how they mix), the grouping level, and the draw budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub constant: bool,
    #[serde(default)]
    pub random_intercept: bool,
    pub fixed: Vec<String>,
    #[serde(default)]
    pub randoms: Vec<RandomCoef>,
    pub grouping: Grouping,
    /// Simulation draw count R.
    pub draws: usize,
    pub halton: HaltonConfig,
}

impl ModelSpec {
    /// A fixed-only spec: constant plus the named covariates.
    pub fn fixed_only(names: &[&str], constant: bool) -> ModelSpec {
        ModelSpec {
            constant,
            random_intercept: false,
            fixed: names.iter().map(|s| s.to_string()).collect(),
            randoms: Vec::new(),
            grouping: Grouping::Individual,
            draws: 1000,
            halton: HaltonConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in self.fixed.iter().chain(self.randoms.iter().map(|r| &r.name)) {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!(
                    "covariate `{name}` declared in more than one role"
                )));
            }
        }
        if self.random_intercept && !self.constant {
            return Err(Error::invalid(
                "random_intercept requires the constant to be on",
            ));
        }
        if self.draws == 0 {
            return Err(Error::invalid("draw count R must be >= 1"));
        }
        Ok(())
    }

    /// Number of random coefficients including the random intercept.
    pub fn n_random(&self) -> usize {
        self.randoms.len() + usize::from(self.random_intercept)
    }

    /// Model degrees of freedom (packed parameter count).
    pub fn k(&self) -> usize {
        let n_fixed = self.fixed.len() + usize::from(self.constant && !self.random_intercept);
        let hm: usize = self.randoms.iter().map(|r| r.hm.len()).sum();
        n_fixed + self.n_random() + hm + self.n_random()
    }
}

/// Packed free parameters in declaration order: fixed betas (constant first),
/// random-coefficient means, heterogeneity-in-means coefficients, scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta_fixed: Vec<f64>,
    pub beta_random_means: Vec<f64>,
    pub xi: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ParameterVector {
    pub fn pack(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.beta_fixed.len() + self.beta_random_means.len() + self.xi.len() + self.sigma.len());
        out.extend_from_slice(&self.beta_fixed);
        out.extend_from_slice(&self.beta_random_means);
        out.extend_from_slice(&self.xi);
        out.extend_from_slice(&self.sigma);
        out
    }

    pub fn len(&self) -> usize {
        self.beta_fixed.len() + self.beta_random_means.len() + self.xi.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scales reported as absolute values (the optimizer works on signed
    /// scale parameters).
    pub fn reported(&self) -> ParameterVector {
        ParameterVector {
            sigma: self.sigma.iter().map(|s| s.abs()).collect(),
            ..self.clone()
        }
    }
}

/// Offsets of the packed parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub has_constant: bool,
    /// Fixed block length including the constant.
    pub n_fixed: usize,
    pub n_random: usize,
    pub hm_lens: Vec<usize>,
    hm_offsets: Vec<usize>,
    total_hm: usize,
}

impl ParamLayout {
    fn new(has_constant: bool, n_fixed_covs: usize, hm_lens: Vec<usize>) -> ParamLayout {
        let n_fixed = n_fixed_covs + usize::from(has_constant);
        let n_random = hm_lens.len();
        let mut hm_offsets = Vec::with_capacity(n_random);
        let mut acc = 0;
        for &l in &hm_lens {
            hm_offsets.push(acc);
            acc += l;
        }
        ParamLayout {
            has_constant,
            n_fixed,
            n_random,
            hm_lens,
            hm_offsets,
            total_hm: acc,
        }
    }

    pub fn k(&self) -> usize {
        self.n_fixed + 2 * self.n_random + self.total_hm
    }

    #[inline]
    pub fn mean_idx(&self, m: usize) -> usize {
        self.n_fixed + m
    }

    #[inline]
    pub fn xi_idx(&self, m: usize, l: usize) -> usize {
        self.n_fixed + self.n_random + self.hm_offsets[m] + l
    }

    #[inline]
    pub fn sigma_idx(&self, m: usize) -> usize {
        self.n_fixed + self.n_random + self.total_hm + m
    }

    pub fn unpack(&self, theta: &[f64]) -> ParameterVector {
        ParameterVector {
            beta_fixed: theta[..self.n_fixed].to_vec(),
            beta_random_means: theta[self.n_fixed..self.n_fixed + self.n_random].to_vec(),
            xi: theta[self.n_fixed + self.n_random..self.n_fixed + self.n_random + self.total_hm]
                .to_vec(),
            sigma: theta[self.n_fixed + self.n_random + self.total_hm..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Fixed,
    Conditional,
    Simulated,
    SimulatedGrouped,
    SimulatedConditional,
}

impl KernelKind {
    /// The kernel a spec selects: fixed/conditional logit without random
    /// coefficients, simulated (grouped) mixed logit with them.
    pub fn for_spec(spec: &ModelSpec) -> KernelKind {
        match (spec.n_random() == 0, spec.grouping) {
            (true, Grouping::Individual) => KernelKind::Fixed,
            (true, Grouping::Stratum) => KernelKind::Conditional,
            (false, Grouping::Individual) => KernelKind::Simulated,
            (false, Grouping::Stratum) => KernelKind::SimulatedGrouped,
        }
    }

    pub fn needs_draws(&self) -> bool {
        matches!(
            self,
            KernelKind::Simulated | KernelKind::SimulatedGrouped | KernelKind::SimulatedConditional
        )
    }

    /// Whether the kernel conditions on the matched stratum structure.
    pub fn is_stratum_level(&self) -> bool {
        matches!(
            self,
            KernelKind::Conditional | KernelKind::SimulatedGrouped | KernelKind::SimulatedConditional
        )
    }
}

/// Identifies the draw set an estimate was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawsFingerprint {
    pub seed: u64,
    pub r: usize,
    pub skip: usize,
    pub scramble: bool,
}

/// Draws pre-transformed for a model: one slab per random coefficient, in the
/// linear-factor space of its mixing kind (standard normal z for
/// normal/lognormal, the bounded factor for uniform/triangular, the
/// exponential factor for Weibull).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDraws {
    pub level: DrawLevel,
    pub units: usize,
    pub r: usize,
    pub fingerprint: DrawsFingerprint,
    /// dims[m][unit * r + draw]
    dims: Vec<Vec<f64>>,
}

impl ModelDraws {
    /// Build the routed draw slabs for `kinds` from a scrambled Halton point
    /// set with one prime per random coefficient, in declaration order.
    pub fn build(
        kinds: &[MixingKind],
        units: usize,
        r: usize,
        level: DrawLevel,
        halton: &HaltonConfig,
    ) -> Result<ModelDraws> {
        let config = HaltonConfig {
            dimension: kinds.len(),
            ..halton.clone()
        };
        let matrix = build_draws(&config, units, r, level, DrawSpace::Uniform01)?;
        ModelDraws::from_matrix(&matrix, kinds, halton.skip, halton.scramble)
    }

    /// Route a uniform01 draw matrix per dimension: normal-pathway kinds get
    /// the inverse-normal transform, bounded kinds use the uniforms directly.
    pub fn from_matrix(
        matrix: &DrawMatrix,
        kinds: &[MixingKind],
        skip: usize,
        scramble: bool,
    ) -> Result<ModelDraws> {
        if matrix.space != DrawSpace::Uniform01 {
            return Err(Error::invalid(
                "draw-space mismatch: model draws are routed from uniform01 matrices",
            ));
        }
        if matrix.dimension != kinds.len() {
            return Err(Error::invalid(format!(
                "draw matrix has {} dimensions, model needs {}",
                matrix.dimension,
                kinds.len()
            )));
        }
        let mut dims = vec![Vec::with_capacity(matrix.units * matrix.draws_per_unit); kinds.len()];
        for unit in 0..matrix.units {
            for t in 0..matrix.draws_per_unit {
                for (m, &kind) in kinds.iter().enumerate() {
                    let u = matrix.value(unit, t, m);
                    let raw = match kind.draw_space() {
                        DrawSpace::StandardNormal => special::inverse_normal_cdf(u),
                        DrawSpace::Uniform01 => u,
                    };
                    dims[m].push(linear_factor(kind, raw));
                }
            }
        }
        Ok(ModelDraws {
            level: matrix.level,
            units: matrix.units,
            r: matrix.draws_per_unit,
            fingerprint: DrawsFingerprint {
                seed: matrix.seed,
                r: matrix.draws_per_unit,
                skip,
                scramble,
            },
            dims,
        })
    }

    #[inline]
    fn factor(&self, m: usize, unit: usize, draw: usize) -> f64 {
        self.dims[m][unit * self.r + draw]
    }
}

#[derive(Debug, Clone)]
struct ResolvedRandom {
    name: String,
    /// Covariate column; `None` is the random intercept.
    col: Option<usize>,
    kind: MixingKind,
    negative: bool,
    hm_cols: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ResolvedModel {
    has_constant: bool,
    fixed: Vec<(String, usize)>,
    randoms: Vec<ResolvedRandom>,
}

fn resolve(spec: &ModelSpec, data: &CaseControlDataset) -> Result<ResolvedModel> {
    spec.validate()?;
    let lookup = |name: &str| {
        data.covariate_index(name)
            .ok_or_else(|| Error::invalid(format!("unknown covariate `{name}` in model spec")))
    };
    let mut fixed = Vec::with_capacity(spec.fixed.len());
    for name in &spec.fixed {
        fixed.push((name.clone(), lookup(name)?));
    }
    let mut randoms = Vec::with_capacity(spec.n_random());
    if spec.random_intercept {
        randoms.push(ResolvedRandom {
            name: "constant".to_string(),
            col: None,
            kind: MixingKind::Normal,
            negative: false,
            hm_cols: Vec::new(),
        });
    }
    for rc in &spec.randoms {
        let mut hm_cols = Vec::with_capacity(rc.hm.len());
        for z in &rc.hm {
            hm_cols.push(lookup(z)?);
        }
        randoms.push(ResolvedRandom {
            name: rc.name.clone(),
            col: Some(lookup(&rc.name)?),
            kind: rc.kind,
            negative: rc.negative,
            hm_cols,
        });
    }
    Ok(ResolvedModel {
        has_constant: spec.constant && !spec.random_intercept,
        fixed,
        randoms,
    })
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln sigmoid(x), finite for all finite x.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// P(outcome = 1) for a linear index: 1/(1 + exp(-x)), overflow-free.
pub fn logit_probability(linear_index: f64) -> Result<f64> {
    if !linear_index.is_finite() {
        return Err(Error::Numerical(format!(
            "logit probability of non-finite index {linear_index}"
        )));
    }
    Ok(sigmoid(linear_index))
}

/// A likelihood kernel bound to a dataset, resolved model, and (when needed)
/// a draw set. Evaluation is deterministic and allocation-light.
pub struct Kernel<'a> {
    data: &'a CaseControlDataset,
    pub kind: KernelKind,
    spec: ModelSpec,
    resolved: ResolvedModel,
    layout: ParamLayout,
    draws: Option<&'a ModelDraws>,
    /// Case observation index per stratum (stratum-level kernels).
    stratum_cases: Vec<usize>,
}

/// Which draw level and unit count a kernel kind needs.
pub fn draw_plan(kind: KernelKind, grouping: Grouping, data: &CaseControlDataset) -> (DrawLevel, usize) {
    match kind {
        KernelKind::Simulated => (DrawLevel::Individual, data.n()),
        KernelKind::SimulatedGrouped => (DrawLevel::Stratum, data.strata().len()),
        KernelKind::SimulatedConditional => match grouping {
            Grouping::Individual => (DrawLevel::Individual, data.n()),
            Grouping::Stratum => (DrawLevel::Stratum, data.strata().len()),
        },
        _ => (DrawLevel::Individual, 0),
    }
}

impl<'a> Kernel<'a> {
    pub fn new(
        data: &'a CaseControlDataset,
        spec: &ModelSpec,
        kind: KernelKind,
        draws: Option<&'a ModelDraws>,
    ) -> Result<Kernel<'a>> {
        let resolved = resolve(spec, data)?;
        match kind {
            KernelKind::Fixed | KernelKind::Conditional => {
                if !resolved.randoms.is_empty() {
                    return Err(Error::invalid(
                        "fixed/conditional kernels take no random coefficients",
                    ));
                }
            }
            _ => {
                if resolved.randoms.is_empty() {
                    return Err(Error::invalid("simulated kernels need random coefficients"));
                }
            }
        }
        if matches!(kind, KernelKind::Conditional | KernelKind::SimulatedConditional)
            && (resolved.has_constant || spec.random_intercept)
        {
            return Err(Error::invalid(
                "the constant cancels in conditional kernels; turn it off",
            ));
        }
        let mut stratum_cases = Vec::new();
        if kind.is_stratum_level() {
            if !data.matched_valid() {
                return Err(Error::invalid(
                    "stratum-level kernels need a matched-valid dataset",
                ));
            }
            for s in 0..data.strata().len() {
                let case = data.stratum_case(s).ok_or_else(|| {
                    Error::invalid(format!(
                        "stratum `{}` does not have exactly one case",
                        data.strata()[s].id
                    ))
                })?;
                stratum_cases.push(case);
            }
        }
        let layout = ParamLayout::new(
            resolved.has_constant,
            resolved.fixed.len(),
            resolved.randoms.iter().map(|r| r.hm_cols.len()).collect(),
        );
        if kind.needs_draws() {
            let d = draws.ok_or_else(|| Error::invalid("simulated kernel without draws"))?;
            let (level, units) = draw_plan(kind, spec.grouping, data);
            if d.level != level || d.units != units {
                return Err(Error::invalid(format!(
                    "draw matrix built at {:?}/{} units, kernel needs {:?}/{}",
                    d.level, d.units, level, units
                )));
            }
            if d.dims.len() != resolved.randoms.len() {
                return Err(Error::invalid("draw matrix dimension mismatch"));
            }
        }
        Ok(Kernel {
            data,
            kind,
            spec: spec.clone(),
            resolved,
            layout,
            draws: if kind.needs_draws() { draws } else { None },
            stratum_cases,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &CaseControlDataset {
        self.data
    }

    pub fn fingerprint(&self) -> Option<DrawsFingerprint> {
        self.draws.map(|d| d.fingerprint)
    }

    /// Human-readable packed-parameter names in layout order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.k());
        if self.layout.has_constant {
            names.push("constant".to_string());
        }
        for (name, _) in &self.resolved.fixed {
            names.push(name.clone());
        }
        for r in &self.resolved.randoms {
            names.push(r.name.clone());
        }
        for r in &self.resolved.randoms {
            for &zc in &r.hm_cols {
                names.push(format!("{}:hm:{}", r.name, self.data.covariate_names()[zc]));
            }
        }
        for r in &self.resolved.randoms {
            names.push(format!("{}:scale", r.name));
        }
        names
    }

    pub fn unpack(&self, theta: &[f64]) -> ParameterVector {
        self.layout.unpack(theta)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.k() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, model needs {}",
                theta.len(),
                self.k()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter".to_string()));
        }
        Ok(())
    }

    /// Fixed-part linear index of an observation.
    #[inline]
    fn fixed_part(&self, theta: &[f64], i: usize) -> f64 {
        let x = &self.data.observations()[i].covariates;
        let mut v = 0.0;
        let mut p = 0;
        if self.layout.has_constant {
            v += theta[0];
            p = 1;
        }
        for (j, &(_, col)) in self.resolved.fixed.iter().enumerate() {
            v += theta[p + j] * x[col];
        }
        v
    }

    /// Location of random coefficient `m` for the observation whose
    /// covariates provide the heterogeneity-in-means shifters.
    #[inline]
    fn hm_location(&self, theta: &[f64], m: usize, z_obs: usize) -> f64 {
        let mut a = theta[self.layout.mean_idx(m)];
        let rc = &self.resolved.randoms[m];
        for (l, &zc) in rc.hm_cols.iter().enumerate() {
            a += theta[self.layout.xi_idx(m, l)] * self.data.observations()[z_obs].covariates[zc];
        }
        a
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        match self.kind {
            KernelKind::Fixed => Ok(self.fixed_value(theta)),
            KernelKind::Conditional => Ok(self.conditional_value(theta)),
            KernelKind::Simulated => self.simulated(theta, None).map(|(v, _)| v),
            KernelKind::SimulatedGrouped => self.grouped(theta, None).map(|(v, _)| v),
            KernelKind::SimulatedConditional => {
                self.simulated_conditional(theta, None).map(|(v, _)| v)
            }
        }
    }

    /// Log-likelihood together with its analytic gradient.
    pub fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_theta(theta)?;
        let mut grad = vec![0.0; self.k()];
        let value = match self.kind {
            KernelKind::Fixed => self.fixed_value_grad(theta, &mut grad),
            KernelKind::Conditional => self.conditional_value_grad(theta, &mut grad),
            KernelKind::Simulated => self.simulated(theta, Some(&mut grad))?.0,
            KernelKind::SimulatedGrouped => self.grouped(theta, Some(&mut grad))?.0,
            KernelKind::SimulatedConditional => {
                self.simulated_conditional(theta, Some(&mut grad))?.0
            }
        };
        Ok((value, grad))
    }

    fn fixed_value(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (i, obs) in self.data.observations().iter().enumerate() {
            let s = if obs.is_case() { 1.0 } else { -1.0 };
            ll += log_sigmoid(s * self.fixed_part(theta, i));
        }
        ll
    }

    fn fixed_value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut ll = 0.0;
        for (i, obs) in self.data.observations().iter().enumerate() {
            let s = if obs.is_case() { 1.0 } else { -1.0 };
            let v = self.fixed_part(theta, i);
            ll += log_sigmoid(s * v);
            let w = s * sigmoid(-s * v);
            self.add_fixed_grad(grad, i, w);
        }
        ll
    }

    #[inline]
    fn add_fixed_grad(&self, grad: &mut [f64], i: usize, w: f64) {
        let x = &self.data.observations()[i].covariates;
        let mut p = 0;
        if self.layout.has_constant {
            grad[0] += w;
            p = 1;
        }
        for (j, &(_, col)) in self.resolved.fixed.iter().enumerate() {
            grad[p + j] += w * x[col];
        }
    }

    fn conditional_value(&self, theta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (s_idx, stratum) in self.data.strata().iter().enumerate() {
            let case = self.stratum_cases[s_idx];
            let vals: Vec<f64> = stratum
                .members
                .iter()
                .map(|&i| self.fixed_part(theta, i))
                .collect();
            let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = vmax + vals.iter().map(|v| (v - vmax).exp()).sum::<f64>().ln();
            let case_pos = stratum.members.iter().position(|&i| i == case).unwrap();
            ll += vals[case_pos] - lse;
        }
        ll
    }

    fn conditional_value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut ll = 0.0;
        for (s_idx, stratum) in self.data.strata().iter().enumerate() {
            let case = self.stratum_cases[s_idx];
            let vals: Vec<f64> = stratum
                .members
                .iter()
                .map(|&i| self.fixed_part(theta, i))
                .collect();
            let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = vals.iter().map(|v| (v - vmax).exp()).collect();
            let wsum: f64 = weights.iter().sum();
            let case_pos = stratum.members.iter().position(|&i| i == case).unwrap();
            ll += vals[case_pos] - (vmax + wsum.ln());
            self.add_fixed_grad(grad, case, 1.0);
            for (pos, &i) in stratum.members.iter().enumerate() {
                self.add_fixed_grad(grad, i, -weights[pos] / wsum);
            }
        }
        ll
    }

    /// Realized coefficient of random `m` and its partials w.r.t. the
    /// location and the signed scale parameter.
    #[inline]
    fn coef_and_partials(
        &self,
        theta: &[f64],
        m: usize,
        a: f64,
        unit: usize,
        draw: usize,
    ) -> (f64, f64, f64) {
        let rc = &self.resolved.randoms[m];
        let sraw = theta[self.layout.sigma_idx(m)];
        let (sabs, ssign) = (sraw.abs(), if sraw >= 0.0 { 1.0 } else { -1.0 });
        let t = self.draws.unwrap().factor(m, unit, draw);
        match rc.kind {
            MixingKind::Lognormal => {
                let sign = if rc.negative { -1.0 } else { 1.0 };
                let coef = sign * (a + sabs * t).exp();
                (coef, coef, coef * t * ssign)
            }
            _ => (a + sabs * t, 1.0, t * ssign),
        }
    }

    /// Simulated mixed logit across independent observations.
    fn simulated(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<(f64, ())> {
        let draws = self.draws.unwrap();
        let r = draws.r;
        let nr = self.resolved.randoms.len();
        let mut ll = 0.0;
        let mut locs = vec![0.0; nr];
        let mut ga = vec![0.0; nr];
        let mut gs = vec![0.0; nr];
        for (i, obs) in self.data.observations().iter().enumerate() {
            let s = if obs.is_case() { 1.0 } else { -1.0 };
            let base = self.fixed_part(theta, i);
            for m in 0..nr {
                locs[m] = self.hm_location(theta, m, i);
            }
            let mut psum = 0.0;
            let mut gfix = 0.0;
            ga.fill(0.0);
            gs.fill(0.0);
            for t in 0..r {
                let mut v = base;
                if grad.is_some() {
                    // Two passes over the randoms: value then weighted partials.
                    let mut das = [0.0; DIMENSION_CAP];
                    let mut dss = [0.0; DIMENSION_CAP];
                    let mut xs = [0.0; DIMENSION_CAP];
                    for m in 0..nr {
                        let (coef, da, ds) = self.coef_and_partials(theta, m, locs[m], i, t);
                        let x = match self.resolved.randoms[m].col {
                            Some(c) => obs.covariates[c],
                            None => 1.0,
                        };
                        v += coef * x;
                        das[m] = da;
                        dss[m] = ds;
                        xs[m] = x;
                    }
                    let p = sigmoid(s * v);
                    psum += p;
                    let w = p * (1.0 - p) * s;
                    gfix += w;
                    for m in 0..nr {
                        ga[m] += w * xs[m] * das[m];
                        gs[m] += w * xs[m] * dss[m];
                    }
                } else {
                    for m in 0..nr {
                        let (coef, _, _) = self.coef_and_partials(theta, m, locs[m], i, t);
                        let x = match self.resolved.randoms[m].col {
                            Some(c) => obs.covariates[c],
                            None => 1.0,
                        };
                        v += coef * x;
                    }
                    psum += sigmoid(s * v);
                }
            }
            if psum <= 0.0 {
                return Err(Error::ZeroSimulatedProbability {
                    unit: obs.unit_id.clone(),
                });
            }
            ll += (psum / r as f64).ln();
            if let Some(g) = grad.as_deref_mut() {
                let inv = 1.0 / psum;
                self.add_fixed_grad(g, i, gfix * inv);
                for m in 0..nr {
                    g[self.layout.mean_idx(m)] += ga[m] * inv;
                    for (l, &zc) in self.resolved.randoms[m].hm_cols.iter().enumerate() {
                        g[self.layout.xi_idx(m, l)] += ga[m] * inv * obs.covariates[zc];
                    }
                    g[self.layout.sigma_idx(m)] += gs[m] * inv;
                }
            }
        }
        Ok((ll, ()))
    }

    /// Grouped simulated mixed logit: one coefficient draw per stratum, the
    /// members' outcome probabilities multiplied within each draw.
    fn grouped(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> Result<(f64, ())> {
        let draws = self.draws.unwrap();
        let r = draws.r;
        let nr = self.resolved.randoms.len();
        let obs = self.data.observations();
        let mut ll = 0.0;
        let mut locs = vec![0.0; nr];
        let mut acc_mean = vec![0.0; nr];
        let mut acc_sig = vec![0.0; nr];
        let mut member_fix: Vec<f64> = Vec::new();
        let mut acc_member: Vec<f64> = Vec::new();
        let mut cs: Vec<f64> = Vec::new();
        for (j, stratum) in self.data.strata().iter().enumerate() {
            let case = self.stratum_cases[j];
            for m in 0..nr {
                locs[m] = self.hm_location(theta, m, case);
            }
            member_fix.clear();
            member_fix.extend(stratum.members.iter().map(|&i| self.fixed_part(theta, i)));
            let mut qsum = 0.0;
            acc_mean.fill(0.0);
            acc_sig.fill(0.0);
            acc_member.clear();
            acc_member.resize(stratum.members.len(), 0.0);
            for t in 0..r {
                let mut q = 1.0;
                let mut coefs = [0.0; DIMENSION_CAP];
                let mut das = [0.0; DIMENSION_CAP];
                let mut dss = [0.0; DIMENSION_CAP];
                for m in 0..nr {
                    let (coef, da, ds) = self.coef_and_partials(theta, m, locs[m], j, t);
                    coefs[m] = coef;
                    das[m] = da;
                    dss[m] = ds;
                }
                if grad.is_some() {
                    cs.clear();
                    cs.resize(stratum.members.len(), 0.0);
                    let mut cm = [0.0; DIMENSION_CAP];
                    for (pos, &i) in stratum.members.iter().enumerate() {
                        let s = if obs[i].is_case() { 1.0 } else { -1.0 };
                        let mut v = member_fix[pos];
                        for m in 0..nr {
                            let x = match self.resolved.randoms[m].col {
                                Some(c) => obs[i].covariates[c],
                                None => 1.0,
                            };
                            v += coefs[m] * x;
                        }
                        let p = sigmoid(s * v);
                        q *= p;
                        cs[pos] = (1.0 - p) * s;
                    }
                    for (pos, &i) in stratum.members.iter().enumerate() {
                        for m in 0..nr {
                            let x = match self.resolved.randoms[m].col {
                                Some(c) => obs[i].covariates[c],
                                None => 1.0,
                            };
                            cm[m] += cs[pos] * x;
                        }
                    }
                    qsum += q;
                    for (pos, c) in cs.iter().enumerate() {
                        acc_member[pos] += q * c;
                    }
                    for m in 0..nr {
                        acc_mean[m] += q * cm[m] * das[m];
                        acc_sig[m] += q * cm[m] * dss[m];
                    }
                } else {
                    for (pos, &i) in stratum.members.iter().enumerate() {
                        let s = if obs[i].is_case() { 1.0 } else { -1.0 };
                        let mut v = member_fix[pos];
                        for m in 0..nr {
                            let x = match self.resolved.randoms[m].col {
                                Some(c) => obs[i].covariates[c],
                                None => 1.0,
                            };
                            v += coefs[m] * x;
                        }
                        q *= sigmoid(s * v);
                    }
                    qsum += q;
                }
            }
            if qsum <= 0.0 {
                return Err(Error::ZeroSimulatedProbability {
                    unit: stratum.id.clone(),
                });
            }
            ll += (qsum / r as f64).ln();
            if let Some(g) = grad.as_deref_mut() {
                let inv = 1.0 / qsum;
                for (pos, &i) in stratum.members.iter().enumerate() {
                    self.add_fixed_grad(g, i, acc_member[pos] * inv);
                }
                for m in 0..nr {
                    g[self.layout.mean_idx(m)] += acc_mean[m] * inv;
                    for (l, &zc) in self.resolved.randoms[m].hm_cols.iter().enumerate() {
                        g[self.layout.xi_idx(m, l)] +=
                            acc_mean[m] * inv * obs[case].covariates[zc];
                    }
                    g[self.layout.sigma_idx(m)] += acc_sig[m] * inv;
                }
            }
        }
        Ok((ll, ()))
    }

    /// Conditional simulated likelihood: per draw, the conditional-logit
    /// probability that the observed case is the stratum's case; coefficients
    /// drawn per member (individual grouping) or shared (stratum grouping).
    fn simulated_conditional(
        &self,
        theta: &[f64],
        mut grad: Option<&mut [f64]>,
    ) -> Result<(f64, ())> {
        let draws = self.draws.unwrap();
        let r = draws.r;
        let nr = self.resolved.randoms.len();
        let per_member = matches!(self.spec.grouping, Grouping::Individual);
        let obs = self.data.observations();
        let mut ll = 0.0;
        for (j, stratum) in self.data.strata().iter().enumerate() {
            let case = self.stratum_cases[j];
            let case_pos = stratum.members.iter().position(|&i| i == case).unwrap();
            let nmem = stratum.members.len();
            let member_fix: Vec<f64> = stratum
                .members
                .iter()
                .map(|&i| self.fixed_part(theta, i))
                .collect();
            // Locations: per member at individual grouping, case-based shared
            // at stratum grouping.
            let mut locs = vec![0.0; nmem * nr];
            for (pos, &i) in stratum.members.iter().enumerate() {
                let z_obs = if per_member { i } else { case };
                for m in 0..nr {
                    locs[pos * nr + m] = self.hm_location(theta, m, z_obs);
                }
            }
            let mut psum = 0.0;
            let mut acc_fix = vec![0.0; nmem];
            let mut acc_mean = vec![0.0; nmem * nr];
            let mut acc_sig = vec![0.0; nmem * nr];
            let mut vals = vec![0.0; nmem];
            let mut das = vec![0.0; nmem * nr];
            let mut dss = vec![0.0; nmem * nr];
            let mut xs = vec![0.0; nmem * nr];
            for t in 0..r {
                for (pos, &i) in stratum.members.iter().enumerate() {
                    let unit = if per_member { i } else { j };
                    let mut v = member_fix[pos];
                    for m in 0..nr {
                        let (coef, da, ds) =
                            self.coef_and_partials(theta, m, locs[pos * nr + m], unit, t);
                        let x = match self.resolved.randoms[m].col {
                            Some(c) => obs[i].covariates[c],
                            None => 1.0,
                        };
                        v += coef * x;
                        das[pos * nr + m] = da;
                        dss[pos * nr + m] = ds;
                        xs[pos * nr + m] = x;
                    }
                    vals[pos] = v;
                }
                let vmax = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = vals.iter().map(|v| (v - vmax).exp()).collect();
                let wsum: f64 = weights.iter().sum();
                let p = weights[case_pos] / wsum;
                psum += p;
                if grad.is_some() {
                    // dp = p * (dv_case - sum_i softmax_i dv_i)
                    for pos in 0..nmem {
                        let share = weights[pos] / wsum;
                        let own = if pos == case_pos { 1.0 } else { 0.0 };
                        let w = p * (own - share);
                        acc_fix[pos] += w;
                        for m in 0..nr {
                            acc_mean[pos * nr + m] += w * xs[pos * nr + m] * das[pos * nr + m];
                            acc_sig[pos * nr + m] += w * xs[pos * nr + m] * dss[pos * nr + m];
                        }
                    }
                }
            }
            if psum <= 0.0 {
                return Err(Error::ZeroSimulatedProbability {
                    unit: stratum.id.clone(),
                });
            }
            ll += (psum / r as f64).ln();
            if let Some(g) = grad.as_deref_mut() {
                let inv = 1.0 / psum;
                for (pos, &i) in stratum.members.iter().enumerate() {
                    self.add_fixed_grad(g, i, acc_fix[pos] * inv);
                    let z_obs = if per_member { i } else { case };
                    for m in 0..nr {
                        g[self.layout.mean_idx(m)] += acc_mean[pos * nr + m] * inv;
                        for (l, &zc) in self.resolved.randoms[m].hm_cols.iter().enumerate() {
                            g[self.layout.xi_idx(m, l)] +=
                                acc_mean[pos * nr + m] * inv * obs[z_obs].covariates[zc];
                        }
                        g[self.layout.sigma_idx(m)] += acc_sig[pos * nr + m] * inv;
                    }
                }
            }
        }
        Ok((ll, ()))
    }
}

/// Build the draw set a spec's kernel needs (no-op spec kinds get none).
pub fn build_model_draws(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    kind: KernelKind,
) -> Result<Option<ModelDraws>> {
    if !kind.needs_draws() {
        return Ok(None);
    }
    let mut kinds: Vec<MixingKind> = Vec::with_capacity(spec.n_random());
    if spec.random_intercept {
        kinds.push(MixingKind::Normal);
    }
    kinds.extend(spec.randoms.iter().map(|r| r.kind));
    let (level, units) = draw_plan(kind, spec.grouping, data);
    Ok(Some(ModelDraws::build(
        &kinds,
        units,
        spec.draws,
        level,
        &spec.halton,
    )?))
}

/// Fixed-parameter logit log-likelihood.
pub fn loglik_fixed(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<f64> {
    Kernel::new(data, spec, KernelKind::Fixed, None)?.value(&params.pack())
}

/// Conditional (fixed-effects) logit log-likelihood over matched strata.
pub fn loglik_conditional(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
) -> Result<f64> {
    Kernel::new(data, spec, KernelKind::Conditional, None)?.value(&params.pack())
}

/// Simulated mixed-logit log-likelihood across independent observations.
pub fn simulated_loglik(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    draws: &ModelDraws,
) -> Result<f64> {
    Kernel::new(data, spec, KernelKind::Simulated, Some(draws))?.value(&params.pack())
}

/// Grouped simulated mixed-logit log-likelihood over matched strata.
pub fn simulated_loglik_grouped(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    draws: &ModelDraws,
) -> Result<f64> {
    Kernel::new(data, spec, KernelKind::SimulatedGrouped, Some(draws))?.value(&params.pack())
}

/// Conditional simulated mixed-logit log-likelihood (matched-design
/// likelihood with random coefficients).
pub fn simulated_loglik_conditional(
    data: &CaseControlDataset,
    spec: &ModelSpec,
    params: &ParameterVector,
    draws: &ModelDraws,
) -> Result<f64> {
    Kernel::new(data, spec, KernelKind::SimulatedConditional, Some(draws))?.value(&params.pack())
}

/// Central finite-difference gradient with per-coordinate step
/// `max(1e-6, 1e-6 |theta_k|)`. Analytic gradients must match this.
pub fn fd_gradient<F>(f: F, theta: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; theta.len()];
    let mut work = theta.to_vec();
    for k in 0..theta.len() {
        let h = (1e-6f64).max(1e-6 * theta[k].abs());
        work[k] = theta[k] + h;
        let up = f(&work)?;
        work[k] = theta[k] - h;
        let down = f(&work)?;
        work[k] = theta[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite kernel in finite-difference stencil at coordinate {k}"
            )));
        }
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}
