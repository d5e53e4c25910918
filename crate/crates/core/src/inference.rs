//! Fit statistics, model comparison, and post-estimation effect tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::EstimationResult;
use crate::mixing::MixingDistribution;
use crate::special;

/// Goodness-of-fit statistics of one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStatistics {
    pub aic: f64,
    pub aic_finite_sample: f64,
    pub mcfadden_r2: f64,
    pub chi_square: f64,
    pub k: usize,
    pub n: usize,
}

/// AIC, finite-sample AIC, McFadden pseudo-R², and the chi-square statistic
/// from the constant-only and converged log-likelihoods.
pub fn fit_statistics(l0: f64, lc: f64, k: usize, n: usize) -> Result<FitStatistics> {
    if !l0.is_finite() || !lc.is_finite() {
        return Err(Error::invalid("log-likelihoods must be finite"));
    }
    if n <= k + 1 {
        return Err(Error::invalid(format!(
            "finite-sample AIC undefined for n = {n} <= k + 1 = {}",
            k + 1
        )));
    }
    let kf = k as f64;
    let aic = 2.0 * kf - 2.0 * lc;
    Ok(FitStatistics {
        aic,
        aic_finite_sample: aic + 2.0 * kf * (kf + 1.0) / (n as f64 - kf - 1.0),
        mcfadden_r2: 1.0 - lc / l0,
        chi_square: 2.0 * (lc - l0),
        k,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test from raw converged log-likelihoods.
pub fn lr_test_from_values(ll_restricted: f64, ll_full: f64, df: usize) -> Result<LrTest> {
    let statistic = 2.0 * (ll_full - ll_restricted);
    if statistic < -1e-6 {
        return Err(Error::Numerical(format!(
            "negative LR statistic {statistic}: the full model fits worse, optimizer failure"
        )));
    }
    let statistic = statistic.max(0.0);
    let p_value = if df == 0 {
        1.0
    } else {
        special::chi_square_sf(statistic, df)
    };
    Ok(LrTest {
        statistic,
        df,
        p_value,
    })
}

/// Likelihood-ratio test of a restricted model against a full model it nests.
pub fn lr_test(restricted: &EstimationResult, full: &EstimationResult) -> Result<LrTest> {
    if restricted.n != full.n {
        return Err(Error::invalid(
            "LR test needs both models fitted on the same dataset",
        ));
    }
    if restricted.spec.grouping != full.spec.grouping {
        return Err(Error::invalid("LR test needs the same grouping on both sides"));
    }
    // A kernel nests itself; the fixed logit degenerates from the simulated
    // one at sigma = 0, the conditional logit from its simulated counterpart.
    let kernels_nested = restricted.kernel == full.kernel
        || (restricted.kernel == crate::likelihood::KernelKind::Fixed
            && full.kernel == crate::likelihood::KernelKind::Simulated)
        || (restricted.kernel == crate::likelihood::KernelKind::Conditional
            && full.kernel == crate::likelihood::KernelKind::SimulatedConditional);
    if !kernels_nested {
        return Err(Error::invalid(
            "the restricted kernel does not degenerate from the full kernel",
        ));
    }
    let nested = restricted
        .param_names
        .iter()
        .all(|p| full.param_names.contains(p));
    if !nested || restricted.k > full.k {
        return Err(Error::invalid(
            "restricted model is not nested in the full model",
        ));
    }
    lr_test_from_values(
        restricted.ll_converged,
        full.ll_converged,
        full.k - restricted.k,
    )
}

/// Percent change in the odds of the outcome per unit increase: 100(e^b - 1).
pub fn percent_relative_risk(beta: f64) -> f64 {
    100.0 * beta.exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioInterval {
    pub or: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Wald interval for the odds ratio on the log-odds scale.
pub fn odds_ratio_interval(beta: f64, se: f64, level: f64) -> Result<OddsRatioInterval> {
    if se.is_nan() || se < 0.0 {
        return Err(Error::invalid(format!("standard error must be >= 0, got {se}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level must lie in (0,1), got {level}")));
    }
    let z = special::inverse_normal_cdf((1.0 + level) / 2.0);
    Ok(OddsRatioInterval {
        or: beta.exp(),
        lo: (beta - z * se).exp(),
        hi: (beta + z * se).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Mixed,
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Mixed => "mixed",
        })
    }
}

/// One row of the relative-risk / distributional-effects tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub variable: String,
    pub beta: f64,
    pub pct_relative_risk: f64,
    pub direction: Direction,
    /// Percent of the population with a positive coefficient (random rows).
    pub share_above: Option<f64>,
    pub share_below: Option<f64>,
    /// Heterogeneity-in-means shifters with the signs of their coefficients.
    pub hm_note: Option<String>,
}

/// Effect rows for every covariate of a converged result: random coefficients
/// first (with sign shares from their mixing distribution), then fixed ones.
/// The constant and a random intercept are not risk factors and are skipped.
pub fn effects_table(result: &EstimationResult) -> Vec<EffectRow> {
    let spec = &result.spec;
    let mut rows = Vec::new();
    let intercept_offset = usize::from(spec.random_intercept);
    let mut xi_pos = 0usize;
    for (m, rc) in spec.randoms.iter().enumerate() {
        let mean = result.params.beta_random_means[intercept_offset + m];
        let sigma = result.params.sigma[intercept_offset + m];
        let dist = MixingDistribution {
            kind: rc.kind,
            location: mean,
            scale: sigma,
            negative: rc.negative,
        };
        let share_above = 100.0 * dist.share_above_zero();
        let direction = if share_above > 0.0 && share_above < 100.0 {
            Direction::Mixed
        } else if mean >= 0.0 {
            Direction::Up
        } else {
            Direction::Down
        };
        let hm_note = if rc.hm.is_empty() {
            None
        } else {
            let parts: Vec<String> = rc
                .hm
                .iter()
                .enumerate()
                .map(|(l, z)| {
                    let xi = result.params.xi[xi_pos + l];
                    format!("{z} ({})", if xi >= 0.0 { "+" } else { "-" })
                })
                .collect();
            Some(parts.join(", "))
        };
        xi_pos += rc.hm.len();
        rows.push(EffectRow {
            variable: rc.name.clone(),
            beta: mean,
            pct_relative_risk: percent_relative_risk(mean),
            direction,
            share_above: Some(share_above),
            share_below: Some(100.0 - share_above),
            hm_note,
        });
    }
    let fixed_offset = usize::from(spec.constant && !spec.random_intercept);
    for (j, name) in spec.fixed.iter().enumerate() {
        let beta = result.params.beta_fixed[fixed_offset + j];
        rows.push(EffectRow {
            variable: name.clone(),
            beta,
            pct_relative_risk: percent_relative_risk(beta),
            direction: if beta >= 0.0 {
                Direction::Up
            } else {
                Direction::Down
            },
            share_above: None,
            share_below: None,
            hm_note: None,
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::Termination;
    use crate::likelihood::{Grouping, KernelKind, ModelSpec, ParameterVector, RandomCoef};
    use crate::mixing::MixingKind;
    use crate::quasirandom::HaltonConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn reference_fit_statistic_anchors() {
        // Fixed-parameter reference column.
        let m1 = fit_statistics(-670.24, -305.7, 24, 1053).unwrap();
        assert!((m1.aic - 659.41).abs() < 0.05, "aic {}", m1.aic);
        assert!(
            (m1.aic_finite_sample - 660.57).abs() < 0.05,
            "fs-aic {}",
            m1.aic_finite_sample
        );
        assert!((m1.mcfadden_r2 - 0.544).abs() < 0.001, "r2 {}", m1.mcfadden_r2);
        assert!((m1.chi_square - 729.08).abs() < 0.02);

        // Heterogeneity-in-means reference column.
        let m4 = fit_statistics(-670.24, -277.6, 39, 1053).unwrap();
        assert!((m4.aic - 633.21).abs() < 0.05);
        assert!((m4.mcfadden_r2 - 0.586).abs() < 0.001);
    }

    #[test]
    fn null_model_against_itself() {
        let s = fit_statistics(-100.0, -100.0, 0, 50).unwrap();
        assert_eq!(s.mcfadden_r2, 0.0);
        assert_eq!(s.chi_square, 0.0);
        assert_eq!(s.aic, 200.0);
        assert_eq!(s.aic_finite_sample, s.aic);
    }

    #[test]
    fn finite_sample_aic_needs_headroom() {
        assert!(fit_statistics(-10.0, -9.0, 5, 6).is_err());
        assert!(fit_statistics(f64::NEG_INFINITY, -9.0, 1, 10).is_err());
    }

    #[test]
    fn lr_values_match_reference_models() {
        // Fixed vs random-parameters reference log-likelihoods, df 31 - 24 = 7.
        let t = lr_test_from_values(-305.7, -288.623, 7).unwrap();
        assert_abs_diff_eq!(t.statistic, 34.154, epsilon = 1e-10);
        assert!(t.p_value < 0.001);

        let same = lr_test_from_values(-50.0, -50.0, 0).unwrap();
        assert_eq!(same.statistic, 0.0);
        assert_eq!(same.p_value, 1.0);

        let point05 = lr_test_from_values(-10.0, -8.08, 1).unwrap();
        assert_abs_diff_eq!(
            lr_test_from_values(0.0, 1.92, 1).unwrap().statistic,
            3.84,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(point05.p_value, 0.0500, epsilon = 0.001);

        assert!(lr_test_from_values(-5.0, -6.0, 1).is_err());
    }

    #[test]
    fn relative_risk_anchors() {
        assert_abs_diff_eq!(percent_relative_risk(1.38), 297.49, epsilon = 0.05);
        assert_eq!(percent_relative_risk(0.0), 0.0);
        assert_abs_diff_eq!(percent_relative_risk(-3.08), -95.40, epsilon = 0.05);
        assert_abs_diff_eq!(percent_relative_risk(1.09), 197.43, epsilon = 0.05);
        assert_abs_diff_eq!(percent_relative_risk(-0.008), -0.80, epsilon = 0.05);
    }

    #[test]
    fn odds_ratio_interval_anchors() {
        let point = odds_ratio_interval(0.0, 0.0, 0.95).unwrap();
        assert_eq!((point.or, point.lo, point.hi), (1.0, 1.0, 1.0));

        let red = odds_ratio_interval(1.38, 0.4539, 0.95).unwrap();
        assert_abs_diff_eq!(red.or, 3.97, epsilon = 0.005);
        assert_abs_diff_eq!(red.lo, 1.63, epsilon = 0.005);
        assert_abs_diff_eq!(red.hi, 9.68, epsilon = 0.005);

        // z * se arranged to equal ln 2 makes the interval (1, 4).
        let z = crate::special::inverse_normal_cdf(0.975);
        let arranged = odds_ratio_interval(2f64.ln(), 2f64.ln() / z, 0.95).unwrap();
        assert_abs_diff_eq!(arranged.or, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(arranged.lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(arranged.hi, 4.0, epsilon = 1e-12);

        assert!(odds_ratio_interval(0.0, -1.0, 0.95).is_err());
        assert!(odds_ratio_interval(0.0, 1.0, 1.0).is_err());
    }

    fn fake_result(spec: ModelSpec, params: ParameterVector) -> EstimationResult {
        let k = params.len();
        EstimationResult {
            kernel: KernelKind::for_spec(&spec),
            spec,
            params,
            param_names: vec![],
            covariance: None,
            std_errors: None,
            t_stats: None,
            ll_converged: -100.0,
            ll_constant_only: -120.0,
            n: 1053,
            n_strata: 351,
            k,
            converged: true,
            iterations: 10,
            termination: Termination::GradTolerance,
            draws_fingerprint: None,
            hessian_note: None,
        }
    }

    #[test]
    fn effects_table_matches_published_shares() {
        let spec = ModelSpec {
            constant: true,
            random_intercept: false,
            fixed: vec!["red_upper".into()],
            randoms: vec![
                RandomCoef {
                    name: "total_miles".into(),
                    kind: MixingKind::Normal,
                    negative: false,
                    hm: vec!["origin_work".into(), "single_rider".into()],
                },
                RandomCoef {
                    name: "three_convictions".into(),
                    kind: MixingKind::Normal,
                    negative: false,
                    hm: vec![],
                },
            ],
            grouping: Grouping::Individual,
            draws: 100,
            halton: HaltonConfig::default(),
        };
        let params = ParameterVector {
            beta_fixed: vec![4.62, 1.38],
            beta_random_means: vec![-0.008, -16.99],
            xi: vec![0.037, -0.044],
            sigma: vec![0.051, 33.8],
        };
        let rows = effects_table(&fake_result(spec, params));
        assert_eq!(rows.len(), 3);

        let miles = &rows[0];
        assert_eq!(miles.variable, "total_miles");
        assert!((miles.share_above.unwrap() - 43.77).abs() < 0.05);
        assert!((miles.share_below.unwrap() - 56.23).abs() < 0.05);
        assert_eq!(miles.direction, Direction::Mixed);
        assert!((miles.pct_relative_risk - (-0.80)).abs() < 0.05);
        assert_eq!(
            miles.hm_note.as_deref(),
            Some("origin_work (+), single_rider (-)")
        );
        assert_abs_diff_eq!(
            miles.share_above.unwrap() + miles.share_below.unwrap(),
            100.0,
            epsilon = 0.0
        );

        let convictions = &rows[1];
        assert!((convictions.share_above.unwrap() - 30.76).abs() < 0.05);
        assert_eq!(convictions.hm_note, None);

        let red = &rows[2];
        assert_eq!(red.variable, "red_upper");
        assert_eq!(red.direction, Direction::Up);
        assert_eq!(red.share_above, None);
        assert!((red.pct_relative_risk - 297.49).abs() < 0.05);
    }

    #[test]
    fn degenerate_random_row_keeps_sign_direction() {
        let spec = ModelSpec {
            constant: false,
            random_intercept: false,
            fixed: vec![],
            randoms: vec![RandomCoef {
                name: "x".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Individual,
            draws: 10,
            halton: HaltonConfig::default(),
        };
        let params = ParameterVector {
            beta_fixed: vec![],
            beta_random_means: vec![-0.5],
            xi: vec![],
            sigma: vec![0.0],
        };
        let rows = effects_table(&fake_result(spec, params));
        assert_eq!(rows[0].direction, Direction::Down);
        assert_eq!(rows[0].share_above, Some(0.0));
    }

    proptest! {
        #[test]
        fn aic_orders_like_k_minus_ll(
            ll_a in -500.0f64..-1.0, ll_b in -500.0f64..-1.0,
            k_a in 1usize..40, k_b in 1usize..40,
        ) {
            let a = fit_statistics(-600.0, ll_a, k_a, 1000).unwrap();
            let b = fit_statistics(-600.0, ll_b, k_b, 1000).unwrap();
            let key_a = k_a as f64 - ll_a;
            let key_b = k_b as f64 - ll_b;
            prop_assert_eq!(a.aic < b.aic, key_a < key_b);
        }

        #[test]
        fn relative_risk_is_increasing_and_sign_preserving(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
        ) {
            prop_assume!(a < b);
            prop_assert!(percent_relative_risk(a) < percent_relative_risk(b));
            prop_assert_eq!(percent_relative_risk(a) > 0.0, a > 0.0);
        }

        #[test]
        fn or_interval_ordered_and_widens(
            beta in -3.0f64..3.0,
            se in 0.0f64..2.0,
            bump in 0.01f64..1.0,
        ) {
            let base = odds_ratio_interval(beta, se, 0.95).unwrap();
            prop_assert!(base.lo <= base.or && base.or <= base.hi);
            let wider = odds_ratio_interval(beta, se + bump, 0.95).unwrap();
            prop_assert!(wider.lo <= base.lo && wider.hi >= base.hi);
            let higher = odds_ratio_interval(beta, se + bump, 0.99).unwrap();
            prop_assert!(higher.lo <= wider.lo && higher.hi >= wider.hi);
        }
    }
}
