//! End-to-end library workflow: generate, persist, describe, fit the model
//! family, compare, and render.

use mcclogit::dataset::{describe, validate_matching};
use mcclogit::estimate::{fit, fit_with_kernel, standard_errors, OptimOptions};
use mcclogit::inference::{effects_table, lr_test};
use mcclogit::likelihood::{build_model_draws, fd_gradient, Kernel, RandomCoef};
use mcclogit::quasirandom::{build_draws, DrawLevel, DrawSpace, HaltonConfig};
use mcclogit::report;
use mcclogit::synthlab::{generate, CovariateLaw, SamplingMode, SyntheticTruth};
use mcclogit::{
    CaseControlDataset, Grouping, KernelKind, MixingKind, ModelSpec, Observation, ParameterVector,
};

fn mixed_truth(n_strata: usize, seed: u64) -> SyntheticTruth {
    SyntheticTruth {
        spec: ModelSpec {
            constant: true,
            random_intercept: false,
            fixed: vec!["x1".into()],
            randoms: vec![RandomCoef {
                name: "x2".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Individual,
            draws: 100,
            halton: HaltonConfig::default(),
        },
        true_params: ParameterVector {
            beta_fixed: vec![-0.7, 0.7],
            beta_random_means: vec![0.4],
            xi: vec![],
            sigma: vec![0.9],
        },
        n_strata,
        controls_per_case: 2,
        covariate_laws: vec![
            ("x1".into(), CovariateLaw::StandardNormal),
            ("x2".into(), CovariateLaw::StandardNormal),
        ],
        seed,
        mode: SamplingMode::Population,
    }
}

#[test]
fn generate_persist_fit_compare_render() {
    let truth = mixed_truth(130, 21);
    let data = generate(&truth).unwrap();
    assert!(validate_matching(&data).valid);

    // Round-trip through the CSV wire format.
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let data = CaseControlDataset::load_csv(buf.as_slice(), 2).unwrap();

    let rows = describe(&data, 0.95).unwrap();
    assert_eq!(rows.len(), 2);

    // Fixed-parameter model and its mixed extension on the same data.
    let fixed_spec = ModelSpec::fixed_only(&["x1", "x2"], true);
    let fixed = fit(&data, &fixed_spec, &OptimOptions::default()).unwrap();
    assert!(fixed.converged);

    let mixed_spec = ModelSpec {
        draws: 120,
        ..truth.spec.clone()
    };
    let mixed = fit(&data, &mixed_spec, &OptimOptions::default()).unwrap();
    assert!(mixed.converged);
    assert_eq!(mixed.kernel, KernelKind::Simulated);
    assert!(mixed.ll_converged >= fixed.ll_converged - 1e-6);

    // The mixed model nests the fixed one (sigma = 0).
    let test = lr_test(&fixed, &mixed).unwrap();
    assert_eq!(test.df, 1);
    assert!(test.statistic >= 0.0);
    assert!((0.0..=1.0).contains(&test.p_value));

    let effects = effects_table(&mixed);
    assert_eq!(effects.len(), 2);
    assert!(effects[0].share_above.is_some());

    let doc = report::report_doc(&mixed);
    let text = report::render_report_text(&doc);
    assert!(text.contains("x2 (scale)"));
    let json = report::render_report_json(&doc).unwrap();
    let parsed: report::ReportDoc = serde_json::from_str(&json).unwrap();
    assert_eq!(report::render_report_text(&parsed), text);
}

#[test]
fn matched_kernels_on_conditional_data() {
    let truth = SyntheticTruth {
        spec: ModelSpec {
            constant: false,
            random_intercept: false,
            fixed: vec!["x1".into()],
            randoms: vec![RandomCoef {
                name: "x2".into(),
                kind: MixingKind::Normal,
                negative: false,
                hm: vec![],
            }],
            grouping: Grouping::Stratum,
            draws: 80,
            halton: HaltonConfig::default(),
        },
        true_params: ParameterVector {
            beta_fixed: vec![0.8],
            beta_random_means: vec![0.5],
            xi: vec![],
            sigma: vec![0.7],
        },
        n_strata: 150,
        controls_per_case: 2,
        covariate_laws: vec![
            ("x1".into(), CovariateLaw::StandardNormal),
            ("x2".into(), CovariateLaw::StandardNormal),
        ],
        seed: 5,
        mode: SamplingMode::Conditional,
    };
    let data = generate(&truth).unwrap();

    // Conditional (fixed-effects) logit.
    let mut cond_spec = ModelSpec::fixed_only(&["x1", "x2"], false);
    cond_spec.grouping = Grouping::Stratum;
    let cond = fit(&data, &cond_spec, &OptimOptions::default()).unwrap();
    assert_eq!(cond.kernel, KernelKind::Conditional);
    assert!(cond.converged);
    // Uniform conditional baseline.
    let expect_l0 = 150.0 * (1f64 / 3.0).ln();
    assert!((cond.ll_constant_only - expect_l0).abs() < 1e-9);

    // Grouped panel kernel through the spec mapping.
    let grouped = fit(&data, &truth.spec, &OptimOptions::default()).unwrap();
    assert_eq!(grouped.kernel, KernelKind::SimulatedGrouped);
    assert!(grouped.converged);

    // Matched-design mixed kernel through the explicit API.
    let matched = fit_with_kernel(
        &data,
        &truth.spec,
        KernelKind::SimulatedConditional,
        &OptimOptions::default(),
    )
    .unwrap();
    assert!(matched.converged);
    // It nests the conditional logit; its fit cannot be worse.
    assert!(matched.ll_converged >= cond.ll_converged - 1e-6);
}

#[test]
fn score_vanishes_at_the_constant_only_optimum() {
    let truth = mixed_truth(117, 9);
    let data = generate(&truth).unwrap();
    let spec = ModelSpec::fixed_only(&[], true);
    let kernel = Kernel::new(&data, &spec, KernelKind::Fixed, None).unwrap();
    let beta0 = (data.n_cases() as f64 / data.n_controls() as f64).ln();
    let grad = fd_gradient(|t| kernel.value(t), &[beta0]).unwrap();
    assert!(grad[0].abs() < 1e-4, "score at optimum {}", grad[0]);
}

#[test]
fn collinear_covariates_withhold_standard_errors() {
    let truth = mixed_truth(40, 3);
    let data = generate(&truth).unwrap();
    // Duplicate x1 into x2 so the information matrix is singular.
    let observations: Vec<Observation> = data
        .observations()
        .iter()
        .map(|o| {
            let mut covs = o.covariates.clone();
            covs[1] = covs[0];
            Observation {
                covariates: covs,
                ..o.clone()
            }
        })
        .collect();
    let collinear =
        CaseControlDataset::new(observations, data.covariate_names().to_vec(), 2).unwrap();
    let spec = ModelSpec::fixed_only(&["x1", "x2"], true);
    let kernel = Kernel::new(&collinear, &spec, KernelKind::Fixed, None).unwrap();
    let out = standard_errors(&kernel, &[0.0, 0.3, 0.3], 1e-4).unwrap();
    assert!(out.std_errors.is_none());
    assert!(out.covariance.is_none());
    let note = out.note.unwrap();
    assert!(note.contains("not positive definite"), "{note}");
}

#[test]
fn stratum_level_draws_are_shared_by_members() {
    let truth = mixed_truth(25, 11);
    let mut data_truth = truth.clone();
    data_truth.mode = SamplingMode::Conditional;
    data_truth.spec.grouping = Grouping::Stratum;
    data_truth.spec.constant = false;
    data_truth.true_params.beta_fixed = vec![0.7];
    let data = generate(&data_truth).unwrap();

    let config = HaltonConfig::default();
    let matrix = build_draws(
        &config,
        data.strata().len(),
        16,
        DrawLevel::Stratum,
        DrawSpace::Uniform01,
    )
    .unwrap();
    // Every member of stratum j reads the identical block j.
    for (j, stratum) in data.strata().iter().enumerate() {
        let block = matrix.unit_block(j);
        for _ in &stratum.members {
            assert_eq!(matrix.unit_block(j), block);
        }
    }
    // And the grouped kernel accepts exactly that geometry.
    let spec = ModelSpec {
        constant: false,
        grouping: Grouping::Stratum,
        draws: 16,
        ..data_truth.spec.clone()
    };
    let draws = build_model_draws(&data, &spec, KernelKind::SimulatedGrouped)
        .unwrap()
        .unwrap();
    assert_eq!(draws.units, data.strata().len());
}
