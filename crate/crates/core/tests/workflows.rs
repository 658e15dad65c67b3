use prevq_core::optimizer::sigma_schedule_from_data;
use prevq_core::pipeline::fit_transform;
use prevq_core::prevalence::{estimate_prevalence, indicator_rates, two_pass_with};
use prevq_core::synth::{
    aligned_frobenius_sq, elisa_like, optimal_offset, parabolic_mixture_with,
    parabolic_population_with, parabolic_prevalence_function, reference_boundary, rng_for,
    sample_parabolic_with, true_boundary,
};
use prevq_core::{
    default_q_grid, empirical_error, fit_levelsets, homotopy_run, hyperplane_init,
    prevalence_function_query, shadow_grid, two_pass_classify, BoundaryClassifier, Class, Family,
    Point, SigmaSchedule, Test, Training, Training32,
};

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn homotopy_recovers_reference_boundary() {
    let pop = parabolic_population_with(&mut rng_for(20, 0), 1000, 1000).unwrap();
    let schedule = SigmaSchedule::decades(1.0, 1, 5).unwrap();
    let fit = homotopy_run(&pop, 0.5, &reference_boundary(), &schedule).unwrap();
    assert_eq!(fit.stage_params.len(), 5);
    assert!(aligned_frobenius_sq(&reference_boundary(), &fit.final_params) < 0.05);
}

#[test]
fn homotopy_stages_descend_and_are_deterministic() {
    let pop = parabolic_population_with(&mut rng_for(21, 0), 300, 300).unwrap();
    let phi0 = hyperplane_init(&pop).unwrap();
    let schedule = sigma_schedule_from_data(&pop, 7).unwrap();
    let a = homotopy_run(&pop, 0.4, &phi0, &schedule).unwrap();
    let b = homotopy_run(&pop, 0.4, &phi0, &schedule).unwrap();
    assert_eq!(a, b);
    for (end, start) in a.stage_losses.iter().zip(&a.stage_initial_losses) {
        assert!(end <= start);
    }
}

#[test]
fn elisa_like_run_settles_by_third_stage() {
    let raw = elisa_like(192, 268, 0).unwrap();
    let pop = fit_transform(&raw).unwrap().apply_training(&raw).unwrap();
    let q = 268.0 / 460.0;
    let phi0 = hyperplane_init(&pop).unwrap();
    let schedule = sigma_schedule_from_data(&pop, 7).unwrap();
    let run = homotopy_run(&pop, q, &phi0, &schedule).unwrap();
    let errors: Vec<f64> = run
        .stage_params
        .iter()
        .map(|p| empirical_error(&BoundaryClassifier::new(p.clone()), &pop, q).unwrap())
        .collect();
    let initial = empirical_error(&BoundaryClassifier::new(phi0), &pop, q).unwrap();
    let last = *errors.last().unwrap();
    assert!(last < initial);
    for e in &errors[2..] {
        assert!((e - last).abs() < 0.01, "stage errors {errors:?}");
    }
}

#[test]
fn two_pass_estimates_low_prevalence() {
    let mut rng = rng_for(30, 0);
    let pop = parabolic_population_with(&mut rng, 1000, 1000).unwrap();
    let test = parabolic_mixture_with(&mut rng, 1000, 0.15).unwrap();
    let (est, second) = two_pass_classify(&pop, &test, 7).unwrap();
    assert!((est.q_hat - 0.15).abs() <= 0.045, "q_hat {}", est.q_hat);
    assert_eq!(second.stage_params.len(), 8);
}

#[test]
fn two_pass_reuses_start_and_schedule() {
    let mut rng = rng_for(31, 0);
    let pop = parabolic_population_with(&mut rng, 200, 200).unwrap();
    let test = parabolic_mixture_with(&mut rng, 300, 0.3).unwrap();
    let phi0 = hyperplane_init(&pop).unwrap();
    let schedule = sigma_schedule_from_data(&pop, 4).unwrap();
    let r = two_pass_with(&pop, &test, &phi0, &schedule, &Default::default()).unwrap();
    let direct = homotopy_run(&pop, r.estimate.q_hat, &phi0, &schedule).unwrap();
    assert_eq!(r.second_pass, direct);
    let clf = BoundaryClassifier::new(r.first_pass.final_params.clone());
    let rates = indicator_rates(&clf, &pop, &test).unwrap();
    assert_eq!(estimate_prevalence(rates).unwrap(), r.estimate);
}

#[test]
fn two_pass_on_pure_negative_test_sets() {
    for seed in 0..20 {
        let mut rng = rng_for(32, seed);
        let pop = parabolic_population_with(&mut rng, 500, 500).unwrap();
        let test = Test::new(sample_parabolic_with(&mut rng, 1000, Class::Negative), None).unwrap();
        let (est, _) = two_pass_classify(&pop, &test, 7).unwrap();
        assert!(est.q_hat <= 0.05, "seed {seed}: q_hat {}", est.q_hat);
    }
}

#[test]
fn two_pass_on_positive_training_set() {
    let pop = parabolic_population_with(&mut rng_for(33, 0), 1000, 1000).unwrap();
    let test = Test::new(pop.positives().to_vec(), None).unwrap();
    let (est, _) = two_pass_classify(&pop, &test, 7).unwrap();
    assert!(est.q_hat >= 0.95, "q_hat {}", est.q_hat);
}

#[test]
fn estimator_variance_scales_inversely_with_test_size() {
    let pop = parabolic_population_with(&mut rng_for(34, 0), 2000, 2000).unwrap();
    let clf = BoundaryClassifier::new(true_boundary(0.5).unwrap());
    let estimates = |s: usize, stream: u64| -> Vec<f64> {
        (0..400)
            .map(|rep| {
                let mut rng = rng_for(35 + stream, rep);
                let test = parabolic_mixture_with(&mut rng, s, 0.3).unwrap();
                let rates = indicator_rates(&clf, &pop, &test).unwrap();
                estimate_prevalence(rates).unwrap().q_hat
            })
            .collect()
    };
    let ratio = variance(&estimates(250, 0)) / variance(&estimates(1000, 1));
    assert!((2.5..=6.0).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn level_sets_are_ordered_and_bracket_the_prevalence_function() {
    let pop = parabolic_population_with(&mut rng_for(40, 0), 2000, 2000).unwrap();
    let shadow = shadow_grid(&pop, 10, &[]).unwrap();
    let schedule = sigma_schedule_from_data(&pop, 7).unwrap();
    let grid = default_q_grid();
    let family = fit_levelsets(&pop, &grid, &shadow, &schedule).unwrap();
    assert_eq!(family.levels(), 19);
    assert_eq!(family.grid_violations, 0);
    family.ensure_monotone().unwrap();
    assert!(family.constraint_violation <= 1e-8);

    // boundaries move down as q grows
    let axis = Point::new(vec![0.0, 0.0]).unwrap();
    let crossings: Vec<f64> = family
        .params
        .iter()
        .map(|p| {
            p.axis_roots(&axis, 1)
                .unwrap()
                .into_iter()
                .min_by(|a, b| a.abs().total_cmp(&b.abs()))
                .unwrap()
        })
        .collect();
    assert!(crossings.windows(2).all(|w| w[1] < w[0]), "{crossings:?}");

    let at = |u: f64| Point::new(vec![0.0, u]).unwrap();
    let (lo, hi) = prevalence_function_query(&family, &at(-1.5)).unwrap();
    assert!(lo <= 0.5 && 0.5 <= hi, "bracket ({lo}, {hi})");
}

#[test]
fn analytic_family_brackets_the_prevalence_function() {
    let grid = default_q_grid::<f64>();
    let family = Family {
        params: grid.iter().map(|&q| true_boundary(q).unwrap()).collect(),
        q_grid: grid,
        shadow_points: Vec::new(),
        constraint_violation: 0.0,
        grid_violations: 0,
    };
    let g = 1.0 / (1.0 + (-3.0f64).exp());
    assert!((optimal_offset(g) + 2.5).abs() < 1e-12);
    for x in [-1.0, 0.0, 0.7] {
        let at = |u: f64| Point::new(vec![x, x * x + u]).unwrap();
        let (lo, hi) = prevalence_function_query(&family, &at(-1.5)).unwrap();
        assert!(lo <= 0.5 && 0.5 <= hi, "bracket ({lo}, {hi})");
        assert_eq!(
            prevalence_function_query(&family, &at(-2.5)).unwrap(),
            (0.95, 1.0)
        );
        let (lo, hi) = prevalence_function_query(&family, &at(-1.9)).unwrap();
        let g = parabolic_prevalence_function(&at(-1.9));
        assert!(lo < g && g < hi && (hi - lo - 0.05).abs() < 1e-12);
    }
}

#[test]
fn single_precision_homotopy() {
    let pop64 = parabolic_population_with(&mut rng_for(50, 0), 200, 200).unwrap();
    let to32 = |s: &[Point]| -> Vec<Vec<f32>> {
        s.iter()
            .map(|r| r.coords().iter().map(|&v| v as f32).collect())
            .collect()
    };
    let pop = Training32::from_coords(to32(pop64.negatives()), to32(pop64.positives())).unwrap();
    let phi0 = hyperplane_init(&pop).unwrap();
    let schedule = sigma_schedule_from_data(&pop, 5).unwrap();
    let run = homotopy_run(&pop, 0.5f32, &phi0, &schedule).unwrap();
    let err = |p| empirical_error(&BoundaryClassifier::new(p), &pop, 0.5f32).unwrap();
    assert!(err(run.final_params) <= err(phi0));
}

#[test]
fn training_population_round_trips_through_aliases() {
    let pop: Training = parabolic_population_with(&mut rng_for(51, 0), 3, 4).unwrap();
    assert_eq!((pop.n_neg(), pop.n_pos()), (3, 4));
    assert!((pop.training_prevalence() - 4.0 / 7.0).abs() < 1e-15);
}
