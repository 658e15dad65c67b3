//! Synthetic data with known optimal boundaries, and the Monte-Carlo
//! convergence study built on it.
//!
//! In the parabolic model both classes have `x ~ N(0, 1)` and
//! `u = y - x^2 ~ N(0, 1)` for positives, `N(-3, 1)` for negatives, so the
//! density ratio `N / P = exp(-3u - 4.5)` depends on `u` alone and every
//! optimal boundary is a parabola `u = const`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::boundary::QuadricParams;
use crate::error::{Error, Result};
use crate::model::{Class, Measurement, TestPopulation, TrainingPopulation};
use crate::objective::check_prevalence;
use crate::optimizer::{homotopy_run, SigmaSchedule};

/// Vertical shift of the negative class in the parabolic model.
pub const NEGATIVE_SHIFT: f64 = 3.0;

/// Generator seeded from `seed` on RNG stream `stream`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn parabolic_point<R: Rng + ?Sized>(rng: &mut R, label: Class) -> Measurement<f64> {
    let x: f64 = StandardNormal.sample(rng);
    let u: f64 = StandardNormal.sample(rng);
    let shift = match label {
        Class::Negative => NEGATIVE_SHIFT,
        Class::Positive => 0.0,
    };
    Measurement::new(vec![x, u + x * x - shift]).expect("finite sample")
}

pub fn sample_parabolic_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    label: Class,
) -> Vec<Measurement<f64>> {
    (0..n).map(|_| parabolic_point(rng, label)).collect()
}

pub fn sample_parabolic(n: usize, label: Class, seed: u64) -> Vec<Measurement<f64>> {
    sample_parabolic_with(&mut rng_for(seed, 0), n, label)
}

/// Training population with `n_neg` negatives and `n_pos` positives drawn
/// from one generator.
pub fn parabolic_population_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_neg: usize,
    n_pos: usize,
) -> Result<TrainingPopulation<f64>> {
    let neg = sample_parabolic_with(rng, n_neg, Class::Negative);
    let pos = sample_parabolic_with(rng, n_pos, Class::Positive);
    TrainingPopulation::new(neg, pos)
}

/// `n` labelled points, each positive independently with probability `q`.
pub fn parabolic_mixture_with<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    q: f64,
) -> Result<TestPopulation<f64>> {
    check_prevalence(q)?;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = if rng.random::<f64>() < q {
            Class::Positive
        } else {
            Class::Negative
        };
        samples.push(parabolic_point(rng, label));
        labels.push(label);
    }
    TestPopulation::new(samples, Some(labels))
}

/// `u = y - x^2` at which the optimal boundary for prevalence `q` sits.
pub fn optimal_offset(q: f64) -> f64 {
    -1.5 - (q / (1.0 - q)).ln() / 3.0
}

/// Optimal boundary `y - x^2 - optimal_offset(q)`, positive on the positive side.
pub fn true_boundary(q: f64) -> Result<QuadricParams<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("q = {q} outside (0, 1)")));
    }
    // packed [xx, xy, x1, yy, y1, 11]
    QuadricParams::new(2, vec![-1.0, 0.0, 0.0, 0.0, 0.5, -optimal_offset(q)])
}

/// Prevalence function `N / (N + P)` of the parabolic model.
pub fn parabolic_prevalence_function(r: &Measurement<f64>) -> f64 {
    let u = r[1] - r[0] * r[0];
    1.0 / (1.0 + (3.0 * u + 4.5).exp())
}

/// `||target - c * fitted||_F^2` minimized over real `c`, which covers both
/// a positive rescaling and a global sign flip.
pub fn aligned_frobenius_sq(target: &QuadricParams<f64>, fitted: &QuadricParams<f64>) -> f64 {
    aligned(target, fitted).1
}

/// Least-squares scale `c` and the residual `||target - c * fitted||_F^2`.
pub fn aligned(target: &QuadricParams<f64>, fitted: &QuadricParams<f64>) -> (f64, f64) {
    let ff = fitted.frobenius_norm_sq();
    let c = if ff > 0.0 {
        target.frobenius_dot(fitted) / ff
    } else {
        0.0
    };
    let diff = QuadricParams::new(
        target.dim(),
        target
            .params()
            .iter()
            .zip(fitted.params())
            .map(|(t, f)| t - c * f)
            .collect(),
    )
    .expect("same dimension");
    (c, diff.frobenius_norm_sq())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub sample_sizes: Vec<usize>,
    pub mean_sq_frobenius: Vec<f64>,
    pub replicates: usize,
    pub slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// The reference matrix with unit quadratic coefficient, `x^2 - y - 1.5`.
pub fn reference_boundary() -> QuadricParams<f64> {
    true_boundary(0.5).expect("valid q").scaled(-1.0)
}

/// Fits the `q = 1/2` boundary on `samples_per_class` points of each class,
/// starting from the optimum, and returns the aligned squared distance to it.
pub fn replicate_error(
    samples_per_class: usize,
    schedule: &SigmaSchedule<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pop = parabolic_population_with(rng, samples_per_class, samples_per_class)?;
    let reference = reference_boundary();
    let fit = homotopy_run(&pop, 0.5, &reference, schedule)?;
    Ok(aligned_frobenius_sq(&reference, &fit.final_params))
}

/// `S = 200 * 2^k` for `k = 0..=k_max`, `replicates` datasets each, schedule
/// `10^-j` for `j = 1..=5`.
pub fn convergence_study(k_max: usize, replicates: usize, seed: u64) -> Result<ConvergenceReport> {
    if k_max < 1 || replicates < 2 {
        return Err(Error::InvalidArgument(
            "convergence study needs k_max >= 1 and at least 2 replicates".into(),
        ));
    }
    let schedule = SigmaSchedule::decades(1.0, 1, 5)?;
    let sample_sizes: Vec<usize> = (0..=k_max).map(|k| 200 << k).collect();
    let jobs: Vec<(usize, usize)> = (0..=k_max)
        .flat_map(|k| (0..replicates).map(move |m| (k, m)))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, m)| {
            let mut rng = rng_for(seed, (k * replicates + m) as u64);
            replicate_error(sample_sizes[k] / 2, &schedule, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mean_sq_frobenius: Vec<f64> = errors
        .chunks_exact(replicates)
        .map(|c| c.iter().sum::<f64>() / replicates as f64)
        .collect();
    let xs: Vec<f64> = sample_sizes.iter().map(|&s| s as f64).collect();
    Ok(ConvergenceReport {
        slope: log_log_slope(&xs, &mean_sq_frobenius),
        sample_sizes,
        mean_sq_frobenius,
        replicates,
    })
}

/// Two-antigen assay readouts in raw intensity units: negatives cluster at
/// low signal in both channels, positives respond in either channel or both.
///
/// Positive readouts below the lowest negative readout in a channel are
/// redrawn, so the log-shift transform fitted on the negatives accepts every
/// training point.
pub fn elisa_like(n_neg: usize, n_pos: usize, seed: u64) -> Result<TrainingPopulation<f64>> {
    let mut rng = rng_for(seed, 0);
    let neg_spread = Normal::new(0.0, 0.4).expect("valid sd");
    let pos_spread = Normal::new(0.0, 0.5).expect("valid sd");
    let raw = |l: f64| 1000.0 * l.exp();
    let negatives: Vec<[f64; 2]> = (0..n_neg)
        .map(|_| {
            [
                raw(neg_spread.sample(&mut rng)),
                raw(neg_spread.sample(&mut rng)),
            ]
        })
        .collect();
    let floor = [0, 1].map(|k| negatives.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min));
    const RESPONSES: [[f64; 2]; 3] = [[2.0, 0.2], [0.2, 2.0], [2.0, 2.0]];
    let positives: Vec<[f64; 2]> = (0..n_pos)
        .map(|i| {
            let c = RESPONSES[i % RESPONSES.len()];
            [0, 1].map(|k| loop {
                let v = raw(c[k] + pos_spread.sample(&mut rng));
                if v >= floor[k] {
                    break v;
                }
            })
        })
        .collect();
    TrainingPopulation::from_coords(
        negatives.into_iter().map(Vec::from).collect(),
        positives.into_iter().map(Vec::from).collect(),
    )
}
