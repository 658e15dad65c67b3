//! Classification-free prevalence estimation and the two-pass test-data
//! workflow.
//!
//! With `D` the positive side of a boundary, the fractions of test,
//! negative-training and positive-training samples falling in `D` satisfy
//! `Q = q P + (1 - q) N` in expectation, which inverts to
//! `q = (Q - N) / (P - N)` whenever `P != N`.

use crate::boundary::{classify, hyperplane_init, BoundaryClassifier, QuadricParams};
use crate::error::{check_dim, Error, Result};
use crate::model::{Class, Measurement, TestPopulation, TrainingPopulation};
use crate::objective::PreparedData;
use crate::optimizer::{
    homotopy_run_prepared, sigma_schedule_from_data, HomotopyResult, MinimizeOptions, SigmaSchedule,
};
use crate::scalar::Scalar;

/// Minimum `|P - N|` for which the estimator is defined.
pub const SEPARATION_TOL: f64 = 1e-12;

/// Fractions of each sample set falling on the positive side of a boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorRates<T> {
    /// Test population.
    pub q_tilde: T,
    /// Negative training samples.
    pub n_tilde: T,
    /// Positive training samples.
    pub p_tilde: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrevalenceEstimate<T> {
    pub q_hat: T,
    pub rates: IndicatorRates<T>,
    /// Set when the raw estimate fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
}

fn positive_fraction<T: Scalar>(clf: &BoundaryClassifier<T>, pts: &[Measurement<T>]) -> Result<T> {
    let mut hits = 0usize;
    for r in pts {
        if classify(clf, r)? == Class::Positive {
            hits += 1;
        }
    }
    Ok(T::from_usize(hits).expect("count fits scalar")
        / T::from_usize(pts.len()).expect("count fits scalar"))
}

pub fn indicator_rates<T: Scalar>(
    clf: &BoundaryClassifier<T>,
    pop: &TrainingPopulation<T>,
    test: &TestPopulation<T>,
) -> Result<IndicatorRates<T>> {
    check_dim(clf.quadric.dim(), pop.dim())?;
    check_dim(clf.quadric.dim(), test.dim())?;
    Ok(IndicatorRates {
        q_tilde: positive_fraction(clf, test.samples())?,
        n_tilde: positive_fraction(clf, pop.negatives())?,
        p_tilde: positive_fraction(clf, pop.positives())?,
    })
}

pub fn estimate_prevalence<T: Scalar>(rates: IndicatorRates<T>) -> Result<PrevalenceEstimate<T>> {
    for (name, v) in [
        ("Q", rates.q_tilde),
        ("N", rates.n_tilde),
        ("P", rates.p_tilde),
    ] {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "rate {name} = {v} outside [0, 1]"
            )));
        }
    }
    let sep = rates.p_tilde - rates.n_tilde;
    if !(sep.abs().as_f64() > SEPARATION_TOL) {
        return Err(Error::DegenerateSeparation(sep.abs().as_f64()));
    }
    let raw = (rates.q_tilde - rates.n_tilde) / sep;
    let (q_hat, clamped) = if raw < T::zero() {
        (T::zero(), true)
    } else if raw > T::one() {
        (T::one(), true)
    } else {
        (raw, false)
    };
    Ok(PrevalenceEstimate {
        q_hat,
        rates,
        clamped,
    })
}

/// Everything produced by the two-pass workflow.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPassResult<T> {
    pub estimate: PrevalenceEstimate<T>,
    /// Homotopy at `q = 1/2`, whose boundary defines `D`.
    pub first_pass: HomotopyResult<T>,
    /// Homotopy at `q = q_hat` from the same start and schedule.
    pub second_pass: HomotopyResult<T>,
    pub schedule: SigmaSchedule<T>,
    pub initial: QuadricParams<T>,
}

/// Estimates the test prevalence and fits the boundary for it.
///
/// Starts from the weighted hyperplane with the data-driven schedule of
/// `decades + 1` stages.
pub fn two_pass_classify<T: Scalar>(
    pop: &TrainingPopulation<T>,
    test: &TestPopulation<T>,
    decades: usize,
) -> Result<(PrevalenceEstimate<T>, HomotopyResult<T>)> {
    let phi0 = hyperplane_init(pop)?;
    let schedule = sigma_schedule_from_data(pop, decades)?;
    let r = two_pass_with(pop, test, &phi0, &schedule, &MinimizeOptions::default())?;
    Ok((r.estimate, r.second_pass))
}

pub fn two_pass_with<T: Scalar>(
    pop: &TrainingPopulation<T>,
    test: &TestPopulation<T>,
    phi0: &QuadricParams<T>,
    schedule: &SigmaSchedule<T>,
    opts: &MinimizeOptions<T>,
) -> Result<TwoPassResult<T>> {
    check_dim(pop.dim(), test.dim())?;
    check_dim(pop.dim(), phi0.dim())?;
    let data = PreparedData::new(pop);
    let first_pass = homotopy_run_prepared(&data, T::lit(0.5), phi0, schedule, opts)?;
    let clf = BoundaryClassifier::new(first_pass.final_params.clone());
    let estimate = estimate_prevalence(indicator_rates(&clf, pop, test)?)?;
    let second_pass = homotopy_run_prepared(&data, estimate.q_hat, phi0, schedule, opts)?;
    Ok(TwoPassResult {
        estimate,
        first_pass,
        second_pass,
        schedule: schedule.clone(),
        initial: phi0.clone(),
    })
}
