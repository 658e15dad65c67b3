//! Quasi-Newton minimizer and the homotopy driver over a decreasing
//! smoothing schedule.

use crate::boundary::{mean_separation, QuadricParams};
use crate::error::{check_dim, Error, Result};
use crate::model::TrainingPopulation;
use crate::objective::{check_prevalence, ObjectiveConfig, PreparedData, SIGMA2_FLOOR};
use crate::scalar::{dot, norm, Scalar};

/// Default number of decades spanned by the data-driven schedule.
pub const DEFAULT_DECADES: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions<T> {
    /// Stop once the gradient norm is at or below this.
    pub tol: T,
    pub max_iter: usize,
    /// Step shrink factor during backtracking.
    pub backtrack: T,
    /// Sufficient-decrease constant.
    pub armijo: T,
    pub max_backtracks: usize,
}

impl<T: Scalar> Default for MinimizeOptions<T> {
    fn default() -> Self {
        MinimizeOptions {
            tol: T::lit(1e-8),
            max_iter: 500,
            backtrack: T::lit(0.5),
            armijo: T::lit(1e-4),
            max_backtracks: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Dense inverse-Hessian approximation, row-major.
struct InverseHessian<T> {
    n: usize,
    h: Vec<T>,
    fresh: bool,
}

impl<T: Scalar> InverseHessian<T> {
    fn identity(n: usize) -> Self {
        let mut h = vec![T::zero(); n * n];
        for i in 0..n {
            h[i * n + i] = T::one();
        }
        InverseHessian { n, h, fresh: true }
    }

    fn reset(&mut self) {
        *self = Self::identity(self.n);
    }

    fn direction(&self, g: &[T]) -> Vec<T> {
        self.h
            .chunks_exact(self.n)
            .map(|row| -dot(row, g))
            .collect()
    }

    /// BFGS update; skipped when the curvature condition fails.
    fn update(&mut self, s: &[T], y: &[T]) {
        let n = self.n;
        let sy = dot(s, y);
        let yy = dot(y, y);
        if !(sy > T::epsilon() * norm(s) * yy.sqrt()) {
            return;
        }
        if self.fresh {
            let gamma = sy / yy;
            for v in self.h.iter_mut() {
                *v = *v * gamma;
            }
            self.fresh = false;
        }
        let rho = T::one() / sy;
        let hy: Vec<T> = self.h.chunks_exact(n).map(|row| dot(row, y)).collect();
        let yhy = dot(y, &hy);
        // H += rho^2 (y'Hy) s s' + rho s s' - rho (Hy s' + s y'H)
        let c = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                let delta = c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                self.h[i * n + j] = self.h[i * n + j] + delta;
            }
        }
    }
}

enum LineSearch<T> {
    Accepted { x: Vec<T>, value: T, grad: Vec<T> },
    Failed { all_non_finite: bool },
}

fn backtrack<T: Scalar, F>(
    f: &mut F,
    x: &[T],
    value: T,
    slope: T,
    d: &[T],
    opts: &MinimizeOptions<T>,
) -> Result<LineSearch<T>>
where
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let mut alpha = T::one();
    let mut all_non_finite = true;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<T> = x.iter().zip(d).map(|(&xi, &di)| xi + alpha * di).collect();
        let (v, g) = f(&trial)?;
        let finite = v.is_finite() && g.iter().all(|gi| gi.is_finite());
        if finite {
            all_non_finite = false;
            if v <= value + opts.armijo * alpha * slope && v < value {
                return Ok(LineSearch::Accepted {
                    x: trial,
                    value: v,
                    grad: g,
                });
            }
        }
        alpha = alpha * opts.backtrack;
    }
    Ok(LineSearch::Failed { all_non_finite })
}

/// Minimizes a smooth function given as a value-and-gradient callback.
///
/// Every accepted step strictly decreases the objective, so the returned
/// value never exceeds `f(x0)`. On a line-search failure the curvature
/// model is reset to the identity once; a second consecutive failure ends
/// the run with `converged = false`.
pub fn minimize<T, F>(mut f: F, x0: &[T], opts: &MinimizeOptions<T>) -> Result<Minimum<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<(T, Vec<T>)>,
{
    let (mut value, mut grad) = f(x0)?;
    check_dim(x0.len(), grad.len())?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss(format!("initial value {value}")));
    }
    let mut x = x0.to_vec();
    let mut hinv = InverseHessian::identity(x.len());
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if norm(&grad) <= opts.tol {
            converged = true;
            break;
        }
        let mut d = hinv.direction(&grad);
        let mut slope = dot(&grad, &d);
        if !(slope < T::zero()) {
            hinv.reset();
            d = grad.iter().map(|&g| -g).collect();
            slope = dot(&grad, &d);
        }
        match backtrack(&mut f, &x, value, slope, &d, opts)? {
            LineSearch::Accepted {
                x: nx,
                value: nv,
                grad: ng,
            } => {
                let s: Vec<T> = nx.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                let y: Vec<T> = ng.iter().zip(&grad).map(|(&a, &b)| a - b).collect();
                hinv.update(&s, &y);
                x = nx;
                value = nv;
                grad = ng;
                iterations += 1;
            }
            LineSearch::Failed { all_non_finite } => {
                if !hinv.fresh {
                    hinv.reset();
                    continue;
                }
                if all_non_finite {
                    return Err(Error::NonFiniteLoss(
                        "every line-search trial was non-finite".into(),
                    ));
                }
                break;
            }
        }
    }
    if !converged && norm(&grad) <= opts.tol {
        converged = true;
    }
    Ok(Minimum {
        grad_norm: norm(&grad),
        x,
        value,
        iterations,
        converged,
    })
}

/// Strictly decreasing smoothing scales, all at or above the floor.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSchedule<T> {
    values: Vec<T>,
}

impl<T: Scalar> SigmaSchedule<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty sigma schedule".into()));
        }
        let floor = T::lit(SIGMA2_FLOOR);
        if let Some(v) = values.iter().find(|&&v| !(v >= floor) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule entry {v} below {SIGMA2_FLOOR:e}"
            )));
        }
        if values.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidArgument(
                "sigma schedule must be strictly decreasing".into(),
            ));
        }
        Ok(SigmaSchedule { values })
    }

    /// `scale * 10^-j` for `j` in `first..=last`, clamped to the floor and
    /// deduplicated.
    pub fn decades(scale: T, first: usize, last: usize) -> Result<Self> {
        let floor = T::lit(SIGMA2_FLOOR);
        let ten = T::lit(10.0);
        let mut values: Vec<T> = Vec::with_capacity(last + 1 - first.min(last));
        for j in first..=last {
            let v = (scale / ten.powi(j as i32)).max(floor);
            if values.last().is_none_or(|&prev| v < prev) {
                values.push(v);
            }
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> T {
        *self.values.last().expect("schedule is non-empty")
    }
}

/// `|nu| * 10^-j` for `j = 0..=decades`, where `|nu|` is the distance between
/// the class means.
pub fn sigma_schedule_from_data<T: Scalar>(
    pop: &TrainingPopulation<T>,
    decades: usize,
) -> Result<SigmaSchedule<T>> {
    SigmaSchedule::decades(mean_separation(pop)?, 0, decades)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyResult<T> {
    pub final_params: QuadricParams<T>,
    pub stage_params: Vec<QuadricParams<T>>,
    /// Loss of each stage's minimizer at that stage's `sigma2`.
    pub stage_losses: Vec<T>,
    /// Loss of each stage's starting point at that stage's `sigma2`.
    pub stage_initial_losses: Vec<T>,
    pub converged: Vec<bool>,
}

/// Runs the homotopy from `phi0`, chaining one minimization per schedule
/// entry.
pub fn homotopy_run<T: Scalar>(
    pop: &TrainingPopulation<T>,
    q: T,
    phi0: &QuadricParams<T>,
    schedule: &SigmaSchedule<T>,
) -> Result<HomotopyResult<T>> {
    check_dim(phi0.dim(), pop.dim())?;
    homotopy_run_prepared(
        &PreparedData::new(pop),
        q,
        phi0,
        schedule,
        &MinimizeOptions::default(),
    )
}

pub fn homotopy_run_prepared<T: Scalar>(
    data: &PreparedData<T>,
    q: T,
    phi0: &QuadricParams<T>,
    schedule: &SigmaSchedule<T>,
    opts: &MinimizeOptions<T>,
) -> Result<HomotopyResult<T>> {
    check_prevalence(q)?;
    check_dim(data.dim(), phi0.dim())?;
    let dim = phi0.dim();
    let mut current = phi0.params().to_vec();
    let n = schedule.len();
    let mut result = HomotopyResult {
        final_params: phi0.clone(),
        stage_params: Vec::with_capacity(n),
        stage_losses: Vec::with_capacity(n),
        stage_initial_losses: Vec::with_capacity(n),
        converged: Vec::with_capacity(n),
    };
    for &s2 in schedule.values() {
        let cfg = ObjectiveConfig::new(q, s2)?;
        let start = data.total_loss(&current, &cfg)?;
        let min = minimize(|x| data.total_loss_and_grad(x, &cfg), &current, opts)?;
        current = min.x;
        result.stage_initial_losses.push(start);
        result.stage_losses.push(min.value);
        result.converged.push(min.converged);
        result
            .stage_params
            .push(QuadricParams::new(dim, current.clone())?);
    }
    result.final_params = QuadricParams::new(dim, current)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(target: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let d: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((dot(&d, &d), d.iter().map(|v| 2.0 * v).collect()))
        }
    }

    #[test]
    fn quadratic_bowl_reaches_optimum() {
        let target = vec![1.5, -2.0, 0.25, 7.0];
        let m = minimize(bowl(target.clone()), &[0.0; 4], &MinimizeOptions::default()).unwrap();
        assert!(m.converged);
        for (a, b) in m.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((
                x[0] * x[0] + 1e4 * (x[1] - 1.0).powi(2),
                vec![2.0 * x[0], 2e4 * (x[1] - 1.0)],
            ))
        };
        let m = minimize(f, &[3.0, -2.0], &MinimizeOptions::default()).unwrap();
        assert!(m.converged);
        assert!(m.x[0].abs() < 1e-8 && (m.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            Ok((
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
            ))
        };
        let m = minimize(f, &[-1.2, 1.0], &MinimizeOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn converged_start_returned_unchanged() {
        let x0 = [1.0, 2.0];
        let m = minimize(
            bowl(vec![1.0, 2.0 + 1e-10]),
            &x0,
            &MinimizeOptions::default(),
        )
        .unwrap();
        assert_eq!(m.x, x0);
        assert_eq!(m.iterations, 0);
        assert!(m.converged);
    }

    #[test]
    fn one_step_strictly_decreases() {
        let opts = MinimizeOptions {
            max_iter: 1,
            ..MinimizeOptions::default()
        };
        let mut f = bowl(vec![3.0, -1.0]);
        let f0 = f(&[0.0, 0.0]).unwrap().0;
        let m = minimize(bowl(vec![3.0, -1.0]), &[0.0, 0.0], &opts).unwrap();
        assert_eq!(m.iterations, 1);
        assert!(m.value < f0);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(matches!(
            minimize(f, &[0.0], &MinimizeOptions::default()),
            Err(Error::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn non_finite_everywhere_else_is_an_error() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            if x[0] == 0.0 {
                Ok((1.0, vec![1.0]))
            } else {
                Ok((f64::INFINITY, vec![1.0]))
            }
        };
        assert!(matches!(
            minimize(f, &[0.0], &MinimizeOptions::default()),
            Err(Error::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn flat_but_noisy_objective_stops_without_convergence() {
        // gradient claims descent but the value never decreases
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((1.0, vec![1.0, 0.0])) };
        let m = minimize(f, &[0.0, 0.0], &MinimizeOptions::default()).unwrap();
        assert!(!m.converged);
        assert_eq!(m.x, vec![0.0, 0.0]);
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn schedule_examples() {
        let s = SigmaSchedule::<f64>::decades(2.0, 0, 2).unwrap();
        let expected = [2.0, 0.2, 0.02];
        for (a, b) in s.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(SigmaSchedule::decades(2.0, 0, 0).unwrap().values(), &[2.0]);
        let s = SigmaSchedule::decades(1e-6, 0, 8).unwrap();
        assert_eq!(s.values().len(), 3);
        assert_eq!(s.last(), 1e-8);
        assert!(s.values().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schedule_validation() {
        assert!(SigmaSchedule::<f64>::new(vec![]).is_err());
        assert!(SigmaSchedule::new(vec![1.0, 1.0]).is_err());
        assert!(SigmaSchedule::new(vec![1.0, 2.0]).is_err());
        assert!(SigmaSchedule::new(vec![1.0, 1e-9]).is_err());
        assert!(SigmaSchedule::new(vec![1.0, 0.5, 1e-8]).is_ok());
    }

    #[test]
    fn schedule_from_data_uses_mean_separation() {
        let pop = TrainingPopulation::from_coords(
            vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            vec![vec![2.0, 0.0], vec![2.0, 1.0]],
        )
        .unwrap();
        let s: SigmaSchedule<f64> = sigma_schedule_from_data(&pop, 2).unwrap();
        assert_eq!(s.values().len(), 3);
        assert!((s.values()[0] - 2.0).abs() < 1e-15);
        assert!((s.values()[2] - 0.02).abs() < 1e-15);
        let same = TrainingPopulation::from_coords(vec![vec![0.0]; 2], vec![vec![0.0]; 2]).unwrap();
        assert!(matches!(
            sigma_schedule_from_data(&same, 3),
            Err(Error::DegenerateMeans(_))
        ));
    }

    fn small_pop() -> TrainingPopulation<f64> {
        TrainingPopulation::from_coords(
            vec![
                vec![-1.0, 0.2],
                vec![-1.5, -0.3],
                vec![-0.7, 0.9],
                vec![0.4, 0.1],
            ],
            vec![
                vec![1.0, 0.0],
                vec![1.3, 0.8],
                vec![0.6, -0.6],
                vec![-0.2, 0.3],
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_stage_equals_one_minimize() {
        let pop = small_pop();
        let phi0 = crate::boundary::hyperplane_init(&pop).unwrap();
        let sched = SigmaSchedule::new(vec![0.3]).unwrap();
        let h = homotopy_run(&pop, 0.4, &phi0, &sched).unwrap();
        let data = PreparedData::new(&pop);
        let cfg = ObjectiveConfig::new(0.4, 0.3).unwrap();
        let m = minimize(
            |x| data.total_loss_and_grad(x, &cfg),
            phi0.params(),
            &MinimizeOptions::default(),
        )
        .unwrap();
        assert_eq!(h.final_params.params(), &m.x[..]);
        assert_eq!(h.stage_losses, vec![m.value]);
    }

    #[test]
    fn stages_descend_and_are_deterministic() {
        let pop = small_pop();
        let phi0 = crate::boundary::hyperplane_init(&pop).unwrap();
        let sched = sigma_schedule_from_data(&pop, 4).unwrap();
        let a = homotopy_run(&pop, 0.5, &phi0, &sched).unwrap();
        let b = homotopy_run(&pop, 0.5, &phi0, &sched).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.stage_params.len(), sched.len());
        assert_eq!(a.converged.len(), sched.len());
        for (end, start) in a.stage_losses.iter().zip(&a.stage_initial_losses) {
            assert!(end <= start);
        }
        assert_eq!(&a.final_params, a.stage_params.last().unwrap());
    }

    #[test]
    fn homotopy_runs_in_f32() {
        let pop = TrainingPopulation::<f32>::from_coords(
            vec![vec![-1.0, 0.2], vec![-1.5, -0.3], vec![-0.7, 0.9]],
            vec![vec![1.0, 0.0], vec![1.3, 0.8], vec![0.6, -0.6]],
        )
        .unwrap();
        let phi0 = crate::boundary::hyperplane_init(&pop).unwrap();
        let sched = SigmaSchedule::decades(1.0f32, 0, 3).unwrap();
        let opts = MinimizeOptions {
            tol: 1e-4,
            ..MinimizeOptions::default()
        };
        let h = homotopy_run_prepared(&PreparedData::new(&pop), 0.5, &phi0, &sched, &opts).unwrap();
        let clf = crate::boundary::BoundaryClassifier::new(h.final_params);
        let err = crate::objective::empirical_error(&clf, &pop, 0.5).unwrap();
        assert_eq!(err, 0.0);
    }
}
