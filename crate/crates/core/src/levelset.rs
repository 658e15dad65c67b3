//! Monotone families of boundaries over a prevalence grid and the pointwise
//! uncertainty they encode.
//!
//! For an optimal family, the class assigned to a fixed point can only switch
//! from 0 to 1 as `q` grows, and the switch happens at the prevalence
//! function `N(r) / (N(r) + P(r))`. Independently fitted boundaries need not
//! respect this, so the family is fitted jointly with the ordering
//! `B(rho, phi_j) <= B(rho, phi_{j+1})` imposed at a set of shadow points
//! through a quadratic hinge penalty.

use rayon::prelude::*;

use crate::boundary::{class_of_value, hyperplane_init, n_params, QuadricParams};
use crate::error::{check_dim, Error, Result};
use crate::model::{Class, Measurement, TrainingPopulation};
use crate::objective::{axpy, check_prevalence, ObjectiveConfig, PreparedData};
use crate::optimizer::{
    homotopy_run_prepared, minimize, HomotopyResult, MinimizeOptions, SigmaSchedule,
};
use crate::scalar::{dot, Scalar};

/// `0.05, 0.10, ..., 0.95`.
pub fn default_q_grid<T: Scalar>() -> Vec<T> {
    (1..=19).map(|k| T::lit(k as f64 / 20.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSetOptions<T> {
    pub minimize: MinimizeOptions<T>,
    pub penalty_start: T,
    pub penalty_growth: T,
    pub penalty_max: T,
    /// Largest acceptable ordering violation at any shadow point.
    pub violation_tol: T,
    /// Gap the penalty asks for beyond mere ordering; the residual of a
    /// finite penalty weight then falls on the feasible side.
    pub penalty_margin: T,
    /// Points per axis of the post-fit monotonicity check.
    pub check_resolution: usize,
}

impl<T: Scalar> Default for LevelSetOptions<T> {
    fn default() -> Self {
        LevelSetOptions {
            minimize: MinimizeOptions::default(),
            penalty_start: T::one(),
            penalty_growth: T::lit(10.0),
            penalty_max: T::lit(1e6),
            violation_tol: T::lit(1e-8),
            penalty_margin: T::lit(1e-6),
            check_resolution: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSetFamily<T> {
    pub q_grid: Vec<T>,
    pub params: Vec<QuadricParams<T>>,
    pub shadow_points: Vec<Measurement<T>>,
    /// Largest `B(rho, phi_j) - B(rho, phi_{j+1})` over all pairs, floored at 0.
    pub constraint_violation: T,
    /// Grid points whose class decreases somewhere along the family.
    pub grid_violations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyBracket<T> {
    pub q_l: T,
    pub q_h: T,
    pub z_low: T,
    pub z_high: T,
}

/// Uniform grid over the bounding box of the training data, widened by 10%
/// of its extent on every side, followed by `extra`.
pub fn shadow_grid<T: Scalar>(
    pop: &TrainingPopulation<T>,
    count_per_dim: usize,
    extra: &[Measurement<T>],
) -> Result<Vec<Measurement<T>>> {
    if count_per_dim == 0 {
        return Err(Error::InvalidArgument("count_per_dim must be >= 1".into()));
    }
    for e in extra {
        check_dim(pop.dim(), e.dim())?;
    }
    let (lo, hi) = bounding_box(pop.iter().map(|(_, r)| r), pop.dim());
    let pad: Vec<T> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| T::lit(0.1) * (h - l))
        .collect();
    let lo: Vec<T> = lo.iter().zip(&pad).map(|(&l, &p)| l - p).collect();
    let hi: Vec<T> = hi.iter().zip(&pad).map(|(&h, &p)| h + p).collect();
    let mut pts = box_grid(&lo, &hi, count_per_dim)?;
    pts.extend(extra.iter().cloned());
    Ok(pts)
}

fn bounding_box<'a, T: Scalar>(
    pts: impl Iterator<Item = &'a Measurement<T>>,
    dim: usize,
) -> (Vec<T>, Vec<T>) {
    let mut lo = vec![T::infinity(); dim];
    let mut hi = vec![T::neg_infinity(); dim];
    for r in pts {
        for k in 0..dim {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    (lo, hi)
}

/// `count^m` points, first coordinate varying fastest; a single count gives
/// the box center.
pub fn box_grid<T: Scalar>(lo: &[T], hi: &[T], count: usize) -> Result<Vec<Measurement<T>>> {
    let dim = lo.len();
    let axis = |k: usize, i: usize| {
        if count == 1 {
            T::lit(0.5) * (lo[k] + hi[k])
        } else {
            let t = T::from_usize(i).unwrap() / T::from_usize(count - 1).unwrap();
            lo[k] + (hi[k] - lo[k]) * t
        }
    };
    let total = count.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut c = Vec::with_capacity(dim);
        for k in 0..dim {
            c.push(axis(k, idx % count));
            idx /= count;
        }
        out.push(Measurement::new(c)?);
    }
    Ok(out)
}

/// Quadratic hinge penalty on ordering violations at shadow points, over a
/// flattened parameter vector `[phi_1, ..., phi_theta]`.
#[derive(Clone, Debug)]
pub struct ShadowPenalty<T> {
    n_params: usize,
    levels: usize,
    features: Vec<T>,
    margin: T,
}

impl<T: Scalar> ShadowPenalty<T> {
    /// Penalty on `max(0, B_j - B_{j+1} + margin)`.
    pub fn new(dim: usize, levels: usize, shadow: &[Measurement<T>], margin: T) -> Result<Self> {
        if !(margin >= T::zero()) {
            return Err(Error::InvalidArgument("penalty margin must be >= 0".into()));
        }
        let p = n_params(dim);
        let mut features = Vec::with_capacity(shadow.len() * p);
        let mut buf = Vec::with_capacity(p);
        for r in shadow {
            check_dim(dim, r.dim())?;
            QuadricParams::features_unchecked(dim, r.coords(), &mut buf);
            features.extend_from_slice(&buf);
        }
        Ok(ShadowPenalty {
            n_params: p,
            levels,
            features,
            margin,
        })
    }

    fn check(&self, x: &[T]) -> Result<()> {
        check_dim(self.n_params * self.levels, x.len())
    }

    fn gaps<'a>(&'a self, x: &'a [T]) -> impl Iterator<Item = (usize, &'a [T], T)> + 'a {
        let p = self.n_params;
        let levels = self.levels;
        self.features.chunks_exact(p).flat_map(move |f| {
            (0..levels.saturating_sub(1)).map(move |j| {
                let lower = dot(&x[j * p..(j + 1) * p], f);
                let upper = dot(&x[(j + 1) * p..(j + 2) * p], f);
                (j, f, lower - upper)
            })
        })
    }

    /// Largest violation, 0 when the ordering holds everywhere.
    pub fn max_violation(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        Ok(self.gaps(x).fold(T::zero(), |m, (_, _, g)| m.max(g)))
    }

    /// `sum max(0, B_j - B_{j+1} + margin)^2`, without the weight.
    pub fn value(&self, x: &[T]) -> Result<T> {
        self.check(x)?;
        Ok(self
            .gaps(x)
            .map(|(_, _, g)| {
                let h = g + self.margin;
                if h > T::zero() {
                    h * h
                } else {
                    T::zero()
                }
            })
            .sum())
    }

    /// Gradient of [`ShadowPenalty::value`] scaled by `weight`, accumulated into `grad`.
    pub fn add_grad(&self, x: &[T], weight: T, grad: &mut [T]) -> Result<()> {
        self.check(x)?;
        check_dim(x.len(), grad.len())?;
        let p = self.n_params;
        for (j, f, g) in self.gaps(x) {
            let h = g + self.margin;
            if h > T::zero() {
                let c = T::lit(2.0) * weight * h;
                axpy(c, f, &mut grad[j * p..(j + 1) * p]);
                axpy(-c, f, &mut grad[(j + 1) * p..(j + 2) * p]);
            }
        }
        Ok(())
    }
}

fn check_q_grid<T: Scalar>(q_grid: &[T]) -> Result<()> {
    if q_grid.is_empty() {
        return Err(Error::InvalidArgument("empty prevalence grid".into()));
    }
    if q_grid.iter().any(|&q| !(q > T::zero() && q < T::one())) {
        return Err(Error::InvalidArgument(
            "grid prevalences must lie in (0, 1)".into(),
        ));
    }
    if q_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "prevalence grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

pub fn fit_levelsets<T: Scalar>(
    pop: &TrainingPopulation<T>,
    q_grid: &[T],
    shadow: &[Measurement<T>],
    schedule: &SigmaSchedule<T>,
) -> Result<LevelSetFamily<T>> {
    fit_levelsets_with(pop, q_grid, shadow, schedule, &LevelSetOptions::default())
}

/// Fits one boundary per grid prevalence, then polishes them jointly at the
/// final smoothing scale with the ordering penalty, raising its weight until
/// the violation is within tolerance.
pub fn fit_levelsets_with<T: Scalar>(
    pop: &TrainingPopulation<T>,
    q_grid: &[T],
    shadow: &[Measurement<T>],
    schedule: &SigmaSchedule<T>,
    opts: &LevelSetOptions<T>,
) -> Result<LevelSetFamily<T>> {
    check_q_grid(q_grid)?;
    if q_grid.len() > 1 && shadow.is_empty() {
        return Err(Error::InvalidArgument(
            "shadow points are required for more than one level".into(),
        ));
    }
    let dim = pop.dim();
    let data = PreparedData::new(pop);
    let phi0 = hyperplane_init(pop)?;
    let runs: Vec<HomotopyResult<T>> = q_grid
        .par_iter()
        .map(|&q| homotopy_run_prepared(&data, q, &phi0, schedule, &opts.minimize))
        .collect::<Result<_>>()?;
    let mut x: Vec<T> = runs
        .into_iter()
        .flat_map(|r| r.final_params.into_params())
        .collect();

    let penalty = ShadowPenalty::new(dim, q_grid.len(), shadow, opts.penalty_margin)?;
    let configs = q_grid
        .iter()
        .map(|&q| ObjectiveConfig::new(q, schedule.last()))
        .collect::<Result<Vec<_>>>()?;
    let p = n_params(dim);
    let mut violation = penalty.max_violation(&x)?;
    let mut weight = opts.penalty_start;
    while violation > opts.violation_tol {
        if weight > opts.penalty_max {
            return Err(Error::ConstraintNotSatisfied {
                violation: violation.as_f64(),
            });
        }
        let joint = |z: &[T]| -> Result<(T, Vec<T>)> {
            let mut total = T::zero();
            let mut grad = Vec::with_capacity(z.len());
            for (j, cfg) in configs.iter().enumerate() {
                let (v, g) = data.total_loss_and_grad(&z[j * p..(j + 1) * p], cfg)?;
                total = total + v;
                grad.extend(g);
            }
            total = total + weight * penalty.value(z)?;
            penalty.add_grad(z, weight, &mut grad)?;
            Ok((total, grad))
        };
        x = minimize(joint, &x, &opts.minimize)?.x;
        violation = penalty.max_violation(&x)?;
        weight = weight * opts.penalty_growth;
    }

    let params = x
        .chunks_exact(p)
        .map(|c| QuadricParams::new(dim, c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut family = LevelSetFamily {
        q_grid: q_grid.to_vec(),
        params,
        shadow_points: shadow.to_vec(),
        constraint_violation: violation.max(T::zero()),
        grid_violations: 0,
    };
    if !shadow.is_empty() {
        family.grid_violations = count_grid_violations(&family, opts.check_resolution)?;
    }
    Ok(family)
}

impl<T: Scalar> LevelSetFamily<T> {
    pub fn dim(&self) -> usize {
        self.params[0].dim()
    }

    pub fn levels(&self) -> usize {
        self.q_grid.len()
    }

    /// Classes of `r` along the grid, lowest prevalence first.
    pub fn classes(&self, r: &Measurement<T>) -> Result<Vec<Class>> {
        self.params
            .iter()
            .map(|phi| Ok(class_of_value(crate::boundary::quadric_eval(phi, r)?)))
            .collect()
    }

    /// Fails with `NonMonotoneFamily` if the post-fit grid check found any
    /// class decrease.
    pub fn ensure_monotone(&self) -> Result<()> {
        if self.grid_violations == 0 {
            Ok(())
        } else {
            Err(Error::NonMonotoneFamily(format!(
                "{} evaluation points switch class more than once",
                self.grid_violations
            )))
        }
    }
}

fn is_monotone(classes: &[Class]) -> bool {
    classes.windows(2).all(|w| w[0] <= w[1])
}

/// Counts points of a `resolution^m` grid over the shadow points' bounding
/// box at which the assigned class is not non-decreasing in `q`.
pub fn count_grid_violations<T: Scalar>(
    family: &LevelSetFamily<T>,
    resolution: usize,
) -> Result<usize> {
    if family.shadow_points.is_empty() {
        return Err(Error::InvalidArgument("family has no shadow points".into()));
    }
    let (lo, hi) = bounding_box(family.shadow_points.iter(), family.dim());
    let mut bad = 0;
    for r in box_grid(&lo, &hi, resolution)? {
        if !is_monotone(&family.classes(&r)?) {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Brackets the prevalence function at `r` by the grid prevalences where the
/// assigned class switches. Returns `(q_l, q_h)`.
pub fn prevalence_function_query<T: Scalar>(
    family: &LevelSetFamily<T>,
    r: &Measurement<T>,
) -> Result<(T, T)> {
    let classes = family.classes(r)?;
    if !is_monotone(&classes) {
        return Err(Error::NonMonotoneFamily(format!(
            "class decreases along the grid at {:?}",
            r.coords()
        )));
    }
    let q_l = classes
        .iter()
        .zip(&family.q_grid)
        .filter(|(c, _)| **c == Class::Negative)
        .map(|(_, &q)| q)
        .next_back()
        .unwrap_or(T::zero());
    let q_h = classes
        .iter()
        .zip(&family.q_grid)
        .find(|(c, _)| **c == Class::Positive)
        .map(|(_, &q)| q)
        .unwrap_or(T::one());
    Ok((q_l, q_h))
}

/// Bracket plus the local-accuracy range it implies for a point assigned
/// `class` at prevalence `q`.
pub fn uncertainty<T: Scalar>(
    family: &LevelSetFamily<T>,
    r: &Measurement<T>,
    q: T,
    class: Class,
) -> Result<UncertaintyBracket<T>> {
    let (q_l, q_h) = prevalence_function_query(family, r)?;
    let a = local_accuracy(q, q_l, class)?;
    let b = local_accuracy(q, q_h, class)?;
    Ok(UncertaintyBracket {
        q_l,
        q_h,
        z_low: a.min(b),
        z_high: a.max(b),
    })
}

/// `N / (N + P)` from known class-conditional densities.
pub fn prevalence_function_oracle<T: Scalar>(n_density: T, p_density: T) -> Result<T> {
    if !(n_density >= T::zero() && p_density >= T::zero()) {
        return Err(Error::InvalidArgument(
            "densities must be non-negative".into(),
        ));
    }
    let total = n_density + p_density;
    if total == T::zero() {
        return Err(Error::BothZero);
    }
    Ok(n_density / total)
}

/// Probability that a point with prevalence-function value `q_point`,
/// assigned `class`, is classified correctly in a population of prevalence `q`.
pub fn local_accuracy<T: Scalar>(q: T, q_point: T, class: Class) -> Result<T> {
    check_prevalence(q)?;
    check_prevalence(q_point)?;
    let pos = q * (T::one() - q_point);
    let neg = (T::one() - q) * q_point;
    let denom = pos + neg;
    if denom == T::zero() {
        return Err(Error::IndeterminateAccuracy {
            q: q.as_f64(),
            q_point: q_point.as_f64(),
        });
    }
    Ok(match class {
        Class::Positive => pos / denom,
        Class::Negative => neg / denom,
    })
}
