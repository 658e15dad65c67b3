//! Prevalence-weighted empirical error and its smoothed, scale-regularized
//! surrogate.
//!
//! The smoothed loss uses `H(x) = (1 + tanh x) / 2` evaluated at `B / sigma2`.
//! Note the argument is divided by `sigma2` itself, not by its square root.

use crate::boundary::{class_of_value, n_params, BoundaryClassifier, QuadricParams};
use crate::error::{check_dim, Error, Result};
use crate::model::{Class, TrainingPopulation};
use crate::scalar::{dot, Scalar};

/// Smallest smoothing scale ever used.
pub const SIGMA2_FLOOR: f64 = 1e-8;

/// Beyond this `|x|`, `H(x)` is returned as exactly 0 or 1 with zero slope.
pub const TANH_CUTOFF: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig<T> {
    q: T,
    sigma2: T,
}

impl<T: Scalar> ObjectiveConfig<T> {
    pub fn new(q: T, sigma2: T) -> Result<Self> {
        check_prevalence(q)?;
        if !(sigma2.as_f64() >= SIGMA2_FLOOR) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma2 = {sigma2} is below the floor {SIGMA2_FLOOR:e}"
            )));
        }
        Ok(ObjectiveConfig { q, sigma2 })
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }
}

pub(crate) fn check_prevalence<T: Scalar>(q: T) -> Result<()> {
    if q >= T::zero() && q <= T::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "prevalence {q} outside [0, 1]"
        )))
    }
}

/// Smooth Heaviside `(1 + tanh x) / 2`.
#[inline]
pub fn smooth_step<T: Scalar>(x: T) -> T {
    let cutoff = T::lit(TANH_CUTOFF);
    if x > cutoff {
        T::one()
    } else if x < -cutoff {
        T::zero()
    } else {
        T::lit(0.5) * (T::one() + x.tanh())
    }
}

/// Derivative of [`smooth_step`], `sech^2(x) / 2`.
#[inline]
pub fn smooth_step_deriv<T: Scalar>(x: T) -> T {
    if x.abs() > T::lit(TANH_CUTOFF) {
        T::zero()
    } else {
        let t = x.tanh();
        T::lit(0.5) * (T::one() - t * t)
    }
}

/// Training features laid out for repeated loss evaluation.
///
/// Because `B` is linear in the packed parameters, each sample is reduced to
/// its feature vector once and every evaluation is a dot product.
#[derive(Clone, Debug)]
pub struct PreparedData<T> {
    dim: usize,
    n_params: usize,
    neg: Vec<T>,
    pos: Vec<T>,
}

impl<T: Scalar> PreparedData<T> {
    pub fn new(pop: &TrainingPopulation<T>) -> Self {
        let dim = pop.dim();
        let p = n_params(dim);
        let mut buf = Vec::with_capacity(p);
        let mut flatten = |class: Class| {
            let pts = pop.class(class);
            let mut out = Vec::with_capacity(pts.len() * p);
            for r in pts {
                QuadricParams::features_unchecked(dim, r.coords(), &mut buf);
                out.extend_from_slice(&buf);
            }
            out
        };
        let neg = flatten(Class::Negative);
        let pos = flatten(Class::Positive);
        PreparedData {
            dim,
            n_params: p,
            neg,
            pos,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    fn rows(&self, class: Class) -> std::slice::ChunksExact<'_, T> {
        match class {
            Class::Negative => self.neg.chunks_exact(self.n_params),
            Class::Positive => self.pos.chunks_exact(self.n_params),
        }
    }

    fn count(&self, class: Class) -> T {
        T::from_usize(self.rows(class).len()).expect("count fits scalar")
    }

    /// Boundary values of every sample of `class`.
    pub fn boundary_values(&self, phi: &[T], class: Class) -> Vec<T> {
        self.rows(class).map(|f| dot(phi, f)).collect()
    }

    fn check(&self, phi: &[T]) -> Result<()> {
        check_dim(self.n_params, phi.len())
    }

    pub fn empirical_error(&self, phi: &[T], q: T) -> Result<T> {
        self.check(phi)?;
        let missed_pos = self
            .rows(Class::Positive)
            .filter(|f| class_of_value(dot(phi, f)) == Class::Negative)
            .count();
        let missed_neg = self
            .rows(Class::Negative)
            .filter(|f| class_of_value(dot(phi, f)) == Class::Positive)
            .count();
        let missed_pos = T::from_usize(missed_pos).expect("count fits scalar");
        let missed_neg = T::from_usize(missed_neg).expect("count fits scalar");
        Ok(q * missed_pos / self.count(Class::Positive)
            + (T::one() - q) * missed_neg / self.count(Class::Negative))
    }

    pub fn smoothed_loss(&self, phi: &[T], cfg: &ObjectiveConfig<T>) -> Result<T> {
        self.check(phi)?;
        let s2 = cfg.sigma2;
        let pos: T = self
            .rows(Class::Positive)
            .map(|f| T::one() - smooth_step(dot(phi, f) / s2))
            .sum();
        let neg: T = self
            .rows(Class::Negative)
            .map(|f| smooth_step(dot(phi, f) / s2))
            .sum();
        Ok(cfg.q * pos / self.count(Class::Positive)
            + (T::one() - cfg.q) * neg / self.count(Class::Negative))
    }

    pub fn smoothed_loss_grad(&self, phi: &[T], cfg: &ObjectiveConfig<T>) -> Result<Vec<T>> {
        self.check(phi)?;
        let mut g = vec![T::zero(); self.n_params];
        let s2 = cfg.sigma2;
        let wp = -cfg.q / (self.count(Class::Positive) * s2);
        let wn = (T::one() - cfg.q) / (self.count(Class::Negative) * s2);
        for (class, w) in [(Class::Positive, wp), (Class::Negative, wn)] {
            for f in self.rows(class) {
                let c = w * smooth_step_deriv(dot(phi, f) / s2);
                if c != T::zero() {
                    axpy(c, f, &mut g);
                }
            }
        }
        Ok(g)
    }

    /// `sum_p B^2 / n_p + sum_n B^2 / n_n - 1`.
    fn scale_residual(&self, phi: &[T]) -> T {
        let ms = |class: Class| {
            self.rows(class)
                .map(|f| {
                    let b = dot(phi, f);
                    b * b
                })
                .sum::<T>()
                / self.count(class)
        };
        ms(Class::Positive) + ms(Class::Negative) - T::one()
    }

    pub fn scale_regularizer(&self, phi: &[T]) -> Result<T> {
        self.check(phi)?;
        let s = self.scale_residual(phi);
        Ok(s * s)
    }

    pub fn scale_regularizer_grad(&self, phi: &[T]) -> Result<Vec<T>> {
        self.check(phi)?;
        let s = self.scale_residual(phi);
        let mut g = vec![T::zero(); self.n_params];
        for class in [Class::Positive, Class::Negative] {
            let w = T::lit(4.0) * s / self.count(class);
            for f in self.rows(class) {
                axpy(w * dot(phi, f), f, &mut g);
            }
        }
        Ok(g)
    }

    pub fn total_loss(&self, phi: &[T], cfg: &ObjectiveConfig<T>) -> Result<T> {
        Ok(self.smoothed_loss(phi, cfg)? + self.scale_regularizer(phi)?)
    }

    /// Value and gradient of the scale-regularized loss in one pass.
    pub fn total_loss_and_grad(&self, phi: &[T], cfg: &ObjectiveConfig<T>) -> Result<(T, Vec<T>)> {
        self.check(phi)?;
        let s2 = cfg.sigma2;
        let (n_p, n_n) = (self.count(Class::Positive), self.count(Class::Negative));
        let bp = self.boundary_values(phi, Class::Positive);
        let bn = self.boundary_values(phi, Class::Negative);
        let mut g = vec![T::zero(); self.n_params];
        let (mut pos_loss, mut pos_sq) = (T::zero(), T::zero());
        let (mut neg_loss, mut neg_sq) = (T::zero(), T::zero());
        let wp = -cfg.q / (n_p * s2);
        let wn = (T::one() - cfg.q) / (n_n * s2);
        for (f, &b) in self.rows(Class::Positive).zip(&bp) {
            let x = b / s2;
            pos_loss = pos_loss + (T::one() - smooth_step(x));
            pos_sq = pos_sq + b * b;
            let d = smooth_step_deriv(x);
            if d != T::zero() {
                axpy(wp * d, f, &mut g);
            }
        }
        for (f, &b) in self.rows(Class::Negative).zip(&bn) {
            let x = b / s2;
            neg_loss = neg_loss + smooth_step(x);
            neg_sq = neg_sq + b * b;
            let d = smooth_step_deriv(x);
            if d != T::zero() {
                axpy(wn * d, f, &mut g);
            }
        }
        let s = pos_sq / n_p + neg_sq / n_n - T::one();
        for (class, vals, n) in [(Class::Positive, &bp, n_p), (Class::Negative, &bn, n_n)] {
            let w = T::lit(4.0) * s / n;
            for (f, &b) in self.rows(class).zip(vals) {
                axpy(w * b, f, &mut g);
            }
        }
        let loss = cfg.q * pos_loss / n_p + (T::one() - cfg.q) * neg_loss / n_n + s * s;
        Ok((loss, g))
    }
}

#[inline]
pub(crate) fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

fn prepared<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
) -> Result<PreparedData<T>> {
    check_dim(phi.dim(), pop.dim())?;
    Ok(PreparedData::new(pop))
}

/// Prevalence-weighted fraction of misclassified training samples.
pub fn empirical_error<T: Scalar>(
    clf: &BoundaryClassifier<T>,
    pop: &TrainingPopulation<T>,
    q: T,
) -> Result<T> {
    check_prevalence(q)?;
    prepared(&clf.quadric, pop)?.empirical_error(clf.quadric.params(), q)
}

pub fn smoothed_loss<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<T> {
    prepared(phi, pop)?.smoothed_loss(phi.params(), cfg)
}

pub fn smoothed_loss_grad<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<Vec<T>> {
    prepared(phi, pop)?.smoothed_loss_grad(phi.params(), cfg)
}

pub fn scale_regularizer<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
) -> Result<T> {
    prepared(phi, pop)?.scale_regularizer(phi.params())
}

pub fn scale_regularizer_grad<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
) -> Result<Vec<T>> {
    prepared(phi, pop)?.scale_regularizer_grad(phi.params())
}

pub fn total_loss<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<T> {
    prepared(phi, pop)?.total_loss(phi.params(), cfg)
}

pub fn total_loss_grad<T: Scalar>(
    phi: &QuadricParams<T>,
    pop: &TrainingPopulation<T>,
    cfg: &ObjectiveConfig<T>,
) -> Result<Vec<T>> {
    Ok(prepared(phi, pop)?
        .total_loss_and_grad(phi.params(), cfg)?
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pop(neg: &[&[f64]], pos: &[&[f64]]) -> TrainingPopulation<f64> {
        TrainingPopulation::from_coords(
            neg.iter().map(|p| p.to_vec()).collect(),
            pos.iter().map(|p| p.to_vec()).collect(),
        )
        .unwrap()
    }

    /// `B = a x + b` in one dimension.
    fn line(a: f64, b: f64) -> QuadricParams<f64> {
        QuadricParams::new(1, vec![0.0, a / 2.0, b]).unwrap()
    }

    /// `B = x - c` in two dimensions.
    fn vertical(c: f64) -> QuadricParams<f64> {
        QuadricParams::new(2, vec![0.0, 0.0, 0.5, 0.0, 0.0, -c]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::new(0.5, 1e-8).is_ok());
        assert!(ObjectiveConfig::new(0.5, 1e-9).is_err());
        assert!(ObjectiveConfig::new(1.5, 1.0).is_err());
        assert!(ObjectiveConfig::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn empirical_error_examples() {
        let p = pop(&[&[0.0, 0.0]], &[&[2.0, 0.0]]);
        let sep = BoundaryClassifier::new(vertical(1.0));
        assert_eq!(empirical_error(&sep, &p, 0.5).unwrap(), 0.0);
        let all_neg = BoundaryClassifier::new(vertical(3.0));
        assert_eq!(empirical_error(&all_neg, &p, 0.5).unwrap(), 0.5);
        assert_eq!(empirical_error(&all_neg, &p, 0.3).unwrap(), 0.3);
    }

    #[test]
    fn smoothed_loss_on_boundary_is_half() {
        let p = pop(&[&[1.0, 5.0], &[1.0, -2.0]], &[&[1.0, 0.0]]);
        for q in [0.0, 0.2, 0.9, 1.0] {
            let cfg = ObjectiveConfig::new(q, 0.3).unwrap();
            assert_eq!(smoothed_loss(&vertical(1.0), &p, &cfg).unwrap(), 0.5);
        }
    }

    #[test]
    fn smoothed_loss_single_positive() {
        let s2 = 0.25;
        let p = pop(&[&[-10.0]], &[&[s2]]);
        let cfg = ObjectiveConfig::new(1.0, s2).unwrap();
        let v = smoothed_loss(&line(1.0, 0.0), &p, &cfg).unwrap();
        let expected = 0.5 * (1.0 - 1f64.tanh());
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.11920).abs() < 1e-5);
    }

    #[test]
    fn smoothed_loss_tiny_sigma_is_counting() {
        let p = pop(&[&[-2.0], &[3.0], &[-1.0]], &[&[2.0], &[-4.0]]);
        let cfg = ObjectiveConfig::new(0.3, 1e-8).unwrap();
        let phi = line(1.0, 0.0);
        let e = empirical_error(&BoundaryClassifier::new(phi.clone()), &p, 0.3).unwrap();
        assert_eq!(e, 0.3 * 0.5 + 0.7 / 3.0);
        assert!((smoothed_loss(&phi, &p, &cfg).unwrap() - e).abs() < 1e-9);
    }

    #[test]
    fn scale_regularizer_examples() {
        let p = pop(&[&[0.0]], &[&[2.0]]);
        assert_eq!(scale_regularizer(&line(1.0, 0.0), &p).unwrap(), 9.0);
        assert_eq!(
            scale_regularizer(&QuadricParams::zeros(1), &p).unwrap(),
            1.0
        );
        // B = x/2 gives 1 + 0 - 1 = 0
        assert_eq!(scale_regularizer(&line(0.5, 0.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let p = pop(&[&[0.0]], &[&[2.0]]);
        let cfg = ObjectiveConfig::new(0.5, 1.0).unwrap();
        assert!(matches!(
            total_loss(&vertical(0.0), &p, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gradient_vanishes_at_mirror_symmetric_stationary_point() {
        // negatives at -1, positives at +1, boundary B = c x. The odd symmetry
        // cancels every component except d/dA01, where the smoothing pull
        // balances the scale penalty at a single c.
        let p = pop(&[&[-1.0]], &[&[1.0]]);
        let s2 = 0.5;
        let cfg = ObjectiveConfig::new(0.5, s2).unwrap();
        let residual =
            |c: f64| 16.0 * c * (2.0 * c * c - 1.0) - 2.0 * smooth_step_deriv(c / s2) / s2;
        let (mut lo, mut hi) = (0.70, 2.0);
        assert!(residual(lo) < 0.0 && residual(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        let c = 0.5 * (lo + hi);
        let g = total_loss_grad(&line(c, 0.0), &p, &cfg).unwrap();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(gn < 1e-8, "gradient norm {gn}");
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut up = x.to_vec();
                up[k] += h;
                let mut dn = x.to_vec();
                dn[k] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().map(|v| v.abs()).fold(1e-3, f64::max);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gradients_match_finite_differences(
            neg in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2..15),
            pos in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2..15),
            phi in prop::collection::vec(-0.5f64..0.5, 6),
            q in 0.0f64..1.0,
            s2 in 0.2f64..2.0,
        ) {
            let data = PreparedData::new(&TrainingPopulation::from_coords(neg, pos).unwrap());
            let cfg = ObjectiveConfig::new(q, s2).unwrap();
            let fd = central_diff(|x| data.total_loss(x, &cfg).unwrap(), &phi, 1e-6);
            let (v, g) = data.total_loss_and_grad(&phi, &cfg).unwrap();
            prop_assert!((v - data.total_loss(&phi, &cfg).unwrap()).abs() < 1e-12);
            prop_assert!(rel_err(&g, &fd) < 1e-5);
            let fd = central_diff(|x| data.smoothed_loss(x, &cfg).unwrap(), &phi, 1e-6);
            prop_assert!(rel_err(&data.smoothed_loss_grad(&phi, &cfg).unwrap(), &fd) < 1e-5);
            let fd = central_diff(|x| data.scale_regularizer(x).unwrap(), &phi, 1e-6);
            prop_assert!(rel_err(&data.scale_regularizer_grad(&phi).unwrap(), &fd) < 1e-5);
        }

        #[test]
        fn losses_bounded_and_error_scale_invariant(
            neg in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..15),
            pos in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 1..15),
            phi in prop::collection::vec(-1.0f64..1.0, 6),
            q in 0.0f64..1.0,
            s2 in 1e-8f64..2.0,
            c in 0.01f64..100.0,
        ) {
            let p = TrainingPopulation::from_coords(neg, pos).unwrap();
            let phi = QuadricParams::new(2, phi).unwrap();
            let cfg = ObjectiveConfig::new(q, s2).unwrap();
            let e = empirical_error(&BoundaryClassifier::new(phi.clone()), &p, q).unwrap();
            let l = smoothed_loss(&phi, &p, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            prop_assert!((-1e-15..=1.0 + 1e-15).contains(&l));
            let e2 = empirical_error(&BoundaryClassifier::new(phi.scaled(c)), &p, q).unwrap();
            prop_assert_eq!(e, e2);
            let tot = total_loss(&phi, &p, &cfg).unwrap();
            let parts = l + scale_regularizer(&phi, &p).unwrap();
            prop_assert!((tot - parts).abs() <= 1e-12 * (1.0 + parts.abs()));
        }
    }

    #[test]
    fn f32_matches_f64() {
        let p64 = pop(&[&[0.0, 0.1], &[0.5, -0.3]], &[&[2.0, 0.0], &[1.5, 1.0]]);
        let p32 = TrainingPopulation::<f32>::from_coords(
            vec![vec![0.0, 0.1], vec![0.5, -0.3]],
            vec![vec![2.0, 0.0], vec![1.5, 1.0]],
        )
        .unwrap();
        let phi32 = QuadricParams::<f32>::new(2, vec![0.0, 0.0, 0.5, 0.0, 0.0, -1.0]).unwrap();
        let v64 = total_loss(
            &vertical(1.0),
            &p64,
            &ObjectiveConfig::new(0.4, 0.5).unwrap(),
        )
        .unwrap();
        let v32 = total_loss(&phi32, &p32, &ObjectiveConfig::new(0.4f32, 0.5).unwrap()).unwrap();
        assert!((v64 - v32 as f64).abs() < 1e-5);
    }
}
