//! Quadric boundary functions `B(r) = chi^T A chi` with `chi = (r, 1)`.
//!
//! The symmetric `(m+1) x (m+1)` matrix `A` is stored as its upper triangle,
//! row-major, so symmetry holds by construction and no parameter is
//! duplicated. `B` is linear in the packed parameters: `B(r) = phi . f(r)`
//! where the feature vector `f(r)` has `chi_i^2` at diagonal slots and
//! `2 chi_i chi_j` at off-diagonal slots. `f(r)` is also the gradient of `B`
//! with respect to `phi`.

use crate::error::{check_dim, Error, Result};
use crate::model::{Class, Measurement, TrainingPopulation};
use crate::scalar::{dot, norm, Scalar};

/// Smallest `|mu_p - mu_n|` accepted when building a hyperplane.
pub const DEGENERATE_MEANS_TOL: f64 = 1e-12;

/// Number of packed parameters of a quadric in `dim` dimensions.
pub const fn n_params(dim: usize) -> usize {
    (dim + 1) * (dim + 2) / 2
}

/// Position of entry `(i, j)`, `i <= j`, in the packed upper triangle.
#[inline]
pub fn packed_index(dim: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j <= dim);
    let n = dim + 1;
    i * n - i * (i.saturating_sub(1)) / 2 + (j - i)
}

/// Packed parameters of a symmetric quadric form.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadricParams<T> {
    params: Vec<T>,
    dim: usize,
}

impl<T: Scalar> QuadricParams<T> {
    pub fn new(dim: usize, params: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        check_dim(n_params(dim), params.len())?;
        Ok(QuadricParams { params, dim })
    }

    pub fn zeros(dim: usize) -> Self {
        QuadricParams {
            params: vec![T::zero(); n_params(dim)],
            dim,
        }
    }

    /// Packs the upper triangle of a square `(m+1) x (m+1)` matrix; the lower
    /// triangle is ignored.
    pub fn from_matrix(a: &[Vec<T>]) -> Result<Self> {
        let n = a.len();
        if n < 2 {
            return Err(Error::InvalidArgument("matrix must be at least 2x2".into()));
        }
        for row in a {
            check_dim(n, row.len())?;
        }
        let mut params = Vec::with_capacity(n * (n + 1) / 2);
        for (i, row) in a.iter().enumerate() {
            params.extend_from_slice(&row[i..]);
        }
        Ok(QuadricParams { params, dim: n - 1 })
    }

    /// Expands to the full symmetric matrix.
    pub fn to_matrix(&self) -> Vec<Vec<T>> {
        let n = self.dim + 1;
        let mut a = vec![vec![T::zero(); n]; n];
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                a[i][j] = self.params[k];
                a[j][i] = self.params[k];
                k += 1;
            }
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    pub fn entry(&self, i: usize, j: usize) -> T {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.params[packed_index(self.dim, i, j)]
    }

    pub fn scaled(&self, c: T) -> Self {
        QuadricParams {
            params: self.params.iter().map(|&p| p * c).collect(),
            dim: self.dim,
        }
    }

    /// Frobenius inner product of the expanded matrices.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        let mut acc = T::zero();
        for i in 0..=self.dim {
            for j in i..=self.dim {
                let k = packed_index(self.dim, i, j);
                let w = if i == j { T::one() } else { T::lit(2.0) };
                acc = acc + w * self.params[k] * other.params[k];
            }
        }
        acc
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.frobenius_dot(self)
    }

    /// True when every entry of the `m x m` quadratic block is exactly zero.
    pub fn quadratic_block_is_zero(&self) -> bool {
        (0..self.dim).all(|i| (i..self.dim).all(|j| self.entry(i, j) == T::zero()))
    }

    /// Feature vector `f(r)` with `B(r) = phi . f(r)`; no dimension check.
    pub(crate) fn features_unchecked(dim: usize, r: &[T], out: &mut Vec<T>) {
        out.clear();
        let two = T::lit(2.0);
        let chi = |i: usize| if i < dim { r[i] } else { T::one() };
        for i in 0..=dim {
            let ci = chi(i);
            out.push(ci * ci);
            for j in i + 1..=dim {
                out.push(two * ci * chi(j));
            }
        }
    }

    /// Roots `t` of `B` along the line through `r` parallel to coordinate
    /// `axis`, i.e. the values of `r[axis]` that put `r` on the boundary.
    /// Returned sorted; empty if the restriction has no real root or
    /// vanishes identically.
    pub fn axis_roots(&self, r: &Measurement<T>, axis: usize) -> Result<Vec<T>> {
        check_dim(self.dim, r.dim())?;
        if axis >= self.dim {
            return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
        }
        let chi = |i: usize| if i < self.dim { r[i] } else { T::one() };
        let a = self.entry(axis, axis);
        let mut b = T::zero();
        let mut c = T::zero();
        for i in 0..=self.dim {
            if i == axis {
                continue;
            }
            b = b + T::lit(2.0) * self.entry(axis, i) * chi(i);
            for j in 0..=self.dim {
                if j != axis {
                    c = c + self.entry(i, j) * chi(i) * chi(j);
                }
            }
        }
        Ok(solve_quadratic(a, b, c))
    }
}

/// Real roots of `a t^2 + b t + c = 0`, sorted ascending.
fn solve_quadratic<T: Scalar>(a: T, b: T, c: T) -> Vec<T> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == T::zero() {
        return Vec::new();
    }
    if a.abs() <= T::epsilon() * scale {
        if b == T::zero() {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - T::lit(4.0) * a * c;
    if disc < T::zero() {
        return Vec::new();
    }
    // Numerically stable form avoiding cancellation.
    let s = disc.sqrt();
    let qv = -T::lit(0.5) * (b + if b >= T::zero() { s } else { -s });
    let mut roots = if qv == T::zero() {
        vec![T::zero(), T::zero()]
    } else {
        vec![qv / a, c / qv]
    };
    roots.sort_by(|x, y| x.partial_cmp(y).expect("finite roots"));
    roots
}

/// Evaluates `B(r; phi) = chi^T A chi`.
pub fn quadric_eval<T: Scalar>(phi: &QuadricParams<T>, r: &Measurement<T>) -> Result<T> {
    check_dim(phi.dim, r.dim())?;
    let mut f = Vec::with_capacity(phi.params.len());
    QuadricParams::features_unchecked(phi.dim, r.coords(), &mut f);
    Ok(dot(&phi.params, &f))
}

/// Gradient of `B(r; phi)` with respect to the packed parameters.
pub fn quadric_grad<T: Scalar>(phi: &QuadricParams<T>, r: &Measurement<T>) -> Result<Vec<T>> {
    check_dim(phi.dim, r.dim())?;
    let mut f = Vec::with_capacity(phi.params.len());
    QuadricParams::features_unchecked(phi.dim, r.coords(), &mut f);
    Ok(f)
}

/// Classifier induced by a boundary function: `B >= 0` is class 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryClassifier<T> {
    pub quadric: QuadricParams<T>,
}

impl<T: Scalar> BoundaryClassifier<T> {
    pub fn new(quadric: QuadricParams<T>) -> Self {
        BoundaryClassifier { quadric }
    }

    pub fn evaluate(&self, r: &Measurement<T>) -> Result<T> {
        quadric_eval(&self.quadric, r)
    }

    pub fn classify(&self, r: &Measurement<T>) -> Result<Class> {
        classify(self, r)
    }
}

/// Heaviside rule with `H(0) = 1`: points on the boundary are positive.
#[inline]
pub fn class_of_value<T: Scalar>(b: T) -> Class {
    if b >= T::zero() {
        Class::Positive
    } else {
        Class::Negative
    }
}

pub fn classify<T: Scalar>(clf: &BoundaryClassifier<T>, r: &Measurement<T>) -> Result<Class> {
    Ok(class_of_value(quadric_eval(&clf.quadric, r)?))
}

fn mean<T: Scalar>(points: &[Measurement<T>], dim: usize) -> Vec<T> {
    let n = T::from_usize(points.len()).expect("count fits scalar");
    let mut mu = vec![T::zero(); dim];
    for p in points {
        for (m, &x) in mu.iter_mut().zip(p.coords()) {
            *m = *m + x;
        }
    }
    mu.iter().map(|&s| s / n).collect()
}

/// `nu^T Xi nu` for the unbiased sample covariance `Xi`, computed without
/// forming `Xi`: the mean of squared projections onto `nu`.
fn directional_variance<T: Scalar>(points: &[Measurement<T>], mu: &[T], nu: &[T]) -> T {
    let n1 = T::from_usize(points.len() - 1).expect("count fits scalar");
    points
        .iter()
        .map(|p| {
            let proj = p
                .coords()
                .iter()
                .zip(mu)
                .zip(nu)
                .fold(T::zero(), |acc, ((&x, &m), &v)| acc + (x - m) * v);
            proj * proj
        })
        .sum::<T>()
        / n1
}

/// Weighted-hyperplane initial boundary.
///
/// The hyperplane is normal to `nu = mu_p - mu_n` and passes through
/// `nu_0 = mu_n + w_n / (w_n + w_p) nu`, where `w_k = sqrt(nu^T Xi_k nu)`
/// measures the spread of class `k` along `nu`. The returned quadric has a
/// zero quadratic block and is oriented so `B(mu_p) > 0`.
pub fn hyperplane_init<T: Scalar>(pop: &TrainingPopulation<T>) -> Result<QuadricParams<T>> {
    for n in [pop.n_neg(), pop.n_pos()] {
        if n < 2 {
            return Err(Error::InsufficientSamples {
                required: 2,
                found: n,
            });
        }
    }
    let dim = pop.dim();
    let mu_n = mean(pop.negatives(), dim);
    let mu_p = mean(pop.positives(), dim);
    let nu: Vec<T> = mu_p.iter().zip(&mu_n).map(|(&p, &n)| p - n).collect();
    let nu_len = norm(&nu);
    if !(nu_len.as_f64() >= DEGENERATE_MEANS_TOL) {
        return Err(Error::DegenerateMeans(nu_len.as_f64()));
    }
    let w_n = directional_variance(pop.negatives(), &mu_n, &nu).sqrt();
    let w_p = directional_variance(pop.positives(), &mu_p, &nu).sqrt();
    let frac = if w_n + w_p > T::zero() {
        w_n / (w_n + w_p)
    } else {
        T::lit(0.5)
    };
    let origin: Vec<T> = mu_n.iter().zip(&nu).map(|(&m, &v)| m + frac * v).collect();

    let mut q = QuadricParams::zeros(dim);
    let half = T::lit(0.5);
    for (i, &v) in nu.iter().enumerate() {
        q.params[packed_index(dim, i, dim)] = v * half;
    }
    q.params[packed_index(dim, dim, dim)] = -dot(&nu, &origin);

    let at_mu_p = quadric_eval(&q, &Measurement::new(mu_p)?)?;
    if at_mu_p < T::zero() {
        q = q.scaled(-T::one());
    }
    Ok(q)
}

/// Length of `mu_p - mu_n`, the characteristic length scale of the data.
pub fn mean_separation<T: Scalar>(pop: &TrainingPopulation<T>) -> Result<T> {
    let dim = pop.dim();
    let mu_n = mean(pop.negatives(), dim);
    let mu_p = mean(pop.positives(), dim);
    let nu: Vec<T> = mu_p.iter().zip(&mu_n).map(|(&p, &n)| p - n).collect();
    let len = norm(&nu);
    if !(len.as_f64() >= DEGENERATE_MEANS_TOL) {
        return Err(Error::DegenerateMeans(len.as_f64()));
    }
    Ok(len)
}
