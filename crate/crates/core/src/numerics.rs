//! Small dense numerics used by the designs and estimators.
//!
//! Everything here is sized for balancing dimensions of a handful of
//! variables: dense storage, O(d^3) eigen work, no external linear algebra.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major dense matrix. Rows are units, columns are balancing variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Dense symmetric matrix; only constructed through paths that mirror the
/// upper triangle, so `get(i, j) == get(j, i)` bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    /// Builds from the upper triangle produced by `f(i, j)` for `i <= j`.
    pub fn from_upper(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if dim == 0 {
            return Err(NumericsError::Domain("matrix dimension must be >= 1".into()));
        }
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        Ok(Self { dim, data })
    }

    /// Accepts a full square matrix; the lower triangle is overwritten by the upper.
    pub fn from_square(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(NumericsError::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::from_upper(dim, |i, j| entries[i * dim + j])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper tail Q(a, x) by modified Lentz.
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

fn check_df(d: usize) -> Result<()> {
    if d < 1 {
        return Err(NumericsError::Domain(
            "degrees of freedom must be >= 1".into(),
        ));
    }
    Ok(())
}

/// P(chi2_d <= x).
pub fn chi2_cdf(x: f64, d: usize) -> Result<f64> {
    check_df(d)?;
    if x.is_nan() || x < 0.0 {
        return Err(NumericsError::Domain(format!(
            "chi-square argument must be >= 0, got {x}"
        )));
    }
    Ok(regularized_gamma_p(d as f64 / 2.0, x / 2.0))
}

fn chi2_pdf(x: f64, d: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = d as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Inverse of [`chi2_cdf`] for `p` in (0, 1).
pub fn chi2_quantile(p: f64, d: usize) -> Result<f64> {
    check_df(d)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    let cdf = |x: f64| regularized_gamma_p(d as f64 / 2.0, x / 2.0);

    let mut lo = 0.0_f64;
    let mut hi = (d as f64).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..300 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        // Newton inside the bracket, bisection otherwise.
        let slope = chi2_pdf(x, d);
        let newton = x - f / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Standard normal quantile, computed from the chi-square(1) quantile:
/// for p > 1/2, z_p = sqrt(chi2_1^{-1}(2p - 1)).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let q = (2.0 * p - 1.0).abs();
    let z = chi2_quantile(q, 1)?.sqrt();
    Ok(if p > 0.5 { z } else { -z })
}

// ---------------------------------------------------------------------------
// Covariance and imbalance distances
// ---------------------------------------------------------------------------

/// `(4 / n^2) * sum_i (h_i - hbar)(h_i - hbar)^T` over the `n` rows of `h`,
/// i.e. the covariance of a treated-minus-control mean difference when half
/// of the group is treated.
pub fn scaled_covariance(h: &Matrix) -> Result<SymmetricMatrix> {
    let n = h.rows();
    if n < 2 {
        return Err(NumericsError::Domain(format!(
            "group size must be >= 2, got {n}"
        )));
    }
    let d = h.cols();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(h.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut acc = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (v, m)) in centered.iter_mut().zip(h.row(i).iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            for b in a..d {
                acc[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    let scale = 4.0 / (n as f64 * n as f64);
    SymmetricMatrix::from_upper(d, |a, b| scale * acc[a * d + b])
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the row-major matrix whose *columns* are the
/// corresponding unit eigenvectors.
pub fn symmetric_eigen(m: &SymmetricMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.dim();
    let mut a = m.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i * n + i]).collect();
    (eigenvalues, v)
}

/// Relative eigenvalue cutoff below which a direction counts as outside the span.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-10;
/// Relative off-span imbalance that turns the distance into `+inf`.
pub const OFF_SPAN_TOLERANCE: f64 = 1e-8;

/// Precomputed quadratic form `theta^T Sigma^+ theta` with the off-span rule:
/// an imbalance with a component outside the span of `Sigma` is infinitely far.
#[derive(Debug, Clone)]
pub struct MahalanobisMetric {
    dim: usize,
    /// rows: in-span eigenvectors scaled by 1/sqrt(lambda)
    whitening: Vec<f64>,
    rank: usize,
    /// rows: null-space eigenvectors
    null_basis: Vec<f64>,
}

impl MahalanobisMetric {
    pub fn new(sigma: &SymmetricMatrix) -> Self {
        let d = sigma.dim();
        let (values, vectors) = symmetric_eigen(sigma);
        let max = values.iter().cloned().fold(0.0_f64, f64::max);
        let cutoff = PSEUDO_INVERSE_CUTOFF * max;
        let mut whitening = Vec::new();
        let mut null_basis = Vec::new();
        let mut rank = 0;
        for (k, &lambda) in values.iter().enumerate() {
            let column = (0..d).map(|r| vectors[r * d + k]);
            if max > 0.0 && lambda > cutoff {
                let s = 1.0 / lambda.sqrt();
                whitening.extend(column.map(|x| x * s));
                rank += 1;
            } else {
                null_basis.extend(column);
            }
        }
        Self {
            dim: d,
            whitening,
            rank,
            null_basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Coordinates of `v` in the whitened span; inner products of these give
    /// the pseudo-inverse bilinear form `a^T Sigma^+ b`.
    pub fn whiten(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        self.whitening
            .chunks_exact(self.dim.max(1))
            .map(|w| w.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Distance for an imbalance vector of the matching dimension.
    #[inline]
    pub fn distance(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.dim);
        let d = self.dim;
        if !self.null_basis.is_empty() {
            let norm_sq: f64 = theta.iter().map(|x| x * x).sum();
            if norm_sq > 0.0 {
                let off_sq: f64 = self
                    .null_basis
                    .chunks_exact(d)
                    .map(|e| {
                        let p: f64 = e.iter().zip(theta).map(|(a, b)| a * b).sum();
                        p * p
                    })
                    .sum();
                if off_sq > OFF_SPAN_TOLERANCE * OFF_SPAN_TOLERANCE * norm_sq {
                    return f64::INFINITY;
                }
            }
        }
        self.whitening
            .chunks_exact(d)
            .map(|w| {
                let p: f64 = w.iter().zip(theta).map(|(a, b)| a * b).sum();
                p * p
            })
            .sum()
    }
}

/// `theta^T Sigma^{-1} theta`, pseudo-inverse with the off-span rule when
/// `Sigma` is singular.
pub fn mahalanobis(theta: &[f64], sigma: &SymmetricMatrix) -> Result<f64> {
    if theta.len() != sigma.dim() {
        return Err(NumericsError::DimensionMismatch {
            expected: sigma.dim(),
            found: theta.len(),
        });
    }
    Ok(MahalanobisMetric::new(sigma).distance(theta))
}
