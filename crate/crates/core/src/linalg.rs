//! Dense symmetric positive definite solves by `LDL^T` with symmetric
//! (largest remaining diagonal) pivoting, generic over the working type.

use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::dd::Dd;

pub trait Scalar:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
    fn zero() -> Self {
        Self::of(0.0)
    }
    fn one() -> Self {
        Self::of(1.0)
    }
    fn magnitude(self) -> f64 {
        self.f64().abs()
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

impl Scalar for Dd {
    fn of(x: f64) -> Self {
        Dd::from_f64(x)
    }
    fn f64(self) -> f64 {
        self.to_f64()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not numerically positive definite (pivot {pivot:e} at step {step})")]
    NotPositiveDefinite { step: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matmul(&self, b: &Matrix<T>) -> Matrix<T> {
        let n = self.n;
        Matrix::from_fn(n, |i, j| {
            let mut s = T::zero();
            for k in 0..n {
                s = s + self[(i, k)] * b[(k, j)];
            }
            s
        })
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let mut s = T::zero();
                for (j, xj) in x.iter().enumerate() {
                    s = s + self[(i, j)] * *xj;
                }
                s
            })
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].magnitude()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// `P A P^T = L D L^T`, with `L` unit lower triangular.
#[derive(Debug, Clone)]
pub struct Ldlt<T> {
    pub n: usize,
    /// `perm[k]` is the original index placed at position `k`.
    pub perm: Vec<usize>,
    l: Matrix<T>,
    pub d: Vec<T>,
}

impl<T: Scalar> Ldlt<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self, LinalgError> {
        let n = a.n;
        let mut w = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut d = vec![T::zero(); n];
        for k in 0..n {
            // pick the largest remaining diagonal entry
            let p = (k..n)
                .max_by(|&i, &j| w[(i, i)].partial_cmp(&w[(j, j)]).unwrap_or(std::cmp::Ordering::Equal))
                .expect("non-empty range");
            if p != k {
                perm.swap(k, p);
                for c in 0..n {
                    w.data.swap(k * n + c, p * n + c);
                }
                for r in 0..n {
                    w.data.swap(r * n + k, r * n + p);
                }
            }
            let dk = w[(k, k)];
            if !(dk > T::zero()) || !dk.f64().is_finite() {
                return Err(LinalgError::NotPositiveDefinite { step: k, pivot: dk.f64() });
            }
            d[k] = dk;
            for i in k + 1..n {
                w[(i, k)] = w[(i, k)] / dk;
            }
            for j in k + 1..n {
                let ljk = w[(j, k)];
                for i in j..n {
                    let v = w[(i, j)] - w[(i, k)] * ljk * dk;
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                }
            }
        }
        let mut l = Matrix::identity(n);
        for i in 0..n {
            for j in 0..i {
                l[(i, j)] = w[(i, j)];
            }
        }
        Ok(Ldlt { n, perm, l, d })
    }

    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s = s - self.l[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s = s - self.l[(j, i)] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        x
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Solves `A X = I` with a double-precision factorization and iterative
/// refinement whose residuals are accumulated in double-double.
pub fn refined_inverse(a: &Matrix<Dd>, sweeps: usize) -> Result<(Matrix<Dd>, Matrix<f64>), LinalgError> {
    let n = a.n;
    let af = a.map(|x| x.to_f64());
    let f = Ldlt::factor(&af)?;
    let inv_f = f.inverse();
    let mut x: Matrix<Dd> = inv_f.map(Dd::from_f64);
    for _ in 0..sweeps {
        // R = I - A X in double-double, then X += A^{-1} R
        let ax = a.matmul(&x);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let r: Vec<f64> = (0..n)
                .map(|i| {
                    let target = if i == j { Dd::ONE } else { Dd::ZERO };
                    (target - ax[(i, j)]).to_f64()
                })
                .collect();
            worst = r.iter().fold(worst, |m, v| m.max(v.abs()));
            let dx = f.solve(&r);
            for i in 0..n {
                x[(i, j)] += Dd::from_f64(dx[i]);
            }
        }
        if worst < 1e-30 {
            break;
        }
    }
    Ok((x, inv_f))
}
