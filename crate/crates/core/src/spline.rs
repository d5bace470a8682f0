//! Natural cubic spline through tabulated samples.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("abscissae and ordinates differ in length ({xs} vs {ys})")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("abscissae must be strictly increasing (violated at index {index})")]
    NotIncreasing { index: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self, SplineError> {
        if xs.len() != ys.len() {
            return Err(SplineError::LengthMismatch {
                xs: xs.len(),
                ys: ys.len(),
            });
        }
        let n = xs.len();
        if n < 3 {
            return Err(SplineError::TooFewPoints { min: 3, got: n });
        }
        for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(SplineError::NonFinite { index: i });
            }
        }
        if let Some(i) = (1..n).find(|&i| xs[i] <= xs[i - 1]) {
            return Err(SplineError::NotIncreasing { index: i });
        }

        // Tridiagonal system for interior second derivatives, m_0 = m_{n-1} = 0.
        let mut m = vec![0.0; n];
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for j in 0..k {
            let i = j + 1;
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            diag[j] = 2.0 * (h0 + h1);
            upper[j] = h1;
            rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
        }
        // Thomas algorithm; sub-diagonal entry j equals h_{j} = upper[j-1].
        for j in 1..k {
            let w = upper[j - 1] / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        for j in (0..k).rev() {
            let next = if j + 1 < k { m[j + 2] } else { 0.0 };
            m[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
        }
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    /// Value, first and second derivative at `x` (linear extrapolation of
    /// the end cubic outside the knot range).
    pub fn eval3(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d, d2)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval3(x).0
    }
}
