//! Quadrature: adaptive Simpson for smooth integrands and composite Simpson
//! for uniformly sampled data.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("adaptive quadrature did not converge on [{a}, {b}] (error estimate {estimate:e})")]
    NotConverged { a: f64, b: f64, estimate: f64 },
    #[error("integrand is not finite at x = {x}")]
    NonFinite { x: f64 },
}

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature with a combined absolute/relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    let eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(QuadError::NonFinite { x })
        }
    };
    // Seed with a few panels so that oscillatory integrands are not accepted
    // on a lucky first estimate.
    let panels = 8;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        let mid = 0.5 * (lo + hi);
        let (fa, fm, fb) = (eval(lo)?, eval(mid)?, eval(hi)?);
        let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
        total += refine(&eval, lo, hi, fa, fm, fb, whole, tol, 0)?;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> Result<f64, QuadError>>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let both = left + right;
    let delta = both - whole;
    let scale = tol.max(tol * both.abs());
    if delta.abs() <= 15.0 * scale || delta.abs() <= 64.0 * f64::EPSILON * both.abs() {
        return Ok(both + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(QuadError::NotConverged {
            a,
            b,
            estimate: delta.abs() / 15.0,
        });
    }
    let l = refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
    let r = refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
    Ok(l + r)
}

/// Composite Simpson rule weights for an odd number of uniformly spaced
/// samples with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd sample count >= 3");
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n - 1 {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
    }
    w
}

/// Composite Simpson integral of uniformly spaced samples.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    simpson_weights(samples.len(), h)
        .iter()
        .zip(samples)
        .map(|(w, v)| w * v)
        .sum()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
