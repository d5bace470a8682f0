//! Bracketed scalar root finding (Brent's method: bisection safeguarding
//! secant and inverse quadratic steps).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError<E> {
    #[error("no sign change on [{a}, {b}] (f(a) = {fa:e}, f(b) = {fb:e})")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("root refinement did not converge on [{a}, {b}] after {iterations} iterations")]
    NotConverged { a: f64, b: f64, iterations: usize },
    #[error("function evaluation failed: {0}")]
    Eval(E),
}

const MAX_ITER: usize = 200;

/// Finds a root of `f` in `[a, b]` given `f(a)` and `f(b)` of opposite sign
/// (or one of them zero). Terminates when the bracket is narrower than
/// `rtol * |x| + atol`.
pub fn brent<F, E>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, rtol: f64, atol: f64) -> Result<f64, RootError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoSignChange { a, b, fa, fb });
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (rtol * b.abs() + atol);
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b).map_err(RootError::Eval)?;
    }
    Err(RootError::NotConverged {
        a: b.min(c),
        b: b.max(c),
        iterations: MAX_ITER,
    })
}

/// Plain bisection, used by test oracles and as a fallback.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut fa = f(a);
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}
