//! Dormand–Prince 5(4) integrator for small fixed-size systems.
//!
//! Steps are clipped so that every requested stop point is hit exactly,
//! which gives grid output without an interpolant.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at x = {x} (h = {h:e}, local error estimate {err:e})")]
    StepUnderflow { x: f64, h: f64, err: f64 },
    #[error("step budget of {steps} exhausted at x = {x}")]
    TooManySteps { x: f64, steps: usize },
    #[error("non-finite state at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-11,
            atol: 1e-11,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[inline]
fn combo<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, k) in terms {
            acc += a * k[i];
        }
        *o += h * acc;
    }
    out
}

/// Integrates `y' = f(x, y)` forward from `x0` to `x1`.
///
/// `stops` must be increasing and lie in `(x0, x1]`; the observer is called
/// after every accepted step with the new state and, when the step ended on
/// a stop point, that stop's index.
pub fn dopri5<const N: usize, F, O>(
    mut f: F,
    x0: f64,
    x1: f64,
    y0: [f64; N],
    stops: &[f64],
    opts: &OdeOptions,
    mut observer: O,
) -> Result<([f64; N], OdeStats), OdeError>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(f64, &[f64; N], Option<usize>),
{
    debug_assert!(x1 >= x0);
    debug_assert!(stops.windows(2).all(|w| w[0] < w[1]));
    let mut stats = OdeStats::default();
    let mut x = x0;
    let mut y = y0;
    if x1 == x0 {
        return Ok((y, stats));
    }
    let mut k1 = f(x, &y);
    stats.evaluations += 1;

    let span = x1 - x0;
    let mut h = initial_step(&mut f, x, &y, &k1, span, opts, &mut stats).min(opts.max_step);
    let mut next_stop = stops.iter().position(|&s| s > x0).unwrap_or(stops.len());
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::TooManySteps {
                x,
                steps: opts.max_steps,
            });
        }
        let target = if next_stop < stops.len() { stops[next_stop].min(x1) } else { x1 };
        let mut hit = false;
        let mut step = h.min(opts.max_step);
        if x + step >= target || x + 1.01 * step >= target {
            step = target - x;
            hit = true;
        }

        let k2 = f(x + C2 * step, &combo(&y, step, &[(A21, &k1)]));
        let k3 = f(x + C3 * step, &combo(&y, step, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(x + C4 * step, &combo(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            x + C5 * step,
            &combo(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            x + step,
            &combo(&y, step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = combo(&y, step, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let x_new = if hit { target } else { x + step };
        let k7 = f(x_new, &y_new);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..N {
            let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            if y_new.iter().all(|v| v.is_finite()) {
                // error estimate overflowed; shrink hard and retry
                h = step * 0.2;
                stats.rejected += 1;
                continue;
            }
            return Err(OdeError::NonFinite { x });
        }

        if err <= 1.0 {
            stats.accepted += 1;
            x = x_new;
            y = y_new;
            k1 = k7;
            let stop_idx = if hit && next_stop < stops.len() && target == stops[next_stop] {
                next_stop += 1;
                Some(next_stop - 1)
            } else {
                None
            };
            observer(x, &y, stop_idx);
            if x >= x1 {
                return Ok((y, stats));
            }
            let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            // never let a clipped step shrink the natural step size
            h = if hit { h.max(step * fac) } else { step * fac };
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h = step * fac;
            last_rejected = true;
            if h < 1e-14 * (1.0 + x.abs()) {
                return Err(OdeError::StepUnderflow { x, h, err });
            }
        }
    }
}

/// Starting step heuristic (Hairer, Nørsett and Wanner, section II.4).
fn initial_step<const N: usize, F>(
    f: &mut F,
    x: f64,
    y: &[f64; N],
    f0: &[f64; N],
    span: f64,
    opts: &OdeOptions,
    stats: &mut OdeStats,
) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let norm = |v: &[f64; N]| (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / N as f64).sqrt();
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = combo(y, h0, &[(1.0, f0)]);
    let f1 = f(x + h0, &y1);
    stats.evaluations += 1;
    let mut diff = [0.0; N];
    for i in 0..N {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
