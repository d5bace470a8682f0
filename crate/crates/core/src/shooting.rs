//! Initial value problems on each rod at a fixed spectral parameter.
//!
//! Both rods are integrated in the first-order form `y' = p / sigma`,
//! `p' = (q - lambda rho) y` with `p = sigma y'`, together with the
//! variational system for the derivative in `lambda`. The right rod is
//! integrated in `s = 1 - x`, so that every integration runs forward; traces
//! are reported in the original `x` orientation.

use std::io::Write;

use thiserror::Error;

use crate::coeffs::{partial_travel_time, BcVariant, CoefficientSet, Rod};
use crate::ode::{dopri5, OdeError, OdeOptions};
use crate::quad::QuadError;

pub use crate::coeffs::Side;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootError {
    #[error("{side:?} rod integration at lambda = {lambda}: {source}")]
    Integrator {
        side: Side,
        lambda: f64,
        #[source]
        source: OdeError,
    },
    #[error("non-finite spectral parameter {0}")]
    BadLambda(f64),
}

/// Accuracy and sampling settings for shooting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootOptions {
    pub rtol: f64,
    pub atol: f64,
    pub grid_points: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            rtol: 1e-11,
            atol: 1e-11,
            grid_points: 2049,
        }
    }
}

impl From<&crate::coeffs::Tolerances> for ShootOptions {
    fn from(t: &crate::coeffs::Tolerances) -> Self {
        ShootOptions {
            rtol: t.ode_rtol,
            atol: t.ode_atol,
            grid_points: t.grid_points,
        }
    }
}

/// Values at the interface `x = 0` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub y: f64,
    /// `sigma y'` at `x = 0` in the `x` orientation.
    pub flux: f64,
    pub dy_dlambda: f64,
    pub dflux_dlambda: f64,
    /// Unwrapped Prüfer angle at `x = 0`, measured from the starting end.
    /// Its integer part over `pi` counts the zeros of `y` on the rod.
    pub prufer: f64,
}

/// A solution sampled on the uniform rod grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingTrace {
    pub lambda: f64,
    pub side: Side,
    pub variant: BcVariant,
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    pub flux: Vec<f64>,
    pub y_at_zero: f64,
    pub flux_at_zero: f64,
    pub dy_dlambda_at_zero: f64,
    pub dflux_dlambda_at_zero: f64,
    pub prufer_at_zero: f64,
}

impl ShootingTrace {
    /// Writes `x,y,flux` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,flux")?;
        for ((x, y), f) in self.grid.iter().zip(&self.y).zip(&self.flux) {
            writeln!(w, "{x:.17e},{y:.17e},{f:.17e}")?;
        }
        Ok(())
    }
}

/// Uniform grid with `n` points on the rod interval, ends included exactly.
pub fn rod_grid(side: Side, n: usize) -> Vec<f64> {
    let (a, b) = side.interval();
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn initial_state(c: &CoefficientSet, side: Side, variant: BcVariant) -> [f64; 4] {
    match (side, variant) {
        // u(-1) = 0, u'(-1) = 1
        (Side::Left, _) => [0.0, c.left.sigma.eval(-1.0), 0.0, 0.0],
        // v(1) = 0, v'(1) = -1, so P = -sigma v' = sigma(1)
        (Side::Right, BcVariant::Dirichlet) => [0.0, c.right.sigma.eval(1.0), 0.0, 0.0],
        // v(1) = 1, v'(1) = 0
        (Side::Right, BcVariant::Neumann) => [1.0, 0.0, 0.0, 0.0],
    }
}

fn max_slowness(rod: &Rod, side: Side) -> f64 {
    let (a, b) = side.interval();
    (0..=64)
        .map(|i| {
            let x = a + (b - a) * i as f64 / 64.0;
            rod.rho.eval(x) / rod.sigma.eval(x)
        })
        .fold(0.0, f64::max)
}

fn unwrap_angle(prev: f64, raw: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let k = ((prev - raw) / two_pi).round();
    raw + k * two_pi
}

struct Run {
    end: [f64; 4],
    prufer: f64,
    samples: Option<(Vec<f64>, Vec<f64>)>,
}

fn run(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    lambda: f64,
    opts: &ShootOptions,
    with_grid: bool,
) -> Result<Run, ShootError> {
    if !lambda.is_finite() {
        return Err(ShootError::BadLambda(lambda));
    }
    let rod = c.rod(side);
    let to_x = |t: f64| match side {
        Side::Left => t - 1.0,
        Side::Right => 1.0 - t,
    };
    let rhs = |t: f64, s: &[f64; 4]| {
        let x = to_x(t);
        let (rho, sigma, q) = rod.eval(x);
        let k = q - lambda * rho;
        [s[1] / sigma, k * s[0], s[3] / sigma, k * s[2] - rho * s[0]]
    };
    let y0 = initial_state(c, side, variant);
    let omega = (lambda.abs() * max_slowness(rod, side)).sqrt();
    let ode_opts = OdeOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        max_step: if omega > 0.0 { (0.25 * std::f64::consts::PI / omega).min(1.0) } else { 1.0 },
        ..OdeOptions::default()
    };

    // integration variable t runs over [0, 1] from the starting end
    let n = opts.grid_points;
    let xs = rod_grid(side, n);
    let stops: Vec<f64> = if with_grid {
        match side {
            Side::Left => xs.iter().map(|x| x + 1.0).collect(),
            Side::Right => xs.iter().rev().map(|x| 1.0 - x).collect(),
        }
    } else {
        Vec::new()
    };
    let mut ys = vec![0.0; if with_grid { n } else { 0 }];
    let mut ps = vec![0.0; ys.len()];
    if with_grid {
        ys[0] = y0[0];
        ps[0] = y0[1];
    }
    let mut theta = y0[0].atan2(y0[1]);
    let (end, _) = dopri5(
        rhs,
        0.0,
        1.0,
        y0,
        if with_grid { &stops[1..] } else { &stops[..] },
        &ode_opts,
        |_, s, idx| {
            theta = unwrap_angle(theta, s[0].atan2(s[1]));
            if let Some(i) = idx {
                ys[i + 1] = s[0];
                ps[i + 1] = s[1];
            }
        },
    )
    .map_err(|source| ShootError::Integrator { side, lambda, source })?;

    let samples = with_grid.then(|| match side {
        Side::Left => (ys, ps),
        Side::Right => {
            let y: Vec<f64> = ys.into_iter().rev().collect();
            let f: Vec<f64> = ps.into_iter().rev().map(|p| -p).collect();
            (y, f)
        }
    });
    Ok(Run {
        end,
        prufer: theta,
        samples,
    })
}

fn endpoint_from(side: Side, s: &[f64; 4], prufer: f64) -> Endpoint {
    let sign = match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    Endpoint {
        y: s[0],
        flux: sign * s[1],
        dy_dlambda: s[2],
        dflux_dlambda: sign * s[3],
        prufer,
    }
}

/// Interface values of the rod IVP, without grid output.
pub fn endpoint(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    lambda: f64,
    opts: &ShootOptions,
) -> Result<Endpoint, ShootError> {
    let r = run(c, side, variant, lambda, opts, false)?;
    Ok(endpoint_from(side, &r.end, r.prufer))
}

/// Full trace of the rod IVP on the uniform grid.
pub fn shoot(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    lambda: f64,
    opts: &ShootOptions,
) -> Result<ShootingTrace, ShootError> {
    let r = run(c, side, variant, lambda, opts, true)?;
    let e = endpoint_from(side, &r.end, r.prufer);
    let (y, flux) = r.samples.expect("grid requested");
    Ok(ShootingTrace {
        lambda,
        side,
        variant,
        grid: rod_grid(side, opts.grid_points),
        y,
        flux,
        y_at_zero: e.y,
        flux_at_zero: e.flux,
        dy_dlambda_at_zero: e.dy_dlambda,
        dflux_dlambda_at_zero: e.dflux_dlambda,
        prufer_at_zero: e.prufer,
    })
}

/// Left rod with `u(-1) = 0`, `u'(-1) = 1`, default settings.
pub fn shoot_left(c: &CoefficientSet, lambda: f64) -> Result<ShootingTrace, ShootError> {
    shoot(c, Side::Left, BcVariant::Dirichlet, lambda, &ShootOptions::default())
}

/// Right rod integrated from `x = 1` with the variant's initial data.
pub fn shoot_right(c: &CoefficientSet, lambda: f64, variant: BcVariant) -> Result<ShootingTrace, ShootError> {
    shoot(c, Side::Right, variant, lambda, &ShootOptions::default())
}

/// Leading-order oscillatory prediction of the interface values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WkbPrediction {
    pub y: f64,
    pub flux: f64,
    /// Amplitude of the `y` prediction, used to normalise deviations.
    pub y_scale: f64,
    pub flux_scale: f64,
}

/// Liouville–Green approximation of the interface values for large `lambda`.
pub fn wkb_reference(
    c: &CoefficientSet,
    lambda: f64,
    side: Side,
    variant: BcVariant,
) -> Result<WkbPrediction, QuadError> {
    let rod = c.rod(side);
    let sl = lambda.sqrt();
    let (a, b) = side.interval();
    let phase = sl * partial_travel_time(rod, a, b)?;
    let rs0 = rod.rho.eval(0.0) * rod.sigma.eval(0.0);
    let start = match side {
        Side::Left => -1.0,
        Side::Right => 1.0,
    };
    let (rho_s, sigma_s) = (rod.rho.eval(start), rod.sigma.eval(start));
    let slope_amp = sigma_s.powf(0.75) * rho_s.powf(-0.25) / sl;
    let p = match (side, variant) {
        (Side::Left, _) => {
            let ys = slope_amp * rs0.powf(-0.25);
            let fs = slope_amp * sl * rs0.powf(0.25);
            WkbPrediction {
                y: ys * phase.sin(),
                flux: fs * phase.cos(),
                y_scale: ys,
                flux_scale: fs,
            }
        }
        (Side::Right, BcVariant::Dirichlet) => {
            let ys = slope_amp * rs0.powf(-0.25);
            let fs = slope_amp * sl * rs0.powf(0.25);
            WkbPrediction {
                y: ys * phase.sin(),
                flux: -fs * phase.cos(),
                y_scale: ys,
                flux_scale: fs,
            }
        }
        (Side::Right, BcVariant::Neumann) => {
            let amp = (rho_s * sigma_s).powf(0.25);
            let ys = amp * rs0.powf(-0.25);
            let fs = amp * sl * rs0.powf(0.25);
            WkbPrediction {
                y: ys * phase.cos(),
                flux: fs * phase.sin(),
                y_scale: ys,
                flux_scale: fs,
            }
        }
    };
    Ok(p)
}

/// Relative, phase-insensitive distance between shooting and the WKB
/// prediction: the Euclidean norm of the two interface errors, each scaled
/// by its predicted amplitude.
pub fn wkb_deviation(e: &Endpoint, w: &WkbPrediction) -> f64 {
    ((e.y - w.y) / w.y_scale).hypot((e.flux - w.flux) / w.flux_scale)
}

/// Result of fitting `deviation ~ C lambda^slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct WkbFit {
    pub lambdas: Vec<f64>,
    pub deviations: Vec<f64>,
    pub slope: f64,
    pub constant: f64,
}

#[derive(Debug, Error)]
pub enum WkbError {
    #[error(transparent)]
    Shoot(#[from] ShootError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("need at least two spectral parameters >= 100 for a fit")]
    TooFewPoints,
}

/// Measures the WKB deviation at each `lambda` and fits a power law by
/// least squares in log-log coordinates.
pub fn wkb_fit(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    lambdas: &[f64],
    opts: &ShootOptions,
) -> Result<WkbFit, WkbError> {
    if lambdas.len() < 2 || lambdas.iter().any(|&l| l < 100.0) {
        return Err(WkbError::TooFewPoints);
    }
    let mut deviations = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let e = endpoint(c, side, variant, l, opts)?;
        let w = wkb_reference(c, l, side, variant)?;
        deviations.push(wkb_deviation(&e, &w));
    }
    let lx: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ly: Vec<f64> = deviations.iter().map(|d| d.ln()).collect();
    let (slope, icept) = least_squares_line(&lx, &ly);
    Ok(WkbFit {
        lambdas: lambdas.to_vec(),
        deviations,
        slope,
        constant: icept.exp(),
    })
}

/// Power-law fit to the envelope of the WKB deviation on `[lo, hi]`.
///
/// The first-order correction to the endpoint values oscillates with the
/// phase `sqrt(lambda) * gamma`, so single samples can land near a zero of
/// the deviation. The range is split into `windows` geometric windows, each
/// sampled at `per_window` points, and the fit uses the largest deviation of
/// every window.
pub fn wkb_envelope_fit(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    (lo, hi): (f64, f64),
    windows: usize,
    per_window: usize,
    opts: &ShootOptions,
) -> Result<WkbFit, WkbError> {
    if windows < 2 || per_window == 0 || lo < 100.0 || hi <= lo {
        return Err(WkbError::TooFewPoints);
    }
    let samples = windows * per_window;
    let ratio = hi / lo;
    let mut lambdas = Vec::with_capacity(windows);
    let mut deviations = Vec::with_capacity(windows);
    for w in 0..windows {
        let mut best = (0.0, f64::NEG_INFINITY);
        for i in 0..per_window {
            let l = lo * ratio.powf((w * per_window + i) as f64 / samples as f64);
            let e = endpoint(c, side, variant, l, opts)?;
            let p = wkb_reference(c, l, side, variant)?;
            let d = wkb_deviation(&e, &p);
            if d > best.1 {
                best = (l, d);
            }
        }
        lambdas.push(best.0);
        deviations.push(best.1);
    }
    let lx: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ly: Vec<f64> = deviations.iter().map(|d| d.ln()).collect();
    let (slope, icept) = least_squares_line(&lx, &ly);
    Ok(WkbFit {
        lambdas,
        deviations,
        slope,
        constant: icept.exp(),
    })
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
