//! Spectrum of the coupled operator.
//!
//! With `u` the left IVP solution and `v` the right one, the eigenvalue
//! condition is `F(lambda) = M lambda` where
//! `F = (sigma1 u'(0) v(0) - sigma2 v'(0) u(0)) / (u(0) v(0))`.
//! The poles of `F` are the Dirichlet eigenvalues of the decoupled rods
//! (the auxiliary spectra). Between two consecutive distinct poles `F`
//! decreases from `+inf` to `-inf`, so every such interval holds exactly one
//! eigenvalue. Roots are refined on the pole-free product
//! `D = u(0) v(0) (F - M lambda)`.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeffs::{travel_times, BcVariant, CoefficientSet, Side, Tolerances, TravelTimes};
use crate::quad::{simpson, QuadError};
use crate::roots::{brent, RootError};
use crate::shooting::{endpoint, shoot, Endpoint, ShootError, ShootOptions};
use crate::state::HWeights;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error(transparent)]
    Shoot(#[from] ShootError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("lambda = {lambda} is within pole tolerance of the auxiliary spectrum ({side:?} interface value {value:e})")]
    Pole { lambda: f64, side: Side, value: f64 },
    #[error("bracket exhaustion: found {found} of {needed} {side:?} auxiliary eigenvalues below {ceiling:e}")]
    BracketExhausted {
        side: Side,
        found: usize,
        needed: usize,
        ceiling: f64,
    },
    #[error("root refinement failed: {0}")]
    Root(#[from] RootError<ShootError>),
    #[error("monotonicity violation on bracket {index} [{a}, {b}]: D(a) = {da:e}, D(b) = {db:e}")]
    Monotonicity { index: usize, a: f64, b: f64, da: f64, db: f64 },
    #[error("eigenfunction at lambda = {lambda} vanishes identically")]
    ZeroFunction { lambda: f64 },
    #[error("boundary observation of eigenfunction {index} (lambda = {lambda}) vanishes: {trace:e}")]
    ZeroTrace { index: usize, lambda: f64, trace: f64 },
    #[error("n_max must be at least {min}, got {got}")]
    TooFew { min: usize, got: usize },
}

fn shoot_opts(tol: &Tolerances) -> ShootOptions {
    ShootOptions::from(tol)
}

fn both_ends(
    c: &CoefficientSet,
    lambda: f64,
    variant: BcVariant,
    opts: &ShootOptions,
) -> Result<(Endpoint, Endpoint), ShootError> {
    let (l, r) = rayon::join(
        || endpoint(c, Side::Left, variant, lambda, opts),
        || endpoint(c, Side::Right, variant, lambda, opts),
    );
    Ok((l?, r?))
}

/// Size of `(y, flux)` with the flux rescaled to the local wavelength, so
/// that `|y| / pole_scale` is the sine of the scaled Prüfer angle.
fn pole_scale(e: &Endpoint, lambda: f64) -> f64 {
    e.y.hypot(e.flux / (1.0 + lambda.abs()).sqrt())
}

/// The characteristic function `F(lambda)`.
pub fn characteristic_f(
    c: &CoefficientSet,
    lambda: f64,
    variant: BcVariant,
    tol: &Tolerances,
) -> Result<f64, SpectrumError> {
    let (u, v) = both_ends(c, lambda, variant, &shoot_opts(tol))?;
    // interface values are only known to integration accuracy
    let pole_tol = 1e-13f64.max(10.0 * tol.ode_rtol.max(tol.ode_atol));
    for (side, e) in [(Side::Left, &u), (Side::Right, &v)] {
        if e.y.abs() < pole_tol * pole_scale(e, lambda) {
            return Err(SpectrumError::Pole {
                lambda,
                side,
                value: e.y,
            });
        }
    }
    Ok(u.flux / u.y - v.flux / v.y)
}

/// `D(lambda) = u(0) v(0) (F(lambda) - M lambda)`, smooth in `lambda`.
pub fn pole_free(u: &Endpoint, v: &Endpoint, mass: f64, lambda: f64) -> f64 {
    u.flux * v.y - v.flux * u.y - mass * lambda * u.y * v.y
}

/// `dF/dlambda` from the variational solutions.
pub fn df_variational(
    c: &CoefficientSet,
    lambda: f64,
    variant: BcVariant,
    tol: &Tolerances,
) -> Result<f64, SpectrumError> {
    let (u, v) = both_ends(c, lambda, variant, &shoot_opts(tol))?;
    let q = |e: &Endpoint| (e.dflux_dlambda * e.y - e.flux * e.dy_dlambda) / (e.y * e.y);
    Ok(q(&u) - q(&v))
}

/// `dF/dlambda = -(v(0)^2 int rho1 u^2 + u(0)^2 int rho2 v^2) / (u(0) v(0))^2`,
/// with the integrals evaluated on the sampled traces.
pub fn df_closed_form(
    c: &CoefficientSet,
    lambda: f64,
    variant: BcVariant,
    tol: &Tolerances,
) -> Result<f64, SpectrumError> {
    let opts = shoot_opts(tol);
    let tu = shoot(c, Side::Left, variant, lambda, &opts)?;
    let tv = shoot(c, Side::Right, variant, lambda, &opts)?;
    let h = 1.0 / (opts.grid_points - 1) as f64;
    let weighted = |rod: &crate::coeffs::Rod, grid: &[f64], y: &[f64]| -> f64 {
        let s: Vec<f64> = grid.iter().zip(y).map(|(&x, y)| rod.rho.eval(x) * y * y).collect();
        simpson(&s, h)
    };
    let iu = weighted(&c.left, &tu.grid, &tu.y);
    let iv = weighted(&c.right, &tv.grid, &tv.y);
    let (u0, v0) = (tu.y_at_zero, tv.y_at_zero);
    Ok(-(v0 * v0 * iu + u0 * u0 * iv) / (u0 * u0 * v0 * v0))
}

/// Dirichlet eigenvalues of the two decoupled rods.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxiliarySpectra {
    pub variant: BcVariant,
    /// Left rod with `y(-1) = y(0) = 0`.
    pub eta: Vec<f64>,
    /// Right rod with `y(0) = y(1) = 0` (Dirichlet input) or
    /// `y(0) = y'(1) = 0` (Neumann input).
    pub eta_or_zeta_prime: Vec<f64>,
    /// Sorted multiset union of both lists.
    pub gamma_merged: Vec<f64>,
    /// Which list each merged entry came from.
    pub origin: Vec<Side>,
    /// Zero-based indices into `gamma_merged` of entries that lie in both
    /// lists. Coincident values come in adjacent pairs and both members are
    /// listed.
    pub gamma_star_indices: Vec<usize>,
    /// First index of each coincident pair.
    pub coincident_pairs: Vec<usize>,
}

impl AuxiliarySpectra {
    /// Whether merged entries `n` and `n + 1` (zero-based) form a
    /// coincident pair.
    pub fn coincident_pair(&self, n: usize) -> bool {
        self.coincident_pairs.binary_search(&n).is_ok()
    }
}

fn zero_count(theta: f64) -> i64 {
    (theta / PI).floor() as i64
}

/// All roots of `y(0, .)` for one rod on `[0, ceiling]`.
fn rod_roots(
    c: &CoefficientSet,
    side: Side,
    variant: BcVariant,
    ceiling: f64,
    spacing_scale: f64,
    tol: &Tolerances,
) -> Result<Vec<f64>, SpectrumError> {
    let opts = shoot_opts(tol);
    // scan grid with step matched to the local eigenvalue spacing
    let mut grid = vec![0.0];
    let mut lam: f64 = 0.0;
    while lam < ceiling {
        let n_est = lam.sqrt() / spacing_scale.sqrt();
        lam += 0.5 * spacing_scale * (2.0 * n_est + 1.0);
        grid.push(lam.min(ceiling));
    }
    let pts: Vec<Endpoint> = grid
        .par_iter()
        .map(|&l| endpoint(c, side, variant, l, &opts))
        .collect::<Result<_, _>>()?;

    // split intervals until each holds at most one crossing
    let mut brackets: Vec<(f64, Endpoint, f64, Endpoint)> = Vec::new();
    let mut stack: Vec<(f64, Endpoint, f64, Endpoint)> = grid
        .windows(2)
        .zip(pts.windows(2))
        .map(|(g, p)| (g[0], p[0], g[1], p[1]))
        .rev()
        .collect();
    while let Some((a, ea, b, eb)) = stack.pop() {
        let k = zero_count(eb.prufer) - zero_count(ea.prufer);
        if k == 0 {
            continue;
        }
        if k == 1 {
            brackets.push((a, ea, b, eb));
            continue;
        }
        let m = 0.5 * (a + b);
        let em = endpoint(c, side, variant, m, &opts)?;
        stack.push((m, em, b, eb));
        stack.push((a, ea, m, em));
    }

    brackets
        .par_iter()
        .map(|(a, ea, b, eb)| {
            let f = |l: f64| endpoint(c, side, variant, l, &opts).map(|e| e.y);
            brent(f, *a, *b, ea.y, eb.y, tol.root_rtol, 1e-300).map_err(SpectrumError::from)
        })
        .collect()
}

fn spacing_scale(t: &TravelTimes) -> f64 {
    (PI / t.total()).powi(2)
}

/// Auxiliary spectra containing at least `n_max` entries of each list and
/// at least `n_max + 1` merged entries; every value below the final scan
/// ceiling is included.
pub fn auxiliary_spectra(
    c: &CoefficientSet,
    variant: BcVariant,
    n_max: usize,
    tol: &Tolerances,
) -> Result<AuxiliarySpectra, SpectrumError> {
    if n_max < 1 {
        return Err(SpectrumError::TooFew { min: 1, got: n_max });
    }
    let travel = travel_times(c)?;
    let scale = spacing_scale(&travel);
    let mut ceiling = (1.2 * (n_max + 2) as f64).powi(2) * scale;
    for _ in 0..24 {
        let (eta, right) = rayon::join(
            || rod_roots(c, Side::Left, variant, ceiling, scale, tol),
            || rod_roots(c, Side::Right, variant, ceiling, scale, tol),
        );
        let (eta, right) = (eta?, right?);
        if eta.len() >= n_max && right.len() >= n_max && eta.len() + right.len() > n_max {
            return Ok(merge(variant, eta, right, tol.coincidence));
        }
        log::debug!(
            "scan ceiling {ceiling:e} gave {} + {} auxiliary values, extending",
            eta.len(),
            right.len()
        );
        ceiling *= 2.0;
    }
    Err(SpectrumError::BracketExhausted {
        side: Side::Left,
        found: 0,
        needed: n_max,
        ceiling,
    })
}

fn merge(variant: BcVariant, eta: Vec<f64>, right: Vec<f64>, coincidence: f64) -> AuxiliarySpectra {
    let mut all: Vec<(f64, Side)> = eta
        .iter()
        .map(|&x| (x, Side::Left))
        .chain(right.iter().map(|&x| (x, Side::Right)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut star = Vec::new();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i + 1 < all.len() {
        let (a, sa) = all[i];
        let (b, sb) = all[i + 1];
        if sa != sb && (b - a).abs() <= coincidence * (1.0 + a.abs()) {
            pairs.push(i);
            star.push(i);
            star.push(i + 1);
            i += 2;
        } else {
            i += 1;
        }
    }
    AuxiliarySpectra {
        variant,
        eta,
        eta_or_zeta_prime: right,
        gamma_merged: all.iter().map(|p| p.0).collect(),
        origin: all.iter().map(|p| p.1).collect(),
        gamma_star_indices: star,
        coincident_pairs: pairs,
    }
}

/// The first `n_max` roots of `F(lambda) = mass * lambda`.
pub fn eigenvalues_with(
    c: &CoefficientSet,
    variant: BcVariant,
    aux: &AuxiliarySpectra,
    n_max: usize,
    mass: f64,
    tol: &Tolerances,
) -> Result<Vec<f64>, SpectrumError> {
    let mu = &aux.gamma_merged;
    if mu.len() + 1 < n_max {
        return Err(SpectrumError::BracketExhausted {
            side: Side::Left,
            found: mu.len(),
            needed: n_max,
            ceiling: *mu.last().unwrap_or(&0.0),
        });
    }
    let opts = shoot_opts(tol);
    let d = |l: f64| -> Result<f64, ShootError> {
        let (u, v) = both_ends(c, l, variant, &opts)?;
        Ok(pole_free(&u, &v, mass, l))
    };
    (0..n_max)
        .into_par_iter()
        .map(|k| {
            // eigenvalue k + 1 (one-based) lives in (mu_k, mu_{k+1}), mu_0 = 0
            if k >= 1 && aux.coincident_pair(k - 1) {
                return Ok(0.5 * (mu[k - 1] + mu[k]));
            }
            let mut a = if k == 0 { 0.0 } else { mu[k - 1] };
            let mut b = mu[k];
            // D also vanishes at a coincident pole, so step just inside
            let inset = 1e-6 * (b - a);
            if k >= 1 && aux.gamma_star_indices.binary_search(&(k - 1)).is_ok() {
                a += inset;
            }
            if aux.gamma_star_indices.binary_search(&k).is_ok() {
                b -= inset;
            }
            let (da, db) = (d(a)?, d(b)?);
            if da.signum() == db.signum() || da == 0.0 || db == 0.0 {
                return Err(SpectrumError::Monotonicity { index: k + 1, a, b, da, db });
            }
            Ok(brent(d, a, b, da, db, tol.root_rtol, 1e-300)?)
        })
        .collect()
}

pub fn eigenvalues_main(
    c: &CoefficientSet,
    variant: BcVariant,
    n_max: usize,
    tol: &Tolerances,
) -> Result<Vec<f64>, SpectrumError> {
    let aux = auxiliary_spectra(c, variant, n_max, tol)?;
    eigenvalues_with(c, variant, &aux, n_max, c.mass, tol)
}

/// Eigenvalues of the problem without the point mass (`M = 0`).
pub fn eigenvalues_regular(
    c: &CoefficientSet,
    variant: BcVariant,
    n_max: usize,
    tol: &Tolerances,
) -> Result<Vec<f64>, SpectrumError> {
    let aux = auxiliary_spectra(c, variant, n_max, tol)?;
    eigenvalues_with(c, variant, &aux, n_max, 0.0, tol)
}

/// How the two rod solutions were combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Assembly {
    /// Weights `(v(0), u(0))` from the continuity condition.
    Interface,
    /// Weights from the flux-jump condition, used at or near coincidence
    /// and wherever the interface values are small.
    Flux,
}

/// A normalized eigenfunction with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigenpair {
    pub index: usize,
    pub lambda: f64,
    pub variant: BcVariant,
    #[serde(skip)]
    pub u_part: Vec<f64>,
    #[serde(skip)]
    pub v_part: Vec<f64>,
    pub z: f64,
    /// Weights applied to the left and right IVP solutions after
    /// normalization.
    pub weights: (f64, f64),
    pub norm_h: f64,
    /// Squared norm of the interface-form function scaled by
    /// `sqrt(lambda)`, before normalization.
    pub raw_norm_sq: f64,
    /// `phi_v'(1)` for the Dirichlet input, `phi_v(1)` for Neumann.
    pub trace_right: f64,
    pub in_coincidence_set: bool,
    pub assembly: Assembly,
    /// `sigma1(0) phi_u'(0)` and `sigma2(0) phi_v'(0)`.
    pub flux_left: f64,
    pub flux_right: f64,
    pub continuity_residual: f64,
    pub flux_jump_residual: f64,
}

impl Eigenpair {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.u_part.len();
        writeln!(w, "x,value,piece")?;
        for (x, y) in crate::shooting::rod_grid(Side::Left, n).iter().zip(&self.u_part) {
            writeln!(w, "{x:.17e},{y:.17e},u")?;
        }
        for (x, y) in crate::shooting::rod_grid(Side::Right, n).iter().zip(&self.v_part) {
            writeln!(w, "{x:.17e},{y:.17e},v")?;
        }
        writeln!(w, "{:.17e},{:.17e},z", 0.0, self.z)
    }
}

/// Builds, normalizes and checks the eigenfunction for eigenvalue
/// `lambda`. The flux form is used when both rods are within
/// `near_coincidence` of a pole, estimated from the local slope of the
/// interface values, and otherwise whenever it is the better conditioned
/// of the two weight pairs.
pub fn assemble_eigenfunction(
    c: &CoefficientSet,
    index: usize,
    lambda: f64,
    variant: BcVariant,
    tol: &Tolerances,
) -> Result<Eigenpair, SpectrumError> {
    let opts = shoot_opts(tol);
    let (tu, tv) = rayon::join(
        || shoot(c, Side::Left, variant, lambda, &opts),
        || shoot(c, Side::Right, variant, lambda, &opts),
    );
    let (tu, tv) = (tu?, tv?);
    let (u0, fu, v0, fv) = (tu.y_at_zero, tu.flux_at_zero, tv.y_at_zero, tv.flux_at_zero);
    let pole_dist_u = (u0 / tu.dy_dlambda_at_zero).abs();
    let pole_dist_v = (v0 / tv.dy_dlambda_at_zero).abs();
    let coincident = pole_dist_u.max(pole_dist_v) <= tol.coincidence * (1.0 + lambda.abs());
    let near = pole_dist_u.max(pole_dist_v) < tol.near_coincidence;
    let m = c.mass;

    let weights = HWeights::new(c, opts.grid_points);
    let sqrt_l = lambda.abs().sqrt();
    let raw_norm_sq = {
        let (a, b) = (sqrt_l * v0, sqrt_l * u0);
        weights.left.iter().zip(&tu.y).map(|(w, y)| w * (a * y).powi(2)).sum::<f64>()
            + weights.right.iter().zip(&tv.y).map(|(w, y)| w * (b * y).powi(2)).sum::<f64>()
            + m * (a * u0).powi(2)
    };

    // Relative sensitivity of each weight pair to absolute errors in the
    // endpoint values. The interface pair degrades when either trace is
    // small next to its rod's amplitude, which also happens between two
    // close but distinct poles.
    let (amp_u, amp_v) = (u0.hypot(fu / sqrt_l), v0.hypot(fv / sqrt_l));
    let jump = fu - lambda * m * u0;
    let kappa_interface = amp_u / u0.abs() + amp_v / v0.abs();
    let kappa_flux = sqrt_l * amp_v / fv.abs() + (sqrt_l * amp_u + lambda * m * u0.abs()) / jump.abs();
    let (assembly, mut c1, mut c2) = if near || coincident || kappa_flux < kappa_interface {
        (Assembly::Flux, fv, jump)
    } else {
        (Assembly::Interface, v0, u0)
    };
    let norm_of = |c1: f64, c2: f64| {
        let z = 0.5 * (c1 * u0 + c2 * v0);
        (c1 * c1 * weights.left.iter().zip(&tu.y).map(|(w, y)| w * y * y).sum::<f64>()
            + c2 * c2 * weights.right.iter().zip(&tv.y).map(|(w, y)| w * y * y).sum::<f64>()
            + m * z * z)
            .sqrt()
    };
    let nrm = norm_of(c1, c2);
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(SpectrumError::ZeroFunction { lambda });
    }
    c1 /= nrm;
    c2 /= nrm;
    // u'(-1) = c1 > 0
    if c1 < 0.0 || (c1 == 0.0 && c2 < 0.0) {
        c1 = -c1;
        c2 = -c2;
    }
    let u_part: Vec<f64> = tu.y.iter().map(|y| c1 * y).collect();
    let v_part: Vec<f64> = tv.y.iter().map(|y| c2 * y).collect();
    let z = 0.5 * (c1 * u0 + c2 * v0);
    let norm_h = weights.energy(&u_part, &v_part, z).sqrt();
    let flux_left = c1 * fu;
    let flux_right = c2 * fv;
    let flux_scale = flux_left.abs().max(flux_right.abs()).max(lambda * m * z.abs());
    let continuity_residual = (c1 * u0 - c2 * v0).abs();
    let flux_jump_residual = (flux_left - flux_right - lambda * m * z).abs() / flux_scale.max(f64::MIN_POSITIVE);
    let trace_right = match variant {
        BcVariant::Dirichlet => -c2,
        BcVariant::Neumann => c2,
    };
    if trace_right.abs() < 1e-12 {
        return Err(SpectrumError::ZeroTrace {
            index,
            lambda,
            trace: trace_right,
        });
    }
    Ok(Eigenpair {
        index,
        lambda,
        variant,
        u_part,
        v_part,
        z,
        weights: (c1, c2),
        norm_h,
        raw_norm_sq,
        trace_right,
        in_coincidence_set: coincident,
        assembly,
        flux_left,
        flux_right,
        continuity_residual,
        flux_jump_residual,
    })
}

/// Eigenvalues, eigenfunctions and the certification diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub variant: BcVariant,
    pub travel: TravelTimes,
    pub eigenvalues: Vec<Eigenpair>,
    pub regular_eigenvalues: Vec<f64>,
    pub auxiliary: AuxiliarySpectra,
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    /// One flag per eigenvalue index: the chain
    /// `mu_{n-1} < lambda_n < lambda'_n < mu_n` (with `mu_0 = 0`), or the
    /// equalities at a coincident pair.
    pub interpolation_ok: Vec<bool>,
    pub asymptote_ratios: Vec<f64>,
}

impl SpectralReport {
    pub fn lambdas(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.lambda).collect()
    }

    pub fn all_interpolation_ok(&self) -> bool {
        self.interpolation_ok.iter().all(|&b| b)
    }

    /// Writes `n,lambda,regular_lambda,mu,gap,interpolation_ok,asymptote_ratio`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,lambda,regular_lambda,mu,gap,interpolation_ok,asymptote_ratio")?;
        for (i, e) in self.eigenvalues.iter().enumerate() {
            let gap = self.gaps.get(i).map(|g| format!("{g:.15e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.15e},{:.15e},{:.15e},{},{},{:.12}",
                i + 1,
                e.lambda,
                self.regular_eigenvalues[i],
                self.auxiliary.gamma_merged[i],
                gap,
                self.interpolation_ok[i],
                self.asymptote_ratios[i]
            )?;
        }
        Ok(())
    }
}

/// Asymptotic eigenvalue predicted from the travel times.
pub fn asymptotic_eigenvalue(n: usize, variant: BcVariant, t: &TravelTimes) -> f64 {
    let g = t.total();
    match variant {
        BcVariant::Dirichlet => (n as f64 * PI / g).powi(2),
        BcVariant::Neumann => ((2 * n + 1) as f64 * PI / (2.0 * g)).powi(2),
    }
}

/// Checks the interlacing chain for each index (one-based `n`).
pub fn interpolation_flags(
    lambdas: &[f64],
    regular: &[f64],
    aux: &AuxiliarySpectra,
    tol: &Tolerances,
) -> Vec<bool> {
    let mu = &aux.gamma_merged;
    (0..lambdas.len())
        .map(|k| {
            let (l, lr) = (lambdas[k], regular[k]);
            if k >= 1 && aux.coincident_pair(k - 1) {
                let m = mu[k - 1];
                let t = tol.coincidence * (1.0 + m);
                return (l - m).abs() <= t && (lr - m).abs() <= t;
            }
            let lo = if k == 0 { 0.0 } else { mu[k - 1] };
            let hi = mu[k];
            lo < l && l < lr && lr < hi
        })
        .collect()
}

pub fn spectral_report(
    c: &CoefficientSet,
    variant: BcVariant,
    n_max: usize,
    tol: &Tolerances,
) -> Result<SpectralReport, SpectrumError> {
    if n_max < 2 {
        return Err(SpectrumError::TooFew { min: 2, got: n_max });
    }
    let travel = travel_times(c)?;
    let auxiliary = auxiliary_spectra(c, variant, n_max, tol)?;
    let (main, regular) = rayon::join(
        || eigenvalues_with(c, variant, &auxiliary, n_max, c.mass, tol),
        || eigenvalues_with(c, variant, &auxiliary, n_max, 0.0, tol),
    );
    let (main, regular) = (main?, regular?);
    let mut eigenvalues: Vec<Eigenpair> = main
        .par_iter()
        .enumerate()
        .map(|(k, &l)| assemble_eigenfunction(c, k + 1, l, variant, tol))
        .collect::<Result<_, _>>()?;
    for (k, e) in eigenvalues.iter_mut().enumerate() {
        e.in_coincidence_set = k >= 1 && auxiliary.coincident_pair(k - 1);
    }
    let gaps: Vec<f64> = main.windows(2).map(|w| w[1] - w[0]).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let interpolation_ok = interpolation_flags(&main, &regular, &auxiliary, tol);
    let asymptote_ratios = main
        .iter()
        .enumerate()
        .map(|(k, l)| l / asymptotic_eigenvalue(k + 1, variant, &travel))
        .collect();
    Ok(SpectralReport {
        variant,
        travel,
        eigenvalues,
        regular_eigenvalues: regular,
        auxiliary,
        gaps,
        min_gap,
        interpolation_ok,
        asymptote_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Rod;
    use crate::roots::bisect;

    fn unit(mass: f64) -> CoefficientSet {
        CoefficientSet::uniform(1.0, 1.0, 0.0, mass)
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn f_matches_cotangent_form() {
        let c = unit(1.0);
        let f = characteristic_f(&c, 1e-8, BcVariant::Dirichlet, &tol()).unwrap();
        assert!((f - 2.0).abs() < 1e-3);
        let f = characteristic_f(&c, PI * PI / 4.0, BcVariant::Dirichlet, &tol()).unwrap();
        assert!(f.abs() < 1e-9);
        for l in [0.3, 2.0, 15.0, 50.0] {
            let s: f64 = f64::sqrt(l);
            let f = characteristic_f(&c, l, BcVariant::Dirichlet, &tol()).unwrap();
            assert!((f - 2.0 * s / s.tan()).abs() < 1e-8 * (1.0 + f.abs()), "{l}");
        }
        assert!(matches!(
            characteristic_f(&c, PI * PI, BcVariant::Dirichlet, &tol()),
            Err(SpectrumError::Pole { .. })
        ));
    }

    #[test]
    fn constant_auxiliary_spectra() {
        let a = auxiliary_spectra(&unit(1.0), BcVariant::Dirichlet, 5, &tol()).unwrap();
        for (j, e) in a.eta.iter().take(5).enumerate() {
            let exact = ((j + 1) as f64 * PI).powi(2);
            assert!((e / exact - 1.0).abs() < 1e-11);
        }
        assert_eq!(a.gamma_star_indices.len(), a.gamma_merged.len());
        assert!(a.coincident_pair(0) && a.coincident_pair(2));

        let a = auxiliary_spectra(&unit(1.0), BcVariant::Neumann, 5, &tol()).unwrap();
        for (k, z) in a.eta_or_zeta_prime.iter().take(5).enumerate() {
            let exact = ((k as f64 + 0.5) * PI).powi(2);
            assert!((z / exact - 1.0).abs() < 1e-11);
        }
        assert!(a.gamma_star_indices.is_empty());
    }

    #[test]
    fn heavier_right_rod_interleaves() {
        let mut c = unit(1.0);
        c.right = Rod::constant(4.0, 1.0, 0.0);
        let a = auxiliary_spectra(&c, BcVariant::Dirichlet, 6, &tol()).unwrap();
        for (k, e) in a.eta_or_zeta_prime.iter().take(6).enumerate() {
            let exact = ((k + 1) as f64 * PI / 2.0).powi(2);
            assert!((e / exact - 1.0).abs() < 1e-11);
        }
        // coincidences exactly where k is even
        for (i, m) in a.gamma_merged.iter().enumerate() {
            let s = m.sqrt() / PI;
            let integer = (s - s.round()).abs() < 1e-6;
            assert_eq!(a.gamma_star_indices.contains(&i), integer, "mu = {m}");
        }
    }

    #[test]
    fn first_eigenvalue_constant_rods() {
        let l = eigenvalues_main(&unit(1.0), BcVariant::Dirichlet, 4, &tol()).unwrap();
        let s = bisect(|s| 2.0 * s.cos() - s * s.sin(), 0.5, 1.5, 1e-15);
        assert!((l[0] / (s * s) - 1.0).abs() < 1e-10);
        assert!((l[0] - 1.1591).abs() < 1e-3);
        assert!((l[1] / (PI * PI) - 1.0).abs() < 1e-10);
        assert!((l[3] / (4.0 * PI * PI) - 1.0).abs() < 1e-10);

        let l = eigenvalues_main(&unit(1e6), BcVariant::Dirichlet, 2, &tol()).unwrap();
        assert!(l[0] > 0.0 && l[0] < PI * PI / 4.0 + 1e-3);
    }

    #[test]
    fn regular_problem_is_one_long_rod() {
        let l = eigenvalues_regular(&unit(1.0), BcVariant::Dirichlet, 8, &tol()).unwrap();
        for (k, v) in l.iter().enumerate() {
            let exact = ((k + 1) as f64 * PI / 2.0).powi(2);
            assert!((v / exact - 1.0).abs() < 1e-10, "{k}");
        }
        let l = eigenvalues_regular(&unit(1.0), BcVariant::Neumann, 6, &tol()).unwrap();
        for (k, v) in l.iter().enumerate() {
            let exact = ((2 * k + 1) as f64 * PI / 4.0).powi(2);
            assert!((v / exact - 1.0).abs() < 1e-10, "{k}");
        }
    }

    #[test]
    fn derivative_forms_agree() {
        let c = CoefficientSet {
            left: Rod::from_exprs("1 + x^2", "1", "0").unwrap(),
            right: Rod::from_exprs("1", "exp(x)", "0.5").unwrap(),
            mass: 1.0,
        };
        for l in [0.7, 5.0, 31.0] {
            let a = df_variational(&c, l, BcVariant::Dirichlet, &tol()).unwrap();
            let b = df_closed_form(&c, l, BcVariant::Dirichlet, &tol()).unwrap();
            assert!(a < 0.0);
            assert!((a / b - 1.0).abs() < 1e-7, "{a} {b}");
        }
    }

    #[test]
    fn coincident_eigenfunction_vanishes_at_mass() {
        let e = assemble_eigenfunction(&unit(1.0), 2, PI * PI, BcVariant::Dirichlet, &tol()).unwrap();
        assert_eq!(e.assembly, Assembly::Flux);
        assert!(e.in_coincidence_set);
        assert!(e.z.abs() < 1e-9);
        assert!((e.norm_h - 1.0).abs() < 1e-12);
        // u-part proportional to sin(pi (x + 1)), positive slope at -1
        let n = e.u_part.len();
        let mid = e.u_part[(n - 1) / 2];
        assert!(mid > 0.0);
        assert!((e.trace_right.abs() - PI).abs() < 1e-6);
    }

    #[test]
    fn report_on_constant_rods() {
        let r = spectral_report(&unit(1.0), BcVariant::Dirichlet, 10, &tol()).unwrap();
        assert!(r.min_gap > 0.0);
        assert!(r.all_interpolation_ok(), "{:?}", r.interpolation_ok);
        for e in &r.eigenvalues {
            assert!((e.norm_h - 1.0).abs() < 1e-10);
            assert!(e.flux_jump_residual < 1e-8, "{}", e.flux_jump_residual);
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }
}
