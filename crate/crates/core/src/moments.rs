//! Moment method for the truncated null-control problem.
//!
//! Writing the state as `sum a_n(t) phi_n`, each coefficient obeys
//! `a_n' = -lambda_n a_n + b_n h(t)` with `b_n = -sigma2(1) phi_n^v'(1)` for
//! the Dirichlet input and `b_n = sigma2(1) phi_n^v(1)` for the Neumann one.
//! Driving `a_n(T)` to zero with `h(t) = w(T - t)` is the moment problem
//! `int_0^T w(t) e^{-lambda_n t} dt = d_n`, `d_n = -e^{-lambda_n T} a_n(0) / b_n`.
//! It is solved with the minimal-norm biorthogonal family in the span of
//! the exponentials, whose coefficients are the inverse Gram matrix.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::BcVariant;
use crate::dd::Dd;
use crate::linalg::{refined_inverse, LinalgError, Ldlt, Matrix};
use crate::quad::gauss_legendre;
use crate::spectrum::Eigenpair;
use crate::state::{HWeights, StateError, StateSnapshot};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error(
        "Gram matrix of {n} exponentials on [0, {horizon}] is too ill-conditioned: condition {condition:e} exceeds {ceiling:e}; reduce n_modes or use extended precision"
    )]
    Conditioning {
        n: usize,
        horizon: f64,
        condition: f64,
        ceiling: f64,
    },
    #[error("exponents must be positive and strictly increasing")]
    BadExponents,
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("family and problem exponents differ")]
    Mismatch,
    #[error("moment residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error(transparent)]
    State(#[from] StateError),
}

/// Arithmetic used for the Gram solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Double-precision factorization with double-double refinement.
    #[default]
    Double,
    /// Factorization carried out entirely in double-double.
    Extended,
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double" => Ok(Precision::Double),
            "extended" => Ok(Precision::Extended),
            o => Err(format!("unknown precision '{o}'")),
        }
    }
}

/// Condition ceilings scale with the unit roundoff of the factorization.
pub fn condition_ceiling(precision: Precision, working_ceiling: f64) -> f64 {
    match precision {
        Precision::Double => working_ceiling,
        Precision::Extended => working_ceiling * 1e16,
    }
}

/// `Y_n = <Y0, phi_n>` for each eigenpair.
pub fn project_initial_data(
    y0: &StateSnapshot,
    eigs: &[Eigenpair],
    w: &HWeights,
) -> Result<Vec<f64>, StateError> {
    w.check(&y0.u, &y0.v)?;
    eigs.iter()
        .map(|e| {
            w.check(&e.u_part, &e.v_part)?;
            Ok(w.inner(&y0.u, &y0.v, y0.z, &e.u_part, &e.v_part, e.z))
        })
        .collect()
}

/// Snapshot of a normalized eigenfunction, usable as initial data.
pub fn eigenfunction_state(e: &Eigenpair, w: &HWeights) -> StateSnapshot {
    StateSnapshot::new(0.0, e.u_part.clone(), e.v_part.clone(), e.z, w).expect("eigenfunction on weight grid")
}

/// Modal input coefficient `b_n`.
pub fn input_coefficient(variant: BcVariant, sigma2_at_1: f64, trace_right: f64) -> f64 {
    match variant {
        BcVariant::Dirichlet => -sigma2_at_1 * trace_right,
        BcVariant::Neumann => sigma2_at_1 * trace_right,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentProblem {
    pub variant: BcVariant,
    pub horizon: f64,
    pub exponents: Vec<f64>,
    pub initial_coefficients: Vec<f64>,
    pub input_coefficients: Vec<f64>,
    /// `||phi_n||^2` of the eigenfunctions used (one after normalization).
    pub norms_sq: Vec<f64>,
    pub targets: Vec<f64>,
}

impl MomentProblem {
    pub fn new(
        variant: BcVariant,
        horizon: f64,
        eigs: &[Eigenpair],
        initial_coefficients: Vec<f64>,
        sigma2_at_1: f64,
    ) -> Result<Self, MomentError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MomentError::BadHorizon(horizon));
        }
        if initial_coefficients.len() != eigs.len() {
            return Err(MomentError::Mismatch);
        }
        let exponents: Vec<f64> = eigs.iter().map(|e| e.lambda).collect();
        check_exponents(&exponents)?;
        let input_coefficients: Vec<f64> = eigs
            .iter()
            .map(|e| input_coefficient(variant, sigma2_at_1, e.trace_right))
            .collect();
        let norms_sq: Vec<f64> = eigs.iter().map(|e| e.norm_h * e.norm_h).collect();
        let sign = match variant {
            BcVariant::Dirichlet => 1.0,
            BcVariant::Neumann => -1.0,
        };
        let targets = eigs
            .iter()
            .zip(&initial_coefficients)
            .zip(&norms_sq)
            .map(|((e, y), nsq)| sign * y * nsq * (-e.lambda * horizon).exp() / (sigma2_at_1 * e.trace_right))
            .collect();
        Ok(MomentProblem {
            variant,
            horizon,
            exponents,
            initial_coefficients,
            input_coefficients,
            norms_sq,
            targets,
        })
    }

    pub fn n(&self) -> usize {
        self.exponents.len()
    }

    /// A problem with explicit targets, for tests and diagnostics.
    pub fn from_targets(variant: BcVariant, horizon: f64, exponents: Vec<f64>, targets: Vec<f64>) -> Result<Self, MomentError> {
        check_exponents(&exponents)?;
        if targets.len() != exponents.len() {
            return Err(MomentError::Mismatch);
        }
        let n = exponents.len();
        Ok(MomentProblem {
            variant,
            horizon,
            exponents,
            initial_coefficients: vec![0.0; n],
            input_coefficients: vec![1.0; n],
            norms_sq: vec![1.0; n],
            targets,
        })
    }
}

fn check_exponents(ex: &[f64]) -> Result<(), MomentError> {
    if ex.is_empty() || ex[0] <= 0.0 || ex.windows(2).any(|w| w[1] <= w[0]) || ex.iter().any(|x| !x.is_finite()) {
        return Err(MomentError::BadExponents);
    }
    Ok(())
}

/// `G_nm = (1 - e^{-(l_n + l_m) T}) / (l_n + l_m)` in double-double.
pub fn gram_matrix(exponents: &[f64], horizon: f64) -> Matrix<Dd> {
    let t = Dd::from_f64(horizon);
    Matrix::from_fn(exponents.len(), |i, j| {
        let s = Dd::sum(exponents[i], exponents[j]);
        Dd::one_minus_exp_neg(s * t) / s
    })
}

/// `theta_n = sum_m C_nm e^{-lambda_m t}` with `C = G^{-1}`.
#[derive(Debug, Clone, Serialize)]
pub struct BiorthogonalFamily {
    pub horizon: f64,
    pub exponents: Vec<f64>,
    pub precision: Precision,
    #[serde(skip)]
    pub coefficients: Matrix<Dd>,
    #[serde(skip)]
    pub gram: Matrix<Dd>,
    pub gram_condition: f64,
    /// `||theta_n||_{L2(0,T)}`.
    pub norms: Vec<f64>,
    /// `max |int theta_n e^{-lambda_m t} - delta_nm|`, evaluated exactly from
    /// the Gram matrix in double-double.
    pub biorthogonality_residual: f64,
}

impl BiorthogonalFamily {
    /// `theta_n(t)`.
    pub fn eval(&self, n: usize, t: f64) -> f64 {
        let mut s = Dd::ZERO;
        for (m, l) in self.exponents.iter().enumerate() {
            s += self.coefficients[(n, m)] * (-(Dd::prod(*l, t))).exp();
        }
        s.to_f64()
    }

    /// Biorthogonality matrix `int theta_n e^{-lambda_m t} dt` by
    /// Gauss–Legendre quadrature of the sampled functions.
    pub fn quadrature_check(&self, panels: usize) -> Matrix<f64> {
        let nodes = TimeNodes::new(self.horizon, panels);
        let n = self.exponents.len();
        let thetas: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| nodes.t.iter().map(|&t| self.eval(i, t)).collect())
            .collect();
        Matrix::from_fn(n, |i, j| {
            nodes
                .t
                .iter()
                .zip(&nodes.w)
                .zip(&thetas[i])
                .map(|((t, w), th)| w * th * (-self.exponents[j] * t).exp())
                .sum()
        })
    }
}

/// Builds the minimal-norm biorthogonal family.
pub fn build_biorthogonal(
    exponents: &[f64],
    horizon: f64,
    precision: Precision,
    working_ceiling: f64,
) -> Result<BiorthogonalFamily, MomentError> {
    check_exponents(exponents)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MomentError::BadHorizon(horizon));
    }
    let n = exponents.len();
    let ceiling = condition_ceiling(precision, working_ceiling);
    let gram = gram_matrix(exponents, horizon);
    let too_ill = |condition: f64| MomentError::Conditioning {
        n,
        horizon,
        condition,
        ceiling,
    };
    let (coefficients, condition) = match precision {
        Precision::Double => {
            let gf = gram.map(|x| x.to_f64());
            let f = Ldlt::factor(&gf).map_err(|_| too_ill(f64::INFINITY))?;
            let cond = gf.norm1() * f.inverse().norm1();
            if !(cond <= ceiling) {
                return Err(too_ill(cond));
            }
            let (c, _) = refined_inverse(&gram, 8).map_err(|e| match e {
                LinalgError::NotPositiveDefinite { .. } | LinalgError::Dimension(_) => too_ill(f64::INFINITY),
            })?;
            (c, cond)
        }
        Precision::Extended => {
            let f = Ldlt::factor(&gram).map_err(|_| too_ill(f64::INFINITY))?;
            let c = f.inverse();
            let cond = gram.norm1() * c.norm1();
            if !(cond <= ceiling) {
                return Err(too_ill(cond));
            }
            (c, cond)
        }
    };
    let prod = coefficients.matmul(&gram);
    let mut resid: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let e = if i == j { Dd::ONE } else { Dd::ZERO };
            resid = resid.max((prod[(i, j)] - e).to_f64().abs());
        }
    }
    // ||theta_n||^2 = c_n^T G c_n = C_nn
    let norms = (0..n).map(|i| coefficients[(i, i)].to_f64().abs().sqrt()).collect();
    Ok(BiorthogonalFamily {
        horizon,
        exponents: exponents.to_vec(),
        precision,
        coefficients,
        gram,
        gram_condition: condition,
        norms,
        biorthogonality_residual: resid,
    })
}

/// Composite Gauss–Legendre nodes on `[0, T]`.
struct TimeNodes {
    t: Vec<f64>,
    w: Vec<f64>,
}

impl TimeNodes {
    fn new(horizon: f64, panels: usize) -> Self {
        let (x, w) = gauss_legendre(8);
        let h = horizon / panels as f64;
        let mut tn = Vec::with_capacity(panels * 8);
        let mut wn = Vec::with_capacity(panels * 8);
        for p in 0..panels {
            let a = p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                tn.push(a + 0.5 * h * (xi + 1.0));
                wn.push(0.5 * h * wi);
            }
        }
        TimeNodes { t: tn, w: wn }
    }
}

pub const QUADRATURE_PANELS: usize = 512;

/// The synthesized control.
#[derive(Debug, Clone, Serialize)]
pub struct ControlSignal {
    pub horizon: f64,
    pub variant: BcVariant,
    pub times: Vec<f64>,
    pub w: Vec<f64>,
    pub h: Vec<f64>,
    pub exponents: Vec<f64>,
    pub targets: Vec<f64>,
    /// `w(t) = sum_m a_m e^{-lambda_m t}`.
    #[serde(skip)]
    pub coefficients: Vec<Dd>,
    /// Achieved moments minus targets, by Gauss–Legendre quadrature.
    pub moment_residuals: Vec<f64>,
    /// Same, evaluated exactly through the Gram matrix.
    pub analytic_residuals: Vec<f64>,
    pub residual_tolerance: f64,
    pub h_l2_norm: f64,
    pub gram_condition: f64,
    pub theta_norms: Vec<f64>,
    pub precision: Precision,
}

impl ControlSignal {
    /// The zero input on a uniform grid.
    pub fn zero(variant: BcVariant, horizon: f64, points: usize) -> Self {
        let times = uniform_times(horizon, points);
        ControlSignal {
            horizon,
            variant,
            w: vec![0.0; points],
            h: vec![0.0; points],
            times,
            exponents: Vec::new(),
            targets: Vec::new(),
            coefficients: Vec::new(),
            moment_residuals: Vec::new(),
            analytic_residuals: Vec::new(),
            residual_tolerance: 0.0,
            h_l2_norm: 0.0,
            gram_condition: 0.0,
            theta_norms: Vec::new(),
            precision: Precision::Double,
        }
    }

    /// A sampled input `h(t)` with no moment data attached.
    pub fn from_samples(variant: BcVariant, horizon: f64, f: impl Fn(f64) -> f64, points: usize) -> Self {
        let mut s = Self::zero(variant, horizon, points);
        s.h = s.times.iter().map(|&t| f(t)).collect();
        s.w = s.h.iter().rev().copied().collect();
        s
    }

    /// `w(t)` from the exponential coefficients.
    pub fn eval_w(&self, t: f64) -> f64 {
        eval_sum(&self.coefficients, &self.exponents, t)
    }

    /// `h(t)`: exact from the exponential coefficients when present,
    /// otherwise linear interpolation of the samples.
    pub fn eval_h(&self, t: f64) -> f64 {
        if !self.coefficients.is_empty() {
            return self.eval_w(self.horizon - t);
        }
        let n = self.times.len();
        let s = (t / self.horizon * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let f = s - i as f64;
        self.h[i] * (1.0 - f) + self.h[i + 1] * f
    }

    pub fn max_residual(&self) -> f64 {
        self.moment_residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,w,h")?;
        for ((t, w), h) in self.times.iter().zip(&self.w).zip(&self.h) {
            writeln!(out, "{t:.17e},{w:.17e},{h:.17e}")?;
        }
        Ok(())
    }

    pub fn report(&self) -> MomentsReport {
        MomentsReport {
            variant: self.variant,
            horizon: self.horizon,
            precision: self.precision,
            exponents: self.exponents.clone(),
            targets: self.targets.clone(),
            residuals: self.moment_residuals.clone(),
            analytic_residuals: self.analytic_residuals.clone(),
            gram_condition: self.gram_condition,
            norms: self.theta_norms.clone(),
            h_l2_norm: self.h_l2_norm,
        }
    }
}

/// Structured summary written as `moments.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MomentsReport {
    pub variant: BcVariant,
    pub horizon: f64,
    pub precision: Precision,
    pub exponents: Vec<f64>,
    pub targets: Vec<f64>,
    pub residuals: Vec<f64>,
    pub analytic_residuals: Vec<f64>,
    pub gram_condition: f64,
    pub norms: Vec<f64>,
    pub h_l2_norm: f64,
}

fn uniform_times(horizon: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| {
            if k == points - 1 {
                horizon
            } else {
                horizon * k as f64 / (points - 1) as f64
            }
        })
        .collect()
}

fn eval_sum(a: &[Dd], ex: &[f64], t: f64) -> f64 {
    let mut s = Dd::ZERO;
    for (am, l) in a.iter().zip(ex) {
        s += *am * (-(Dd::prod(*l, t))).exp();
    }
    s.to_f64()
}

/// `w = sum_n d_n theta_n` on a uniform grid with `points` samples, and
/// `h(t) = w(T - t)`.
pub fn synthesize_control(
    problem: &MomentProblem,
    family: &BiorthogonalFamily,
    points: usize,
    tolerance: f64,
) -> Result<ControlSignal, MomentError> {
    if family.exponents != problem.exponents || (family.horizon - problem.horizon).abs() > 0.0 {
        return Err(MomentError::Mismatch);
    }
    let n = problem.n();
    let d: Vec<Dd> = problem.targets.iter().map(|&x| Dd::from_f64(x)).collect();
    let coefficients = family.coefficients.matvec(&d);

    let times = uniform_times(problem.horizon, points);
    // the grid is symmetric, so h is w read backwards
    let w: Vec<f64> = times
        .par_iter()
        .map(|&t| eval_sum(&coefficients, &problem.exponents, t))
        .collect();
    let h: Vec<f64> = w.iter().rev().copied().collect();

    let g_a = family.gram.matvec(&coefficients);
    let analytic_residuals: Vec<f64> = g_a.iter().zip(&d).map(|(x, y)| (*x - *y).to_f64()).collect();

    let nodes = TimeNodes::new(problem.horizon, QUADRATURE_PANELS);
    let wq: Vec<f64> = nodes
        .t
        .par_iter()
        .map(|&t| eval_sum(&coefficients, &problem.exponents, t))
        .collect();
    let moment_residuals: Vec<f64> = (0..n)
        .map(|i| {
            let l = problem.exponents[i];
            let m: f64 = nodes
                .t
                .iter()
                .zip(&nodes.w)
                .zip(&wq)
                .map(|((t, q), wv)| q * wv * (-l * t).exp())
                .sum();
            m - problem.targets[i]
        })
        .collect();
    let h_l2_norm = nodes.w.iter().zip(&wq).map(|(q, v)| q * v * v).sum::<f64>().sqrt();

    let scale = problem.targets.iter().fold(1.0f64, |m, d| m.max(d.abs()));
    let worst = moment_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if worst > tolerance * scale {
        return Err(MomentError::Residual {
            residual: worst,
            tolerance: tolerance * scale,
        });
    }
    Ok(ControlSignal {
        horizon: problem.horizon,
        variant: problem.variant,
        times,
        w,
        h,
        exponents: problem.exponents.clone(),
        targets: problem.targets.clone(),
        coefficients,
        moment_residuals,
        analytic_residuals,
        residual_tolerance: tolerance,
        h_l2_norm,
        gram_condition: family.gram_condition,
        theta_norms: family.norms.clone(),
        precision: family.precision,
    })
}
