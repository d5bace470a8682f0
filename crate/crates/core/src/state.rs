//! States of the hybrid system sampled on the rod grids, and the weighted
//! inner product `<Y1, Y2> = int rho1 u1 u2 + int rho2 v1 v2 + M z1 z2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::{CoefficientSet, Side};
use crate::expr::{Expr, ParseError};
use crate::quad::simpson_weights;
use crate::shooting::rod_grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("grid mismatch: expected {expected} samples per rod, got {left} and {right}")]
    GridMismatch { expected: usize, left: usize, right: usize },
    #[error("initial data expression: {0}")]
    Expr(#[from] ParseError),
    #[error("initial data: {0}")]
    Invalid(String),
}

/// Snapshot of `(u, v, z)` at time `t` on the uniform rod grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub z: f64,
    pub energy_h: f64,
}

impl StateSnapshot {
    pub fn zero(n: usize) -> Self {
        StateSnapshot {
            t: 0.0,
            u: vec![0.0; n],
            v: vec![0.0; n],
            z: 0.0,
            energy_h: 0.0,
        }
    }

    /// Builds a snapshot and fills its energy.
    pub fn new(t: f64, u: Vec<f64>, v: Vec<f64>, z: f64, w: &HWeights) -> Result<Self, StateError> {
        w.check(&u, &v)?;
        let energy_h = w.inner(&u, &v, z, &u, &v, z);
        Ok(StateSnapshot { t, u, v, z, energy_h })
    }

    /// Samples two expressions on the grids; the mass value is taken as
    /// the average of the two interface values.
    pub fn from_exprs(u: &str, v: &str, w: &HWeights) -> Result<Self, StateError> {
        let eu = Expr::parse(u)?;
        let ev = Expr::parse(v)?;
        let n = w.points();
        let us: Vec<f64> = rod_grid(Side::Left, n).iter().map(|&x| eu.eval(x)).collect();
        let vs: Vec<f64> = rod_grid(Side::Right, n).iter().map(|&x| ev.eval(x)).collect();
        if us.iter().chain(&vs).any(|s| !s.is_finite()) {
            return Err(StateError::Invalid("non-finite sample".into()));
        }
        let z = 0.5 * (us[n - 1] + vs[0]);
        Self::new(0.0, us, vs, z, w)
    }

    /// Largest mismatch between the interface samples and the mass value.
    pub fn continuity_defect(&self) -> f64 {
        let ul = *self.u.last().unwrap_or(&0.0);
        let vf = *self.v.first().unwrap_or(&0.0);
        (ul - self.z).abs().max((vf - self.z).abs())
    }

    pub fn scale(&self, k: f64, w: &HWeights) -> Self {
        let u = self.u.iter().map(|x| k * x).collect();
        let v = self.v.iter().map(|x| k * x).collect();
        Self::new(self.t, u, v, k * self.z, w).expect("same grid")
    }
}

/// Quadrature weights for the energy inner product on the uniform grids.
#[derive(Debug, Clone, PartialEq)]
pub struct HWeights {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub mass: f64,
}

impl HWeights {
    /// Composite Simpson weights times the densities; `n` must be odd.
    pub fn new(c: &CoefficientSet, n: usize) -> Self {
        let h = 1.0 / (n - 1) as f64;
        let base = simpson_weights(n, h);
        let weigh = |side: Side| -> Vec<f64> {
            let rod = c.rod(side);
            rod_grid(side, n)
                .iter()
                .zip(&base)
                .map(|(&x, w)| w * rod.rho.eval(x))
                .collect()
        };
        HWeights {
            left: weigh(Side::Left),
            right: weigh(Side::Right),
            mass: c.mass,
        }
    }

    pub fn points(&self) -> usize {
        self.left.len()
    }

    pub fn check(&self, u: &[f64], v: &[f64]) -> Result<(), StateError> {
        if u.len() != self.left.len() || v.len() != self.right.len() {
            return Err(StateError::GridMismatch {
                expected: self.left.len(),
                left: u.len(),
                right: v.len(),
            });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn inner(&self, u1: &[f64], v1: &[f64], z1: f64, u2: &[f64], v2: &[f64], z2: f64) -> f64 {
        let l: f64 = self.left.iter().zip(u1).zip(u2).map(|((w, a), b)| w * a * b).sum();
        let r: f64 = self.right.iter().zip(v1).zip(v2).map(|((w, a), b)| w * a * b).sum();
        l + r + self.mass * z1 * z2
    }

    pub fn energy(&self, u: &[f64], v: &[f64], z: f64) -> f64 {
        self.inner(u, v, z, u, v, z)
    }
}
