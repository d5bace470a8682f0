//! Initial-data specifications accepted by `--init`.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{Context, Result};
use hybrid_heat::moments::eigenfunction_state;
use hybrid_heat::state::{HWeights, StateSnapshot};
use hybrid_heat::{Eigenpair, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Zero,
    /// A single normalized eigenfunction.
    Mode(usize),
    /// `(phi_a + phi_b + ...) / sqrt(k)`.
    Modes(Vec<usize>),
    /// Gaussian modal coefficients on the first `k` modes, unit energy.
    Random(usize),
    Expr { u: String, v: String },
    /// CSV with `x,value,piece` rows, as written by `terminal.csv`.
    File(PathBuf),
}

impl FromStr for InitSpec {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        let bad = |why: &str| UsageError(format!("--init {s}: {why}"));
        let index = |t: &str| -> Result<usize, UsageError> {
            match t.trim().parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(bad("mode indices start at 1")),
            }
        };
        if s == "zero" {
            return Ok(InitSpec::Zero);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad("expected zero, mode:K, modes:K,L,.., random:K, expr:U;V or file:PATH"))?;
        match kind {
            "mode" => Ok(InitSpec::Mode(index(rest)?)),
            "modes" => {
                let ks = rest.split(',').map(index).collect::<Result<Vec<_>, _>>()?;
                let mut sorted = ks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != ks.len() {
                    return Err(bad("repeated mode index"));
                }
                Ok(InitSpec::Modes(ks))
            }
            "random" => Ok(InitSpec::Random(index(rest)?)),
            "expr" => {
                let (u, v) = rest.split_once(';').ok_or_else(|| bad("expected expr:U;V"))?;
                Ok(InitSpec::Expr {
                    u: u.trim().to_string(),
                    v: v.trim().to_string(),
                })
            }
            "file" if !rest.is_empty() => Ok(InitSpec::File(PathBuf::from(rest))),
            _ => Err(bad("unknown form")),
        }
    }
}

impl InitSpec {
    /// Eigenpairs needed to build the state.
    pub fn modes_needed(&self) -> usize {
        match self {
            InitSpec::Mode(k) | InitSpec::Random(k) => *k,
            InitSpec::Modes(ks) => ks.iter().copied().max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn build(&self, eigs: &[Eigenpair], w: &HWeights, seed: u64) -> Result<StateSnapshot> {
        let n = w.points();
        match self {
            InitSpec::Zero => Ok(StateSnapshot::zero(n)),
            InitSpec::Mode(k) => Ok(eigenfunction_state(&eigs[k - 1], w)),
            InitSpec::Modes(ks) => {
                let c = vec![1.0 / (ks.len() as f64).sqrt(); ks.len()];
                let picked: Vec<&Eigenpair> = ks.iter().map(|k| &eigs[k - 1]).collect();
                combine(&picked, &c, w)
            }
            InitSpec::Random(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut c: Vec<f64> = (0..*k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                c.iter_mut().for_each(|x| *x /= norm);
                let picked: Vec<&Eigenpair> = eigs[..*k].iter().collect();
                combine(&picked, &c, w)
            }
            InitSpec::Expr { u, v } => Ok(StateSnapshot::from_exprs(u, v, w)?),
            InitSpec::File(path) => read_state(path, w),
        }
    }
}

fn combine(eigs: &[&Eigenpair], c: &[f64], w: &HWeights) -> Result<StateSnapshot> {
    let n = w.points();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut z = 0.0;
    for (e, a) in eigs.iter().zip(c) {
        u.iter_mut().zip(&e.u_part).for_each(|(x, p)| *x += a * p);
        v.iter_mut().zip(&e.v_part).for_each(|(x, p)| *x += a * p);
        z += a * e.z;
    }
    Ok(StateSnapshot::new(0.0, u, v, z, w)?)
}

/// Piecewise-linear interpolation of scattered `(x, y)` samples sorted by x.
fn interpolate(pts: &[(f64, f64)], x: f64) -> f64 {
    let i = pts.partition_point(|p| p.0 < x);
    if i == 0 {
        return pts[0].1;
    }
    if i == pts.len() {
        return pts[pts.len() - 1].1;
    }
    let (x0, y0) = pts[i - 1];
    let (x1, y1) = pts[i];
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

fn read_state(path: &PathBuf, w: &HWeights) -> Result<StateSnapshot> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading initial data {}", path.display()))?;
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut z = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with('x')) {
            continue;
        }
        let bad = || UsageError(format!("{}:{}: expected x,value,piece", path.display(), lineno + 1));
        let mut it = line.split(',');
        let (Some(x), Some(y), Some(piece), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad().into());
        };
        let x: f64 = x.trim().parse().map_err(|_| bad())?;
        let y: f64 = y.trim().parse().map_err(|_| bad())?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(bad().into());
        }
        match piece.trim() {
            "u" => left.push((x, y)),
            "v" => right.push((x, y)),
            "z" => z = Some(y),
            _ => return Err(bad().into()),
        }
    }
    if left.len() < 2 || right.len() < 2 {
        return Err(UsageError(format!("{}: need at least two samples on each rod", path.display())).into());
    }
    left.sort_by(|a, b| a.0.total_cmp(&b.0));
    right.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = w.points();
    let grid = |side: Side| -> Vec<f64> {
        let (a, b) = side.interval();
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    };
    let u: Vec<f64> = grid(Side::Left).iter().map(|&x| interpolate(&left, x)).collect();
    let v: Vec<f64> = grid(Side::Right).iter().map(|&x| interpolate(&right, x)).collect();
    let z = z.unwrap_or(0.5 * (u[n - 1] + v[0]));
    Ok(StateSnapshot::new(0.0, u, v, z, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_form() {
        assert_eq!("zero".parse::<InitSpec>().unwrap(), InitSpec::Zero);
        assert_eq!("mode:3".parse::<InitSpec>().unwrap(), InitSpec::Mode(3));
        assert_eq!("modes:1,2,3".parse::<InitSpec>().unwrap(), InitSpec::Modes(vec![1, 2, 3]));
        assert_eq!("random:5".parse::<InitSpec>().unwrap(), InitSpec::Random(5));
        assert_eq!(
            "expr:sin(pi*(x+1)); 1-x".parse::<InitSpec>().unwrap(),
            InitSpec::Expr {
                u: "sin(pi*(x+1))".into(),
                v: "1-x".into()
            }
        );
        assert_eq!("file:a.csv".parse::<InitSpec>().unwrap(), InitSpec::File("a.csv".into()));
        assert_eq!(InitSpec::Modes(vec![2, 7]).modes_needed(), 7);
    }

    #[test]
    fn rejects_malformed_specs() {
        for s in ["mode:0", "mode:x", "modes:1,1", "expr:x", "file:", "bogus", "shape:1"] {
            assert!(s.parse::<InitSpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn interpolation_is_linear_between_samples() {
        let pts = [(0.0, 1.0), (1.0, 3.0)];
        assert_eq!(interpolate(&pts, 0.25), 1.5);
        assert_eq!(interpolate(&pts, -1.0), 1.0);
        assert_eq!(interpolate(&pts, 2.0), 3.0);
    }
}
