//! Shared fixtures: the seeded corpus of smooth variable-coefficient rods.
#![allow(dead_code)]

use hybrid_heat::coeffs::{Profile, Rod};
use hybrid_heat::spline::CubicSpline;
use hybrid_heat::{CoefficientSet, Side, Tolerances};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS_SEED: u64 = 20_240_917;
pub const CORPUS_SIZE: usize = 5;
/// Relative size of the spline perturbation of each constant.
pub const PERTURBATION: f64 = 0.25;
const KNOTS: usize = 9;
const TABLE_POINTS: usize = 65;

pub fn unit(mass: f64) -> CoefficientSet {
    CoefficientSet::uniform(1.0, 1.0, 0.0, mass)
}

pub fn tol() -> Tolerances {
    Tolerances::default()
}

/// `base * (1 + PERTURBATION * s(x))` where `s` is a natural spline through
/// random knot values in `[-1, 1]`, tabulated for the profile. The factor
/// is floored at 0.5 so positivity never depends on the draw.
fn perturbed(rng: &mut ChaCha8Rng, base: f64, side: Side) -> Profile {
    let (a, b) = side.interval();
    let kx: Vec<f64> = (0..KNOTS).map(|i| a + (b - a) * i as f64 / (KNOTS - 1) as f64).collect();
    let ky: Vec<f64> = (0..KNOTS).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = CubicSpline::natural(&kx, &ky).expect("knots are increasing");
    let x: Vec<f64> = (0..TABLE_POINTS)
        .map(|i| a + (b - a) * i as f64 / (TABLE_POINTS - 1) as f64)
        .collect();
    let y: Vec<f64> = x.iter().map(|&t| base * (1.0 + PERTURBATION * s.eval(t)).max(0.5)).collect();
    Profile::table(x, y).expect("tabulated profile")
}

fn rod(rng: &mut ChaCha8Rng, side: Side) -> Rod {
    let rho = rng.gen_range(0.5..2.0);
    let sigma = rng.gen_range(0.5..2.0);
    let q = rng.gen_range(0.0..1.0);
    Rod::new(perturbed(rng, rho, side), perturbed(rng, sigma, side), perturbed(rng, q, side))
}

/// The five seeded coefficient sets used by the certification checks.
pub fn corpus() -> Vec<CoefficientSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    (0..CORPUS_SIZE)
        .map(|_| {
            let left = rod(&mut rng, Side::Left);
            let right = rod(&mut rng, Side::Right);
            let mass = rng.gen_range(0.5..2.0);
            let (c, _) = CoefficientSet::new(left, right, mass).expect("corpus entries are valid");
            c
        })
        .collect()
}

/// Smooth mid-sized coefficients used where one fixed variable case is enough.
pub fn variable() -> CoefficientSet {
    let left = Rod::from_exprs("1 + 0.3*sin(3*x)", "1 + 0.2*x^2", "0.5").unwrap();
    let right = Rod::from_exprs("2 + 0.5*cos(2*x)", "exp(0.3*x)", "0").unwrap();
    CoefficientSet::new(left, right, 0.5).unwrap().0
}
