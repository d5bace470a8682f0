mod common;

use hybrid_heat::moments::{
    build_biorthogonal, project_initial_data, synthesize_control, eigenfunction_state, MomentError,
    MomentProblem, Precision,
};
use hybrid_heat::spectrum::{spectral_report, Eigenpair};
use hybrid_heat::state::{HWeights, StateSnapshot};
use hybrid_heat::{BcVariant, CoefficientSet};

const POINTS: usize = 2001;

fn eigs(c: &CoefficientSet, variant: BcVariant, n: usize) -> Vec<Eigenpair> {
    spectral_report(c, variant, n, &common::tol()).unwrap().eigenvalues
}

fn control_for(
    c: &CoefficientSet,
    variant: BcVariant,
    e: &[Eigenpair],
    y0: &StateSnapshot,
    horizon: f64,
) -> hybrid_heat::moments::ControlSignal {
    let tol = common::tol();
    let w = HWeights::new(c, tol.grid_points);
    let coeffs = project_initial_data(y0, e, &w).unwrap();
    let p = MomentProblem::new(variant, horizon, e, coeffs, c.right.sigma.eval(1.0)).unwrap();
    let ex: Vec<f64> = e.iter().map(|x| x.lambda).collect();
    let fam = build_biorthogonal(&ex, horizon, Precision::Double, tol.gram_condition_max).unwrap();
    synthesize_control(&p, &fam, POINTS, tol.moment_residual).unwrap()
}

#[test]
fn projection_matches_closed_form_for_unit_rods() {
    // Y0 = (1 - x^2) on both rods with z = 1. The symmetric eigenfunctions
    // are A sin(k(1 -+ x)) and give <Y0, phi> = A (2 I(k) + M sin k) with
    // I(k) = int_0^1 (2s - s^2) sin(ks) ds; the odd ones give zero.
    let mass = 1.0;
    let c = common::unit(mass);
    let tol = common::tol();
    let w = HWeights::new(&c, tol.grid_points);
    let y0 = StateSnapshot::from_exprs("1 - x^2", "1 - x^2", &w).unwrap();
    let e = eigs(&c, BcVariant::Dirichlet, 8);
    let got = project_initial_data(&y0, &e, &w).unwrap();
    for (p, y) in e.iter().zip(&got) {
        let k = p.lambda.sqrt();
        let expected = if p.z.abs() < 1e-8 {
            0.0
        } else {
            let i = -k.cos() / k + 2.0 * (1.0 - k.cos()) / k.powi(3);
            let norm_sq = 2.0 * (0.5 - (2.0 * k).sin() / (4.0 * k)) + mass * k.sin().powi(2);
            let a = norm_sq.powf(-0.5) * (p.z * k.sin()).signum();
            a * (2.0 * i + mass * k.sin())
        };
        assert!((y - expected).abs() < 1e-8, "n={} {y} vs {expected}", p.index);
    }
}

#[test]
fn eigenfunctions_project_to_unit_vectors() {
    let c = common::variable();
    let tol = common::tol();
    let w = HWeights::new(&c, tol.grid_points);
    let e = eigs(&c, BcVariant::Neumann, 10);
    for (j, p) in e.iter().enumerate() {
        let y = project_initial_data(&eigenfunction_state(p, &w), &e, &w).unwrap();
        for (i, v) in y.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-8, "({i}, {j}): {v}");
        }
    }
}

#[test]
fn targets_decay_faster_than_any_exponential() {
    let c = common::unit(1.0);
    let e = eigs(&c, BcVariant::Dirichlet, 12);
    let p = MomentProblem::new(BcVariant::Dirichlet, 1.0, &e, vec![1.0; e.len()], 1.0).unwrap();
    let rates: Vec<f64> = p
        .targets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.abs() > 0.0)
        .map(|(i, d)| d.abs().ln() / (i + 1) as f64)
        .collect();
    // symmetric and odd modes alternate, so compare within each parity
    assert!((3..rates.len() - 2).all(|n| rates[n + 2] < rates[n]), "{rates:?}");
}

#[test]
fn control_is_linear_in_the_initial_state() {
    let c = common::variable();
    let tol = common::tol();
    let w = HWeights::new(&c, tol.grid_points);
    for variant in [BcVariant::Dirichlet, BcVariant::Neumann] {
        let e = eigs(&c, variant, 6);
        let a = eigenfunction_state(&e[0], &w);
        let b = eigenfunction_state(&e[2], &w);
        let sum = StateSnapshot::new(
            0.0,
            a.u.iter().zip(&b.u).map(|(x, y)| x + 3.0 * y).collect(),
            a.v.iter().zip(&b.v).map(|(x, y)| x + 3.0 * y).collect(),
            a.z + 3.0 * b.z,
            &w,
        )
        .unwrap();
        let ha = control_for(&c, variant, &e, &a, 1.0);
        let hb = control_for(&c, variant, &e, &b, 1.0);
        let hs = control_for(&c, variant, &e, &sum, 1.0);
        let hk = control_for(&c, variant, &e, &a.scale(-2.5, &w), 1.0);
        let peak = hs.h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..POINTS {
            assert!((hs.h[i] - ha.h[i] - 3.0 * hb.h[i]).abs() < 1e-9 * peak);
            assert!((hk.h[i] + 2.5 * ha.h[i]).abs() < 1e-9 * peak);
        }
    }
}

#[test]
fn zero_state_gives_zero_control() {
    let c = common::unit(1.0);
    let w = HWeights::new(&c, common::tol().grid_points);
    let e = eigs(&c, BcVariant::Dirichlet, 8);
    let h = control_for(&c, BcVariant::Dirichlet, &e, &StateSnapshot::zero(w.points()), 1.0);
    assert!(h.h.iter().all(|x| *x == 0.0));
}

#[test]
fn biorthogonality_in_double_and_extended() {
    let c = common::unit(1.0);
    let tol = common::tol();
    for (n, precision) in [(12, Precision::Double), (20, Precision::Extended)] {
        let ex: Vec<f64> = eigs(&c, BcVariant::Dirichlet, n).iter().map(|e| e.lambda).collect();
        let fam = build_biorthogonal(&ex, 1.0, precision, tol.gram_condition_max).unwrap();
        assert!(fam.biorthogonality_residual <= 1e-8, "{precision:?} {}", fam.biorthogonality_residual);
        if precision == Precision::Double {
            let q = fam.quadrature_check(1024);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((q[(i, j)] - want).abs() <= 1e-8, "({i}, {j}) {}", q[(i, j)]);
                }
            }
        }
    }
}

#[test]
fn too_many_modes_is_reported_as_conditioning() {
    let c = common::unit(1.0);
    let tol = common::tol();
    let ex: Vec<f64> = eigs(&c, BcVariant::Dirichlet, 40).iter().map(|e| e.lambda).collect();
    match build_biorthogonal(&ex, 1.0, Precision::Double, tol.gram_condition_max) {
        Err(MomentError::Conditioning { n, condition, ceiling, .. }) => {
            assert_eq!(n, 40);
            assert!(condition > ceiling);
        }
        other => panic!("expected a conditioning error, got {other:?}"),
    }
}

#[test]
fn first_mode_residuals_for_both_variants() {
    let c = common::variable();
    let w = HWeights::new(&c, common::tol().grid_points);
    for variant in [BcVariant::Dirichlet, BcVariant::Neumann] {
        let e = eigs(&c, variant, 8);
        let h = control_for(&c, variant, &e, &eigenfunction_state(&e[0], &w), 1.0);
        assert!(h.max_residual() <= 1e-8, "{variant}: {}", h.max_residual());
        assert!(h.analytic_residuals.iter().all(|r| r.abs() <= 1e-12));
    }
}
