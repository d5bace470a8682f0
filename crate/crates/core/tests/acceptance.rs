//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line
//! with the measured numbers, then fails if the criterion is not met.

mod common;

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use hybrid_heat::coeffs::{load_config, travel_times};
use hybrid_heat::moments::{
    build_biorthogonal, eigenfunction_state, project_initial_data, synthesize_control, ControlSignal,
    MomentProblem, Precision,
};
use hybrid_heat::shooting::{wkb_envelope_fit, ShootOptions};
use hybrid_heat::simulator::{simulate_fd, simulate_galerkin, verify_null_control, VerifyOptions};
use hybrid_heat::spectrum::{auxiliary_spectra, characteristic_f, df_closed_form, spectral_report};
use hybrid_heat::state::{HWeights, StateSnapshot};
use hybrid_heat::{BcVariant, CoefficientSet, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARIANTS: [BcVariant; 2] = [BcVariant::Dirichlet, BcVariant::Neumann];

fn verdict(n: usize, pass: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The shipped example problems.
fn shipped() -> Vec<(String, CoefficientSet, BcVariant)> {
    ["constant_dirichlet.toml", "constant_neumann.toml", "variable_dirichlet.toml"]
        .iter()
        .map(|n| {
            let cfg = load_config(config_path(n)).unwrap();
            (n.to_string(), cfg.coefficients, cfg.bc)
        })
        .collect()
}

/// Root of `2 cos k - k sin k` on `(a, b)` by plain bisection; this is
/// `2 sqrt(l) cot sqrt(l) = l` multiplied by `sin k / k`.
fn bisect_constant_root(mut a: f64, mut b: f64) -> f64 {
    let g = |k: f64| 2.0 * k.cos() - k * k.sin();
    let ga = g(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == (ga > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

#[test]
fn criterion_01_constant_coefficient_oracle() {
    let start = Instant::now();
    let c = common::unit(1.0);
    let report = spectral_report(&c, BcVariant::Dirichlet, 10, &common::tol()).unwrap();
    // one root of the characteristic equation in each ((j-1) pi, j pi)
    // in k, and the doubled auxiliary value (j pi)^2 after it
    let mut oracle = Vec::new();
    for j in 1..=5 {
        let k = bisect_constant_root((j - 1) as f64 * PI + 1e-12, j as f64 * PI - 1e-12);
        oracle.push(k * k);
        oracle.push((j as f64 * PI).powi(2));
    }
    let worst = report
        .lambdas()
        .iter()
        .zip(&oracle)
        .map(|(l, o)| (l / o - 1.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        1,
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_interpolation_chain_on_the_corpus() {
    let start = Instant::now();
    let tol = common::tol();
    let mut violations = Vec::new();
    let mut tightest = f64::INFINITY;
    for (i, c) in common::corpus().iter().enumerate() {
        for variant in VARIANTS {
            let r = spectral_report(c, variant, 30, &tol).unwrap();
            let mu = &r.auxiliary.gamma_merged;
            for k in 0..30 {
                let (l, lr) = (r.eigenvalues[k].lambda, r.regular_eigenvalues[k]);
                let lo = if k == 0 { 0.0 } else { mu[k - 1] };
                let hi = mu[k];
                let margin = tol.coincidence * (1.0 + hi);
                let gap = (l - lo).min(lr - l).min(hi - lr);
                tightest = tightest.min(gap / margin);
                if !(l - lo > margin && lr - l > margin && hi - lr > margin) {
                    violations.push(format!("set {i} {variant} n={}", k + 1));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        violations.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} violations {:?}, tightest separation {tightest:.1e} tolerances, {:.1} s",
            violations.len(),
            violations,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_03_gap_is_positive_and_reproducible() {
    let tol = common::tol();
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, c) in common::corpus().iter().enumerate() {
        for variant in VARIANTS {
            let a = spectral_report(c, variant, 30, &tol).unwrap();
            let b = spectral_report(c, variant, 30, &tol).unwrap();
            let independent = a.lambdas().windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
            let drift = (a.min_gap - b.min_gap).abs() / a.min_gap;
            ok &= a.min_gap > 0.0 && drift <= 1e-9 && (independent - a.min_gap).abs() <= 1e-9 * a.min_gap;
            lines.push(format!("set {i} {variant} delta={:.6} drift={drift:.1e}", a.min_gap));
        }
    }
    verdict(3, ok, lines.join("; "));
}

#[test]
fn criterion_04_eigenvalue_asymptotics() {
    let tol = common::tol();
    let mut ok = true;
    let mut lines = Vec::new();
    for (i, c) in common::corpus().iter().enumerate() {
        let g = travel_times(c).unwrap().total();
        for variant in VARIANTS {
            let r = spectral_report(c, variant, 30, &tol).unwrap();
            let ratios: Vec<f64> = (20..=30)
                .map(|n| {
                    let l = r.eigenvalues[n - 1].lambda;
                    let a = match variant {
                        BcVariant::Dirichlet => n as f64 * PI / g,
                        BcVariant::Neumann => (2 * n + 1) as f64 * PI / (2.0 * g),
                    };
                    l / (a * a)
                })
                .collect();
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(0.0, f64::max);
            let good = lo >= 0.85 && hi <= 1.15;
            ok &= good;
            lines.push(format!("set {i} {variant} [{lo:.3}, {hi:.3}]{}", if good { "" } else { " out of band" }));
        }
    }
    verdict(4, ok, lines.join("; "));
}

#[test]
fn criterion_05_orthonormality() {
    let tol = common::tol();
    let mut sets = vec![common::unit(1.0), common::variable()];
    sets.extend(common::corpus());
    let mut worst: f64 = 0.0;
    for c in &sets {
        let w = HWeights::new(c, tol.grid_points);
        for variant in VARIANTS {
            let e = spectral_report(c, variant, 12, &tol).unwrap().eigenvalues;
            for (i, a) in e.iter().enumerate() {
                for (j, b) in e.iter().enumerate() {
                    let g = w.inner(&a.u_part, &a.v_part, a.z, &b.u_part, &b.v_part, b.z);
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((g - want).abs());
                }
            }
        }
    }
    verdict(5, worst <= 1e-7, format!("max |G - I| = {worst:.2e} over {} sets", sets.len()));
}

/// Fourth-order central difference of `F` with a step tied to the local
/// pole spacing.
fn fd_derivative(c: &CoefficientSet, variant: BcVariant, lambda: f64, h: f64) -> f64 {
    let tol = common::tol();
    let f = |l: f64| characteristic_f(c, l, variant, &tol).unwrap();
    (8.0 * (f(lambda + h) - f(lambda - h)) - (f(lambda + 2.0 * h) - f(lambda - 2.0 * h))) / (12.0 * h)
}

#[test]
fn criterion_06_derivative_identity() {
    let tol = common::tol();
    let mut configs = shipped();
    for (i, c) in common::corpus().into_iter().enumerate() {
        for variant in VARIANTS {
            configs.push((format!("corpus {i}"), c.clone(), variant));
        }
    }
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (k, (_, c, variant)) in configs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + k as u64);
        let aux = auxiliary_spectra(c, *variant, 10, &tol).unwrap();
        let mut poles = vec![0.0];
        poles.extend(aux.gamma_merged.iter().take(10));
        let mut taken = 0;
        while taken < 10 {
            let j = rng.gen_range(0..poles.len() - 1);
            let (a, b) = (poles[j], poles[j + 1]);
            if b - a < 1e-6 * b {
                continue;
            }
            // keep at least 5% of the interval away from either pole
            let lambda = a + (b - a) * rng.gen_range(0.05..0.95);
            let exact = df_closed_form(c, lambda, *variant, &tol).unwrap();
            let approx = fd_derivative(c, *variant, lambda, 1e-3 * (b - a));
            worst = worst.max((approx - exact).abs() / exact.abs());
            taken += 1;
            points += 1;
        }
    }
    verdict(
        6,
        worst <= 1e-5,
        format!("max relative error {worst:.2e} at {points} points over {} configs", configs.len()),
    );
}

#[test]
fn criterion_07_moment_exactness() {
    let tol = common::tol();
    let c = common::unit(1.0);
    let w = HWeights::new(&c, tol.grid_points);
    let mut lines = Vec::new();
    let mut ok = true;
    for variant in VARIANTS {
        let e = spectral_report(&c, variant, 8, &tol).unwrap().eigenvalues;
        let y0 = eigenfunction_state(&e[0], &w);
        let a0 = project_initial_data(&y0, &e, &w).unwrap();
        let problem = MomentProblem::new(variant, 1.0, &e, a0, c.right.sigma.eval(1.0)).unwrap();
        let family = build_biorthogonal(&problem.exponents, 1.0, Precision::Double, tol.gram_condition_max).unwrap();
        let control = synthesize_control(&problem, &family, tol.time_points, 1.0).unwrap();
        let r = control.max_residual();
        ok &= r <= 1e-8;
        lines.push(format!("{variant} max residual {r:.2e}"));
    }
    verdict(7, ok, lines.join("; "));
}

#[test]
fn criterion_08_null_control_verification() {
    let start = Instant::now();
    let tol = common::tol();
    let opts = VerifyOptions::default();
    let mut ok = true;
    let mut lines = Vec::new();
    for variant in VARIANTS {
        let c = common::unit(1.0);
        let n = 8;
        let e = spectral_report(&c, variant, n + opts.extra_modes, &tol).unwrap().eigenvalues;
        let w = HWeights::new(&c, tol.grid_points);
        let y0 = eigenfunction_state(&e[0], &w);
        let r = verify_null_control(&c, variant, &e, &y0, 1.0, n, &opts, &tol).unwrap().report;
        let modal = r.modal_terminal_energy <= 1e-10 * r.initial_energy;
        let fd = r.fd_terminal_energy <= 10.0 * r.tail_bound;
        let baseline = r.baseline_energy >= 1e4 * r.modal_terminal_energy;
        ok &= modal && fd && baseline;
        lines.push(format!(
            "{variant} modal {:.2e}, fd {:.2e} vs tail bound {:.2e}, baseline ratio {:.2e}",
            r.modal_terminal_energy / r.initial_energy,
            r.fd_terminal_energy,
            r.tail_bound,
            r.baseline_energy / r.modal_terminal_energy,
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    lines.push(format!("{:.1} s", elapsed.as_secs_f64()));
    verdict(8, ok, lines.join("; "));
}

#[test]
fn criterion_09_wkb_validation() {
    let opts = ShootOptions::default();
    let mut sets = vec![("variable".to_string(), common::variable())];
    sets.extend(common::corpus().into_iter().enumerate().map(|(i, c)| (format!("corpus {i}"), c)));
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, c) in &sets {
        for variant in VARIANTS {
            for side in [Side::Left, Side::Right] {
                if side == Side::Left && variant == BcVariant::Neumann {
                    // the left rod does not depend on the variant
                    continue;
                }
                let fit = wkb_envelope_fit(c, side, variant, (1e4, 1.6e5), 8, 24, &opts).unwrap();
                let good = (-0.65..=-0.35).contains(&fit.slope);
                ok &= good;
                lines.push(format!("{name} {variant} {side:?} {:.3}", fit.slope));
            }
        }
    }
    verdict(9, ok, format!("slopes: {}", lines.join(", ")));
}

#[test]
fn criterion_10_dissipativity() {
    let tol = common::tol();
    let mut increases = 0;
    let mut steps = 0;
    for c in common::corpus() {
        let w = HWeights::new(&c, tol.grid_points);
        let y0 = StateSnapshot::from_exprs("1 + sin(5*x) + x", "exp(x) * cos(4*x)", &w).unwrap();
        for variant in VARIANTS {
            let e = spectral_report(&c, variant, 16, &tol).unwrap().eigenvalues;
            let zero = ControlSignal::zero(variant, 1.0, 1001);
            let g = simulate_galerkin(&c, variant, &e, &y0, &zero, 1.0, 16, &w, 64).unwrap();
            let f = simulate_fd(&c, variant, &y0, &zero, 1.0, 128, 1024, &[], &w, 64).unwrap();
            for r in [&g, &f] {
                increases += r.energy_increases();
                steps += r.step_energies.len() - 1;
                let stored: Vec<f64> = r.trajectory.iter().map(|s| s.energy_h).collect();
                increases += stored.windows(2).filter(|p| p[1] > p[0] * (1.0 + 1e-13)).count();
            }
        }
    }
    verdict(10, increases == 0, format!("{increases} increases over {steps} steps"));
}
