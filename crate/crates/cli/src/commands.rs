use anyhow::{Context, Result};
use hybrid_heat::coeffs::load_config;
use hybrid_heat::expr::Expr;
use hybrid_heat::moments::{
    build_biorthogonal, project_initial_data, synthesize_control, ControlSignal, MomentProblem,
};
use hybrid_heat::simulator::{simulate_fd, simulate_galerkin, verify_null_control, SimulationResult, VerifyOptions};
use hybrid_heat::spectrum::spectral_report;
use hybrid_heat::state::{HWeights, StateSnapshot};
use hybrid_heat::{ProblemConfig, SpectralReport};
use serde::Serialize;
use serde_json::json;

use crate::init::InitSpec;
use crate::output::Staging;
use crate::{Cli, Command, ProblemArgs, UsageError};

/// Runs the selected command; `Ok(false)` means the run finished but a
/// certification check failed.
pub fn run(cli: &Cli, out: &mut Staging) -> Result<bool> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| UsageError("--config is required".into()))?;
    let mut cfg = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(v) = cli.variant {
        cfg.bc = v;
    }
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    out.phase("load");
    match &cli.command {
        Command::Spectrum { n_max, eigenfunctions } => spectrum(&cfg, *n_max, *eigenfunctions, out),
        Command::GapReport { n_max } => gap_report(&cfg, *n_max, out),
        Command::Control { problem } => control(cli, &cfg, problem, out),
        Command::Simulate {
            problem,
            input,
            method,
            nx,
            nt,
        } => simulate(cli, &cfg, problem, input, method, *nx, *nt, out),
        Command::Verify {
            problem,
            nx,
            nt,
            extra_modes,
        } => verify(cli, &cfg, problem, *nx, *nt, *extra_modes, out),
    }
}

fn report(cfg: &ProblemConfig, n_max: usize, out: &mut Staging) -> Result<SpectralReport> {
    if n_max < 2 {
        return Err(UsageError(format!("--n-max must be at least 2, got {n_max}")).into());
    }
    let r = spectral_report(&cfg.coefficients, cfg.bc, n_max, &cfg.tolerances)?;
    out.phase("spectrum");
    Ok(r)
}

fn violations(r: &SpectralReport) -> Vec<usize> {
    r.interpolation_ok
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k + 1)
        .collect()
}

fn min_gap_index(r: &SpectralReport) -> usize {
    r.gaps
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k + 1)
}

fn spectrum(cfg: &ProblemConfig, n_max: usize, eigenfunctions: usize, out: &mut Staging) -> Result<bool> {
    let r = report(cfg, n_max, out)?;
    out.write_with("spectrum.csv", |w| r.write_csv(w))?;
    for e in r.eigenvalues.iter().take(eigenfunctions) {
        out.write_with(&format!("eigenfunction_{:03}.csv", e.index), |w| e.write_csv(w))?;
    }
    let bad = violations(&r);
    let certified = bad.is_empty() && r.min_gap > 0.0;
    out.write_json(
        "spectrum.json",
        &json!({
            "certified": certified,
            "interpolation_violations": bad,
            "min_gap": r.min_gap,
            "min_gap_index": min_gap_index(&r),
            "warnings": cfg.warnings,
            "report": r,
        }),
    )?;
    Ok(certified)
}

fn gap_report(cfg: &ProblemConfig, n_max: usize, out: &mut Staging) -> Result<bool> {
    let r = report(cfg, n_max, out)?;
    let l = r.lambdas();
    out.write_with("gaps.csv", |w| {
        writeln!(w, "n,lambda_n,lambda_next,gap,sqrt_gap,interpolation_ok")?;
        for (k, g) in r.gaps.iter().enumerate() {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                k + 1,
                l[k],
                l[k + 1],
                g,
                l[k + 1].sqrt() - l[k].sqrt(),
                r.interpolation_ok[k]
            )?;
        }
        Ok(())
    })?;
    let bad = violations(&r);
    let certified = bad.is_empty() && r.min_gap > 0.0;
    let sqrt_gaps: Vec<f64> = l.windows(2).map(|p| p[1].sqrt() - p[0].sqrt()).collect();
    out.write_json(
        "gap_report.json",
        &json!({
            "variant": cfg.bc,
            "n_max": n_max,
            "mass": cfg.coefficients.mass,
            "travel": r.travel,
            "min_gap": r.min_gap,
            "min_gap_index": min_gap_index(&r),
            "min_sqrt_gap": sqrt_gaps.iter().copied().fold(f64::INFINITY, f64::min),
            "asymptotic_sqrt_gap": std::f64::consts::PI / r.travel.total(),
            "interpolation_violations": bad,
            "coincident_pairs": r.auxiliary.coincident_pairs,
            "certified": certified,
        }),
    )?;
    Ok(certified)
}

struct Prepared {
    n: usize,
    horizon: f64,
    report: SpectralReport,
    weights: HWeights,
    y0: StateSnapshot,
}

fn prepare(cli: &Cli, cfg: &ProblemConfig, p: &ProblemArgs, extra: usize, out: &mut Staging) -> Result<Prepared> {
    let n = p.n_modes.unwrap_or(cfg.n_modes);
    let horizon = p.horizon.unwrap_or(cfg.horizon);
    if n == 0 {
        return Err(UsageError("--n-modes must be at least 1".into()).into());
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(UsageError(format!("--horizon must be positive, got {horizon}")).into());
    }
    let report = report(cfg, (n + extra).max(p.init.modes_needed()).max(2), out)?;
    let weights = HWeights::new(&cfg.coefficients, cfg.tolerances.grid_points);
    let y0 = p.init.build(&report.eigenvalues, &weights, cli.seed)?;
    if let InitSpec::Expr { .. } | InitSpec::File(_) = p.init {
        let defect = y0.continuity_defect();
        if defect > 1e-6 * (1.0 + y0.energy_h.sqrt()) {
            log::warn!("initial data is discontinuous at the mass (defect {defect:e}); z is the average");
        }
    }
    Ok(Prepared {
        n,
        horizon,
        report,
        weights,
        y0,
    })
}

fn synthesize(cli: &Cli, cfg: &ProblemConfig, pr: &Prepared, out: &mut Staging) -> Result<(ControlSignal, f64)> {
    let eigs = &pr.report.eigenvalues[..pr.n];
    let a0 = project_initial_data(&pr.y0, eigs, &pr.weights)?;
    let s2 = cfg.coefficients.right.sigma.eval(1.0);
    let problem = MomentProblem::new(cfg.bc, pr.horizon, eigs, a0, s2)?;
    let family = build_biorthogonal(&problem.exponents, pr.horizon, cli.precision, cfg.tolerances.gram_condition_max)?;
    let control = synthesize_control(&problem, &family, cfg.tolerances.time_points, cfg.tolerances.moment_residual)?;
    out.phase("moments");
    Ok((control, family.biorthogonality_residual))
}

fn control(cli: &Cli, cfg: &ProblemConfig, p: &ProblemArgs, out: &mut Staging) -> Result<bool> {
    let pr = prepare(cli, cfg, p, 0, out)?;
    let (control, biorth) = synthesize(cli, cfg, &pr, out)?;
    out.write_with("control.csv", |w| control.write_csv(w))?;
    out.write_json(
        "moments.json",
        &json!({
            "n_modes": pr.n,
            "initial_energy": pr.y0.energy_h,
            "biorthogonality_residual": biorth,
            "report": control.report(),
        }),
    )?;
    Ok(true)
}

#[derive(Debug, Serialize)]
struct RunSummary {
    method: &'static str,
    terminal_energy: f64,
    tail_energy: f64,
    terminal_modes: Vec<f64>,
    energy_increases: usize,
    flux_jump_residual: Option<f64>,
}

impl RunSummary {
    fn of(method: &'static str, r: &SimulationResult) -> Self {
        RunSummary {
            method,
            terminal_energy: r.terminal.energy_h,
            tail_energy: r.tail_energy,
            terminal_modes: r.modal_history.last().cloned().unwrap_or_default(),
            energy_increases: r.energy_increases(),
            flux_jump_residual: r.flux_jump_residual,
        }
    }
}

fn write_run(out: &mut Staging, tag: &str, r: &SimulationResult) -> Result<()> {
    out.write_with(&format!("trajectory_{tag}.csv"), |w| r.write_trajectory_csv(w))?;
    out.write_with(&format!("terminal_{tag}.csv"), |w| r.write_terminal_csv(w))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    cli: &Cli,
    cfg: &ProblemConfig,
    p: &ProblemArgs,
    input: &str,
    method: &str,
    nx: usize,
    nt: usize,
    out: &mut Staging,
) -> Result<bool> {
    let (galerkin, fd) = match method {
        "galerkin" => (true, false),
        "fd" => (false, true),
        "both" => (true, true),
        m => return Err(UsageError(format!("--method must be galerkin, fd or both, got {m}")).into()),
    };
    let pr = prepare(cli, cfg, p, 0, out)?;
    let points = cfg.tolerances.time_points;
    let (h, zero_input) = match input {
        "zero" => (ControlSignal::zero(cfg.bc, pr.horizon, points), true),
        "control" => (synthesize(cli, cfg, &pr, out)?.0, false),
        s => match s.strip_prefix("expr:") {
            Some(src) => {
                let e = Expr::parse_in(src, "t").map_err(|e| UsageError(format!("--input {s}: {e}")))?;
                (ControlSignal::from_samples(cfg.bc, pr.horizon, |t| e.eval(t), points), false)
            }
            None => return Err(UsageError(format!("--input must be zero, control or expr:H, got {s}")).into()),
        },
    };
    let c = &cfg.coefficients;
    let eigs = &pr.report.eigenvalues[..pr.n];
    let mut runs = Vec::new();
    let mut ok = true;
    if galerkin {
        let r = simulate_galerkin(c, cfg.bc, eigs, &pr.y0, &h, pr.horizon, pr.n, &pr.weights, 64)?;
        out.phase("galerkin");
        write_run(out, "galerkin", &r)?;
        ok &= !zero_input || r.energy_increases() == 0;
        runs.push(RunSummary::of("galerkin", &r));
    }
    if fd {
        let r = simulate_fd(c, cfg.bc, &pr.y0, &h, pr.horizon, nx, nt, eigs, &pr.weights, 64)?;
        out.phase("fd");
        write_run(out, "fd", &r)?;
        ok &= !zero_input || r.energy_increases() == 0;
        runs.push(RunSummary::of("fd", &r));
    }
    if !zero_input {
        out.write_with("control.csv", |w| h.write_csv(w))?;
    }
    out.write_json(
        "simulation.json",
        &json!({
            "variant": cfg.bc,
            "horizon": pr.horizon,
            "n_modes": pr.n,
            "input": input,
            "initial_energy": pr.y0.energy_h,
            "nx": nx,
            "nt": nt,
            "dissipative": ok,
            "runs": runs,
        }),
    )?;
    Ok(ok)
}

fn verify(
    cli: &Cli,
    cfg: &ProblemConfig,
    p: &ProblemArgs,
    nx: usize,
    nt: usize,
    extra_modes: usize,
    out: &mut Staging,
) -> Result<bool> {
    let pr = prepare(cli, cfg, p, extra_modes, out)?;
    let opts = VerifyOptions {
        nx,
        nt,
        extra_modes,
        precision: cli.precision,
        snapshots: 64,
    };
    let v = verify_null_control(
        &cfg.coefficients,
        cfg.bc,
        &pr.report.eigenvalues,
        &pr.y0,
        pr.horizon,
        pr.n,
        &opts,
        &cfg.tolerances,
    )?;
    out.phase("verify");
    out.write_with("control.csv", |w| v.control.write_csv(w))?;
    write_run(out, "galerkin", &v.galerkin)?;
    write_run(out, "fd", &v.fd)?;
    out.write_json("verification.json", &json!({ "options": opts, "report": v.report }))?;
    Ok(v.report.pass)
}
