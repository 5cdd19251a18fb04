//! Batch commands. Each reads a [`RunConfig`], computes, and writes
//! `config.json`, `report.json` and its fields/tables into the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{CoefficientSpec, RunConfig};
use crate::cc_solver::{profiles, solve_cc, CCProblem};
use crate::coefficients::b_tensor;
use crate::diagnostics::{
    bootstrap_report, higher_order_probe, lemma_suite, refinement_study, BootstrapReport, LemmaSuite,
    ProbeReport, RefinementStudy,
};
use crate::ellipticity::{certify_region, HessianSampler, Verdict};
use crate::error::{Error, Result};
use crate::fields::{hessian, read_field, write_field, write_field_csv, DecayProfile, Grid, ScalarField};
use crate::symtensor::Tensor4;
use crate::var_solver::{minimize, weak_residual, Pairing, SolveStatus, SolveTrace, VarProblem, VarSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Certify,
    SolveCc,
    SolveVar,
    Diagnose,
    LemmaCheck,
}

/// Whether the command's check passed, plus a one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub success: bool,
    pub summary: String,
}

/// Exit code: 0 on success, 1 when the run completed but its check failed,
/// 2 when it could not run.
pub fn exit_code(result: &Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.success => 0,
        Ok(_) => 1,
        Err(_) => 2,
    }
}

/// Reads the config file and runs `cmd` into `out`.
pub fn run_file(cmd: Command, config: &Path, out: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
    run(cmd, &text, out)
}

pub fn run(cmd: Command, config_text: &str, out: &Path) -> Result<Outcome> {
    let cfg = RunConfig::parse(config_text)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_json())?;
    match cmd {
        Command::Certify => certify(&cfg, out),
        Command::SolveCc => solve_cc_cmd(&cfg, out),
        Command::SolveVar => solve_var_cmd(&cfg, out),
        Command::Diagnose => diagnose(&cfg, out),
        Command::LemmaCheck => lemma(&cfg, out),
    }
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_fields(out: &Path, stem: &str, u: &ScalarField) -> Result<()> {
    write_field(&out.join(format!("{stem}.bin")), u)?;
    write_field_csv(&out.join(format!("{stem}.csv")), u)
}

fn certify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let f = cfg.functional()?;
    let sampler = HessianSampler {
        dim: cfg.grid.n,
        mode: cfg.certify.sampler.clone(),
        count: cfg.certify.count,
        seed: cfg.seed,
    };
    let report = certify_region(&*f, &sampler, cfg.certify.threshold)?;
    write_json(out.join("report.json"), &report)?;
    Ok(Outcome {
        success: report.verdict != Verdict::Fails,
        summary: format!(
            "{} on {}: {:?} (legendre {:.6}, b+ {:.6}, b- {:.6})",
            report.functional,
            report.region,
            report.verdict,
            report.lambda_legendre,
            report.lambda_b_plus,
            report.lambda_b_minus
        ),
    })
}

#[derive(Serialize)]
struct CcReport {
    status: &'static str,
    message: Option<String>,
    residual_norm: Option<f64>,
    solver_iterations: Option<usize>,
    unknowns: Option<usize>,
    lambda: Option<f64>,
    energy: Option<DecayProfile>,
    oscillation: Option<DecayProfile>,
}

fn solve_cc_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let n = grid.n();
    let data = cfg.sample(&cfg.boundary, grid)?;
    let c0 = match &cfg.cc.coefficients {
        CoefficientSpec::Identity => Tensor4::identity_pairing(n),
        CoefficientSpec::FrozenB { hessian } => b_tensor(&*cfg.functional()?, hessian)?.major_symmetrized(),
    };
    let region = cfg.region();
    let problem = CCProblem { c0, region: region.clone(), boundary_data: data };
    let sol = match solve_cc(&problem, cfg.cc.tol) {
        Ok(sol) => sol,
        Err(Error::NotConverged { message, best }) => {
            write_fields(out, "w", &best)?;
            let report = CcReport {
                status: "not_converged",
                message: Some(message.clone()),
                residual_norm: None,
                solver_iterations: None,
                unknowns: None,
                lambda: None,
                energy: None,
                oscillation: None,
            };
            write_json(out.join("report.json"), &report)?;
            return Ok(Outcome { success: false, summary: format!("solve-cc did not converge: {message}") });
        }
        Err(e) => return Err(e),
    };
    write_fields(out, "w", &sol.w)?;
    let (energy, oscillation) = if cfg.cc.radii.is_empty() {
        (None, None)
    } else {
        let (e, o) = profiles(&hessian(&sol.w)?, &region.center, &cfg.cc.radii)?;
        (Some(e), Some(o))
    };
    let report = CcReport {
        status: "converged",
        message: None,
        residual_norm: Some(sol.residual_norm),
        solver_iterations: Some(sol.solver_iterations),
        unknowns: Some(sol.unknowns),
        lambda: Some(sol.lambda),
        energy,
        oscillation,
    };
    write_json(out.join("report.json"), &report)?;
    Ok(Outcome {
        success: true,
        summary: format!(
            "solve-cc: {} unknowns, {} iterations, relative residual {:.3e}",
            sol.unknowns, sol.solver_iterations, sol.residual_norm
        ),
    })
}

#[derive(Serialize)]
struct VarReport<'a> {
    functional: &'a str,
    h: f64,
    status: SolveStatus,
    iterations: usize,
    final_energy: f64,
    final_gradient: f64,
    weak_residual_discrete: f64,
    weak_residual_analytic: f64,
    /// `max |u* − boundary data|` over the whole grid.
    distance_to_data: f64,
    fd_check_error: Option<f64>,
    warnings: &'a [String],
}

fn solve_var_at(cfg: &RunConfig, grid: Grid) -> Result<(VarProblem, VarSolution)> {
    let data = cfg.sample(&cfg.boundary, grid)?;
    let init = match &cfg.init {
        Some(e) => cfg.sample(e, grid)?,
        None => data.clone(),
    };
    let problem =
        VarProblem { f: cfg.functional()?, boundary_data: data, init, hessian_bound: cfg.var.hessian_bound };
    let sol = minimize(&problem, &cfg.var.minimize)?;
    Ok((problem, sol))
}

fn trace_csv(trace: &SolveTrace) -> String {
    let mut s = String::from("iteration,energy,grad_norm,decrease,decrease_measured,step,max_hessian\n");
    for k in 0..trace.energy.len() {
        let (dec, measured, step) = if k == 0 {
            (String::new(), String::new(), String::new())
        } else {
            (
                format!("{:.17e}", trace.decrease[k - 1]),
                trace.decrease_from_energy[k - 1].to_string(),
                format!("{:.17e}", trace.step[k - 1]),
            )
        };
        let _ = writeln!(
            s,
            "{k},{:.17e},{:.17e},{dec},{measured},{step},{:.17e}",
            trace.energy[k], trace.grad_norm[k], trace.max_hessian[k]
        );
    }
    s
}

fn solve_var_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let (problem, sol) = solve_var_at(cfg, grid)?;
    write_fields(out, "u", &sol.u)?;
    fs::write(out.join("trace.csv"), trace_csv(&sol.trace))?;
    let report = VarReport {
        functional: problem.f.name(),
        h: grid.h(),
        status: sol.trace.status,
        iterations: sol.trace.iterations,
        final_energy: *sol.trace.energy.last().unwrap(),
        final_gradient: *sol.trace.grad_norm.last().unwrap(),
        weak_residual_discrete: weak_residual(&problem, &sol.u, cfg.var.test_count, Pairing::Discrete)?,
        weak_residual_analytic: weak_residual(&problem, &sol.u, cfg.var.test_count, Pairing::Analytic)?,
        distance_to_data: sol.u.sup_distance(&problem.boundary_data),
        fd_check_error: sol.trace.fd_check_error,
        warnings: &sol.trace.warnings,
    };
    write_json(out.join("report.json"), &report)?;
    Ok(Outcome {
        success: sol.trace.status == SolveStatus::Converged,
        summary: format!(
            "solve-var: {:?} after {} iterations, gradient {:.3e}",
            sol.trace.status, sol.trace.iterations, report.final_gradient
        ),
    })
}

#[derive(Serialize)]
struct DiagnoseReport {
    levels: Vec<BootstrapReport>,
    refinement: Option<RefinementStudy>,
    probes: Vec<ProbeReport>,
    /// Coarse-to-fine ratio of probe residuals (refined runs only).
    probe_ratio: Option<f64>,
    probe_pass: bool,
    lemma: Option<LemmaSuite>,
    pass: bool,
}

fn profiles_csv(levels: &[BootstrapReport]) -> String {
    let mut s = String::from("h,axis,kind,radius,value\n");
    for r in levels {
        for d in &r.directions {
            for (kind, p) in [("energy", &d.energy), ("oscillation", &d.oscillation)] {
                for (rad, v) in p.radii.iter().zip(&p.values) {
                    let _ = writeln!(s, "{:.17e},{},{kind},{:.17e},{:.17e}", r.h, d.axis, rad, v);
                }
            }
        }
    }
    s
}

/// Minimum ratio of coarse to fine probe residuals a refinement must show.
const PROBE_REFINEMENT_RATIO: f64 = 1.5;

fn diagnose(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let f = cfg.functional()?;
    let spec = &cfg.diagnose;
    let mut fields = Vec::new();
    match &spec.field {
        Some(path) => {
            if spec.refine {
                return Err(Error::Config("diagnose.refine needs an inline solve, not a field file".into()));
            }
            let u = read_field(Path::new(path))
                .map_err(|e| Error::Config(format!("cannot read field {path}: {e}")))?;
            fields.push(u);
        }
        None => {
            let grid = cfg.grid()?;
            let mut grids = vec![grid];
            if spec.refine {
                grids.push(Grid::new(grid.n(), 2 * grid.m() - 1)?);
            }
            for g in grids {
                let (_, sol) = solve_var_at(cfg, g)?;
                if sol.trace.status != SolveStatus::Converged {
                    return Ok(Outcome {
                        success: false,
                        summary: format!("diagnose: inline solve at h = {} ended with {:?}", g.h(), sol.trace.status),
                    });
                }
                fields.push(sol.u);
            }
        }
    }
    let levels: Vec<BootstrapReport> =
        fields.iter().map(|u| bootstrap_report(u, &*f, spec.alpha, &spec.bootstrap)).collect::<Result<_>>()?;
    let refinement =
        if levels.len() > 1 { Some(refinement_study(&levels, spec.bootstrap.tol_holder)?) } else { None };
    let probes: Vec<ProbeReport> = match &spec.probe {
        Some(p) => fields.iter().map(|u| higher_order_probe(u, &*f, p.order, &p.config)).collect::<Result<_>>()?,
        None => Vec::new(),
    };
    let probe_ratio = match probes.as_slice() {
        [a, b] if b.residual > 0.0 => Some(a.residual / b.residual),
        [a, b] if a.residual == 0.0 && b.residual == 0.0 => Some(f64::INFINITY),
        _ => None,
    };
    let probe_pass = probe_ratio.is_none_or(|r| r >= PROBE_REFINEMENT_RATIO);
    let lemma = if spec.lemma { Some(lemma_suite(cfg.seed, cfg.lemma.cases, cfg.lemma.samples)?) } else { None };
    let pass = levels.iter().all(|r| r.pass)
        && refinement.as_ref().is_none_or(|s| s.holder_stable)
        && probe_pass
        && lemma.as_ref().is_none_or(|l| l.counterexamples == 0);
    fs::write(out.join("profiles.csv"), profiles_csv(&levels))?;
    let report = DiagnoseReport { levels, refinement, probes, probe_ratio, probe_pass, lemma, pass };
    write_json(out.join("report.json"), &report)?;
    let first = &report.levels[0];
    Ok(Outcome {
        success: pass,
        summary: format!(
            "diagnose: {} (oscillation exponents {:?}, holder D3u {:.4})",
            if pass { "pass" } else { "fail" },
            first.directions.iter().map(|d| d.oscillation.fitted_exponent).collect::<Vec<_>>(),
            first.holder_d3u
        ),
    })
}

fn lemma(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let suite = lemma_suite(cfg.seed, cfg.lemma.cases, cfg.lemma.samples)?;
    write_json(out.join("report.json"), &suite)?;
    Ok(Outcome {
        success: suite.counterexamples == 0,
        summary: format!(
            "lemma-check: {} cases, {} with hypothesis, {} counterexamples",
            suite.cases, suite.hypothesis_true, suite.counterexamples
        ),
    })
}
