//! Acceptance suite: one PASS/FAIL line per criterion, each at its stated
//! tolerance and runtime budget.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use regboot::cc_solver::{decay_experiment, freeze_split, smooth_random_field, solve_cc, CCProblem};
use regboot::cli::{run, Command};
use regboot::coefficients::{a_tensor, b_tensor, structure_residual};
use regboot::diagnostics::{bootstrap_report, lemma_suite, refinement_study, BootstrapConfig};
use regboot::ellipticity::{certify_region, legendre_constant, HessianSampler, SamplerMode, Verdict};
use regboot::fields::{BallRegion, Grid, ScalarField};
use regboot::functionals::{eval_F, HamStat, MatrixFunctional, TraceQuadratic};
use regboot::symtensor::{SymMat, Tensor4};
use regboot::var_solver::{minimize, weak_residual, MinimizeOptions, Pairing, SolveStatus, VarProblem};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymMat {
    SymMat::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Second directional derivative of `F` by Richardson-extrapolated central differences.
fn fd_second(f: &dyn MatrixFunctional, m: &SymMat, xi: &SymMat) -> f64 {
    let d2 = |t: f64| {
        let p = eval_F(f, &(*m + *xi * t)).unwrap();
        let z = eval_F(f, m).unwrap();
        let q = eval_F(f, &(*m - *xi * t)).unwrap();
        (p - 2.0 * z + q) / (t * t)
    };
    let t = 1e-3;
    (16.0 * d2(0.5 * t) - d2(t)) / 15.0
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fs: [Arc<dyn MatrixFunctional>; 2] = [Arc::new(TraceQuadratic), Arc::new(HamStat)];
    let (mut worst_structure, mut worst_b) = (0.0f64, 0.0f64);
    for f in &fs {
        for k in 0..100 {
            let n = 2 + k % 2;
            let m = random_sym(&mut rng, n, 1.0);
            worst_structure = worst_structure.max(structure_residual(&**f, &m).map_err(|e| e.to_string())?);
        }
        for k in 0..50 {
            let n = 2 + k % 2;
            let m = random_sym(&mut rng, n, 1.0);
            let xi = random_sym(&mut rng, n, 1.0);
            let exact = b_tensor(&**f, &m).unwrap().apply_quadratic(&xi).unwrap();
            let fd = fd_second(&**f, &m, &xi);
            worst_b = worst_b.max((exact - fd).abs() / exact.abs().max(1e-3));
        }
    }
    check(
        worst_structure <= 1e-10 && worst_b <= 1e-6,
        format!("max structure residual {worst_structure:.2e} (≤ 1e-10), max b-vs-FD rel. err {worst_b:.2e} (≤ 1e-6)"),
    )
}

fn criterion_2() -> Outcome {
    let ham = legendre_constant(&a_tensor(&HamStat, &SymMat::zeros(2)).unwrap());
    let tq = legendre_constant(&a_tensor(&TraceQuadratic, &SymMat::zeros(2)).unwrap());
    let sampler =
        HessianSampler { dim: 2, mode: SamplerMode::OperatorBall { radius: 0.5 }, count: 200, seed: 42 };
    let report = certify_region(&HamStat, &sampler, 0.0).map_err(|e| e.to_string())?;
    check(
        (ham - 1.0).abs() <= 1e-9 && (tq - 2.0).abs() <= 1e-9 && report.verdict == Verdict::RegularPlus,
        format!(
            "legendre(a(hamstat, 0)) = {ham:.12}, legendre(a(trace_quadratic)) = {tq:.12}, operator_ball(0.5) verdict {:?}",
            report.verdict
        ),
    )
}

fn criterion_3() -> Outcome {
    let grid = Grid::with_spacing(2, 1.0 / 64.0).unwrap();
    let quadratics: [fn(&[f64]) -> f64; 3] = [
        |x| x[0] * x[0] - x[1] * x[1],
        |x| 0.3 * x[0] * x[0] + 0.7 * x[0] * x[1] - 0.2 * x[1] * x[1] + x[0] - 0.5,
        |x| 2.0 * x[1] * x[1] + 0.1 * x[0],
    ];
    let mut worst = 0.0f64;
    let mut iterations = Vec::new();
    for q in quadratics {
        let exact = ScalarField::from_fn(grid, q);
        // only the band is data; zeroing the ball keeps the solver from starting at the answer
        let region = BallRegion::centered(2, 0.75);
        let data = ScalarField::from_fn(grid, |x| if region.contains(x) { 0.0 } else { q(x) });
        let problem = CCProblem { c0: Tensor4::identity_pairing(2), region, boundary_data: data };
        let sol = solve_cc(&problem, 1e-12).map_err(|e| e.to_string())?;
        worst = worst.max(sol.w.sup_distance(&exact));
        iterations.push(sol.solver_iterations);
    }
    check(worst <= 1e-8, format!("max sup error {worst:.2e} over 3 quadratics (≤ 1e-8), CG iterations {iterations:?}"))
}

fn criterion_4() -> Outcome {
    let grid = Grid::with_spacing(2, 1.0 / 64.0).unwrap();
    let data = smooth_random_field(grid, 42, 8);
    let (exp, _) = decay_experiment(
        &Tensor4::identity_pairing(2),
        &data,
        &BallRegion::centered(2, 0.75),
        &[0.05, 0.1, 0.2, 0.4],
        1e-10,
    )
    .map_err(|e| e.to_string())?;
    let e = exp.energy.fitted_exponent.ok_or("no energy fit")?;
    let o = exp.oscillation.fitted_exponent.ok_or("no oscillation fit")?;
    check(
        e >= 2.0 - 0.3 && o >= 2.0 + 2.0 - 0.5,
        format!("energy exponent {e:.3} (≥ 1.7), oscillation exponent {o:.3} (≥ 3.5)"),
    )
}

fn criterion_5() -> Outcome {
    let grid = Grid::with_spacing(2, 1.0 / 64.0).unwrap();
    let u = ScalarField::from_fn(grid, |x| 0.1 * (x[0].powi(4) + x[1].powi(4)));
    let ball = BallRegion::centered(2, 0.3);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for p in 0..2 {
        let s = freeze_split(&u, &HamStat, p, &ball, 1e-10).map_err(|e| e.to_string())?;
        worst = worst.max(s.bound_ratio);
        parts.push(format!("p={p}: ∫|D²v|² {:.1e}, ∫|D²g|² {:.3e}, ζ {:.2e}", s.energy_v, s.energy_g, s.zeta));
    }
    // g is cubic here, which any constant fourth-order operator annihilates, so v ≡ 0;
    // a transcendental datum shows the split with a nonzero correction (reported, not gated)
    let t = ScalarField::from_fn(grid, hamstat_datum);
    let s = freeze_split(&t, &HamStat, 0, &ball, 1e-10).map_err(|e| e.to_string())?;
    parts.push(format!("transcendental datum p=0: bound_ratio {:.3}, ∫|D²v|² {:.2e}", s.bound_ratio, s.energy_v));
    check(worst <= 1.5, format!("max bound_ratio {worst:.3} (≤ 1.5); {}", parts.join("; ")))
}

fn hamstat_datum(x: &[f64]) -> f64 {
    0.1 * (1.3 * x[0] + 0.4).sin() * (0.7 * x[1]).exp()
}

fn solve_hamstat(h: f64) -> Result<(VarProblem, regboot::var_solver::VarSolution), String> {
    let grid = Grid::with_spacing(2, h).unwrap();
    let p = VarProblem::new(Arc::new(HamStat), ScalarField::from_fn(grid, hamstat_datum));
    let sol = minimize(&p, &MinimizeOptions { tol: 1e-10, ..Default::default() }).map_err(|e| e.to_string())?;
    Ok((p, sol))
}

fn criterion_6() -> Outcome {
    let grid = Grid::with_spacing(2, 1.0 / 64.0).unwrap();
    let quad = |x: &[f64]| 0.3 * x[0] * x[0] - 0.2 * x[0] * x[1] + 0.1 * x[1] * x[1] + 0.5 * x[0];
    let q = ScalarField::from_fn(grid, quad);
    let mut p = VarProblem::new(Arc::new(TraceQuadratic), q.clone());
    // start away from the answer in the interior
    p.init = ScalarField::from_fn(grid, |x| if x.iter().all(|c| c.abs() < 0.9) { 0.0 } else { quad(x) });
    let lin = minimize(&p, &MinimizeOptions { tol: 1e-10, ..Default::default() }).map_err(|e| e.to_string())?;
    let recovery = lin.u.sup_distance(&q);

    let mut residuals = Vec::new();
    let mut all_ok = lin.trace.status == SolveStatus::Converged && recovery <= 1e-6;
    let mut notes = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let (prob, sol) = solve_hamstat(h)?;
        let converged = sol.trace.status == SolveStatus::Converged;
        let strict = sol.trace.strictly_decreasing();
        all_ok &= converged && strict;
        residuals.push(weak_residual(&prob, &sol.u, 12, Pairing::Analytic).map_err(|e| e.to_string())?);
        notes.push(format!("h={h}: {:?} in {} its, strict={strict}", sol.trace.status, sol.trace.iterations));
    }
    let ratio = residuals[0] / residuals[1];
    check(
        all_ok && ratio >= 2.0,
        format!(
            "quadratic recovery {recovery:.2e} (≤ 1e-6); hamstat {}; weak residual {:.3e} → {:.3e}, ratio {ratio:.2} (≥ 2)",
            notes.join(", "),
            residuals[0],
            residuals[1]
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut reports = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let (_, sol) = solve_hamstat(h)?;
        if sol.trace.status != SolveStatus::Converged {
            return Err(format!("hamstat solve at h = {h} ended with {:?}", sol.trace.status));
        }
        reports.push(bootstrap_report(&sol.u, &HamStat, 0.5, &BootstrapConfig::default()).map_err(|e| e.to_string())?);
    }
    let study = refinement_study(&reports, 0.2).map_err(|e| e.to_string())?;
    let change = study.rows[1].holder_d3u_change.unwrap();
    let osc: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.directions.iter().map(|d| d.oscillation.fitted_exponent.unwrap_or(f64::NEG_INFINITY)))
        .collect();
    let min_osc = osc.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        change <= 0.2 && min_osc >= 2.0 + 1.0 - 0.5,
        format!(
            "Hölder seminorm of D³u {:.4} → {:.4} (change {:.1}% ≤ 20%); min oscillation exponent of D²(u^h_m) {min_osc:.3} (≥ 2.5)",
            study.rows[0].holder_d3u,
            study.rows[1].holder_d3u,
            100.0 * change
        ),
    )
}

fn criterion_8() -> Outcome {
    let s = lemma_suite(42, 1000, 60).map_err(|e| e.to_string())?;
    check(
        s.counterexamples == 0 && s.hypothesis_true > 0,
        format!("{} cases, {} with hypothesis and ε < ε₀, {} counterexamples", s.cases, s.hypothesis_true, s.counterexamples),
    )
}

fn digest_dir(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let hash = Sha256::digest(fs::read(&path).unwrap());
            (path.file_name().unwrap().to_string_lossy().into_owned(), format!("{hash:x}"))
        })
        .collect();
    out.sort();
    out
}

const DETERMINISM_CONFIG: &str = r#"{
    "schema_version": 1,
    "functional": "hamstat",
    "grid": {"n": 2, "m": 65},
    "boundary": "0.1*sin(1.3*x1+0.4)*exp(0.7*x2)",
    "seed": 42,
    "certify": {"sampler": {"mode": "operator_ball", "radius": 0.5}, "count": 100},
    "cc": {"radii": [0.05, 0.1, 0.2, 0.4]},
    "diagnose": {"refine": true, "probe": {"order": 3}, "lemma": true},
    "lemma": {"cases": 200, "samples": 40}
}"#;

fn criterion_9() -> Outcome {
    let commands = [
        ("certify", Command::Certify),
        ("solve-cc", Command::SolveCc),
        ("solve-var", Command::SolveVar),
        ("diagnose", Command::Diagnose),
        ("lemma-check", Command::LemmaCheck),
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (name, cmd) in commands {
        let a = root.path().join(format!("{name}-a"));
        let b = root.path().join(format!("{name}-b"));
        run(cmd, DETERMINISM_CONFIG, &a).map_err(|e| format!("{name}: {e}"))?;
        run(cmd, DETERMINISM_CONFIG, &b).map_err(|e| format!("{name}: {e}"))?;
        let (da, db) = (digest_dir(&a), digest_dir(&b));
        files += da.len();
        if da != db || !da.iter().any(|(f, _)| f == "report.json") {
            mismatched.push(name);
        }
    }
    check(
        mismatched.is_empty(),
        format!("5 commands run twice, {files} artifacts hash-compared, mismatches: {mismatched:?}"),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("1 coefficient identities", criterion_1, Duration::from_secs(5)),
        ("2 ellipticity anchors", criterion_2, Duration::from_secs(10)),
        ("3 constant-coefficient exactness", criterion_3, Duration::from_secs(30)),
        ("4 biharmonic decay", criterion_4, Duration::from_secs(60)),
        ("5 frozen-coefficient split", criterion_5, Duration::from_secs(60)),
        ("6 variational solver", criterion_6, Duration::from_secs(300)),
        ("7 bootstrap evidence", criterion_7, Duration::from_secs(300)),
        ("8 iteration lemma", criterion_8, Duration::from_secs(5)),
        ("9 determinism", criterion_9, Duration::from_secs(300)),
    ];
    let mut failures = 0;
    for (name, run_criterion, budget) in criteria {
        let start = Instant::now();
        let result = run_criterion();
        let took = start.elapsed();
        let within = took <= budget;
        let (ok, detail) = match result {
            Ok(d) => (within, d),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2} s, budget {} s{}]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            if within { "" } else { ", exceeded" }
        );
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
