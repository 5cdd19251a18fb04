//! Bootstrap measurements on solved fields.
//!
//! * [`bootstrap_report`]: decay profiles and Hölder seminorms of the
//!   second derivatives of difference quotients `g = u^{h_m}`, with
//!   pass/fail flags against the predicted exponents.
//! * [`refinement_study`]: the same quantities across grid levels.
//! * [`lemma_check`]: a sampled verifier for the Campanato iteration lemma.
//! * [`higher_order_probe`]: the weak residual of the equation satisfied by
//!   iterated difference quotients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cc_solver::profiles;
use crate::coefficients::{a_tensor, b_tensor};
use crate::ellipticity::legendre_constant;
use crate::error::{usage, Error, Result};
use crate::fields::{
    diff_quotient, diff_quotient_mat, hessian, holder_seminorm, quartic_bump, quartic_bump_hessian,
    third_derivatives, BallRegion, DecayProfile, IndexBox, MatField, NodeField, ScalarField,
    DEFAULT_HOLDER_PAIRS,
};
use crate::functionals::MatrixFunctional;
use crate::rng::stream;
use crate::symtensor::{SymMat, Tensor4};
use crate::var_solver::{test_bumps, Pairing};

/// Roundoff multiplier for noise floors of stencil outputs.
const NOISE: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub center: Vec<f64>,
    /// Increasing radii for the decay profiles.
    pub radii: Vec<f64>,
    /// Ball on which Hölder seminorms are measured.
    pub holder_radius: f64,
    pub pair_budget: usize,
    /// Slack below `n` allowed for the energy exponent.
    pub tol_energy: f64,
    /// Slack below `n + 2α` allowed for the oscillation exponent.
    pub tol_oscillation: f64,
    /// Largest relative change of a Hölder seminorm between grid levels.
    pub tol_holder: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            center: Vec::new(),
            radii: vec![0.05, 0.1, 0.2, 0.4],
            holder_radius: 0.25,
            pair_budget: DEFAULT_HOLDER_PAIRS,
            tol_energy: 0.3,
            tol_oscillation: 0.5,
            tol_holder: 0.2,
        }
    }
}

impl BootstrapConfig {
    fn center(&self, n: usize) -> Result<Vec<f64>> {
        match self.center.len() {
            0 => Ok(vec![0.0; n]),
            k if k == n => Ok(self.center.clone()),
            k => usage(format!("center has {k} coordinates, grid has {n}")),
        }
    }
}

/// Measurements for one difference-quotient direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionReport {
    pub axis: usize,
    /// `∫_{B_ρ} |D²g|²`.
    pub energy: DecayProfile,
    /// `∫_{B_ρ} |D²g − (D²g)_ρ|²`.
    pub oscillation: DecayProfile,
    pub holder_d2g: f64,
    pub energy_pass: bool,
    pub oscillation_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub functional: String,
    pub n: usize,
    pub h: f64,
    pub alpha: f64,
    pub predicted_energy_exponent: f64,
    pub predicted_oscillation_exponent: f64,
    pub directions: Vec<DirectionReport>,
    pub holder_d3u: f64,
    /// Largest `|D²u|` (Frobenius) on the outermost profile ball.
    pub hessian_range: f64,
    /// Smallest Legendre constant of `a(D²u)` over the outermost profile ball.
    pub min_legendre: f64,
    pub ellipticity_pass: bool,
    pub pass: bool,
    pub config: BootstrapConfig,
}

fn check_profile(p: &DecayProfile, target: f64) -> bool {
    p.vacuous || p.fitted_exponent.is_some_and(|e| e >= target)
}

fn floor_seminorm(value: f64, field_sup: f64, floor: f64) -> f64 {
    if field_sup <= floor {
        0.0
    } else {
        value
    }
}

/// Decay and Hölder measurements of the difference quotients of `u`.
pub fn bootstrap_report(
    u: &ScalarField,
    f: &dyn MatrixFunctional,
    alpha: f64,
    config: &BootstrapConfig,
) -> Result<BootstrapReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return usage(format!("Hölder exponent {alpha} must lie in (0, 1]"));
    }
    let grid = *u.grid();
    let n = grid.n();
    let h = grid.h();
    let center = config.center(n)?;
    let outer = BallRegion::new(center.clone(), *config.radii.last().ok_or_else(|| Error::Usage("no radii".into()))?);
    let holder_ball = BallRegion::new(center.clone(), config.holder_radius);

    let u_scale = u.sup_norm();
    let vol = outer.radius.powi(n as i32) * std::f64::consts::PI.powf(n as f64 / 2.0)
        / gamma_fn(n as f64 / 2.0 + 1.0);
    // roundoff level of D²g (three stencil divisions by h)
    let d3_floor = NOISE * u_scale / (h * h * h);
    let profile_floor = d3_floor * d3_floor * vol;

    let (target_e, target_o) = (n as f64, n as f64 + 2.0 * alpha);
    let mut directions = Vec::with_capacity(n);
    for axis in 0..n {
        let g = diff_quotient(u, axis, 1)?;
        let d2g = hessian(&g)?;
        let (energy, oscillation) = profiles(&d2g, &center, &config.radii)?;
        let energy = energy.with_noise_floor(profile_floor);
        let oscillation = oscillation.with_noise_floor(profile_floor);
        let sup = sup_on(&d2g, &outer)?;
        let holder = floor_seminorm(holder_seminorm(&d2g, alpha, &holder_ball, config.pair_budget)?, sup, d3_floor);
        directions.push(DirectionReport {
            axis,
            energy_pass: check_profile(&energy, target_e - config.tol_energy),
            oscillation_pass: check_profile(&oscillation, target_o - config.tol_oscillation),
            energy,
            oscillation,
            holder_d2g: holder,
        });
    }
    let d3 = third_derivatives(u)?;
    let d3_sup = sup_on(&d3, &holder_ball)?;
    let holder_d3u = floor_seminorm(holder_seminorm(&d3, alpha, &holder_ball, config.pair_budget)?, d3_sup, d3_floor);

    let d2 = hessian(u)?;
    let mut hessian_range: f64 = 0.0;
    let mut min_legendre = f64::INFINITY;
    for i in outer.field_nodes(&d2)? {
        let m = d2.at(i);
        hessian_range = hessian_range.max(m.norm());
        min_legendre = min_legendre.min(legendre_constant(&a_tensor(f, m)?));
    }
    let ellipticity_pass = min_legendre > 0.0;
    let pass = ellipticity_pass && directions.iter().all(|d| d.energy_pass && d.oscillation_pass);
    Ok(BootstrapReport {
        functional: f.name().to_string(),
        n,
        h,
        alpha,
        predicted_energy_exponent: target_e,
        predicted_oscillation_exponent: target_o,
        directions,
        holder_d3u,
        hessian_range,
        min_legendre,
        ellipticity_pass,
        pass,
        config: config.clone(),
    })
}

/// `Γ(x)` for the half-integers and integers that ball volumes need.
fn gamma_fn(x: f64) -> f64 {
    if (x - x.round()).abs() < 1e-12 {
        (1..x.round() as u64).map(|k| k as f64).product()
    } else {
        // Γ(k + ½) = √π · ½ · (3/2) ⋯ (k − ½)
        let k = (x - 0.5).round() as u64;
        let mut g = std::f64::consts::PI.sqrt();
        for j in 0..k {
            g *= j as f64 + 0.5;
        }
        g
    }
}

fn sup_on<F: NodeField + ?Sized>(f: &F, ball: &BallRegion) -> Result<f64> {
    let mut buf = vec![0.0; f.components()];
    let mut best: f64 = 0.0;
    for i in ball.field_nodes(f)? {
        f.write_components(i, &mut buf);
        best = best.max(buf.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(best)
}

/// One grid level of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub h: f64,
    pub holder_d3u: f64,
    pub holder_d2g_max: f64,
    pub min_energy_exponent: Option<f64>,
    pub min_oscillation_exponent: Option<f64>,
    /// Relative change of `holder_d3u` from the previous (coarser) level.
    pub holder_d3u_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementStudy {
    pub rows: Vec<RefinementRow>,
    pub holder_stable: bool,
    /// Set when a seminorm moves up and then down (or the reverse) across
    /// levels; such trends need a human look rather than an extrapolation.
    pub non_monotone: bool,
}

fn min_exponent<'a>(profiles: impl Iterator<Item = &'a DecayProfile>) -> Option<f64> {
    profiles.filter(|p| !p.vacuous).filter_map(|p| p.fitted_exponent).reduce(f64::min)
}

/// Tabulates reports ordered from coarse to fine.
pub fn refinement_study(reports: &[BootstrapReport], tol_holder: f64) -> Result<RefinementStudy> {
    if reports.windows(2).any(|w| w[1].h >= w[0].h) {
        return usage("refinement levels must be ordered from coarse to fine");
    }
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(reports.len());
    for r in reports {
        let change = rows.last().map(|prev| relative_change(prev.holder_d3u, r.holder_d3u));
        rows.push(RefinementRow {
            h: r.h,
            holder_d3u: r.holder_d3u,
            holder_d2g_max: r.directions.iter().map(|d| d.holder_d2g).fold(0.0, f64::max),
            min_energy_exponent: min_exponent(r.directions.iter().map(|d| &d.energy)),
            min_oscillation_exponent: min_exponent(r.directions.iter().map(|d| &d.oscillation)),
            holder_d3u_change: change,
        });
    }
    let holder_stable = rows.iter().filter_map(|r| r.holder_d3u_change).all(|c| c <= tol_holder);
    let diffs: Vec<f64> = rows.windows(2).map(|w| w[1].holder_d3u - w[0].holder_d3u).collect();
    let non_monotone = diffs.windows(2).any(|d| d[0] * d[1] < 0.0);
    Ok(RefinementStudy { rows, holder_stable, non_monotone })
}

fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Sampled instance of the iteration lemma: `φ` on increasing radii `ρ_i ≤ R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationLemmaCase {
    pub radii: Vec<f64>,
    pub phi: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

/// Constants of the constructive proof for given `A, α, β, γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaConstants {
    /// Ratio with `2Aτ^α ≤ τ^γ`.
    pub tau: f64,
    /// Admissible `ε` threshold, `τ^α`.
    pub epsilon0: f64,
    /// `max(τ^{−γ}, τ^{−2β}/(1 − τ^{γ−β}))`.
    pub c: f64,
}

pub fn lemma_constants(a: f64, alpha: f64, beta: f64, gamma: f64) -> LemmaConstants {
    let tau = (2.0 * a).powf(-1.0 / (alpha - gamma)).min(0.5);
    LemmaConstants {
        tau,
        epsilon0: tau.powf(alpha),
        c: tau.powf(-gamma).max(tau.powf(-2.0 * beta) / (1.0 - tau.powf(gamma - beta))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaFindings {
    pub hypothesis_holds: bool,
    pub epsilon_admissible: bool,
    pub constants: LemmaConstants,
    /// Smallest `c` with `φ(r) ≤ c[φ(R)(r/R)^γ + B r^β]` at every sample.
    pub c_min: Option<f64>,
    pub conclusion_holds: bool,
    /// `(ρ, r)` violating the hypothesis, or `(r, R)` violating the conclusion.
    pub witness: Option<(f64, f64)>,
}

/// Relative slack for comparisons of sampled inequalities.
const LEMMA_SLACK: f64 = 1e-12;

/// Checks the hypothesis at every sampled pair and, when it holds with
/// `ε ≤ ε₀`, the conclusion with the constructive constant.
pub fn lemma_check(case: &IterationLemmaCase) -> Result<LemmaFindings> {
    let IterationLemmaCase { radii, phi, a, b, alpha, beta, gamma, epsilon } = case;
    let (a, b, alpha, beta, gamma, epsilon) = (*a, *b, *alpha, *beta, *gamma, *epsilon);
    if radii.len() != phi.len() || radii.len() < 2 {
        return usage("lemma case needs at least two samples of matching length");
    }
    if !(0.0 <= beta && beta < gamma && gamma < alpha) {
        return usage(format!("need 0 ≤ β < γ < α, got β = {beta}, γ = {gamma}, α = {alpha}"));
    }
    if !(a > 0.0 && b >= 0.0 && epsilon >= 0.0) || ![a, b, alpha, epsilon].iter().all(|v| v.is_finite()) {
        return usage("need A > 0, B ≥ 0, ε ≥ 0, all finite");
    }
    if !(radii[0] > 0.0) || radii.windows(2).any(|w| w[1] <= w[0]) {
        return usage("radii must be positive and strictly increasing");
    }
    if phi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return usage("φ must be finite and nonnegative");
    }
    if let Some(k) = phi.windows(2).position(|w| w[1] < w[0]) {
        return usage(format!("φ decreases between ρ = {} and ρ = {}", radii[k], radii[k + 1]));
    }

    let constants = lemma_constants(a, alpha, beta, gamma);
    let mut witness = None;
    'outer: for j in 0..radii.len() {
        let r = radii[j];
        for i in 0..=j {
            let rhs = a * ((radii[i] / r).powf(alpha) + epsilon) * phi[j] + b * r.powf(beta);
            if phi[i] > rhs * (1.0 + LEMMA_SLACK) {
                witness = Some((radii[i], r));
                break 'outer;
            }
        }
    }
    let hypothesis_holds = witness.is_none();
    let epsilon_admissible = epsilon <= constants.epsilon0;
    let mut findings = LemmaFindings {
        hypothesis_holds,
        epsilon_admissible,
        constants,
        c_min: None,
        conclusion_holds: false,
        witness,
    };
    if !(hypothesis_holds && epsilon_admissible) {
        return Ok(findings);
    }
    let big_r = *radii.last().unwrap();
    let phi_r = *phi.last().unwrap();
    let mut c_min: f64 = 0.0;
    let mut worst_r = None;
    for (&r, &p) in radii.iter().zip(phi) {
        let rhs = phi_r * (r / big_r).powf(gamma) + b * r.powf(beta);
        let c = if p == 0.0 {
            0.0
        } else if rhs == 0.0 {
            f64::INFINITY
        } else {
            p / rhs
        };
        if c > c_min {
            c_min = c;
            worst_r = Some(r);
        }
    }
    findings.c_min = Some(c_min);
    findings.conclusion_holds = c_min <= constants.c * (1.0 + LEMMA_SLACK);
    if !findings.conclusion_holds {
        findings.witness = worst_r.map(|r| (r, big_r));
    }
    Ok(findings)
}

/// Seeded power-law-plus-noise case with `ε < ε₀`. About half the cases get
/// `B` large enough for the hypothesis to hold.
pub fn synthetic_lemma_case(rng: &mut impl Rng, samples: usize) -> IterationLemmaCase {
    let alpha = rng.gen_range(0.5..4.0);
    let beta = rng.gen_range(0.0..0.8 * alpha);
    let gamma = rng.gen_range(beta + 0.05 * (alpha - beta)..alpha - 0.05 * (alpha - beta));
    let a = rng.gen_range(0.5..20.0);
    let k = lemma_constants(a, alpha, beta, gamma);
    let epsilon = k.epsilon0 * rng.gen_range(0.0..1.0);
    let radii: Vec<f64> = (0..samples).map(|i| f64::powf(2.0, -10.0 * (1.0 - i as f64 / (samples - 1) as f64))).collect();
    let p = rng.gen_range(0.0..alpha + 1.0);
    let scale = rng.gen_range(0.1..10.0);
    let mut phi = Vec::with_capacity(samples);
    let mut prev: f64 = 0.0;
    for &r in &radii {
        let noisy = scale * r.powf(p) * (1.0 + rng.gen_range(-0.3..0.3));
        prev = prev.max(noisy);
        phi.push(prev);
    }
    // smallest B making the sampled hypothesis hold
    let mut b_min: f64 = 0.0;
    for j in 0..samples {
        for i in 0..=j {
            let need = (phi[i] - a * ((radii[i] / radii[j]).powf(alpha) + epsilon) * phi[j]) / radii[j].powf(beta);
            b_min = b_min.max(need);
        }
    }
    let b = if rng.gen_bool(0.5) { b_min * rng.gen_range(1.0..3.0) } else { b_min * rng.gen_range(0.0..0.95) };
    IterationLemmaCase { radii, phi, a, b, alpha, beta, gamma, epsilon }
}

/// Outcome of [`lemma_suite`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaSuite {
    pub cases: usize,
    pub hypothesis_true: usize,
    pub counterexamples: usize,
    pub worst_c_ratio: f64,
    pub seed: u64,
}

/// Runs [`lemma_check`] on `cases` seeded synthetic cases.
pub fn lemma_suite(seed: u64, cases: usize, samples: usize) -> Result<LemmaSuite> {
    let mut rng = stream(seed, "lemma_cases");
    let mut out = LemmaSuite { cases, hypothesis_true: 0, counterexamples: 0, worst_c_ratio: 0.0, seed };
    for _ in 0..cases {
        let case = synthetic_lemma_case(&mut rng, samples);
        let found = lemma_check(&case)?;
        if found.hypothesis_holds && found.epsilon_admissible {
            out.hypothesis_true += 1;
            if !found.conclusion_holds {
                out.counterexamples += 1;
            }
            if let Some(c) = found.c_min {
                out.worst_c_ratio = out.worst_c_ratio.max(c / found.constants.c);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Axes of the iterated quotients; length `N − 2`. Empty means all along axis 0.
    pub multi_index: Vec<usize>,
    pub test_count: usize,
    pub pairing: Pairing,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { multi_index: Vec::new(), test_count: 12, pairing: Pairing::Discrete }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub order: usize,
    pub multi_index: Vec<usize>,
    pub h: f64,
    /// `max_η |Σ [b(D²u):D²v + f] : D²η hⁿ| / ‖D²η‖`.
    pub residual: f64,
    /// `sup |D²v|` on the test region.
    pub signal: f64,
    pub noise_floor: f64,
    /// The quotients are at roundoff level, so the residual is reported as zero.
    pub below_noise: bool,
}

/// Weak residual of the equation satisfied by `v = D^α_h u`, `|α| = N − 2`:
/// `Σ [b(D²u) : D²v + f] : D²η = 0`, with the commutator
/// `f = D^{α'}_h (b(D²u) : D²(D_{α₁,h} u)) − b(D²u) : D²v` for `α = (α₁, α')`
/// (zero for `N = 3`).
pub fn higher_order_probe(
    u: &ScalarField,
    f: &dyn MatrixFunctional,
    order: usize,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    if !(3..=4).contains(&order) {
        return usage(format!("probe order {order} must be 3 or 4"));
    }
    let grid = *u.grid();
    let n = grid.n();
    let h = grid.h();
    let multi: Vec<usize> =
        if config.multi_index.is_empty() { vec![0; order - 2] } else { config.multi_index.clone() };
    if multi.len() != order - 2 || multi.iter().any(|&a| a >= n) {
        return usage(format!("multi-index {multi:?} must have {} entries below {n}", order - 2));
    }

    let d2u = hessian(u)?;
    // v₁ = D_{α₁} u, then the remaining quotients
    let mut quotients = vec![diff_quotient(u, multi[0], 1)?];
    for &axis in &multi[1..] {
        let next = diff_quotient(quotients.last().unwrap(), axis, 1)?;
        quotients.push(next);
    }
    let d2v: Vec<MatField> = quotients.iter().map(hessian).collect::<Result<_>>()?;
    let top = d2v.last().unwrap();

    let mut b_field = vec![Tensor4::zeros(n); grid.len()];
    for i in d2u.valid().nodes(&grid) {
        b_field[i] = b_tensor(f, d2u.at(i))?;
    }
    let contract = |t: &Tensor4, m: &SymMat| t.contract_right(m);

    // flux R = b : D²v + f on the common valid box
    let flux: MatField = if order == 3 {
        let valid = intersect(n, d2u.valid(), top.valid())?;
        let mut vals = vec![SymMat::zeros(n); grid.len()];
        for i in valid.nodes(&grid) {
            vals[i] = contract(&b_field[i], top.at(i))?;
        }
        MatField::with_box(grid, vals, valid)
    } else {
        // (b : D²v₁)^{h_{α₂}} equals b : D²v₂ + f by construction of f
        let valid = intersect(n, d2u.valid(), d2v[0].valid())?;
        let mut vals = vec![SymMat::zeros(n); grid.len()];
        for i in valid.nodes(&grid) {
            vals[i] = contract(&b_field[i], d2v[0].at(i))?;
        }
        let product = MatField::with_box(grid, vals, valid);
        let shifted = diff_quotient_mat(&product, multi[1], 1)?;
        let valid = intersect(n, shifted.valid(), top.valid())?;
        let mut vals = vec![SymMat::zeros(n); grid.len()];
        for i in valid.nodes(&grid) {
            vals[i] = *shifted.at(i);
        }
        MatField::with_box(grid, vals, valid)
    };

    let region = flux.valid().nodes(&grid);
    let signal = region.iter().map(|&i| top.at(i).norm()).fold(0.0, f64::max);
    let noise_floor = NOISE * u.sup_norm() / h.powi(order as i32);
    let below_noise = signal <= noise_floor;
    let mut report = ProbeReport { order, multi_index: multi, h, residual: 0.0, signal, noise_floor, below_noise };
    if below_noise {
        return Ok(report);
    }
    if signal < 100.0 * noise_floor {
        return Err(Error::Usage(format!(
            "order-{order} quotients ({signal:.3e}) are within 100x of the roundoff floor ({noise_floor:.3e}); \
             use a coarser grid or smoother data"
        )));
    }
    let w = grid.cell_volume();
    for (center, radius) in test_bumps(n, config.test_count) {
        let de = match config.pairing {
            Pairing::Discrete => Some(hessian(&quartic_bump(grid, &center, radius))?),
            Pairing::Analytic => None,
        };
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &region {
            let e = match &de {
                Some(de) => *de.at(i),
                None => quartic_bump_hessian(&center, radius, &grid.point(i)[..n]),
            };
            num += flux.at(i).dot(&e);
            den += e.norm_sq();
        }
        if den > 0.0 {
            report.residual = report.residual.max((num * w).abs() / (den * w).sqrt());
        }
    }
    Ok(report)
}

fn intersect(n: usize, a: &IndexBox, b: &IndexBox) -> Result<IndexBox> {
    a.intersect(n, b).ok_or_else(|| Error::Usage("quotient fields do not overlap".into()))
}
