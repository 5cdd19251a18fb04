//! Constant-coefficient double-divergence problems on balls.
//!
//! The discrete equation is `Σ_x c₀ : D²w(x) : D²η(x) hⁿ = 0` for every grid
//! function `η` supported on the ball's nodes, with `w` clamped to the
//! boundary data outside the ball. The operator `D^T c₀ D` reaches two nodes,
//! so the clamped band is every node within Chebyshev distance 2 of the ball.
//! The system is symmetric positive definite whenever `c₀` satisfies the
//! Legendre condition and is solved matrix-free by preconditioned CG.

use rand::Rng;
use serde::Serialize;

use crate::coefficients::btilde_tensor;
use crate::coefficients::DEFAULT_QUAD_POINTS;
use crate::ellipticity::legendre_constant;
use crate::error::{usage, Error, Result};
use crate::fields::{
    campanato, diff_quotient, hessian, hessian_adjoint_into, hessian_into, l2_norm_sq, BallRegion,
    DecayProfile, Grid, MatField, ScalarField,
};
use crate::functionals::MatrixFunctional;
use crate::rng;
use crate::symtensor::{SymMat, Tensor4};

pub const DEFAULT_CC_TOL: f64 = 1e-10;

/// Clamped constant-coefficient problem on a ball.
#[derive(Debug, Clone)]
pub struct CCProblem {
    pub c0: Tensor4,
    pub region: BallRegion,
    pub boundary_data: ScalarField,
}

#[derive(Debug, Clone)]
pub struct CCSolution {
    /// Equals the boundary data outside the region.
    pub w: ScalarField,
    /// `‖b − Ax‖ / ‖b‖` of the final iterate (0 when `b = 0`).
    pub residual_norm: f64,
    pub solver_iterations: usize,
    pub unknowns: usize,
    pub lambda: f64,
    /// `‖b‖` of the clamped right-hand side.
    pub rhs_norm: f64,
}

/// Matrix-free `P_U D^T c D P_U hⁿ` on the ball's nodes `U`.
struct ClampedOperator {
    grid: Grid,
    c: Tensor4,
    unknowns: Vec<usize>,
    /// Nodes where `D²` of a function supported on `U` can be nonzero.
    active: Vec<usize>,
    weight: f64,
}

fn neighbourhood(grid: &Grid, nodes: &[usize], reach: usize) -> Result<Vec<bool>> {
    let n = grid.n();
    let m = grid.m();
    let mut mark = vec![false; grid.len()];
    let span = 2 * reach + 1;
    for &i in nodes {
        let k = grid.multi(i);
        for off in 0..span.pow(n as u32) {
            let mut q = k;
            let mut rest = off;
            for a in 0..n {
                let d = rest % span;
                rest /= span;
                let c = k[a] + d;
                if c < reach || c - reach >= m {
                    return usage(format!("region node {k:?} lies within {reach} nodes of the grid edge"));
                }
                q[a] = c - reach;
            }
            mark[grid.index(&q)] = true;
        }
    }
    Ok(mark)
}

impl ClampedOperator {
    fn new(grid: Grid, c: Tensor4, unknowns: Vec<usize>) -> Result<ClampedOperator> {
        // reach 2 guarantees every active node is interior
        neighbourhood(&grid, &unknowns, 2)?;
        let mark = neighbourhood(&grid, &unknowns, 1)?;
        let active = (0..grid.len()).filter(|&i| mark[i]).collect();
        Ok(ClampedOperator { grid, c, unknowns, active, weight: grid.cell_volume() })
    }

    /// `D^T c D v hⁿ` evaluated on the full grid vector `v`.
    fn apply_full(&self, v: &[f64], hess: &mut [SymMat], out: &mut [f64]) {
        hessian_into(&self.grid, v, &self.active, hess);
        for &i in &self.active {
            hess[i] = self.c.contract_trailing(&hess[i]) * self.weight;
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        hessian_adjoint_into(&self.grid, hess, &self.active, out);
    }
}

struct Workspace {
    full: Vec<f64>,
    hess: Vec<SymMat>,
    out: Vec<f64>,
}

impl Workspace {
    fn new(grid: &Grid) -> Workspace {
        Workspace {
            full: vec![0.0; grid.len()],
            hess: vec![SymMat::zeros(grid.n()); grid.len()],
            out: vec![0.0; grid.len()],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ClampedOperator {
    fn apply(&self, x: &[f64], ws: &mut Workspace, y: &mut [f64]) {
        ws.full.iter_mut().for_each(|v| *v = 0.0);
        for (k, &i) in self.unknowns.iter().enumerate() {
            ws.full[i] = x[k];
        }
        self.apply_full(&ws.full, &mut ws.hess, &mut ws.out);
        for (k, &i) in self.unknowns.iter().enumerate() {
            y[k] = ws.out[i];
        }
    }
}

/// Solves the clamped problem to relative residual `tol`.
pub fn solve_cc(problem: &CCProblem, tol: f64) -> Result<CCSolution> {
    let g = &problem.boundary_data;
    let grid = *g.grid();
    let n = grid.n();
    if problem.c0.n() != n {
        return usage(format!("coefficients have n = {}, grid has n = {n}", problem.c0.n()));
    }
    if !(tol > 0.0) {
        return usage("solver tolerance must be positive");
    }
    let c = problem.c0.major_symmetrized();
    let lambda = legendre_constant(&c);
    if !(lambda > 0.0) {
        return Err(Error::Ellipticity(format!(
            "constant coefficients have Legendre constant {lambda:.6e} <= 0"
        )));
    }
    let unknowns = problem.region.nodes(&grid)?;
    if unknowns.is_empty() {
        return usage("region contains no nodes");
    }
    let op = ClampedOperator::new(grid, c, unknowns)?;
    let band = neighbourhood(&grid, &op.unknowns, 2)?;
    if let Some(bad) = (0..grid.len()).find(|&i| band[i] && !g.valid().contains(n, &grid.multi(i))) {
        return usage(format!(
            "boundary data undefined at band node {:?}",
            grid.multi(bad)
        ));
    }

    let mut ws = Workspace::new(&grid);
    let nu = op.unknowns.len();
    // right-hand side from the clamped values
    let mut clamped = g.values().to_vec();
    for &i in &op.unknowns {
        clamped[i] = 0.0;
    }
    op.apply_full(&clamped, &mut ws.hess, &mut ws.out);
    let b: Vec<f64> = op.unknowns.iter().map(|&i| -ws.out[i]).collect();
    let bnorm = dot(&b, &b).sqrt();

    let assemble = |x: &[f64]| {
        let mut values = clamped.clone();
        for (k, &i) in op.unknowns.iter().enumerate() {
            values[i] = x[k];
        }
        ScalarField::from_values(grid, values)
    };
    if bnorm == 0.0 {
        return Ok(CCSolution {
            w: assemble(&vec![0.0; nu])?,
            residual_norm: 0.0,
            solver_iterations: 0,
            unknowns: nu,
            lambda,
            rhs_norm: 0.0,
        });
    }

    // the operator is translation invariant, so its diagonal is one number
    let mut e = vec![0.0; nu];
    e[0] = 1.0;
    let mut col = vec![0.0; nu];
    op.apply(&e, &mut ws, &mut col);
    let diag = col[0];

    let mut x: Vec<f64> = op.unknowns.iter().map(|&i| g.at(i)).collect();
    let mut ax = vec![0.0; nu];
    op.apply(&x, &mut ws, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().map(|v| v / diag).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let cap = (50.0 * (nu as f64).sqrt()).ceil() as usize;
    let mut best = (dot(&r, &r).sqrt(), x.clone());
    let mut ap = vec![0.0; nu];
    let mut iterations = 0;
    while best.0 > tol * bnorm && iterations < cap {
        op.apply(&p, &mut ws, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver(format!(
                "operator not positive definite along a search direction (pᵀAp = {pap:.3e}, Λ = {lambda:.3e})"
            )));
        }
        let alpha = rz / pap;
        for k in 0..nu {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        iterations += 1;
        let rn = dot(&r, &r).sqrt();
        if rn < best.0 {
            best = (rn, x.clone());
        }
        for k in 0..nu {
            z[k] = r[k] / diag;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..nu {
            p[k] = z[k] + beta * p[k];
        }
    }
    // report the true residual of the best iterate
    let x = best.1;
    op.apply(&x, &mut ws, &mut ax);
    let true_res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
    let w = assemble(&x)?;
    if best.0 > tol * bnorm {
        return Err(Error::NotConverged {
            message: format!(
                "CG reached its cap of {cap} iterations at relative residual {true_res:.3e} (target {tol:.1e}, {nu} unknowns)"
            ),
            best: Box::new(w),
        });
    }
    Ok(CCSolution {
        w,
        residual_norm: true_res,
        solver_iterations: iterations,
        unknowns: nu,
        lambda,
        rhs_norm: bnorm,
    })
}

/// Discrete weak-form residual `|Σ_x c₀ : D²w : D²η hⁿ| / (‖η‖ ‖b‖)` for a
/// test function `η` supported on the region, where `b` is the clamped
/// right-hand side. Computed from the Hessians directly, independently of
/// the assembled operator; by Cauchy–Schwarz it is at most the solver's
/// relative residual when the two agree.
pub fn cc_weak_residual(problem: &CCProblem, sol: &CCSolution, eta: &ScalarField) -> Result<f64> {
    let grid = *sol.w.grid();
    let n = grid.n();
    if let Some(i) = (0..grid.len()).find(|&i| eta.at(i) != 0.0 && !problem.region.contains(&grid.point(i)[..n])) {
        return usage(format!("test function is nonzero at node {:?} outside the region", grid.multi(i)));
    }
    let c = problem.c0.major_symmetrized();
    let dw = hessian(&sol.w)?;
    let de = hessian(eta)?;
    let mut pairing = 0.0;
    for i in dw.valid().nodes(&grid) {
        let e = de.at(i);
        if e.norm_sq() != 0.0 {
            pairing += c.bilinear(e, dw.at(i))?;
        }
    }
    pairing *= grid.cell_volume();
    let eta_norm = eta.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if eta_norm == 0.0 || pairing == 0.0 {
        return Ok(0.0);
    }
    Ok(pairing.abs() / (eta_norm * sol.rhs_norm))
}

/// Energy and oscillation profiles of one solve on concentric balls.
#[derive(Debug, Clone, Serialize)]
pub struct DecayExperiment {
    pub energy: DecayProfile,
    pub oscillation: DecayProfile,
    pub residual_norm: f64,
    pub solver_iterations: usize,
    pub unknowns: usize,
}

/// Solves once and samples `∫_{B_ρ}|D²w|²` and `campanato(D²w, B_ρ)`.
pub fn decay_experiment(
    c0: &Tensor4,
    boundary_data: &ScalarField,
    region: &BallRegion,
    radii: &[f64],
    tol: f64,
) -> Result<(DecayExperiment, ScalarField)> {
    if let Some(r) = radii.iter().find(|&&r| r >= region.radius) {
        return usage(format!("decay radius {r} not inside the region of radius {}", region.radius));
    }
    let sol = solve_cc(
        &CCProblem { c0: *c0, region: region.clone(), boundary_data: boundary_data.clone() },
        tol,
    )?;
    let d2 = hessian(&sol.w)?;
    let (energy, osc) = profiles(&d2, &region.center, radii)?;
    Ok((
        DecayExperiment {
            energy,
            oscillation: osc,
            residual_norm: sol.residual_norm,
            solver_iterations: sol.solver_iterations,
            unknowns: sol.unknowns,
        },
        sol.w,
    ))
}

/// Energy and Campanato profiles of a matrix field on balls about `center`.
pub fn profiles(f: &MatField, center: &[f64], radii: &[f64]) -> Result<(DecayProfile, DecayProfile)> {
    let mut e = Vec::with_capacity(radii.len());
    let mut o = Vec::with_capacity(radii.len());
    for &r in radii {
        let ball = BallRegion::new(center.to_vec(), r);
        e.push(l2_norm_sq(f, &ball)?);
        o.push(campanato(f, &ball)?);
    }
    Ok((DecayProfile::new(radii.to_vec(), e)?, DecayProfile::new(radii.to_vec(), o)?))
}

/// Result of splitting a difference quotient into frozen part and correction.
#[derive(Debug, Clone, Serialize)]
pub struct FreezeSplit {
    #[serde(skip)]
    pub v: ScalarField,
    #[serde(skip)]
    pub w: ScalarField,
    pub zeta: f64,
    pub lambda: f64,
    pub energy_v: f64,
    pub energy_g: f64,
    pub bound_ratio: f64,
    pub within_bound: bool,
    pub center_hessian: SymMat,
    pub residual_norm: f64,
    pub solver_iterations: usize,
}

/// Frozen-coefficient split `g = v + w` of `g = u^{h_p}` on `ball`.
pub fn freeze_split(
    u: &ScalarField,
    f: &dyn MatrixFunctional,
    p: usize,
    ball: &BallRegion,
    tol: f64,
) -> Result<FreezeSplit> {
    let grid = *u.grid();
    let g = diff_quotient(u, p, 1)?;
    let d2u = hessian(u)?;
    let nodes = ball.nodes(&grid)?;
    let stride = grid.stride(p);
    let reach = d2u
        .valid()
        .cut(p, 0, 1)
        .ok_or_else(|| Error::Usage("grid too small for a split".into()))?;
    let mut center = [0usize; 3];
    for a in 0..grid.n() {
        center[a] = grid.nearest(ball.center[a]);
    }
    let center = grid.index(&center);
    let coeff = |i: usize| -> Result<Tensor4> {
        if !reach.contains(grid.n(), &grid.multi(i)) {
            return usage(format!("ball node {:?} lacks a Hessian pair", grid.multi(i)));
        }
        btilde_tensor(f, d2u.at(i), d2u.at(i + stride), DEFAULT_QUAD_POINTS)
    };
    let c_center = coeff(center)?;
    let lambda = legendre_constant(&c_center.major_symmetrized());
    if !(lambda > 0.0) {
        return Err(Error::Ellipticity(format!(
            "frozen coefficients at Hessian {:?} have Legendre constant {lambda:.6e}",
            d2u.at(center)
        )));
    }
    let mut zeta: f64 = 0.0;
    for &i in &nodes {
        zeta = zeta.max((coeff(i)? - c_center).norm());
    }
    let sol = solve_cc(
        &CCProblem { c0: c_center, region: ball.clone(), boundary_data: g.clone() },
        tol,
    )?;
    let mut v = vec![0.0; grid.len()];
    for &i in &nodes {
        v[i] = g.at(i) - sol.w.at(i);
    }
    let v = ScalarField::from_values(grid, v)?;
    let energy_v = l2_norm_sq(&hessian(&v)?, ball)?;
    let energy_g = l2_norm_sq(&hessian(&g)?, ball)?;
    // energies below what roundoff and the solver tolerance can resolve count as zero
    let h2 = grid.h() * grid.h();
    let volume = nodes.len() as f64 * grid.cell_volume();
    let floor = |eps: f64| (eps * g.sup_norm() / h2).powi(2) * volume;
    let g_floor = floor(64.0 * f64::EPSILON);
    let v_floor = floor(64.0 * f64::EPSILON + tol);
    let bound_ratio = if energy_g <= g_floor || energy_v <= v_floor {
        0.0
    } else if zeta == 0.0 {
        f64::INFINITY
    } else {
        lambda * lambda * energy_v / (zeta * zeta * energy_g)
    };
    Ok(FreezeSplit {
        v,
        w: sol.w,
        zeta,
        lambda,
        energy_v,
        energy_g,
        bound_ratio,
        within_bound: bound_ratio <= 1.0,
        center_hessian: *d2u.at(center),
        residual_norm: sol.residual_norm,
        solver_iterations: sol.solver_iterations,
    })
}

/// Smooth seeded data: a sum of low-frequency trigonometric modes.
pub fn smooth_random_field(grid: Grid, seed: u64, modes: usize) -> ScalarField {
    let mut r = rng::stream(seed, "boundary_data");
    let n = grid.n();
    let terms: Vec<(f64, Vec<f64>, f64)> = (0..modes)
        .map(|_| {
            let amp = r.gen_range(-1.0..1.0);
            let k: Vec<f64> = (0..n).map(|_| r.gen_range(-2.5..2.5)).collect();
            let phase = r.gen_range(0.0..std::f64::consts::TAU);
            (amp, k, phase)
        })
        .collect();
    ScalarField::from_fn(grid, |x| {
        terms
            .iter()
            .map(|(a, k, ph)| a * (k.iter().zip(x).map(|(ki, xi)| ki * xi).sum::<f64>() + ph).sin())
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::a_tensor;
    use crate::fields::quartic_bump;
    use crate::functionals::{HamStat, TraceQuadratic};

    fn grid(h: f64) -> Grid {
        Grid::with_spacing(2, h).unwrap()
    }

    fn anisotropic() -> Tensor4 {
        a_tensor(&HamStat, &SymMat::from_rows(&[vec![0.2, -0.1], vec![-0.1, 0.05]]).unwrap()).unwrap()
    }

    /// Data that equals `q` on the band but is zero inside the ball.
    fn band_only(g: Grid, ball: &BallRegion, q: impl Fn(&[f64]) -> f64) -> ScalarField {
        ScalarField::from_fn(g, |x| if ball.contains(x) { 0.0 } else { q(x) })
    }

    #[test]
    fn reproduces_quadratics() {
        let g = grid(1.0 / 16.0);
        let ball = BallRegion::new(vec![0.1, -0.05], 0.6);
        let q = |x: &[f64]| 0.7 * x[0] * x[0] - 0.4 * x[0] * x[1] + 0.2 * x[1] * x[1] + x[0] - 0.3;
        for c in [Tensor4::identity_pairing(2), anisotropic()] {
            let sol = solve_cc(
                &CCProblem { c0: c, region: ball.clone(), boundary_data: band_only(g, &ball, q) },
                1e-13,
            )
            .unwrap();
            assert!(sol.w.sup_distance(&ScalarField::from_fn(g, q)) < 1e-8);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = grid(1.0 / 16.0);
        let sol = solve_cc(
            &CCProblem {
                c0: anisotropic(),
                region: BallRegion::centered(2, 0.5),
                boundary_data: ScalarField::zeros(g),
            },
            1e-10,
        )
        .unwrap();
        assert_eq!(sol.w.sup_norm(), 0.0);
        assert_eq!(sol.solver_iterations, 0);
    }

    #[test]
    fn biharmonic_weak_form_holds() {
        let g = grid(1.0 / 32.0);
        let ball = BallRegion::centered(2, 0.7);
        let c = Tensor4::identity_pairing(2);
        let problem = CCProblem {
            c0: c,
            region: ball,
            boundary_data: ScalarField::from_fn(g, |x| x[0].powi(3) + (2.0 * x[1]).sin()),
        };
        let sol = solve_cc(&problem, 1e-10).unwrap();
        assert!(sol.residual_norm <= 1e-10);
        let mut r = rng::stream(5, "test_bumps");
        for _ in 0..20 {
            // supports stay inside the ball
            let center = [r.gen_range(-0.25..0.25), r.gen_range(-0.25..0.25)];
            let eta = quartic_bump(g, &center, r.gen_range(0.1..0.3));
            assert!(cc_weak_residual(&problem, &sol, &eta).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn energy_is_minimal() {
        let g = grid(1.0 / 16.0);
        let ball = BallRegion::centered(2, 0.6);
        let c = anisotropic().major_symmetrized();
        let data = ScalarField::from_fn(g, |x| (x[0] + 0.5 * x[1]).exp());
        let sol = solve_cc(&CCProblem { c0: c, region: ball.clone(), boundary_data: data }, 1e-12)
            .unwrap();
        let energy = |w: &ScalarField| {
            let d2 = hessian(w).unwrap();
            d2.valid().nodes(&g).iter().map(|&i| c.apply_quadratic(d2.at(i)).unwrap()).sum::<f64>()
        };
        let e0 = energy(&sol.w);
        let nodes = ball.nodes(&g).unwrap();
        let mut r = rng::stream(9, "perturb");
        for _ in 0..10 {
            let mut v = sol.w.values().to_vec();
            for &i in &nodes {
                v[i] += 1e-3 * r.gen_range(-1.0..1.0);
            }
            assert!(energy(&ScalarField::from_values(g, v).unwrap()) > e0);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let g = grid(1.0 / 16.0);
        let data = ScalarField::zeros(g);
        let bad = CCProblem { c0: -Tensor4::identity_pairing(2), region: BallRegion::centered(2, 0.5), boundary_data: data.clone() };
        assert!(matches!(solve_cc(&bad, 1e-10), Err(Error::Ellipticity(_))));
        let edge = CCProblem { c0: Tensor4::identity_pairing(2), region: BallRegion::centered(2, 0.95), boundary_data: data };
        assert!(solve_cc(&edge, 1e-10).is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let g = grid(1.0 / 16.0);
        let p = CCProblem {
            c0: anisotropic(),
            region: BallRegion::centered(2, 0.6),
            boundary_data: smooth_random_field(g, 3, 6),
        };
        assert_eq!(solve_cc(&p, 1e-10).unwrap().w, solve_cc(&p, 1e-10).unwrap().w);
    }

    #[test]
    fn quadratic_data_gives_trivial_profiles() {
        let g = grid(1.0 / 32.0);
        let q = ScalarField::from_fn(g, |x| x[0] * x[0] - 0.5 * x[0] * x[1]);
        let radii = [0.05, 0.1, 0.2, 0.4];
        let (exp, _) =
            decay_experiment(&anisotropic(), &q, &BallRegion::centered(2, 0.6), &radii, 1e-12).unwrap();
        let e = exp.energy.fitted_exponent.unwrap();
        assert!((e - 2.0).abs() < 0.1, "energy exponent {e}");
        assert!(exp.oscillation.values.iter().all(|&v| v < 1e-16));
    }

    #[test]
    fn split_examples() {
        let g = grid(1.0 / 16.0);
        let ball = BallRegion::centered(2, 0.4);
        let quad = ScalarField::from_fn(g, |x| 0.1 * x[0] * x[0] + 0.2 * x[0] * x[1]);
        let s = freeze_split(&quad, &HamStat, 0, &ball, 1e-12).unwrap();
        assert_eq!(s.bound_ratio, 0.0);
        assert!(s.v.sup_norm() < 1e-10);

        let quartic = ScalarField::from_fn(g, |x| x[0].powi(4) - 2.0 * x[0] * x[1].powi(3));
        let s = freeze_split(&quartic, &TraceQuadratic, 1, &ball, 1e-12).unwrap();
        assert_eq!(s.zeta, 0.0);
        assert!(s.v.sup_norm() < 1e-8);
    }
}
