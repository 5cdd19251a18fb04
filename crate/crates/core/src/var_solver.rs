//! Discrete minimization of `∫ F(D²u) dx` with clamped boundary data, and the
//! weak Euler–Lagrange residual at the result.
//!
//! The grid's outer two node layers form the clamped band; the energy sums
//! `F(D²u) hⁿ` over every node where the Hessian stencil fits. The gradient
//! is the exact adjoint scatter of `grad_F`, so the discrete Euler–Lagrange
//! equation is exactly `grad_energy = 0`.
//!
//! The descent direction can be preconditioned by the inverse of the
//! constant-coefficient operator `D^T c D hⁿ` (banded Cholesky, factored once),
//! with `c` the major-symmetrized `b` tensor at the mean initial Hessian. This
//! keeps the energy matrix-free while removing the `h⁻⁴` stiffness.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{a_tensor, b_tensor};
use crate::ellipticity::legendre_constant;
use crate::error::{usage, Error, Result};
use crate::fields::{
    hessian, hessian_adjoint_into, hessian_into, quartic_bump, quartic_bump_hessian, Grid, IndexBox,
    ScalarField,
};
use crate::functionals::{eval_F, grad_F, MatrixFunctional};
use crate::linalg::BandedCholesky;
use crate::symtensor::{SymMat, Tensor4};

/// Norm used when comparing node Hessians against a certified radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundNorm {
    Frobenius,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianBound {
    pub radius: f64,
    pub norm: BoundNorm,
}

impl HessianBound {
    fn measure(&self, m: &SymMat) -> f64 {
        match self.norm {
            BoundNorm::Frobenius => m.norm(),
            BoundNorm::Operator => m.operator_norm(),
        }
    }
}

#[derive(Clone)]
pub struct VarProblem {
    pub f: Arc<dyn MatrixFunctional>,
    /// Only the two outer node layers are read.
    pub boundary_data: ScalarField,
    pub init: ScalarField,
    /// Certified region of Hessian space; `init` must lie inside it.
    pub hessian_bound: Option<HessianBound>,
}

impl VarProblem {
    /// Problem whose initial guess is the boundary data itself.
    pub fn new(f: Arc<dyn MatrixFunctional>, boundary_data: ScalarField) -> VarProblem {
        VarProblem { f, init: boundary_data.clone(), boundary_data, hessian_bound: None }
    }

    pub fn grid(&self) -> &Grid {
        self.boundary_data.grid()
    }

    /// Nodes where the energy density is evaluated.
    pub fn energy_box(&self) -> IndexBox {
        let g = self.grid();
        g.full_box().shrink(g.n(), 1).expect("grids have at least 9 nodes per axis")
    }

    /// Free nodes (everything but the clamped band).
    pub fn unknown_box(&self) -> IndexBox {
        let g = self.grid();
        g.full_box().shrink(g.n(), 2).expect("grids have at least 9 nodes per axis")
    }

    fn check_field(&self, u: &ScalarField) -> Result<()> {
        if u.grid() != self.grid() {
            return usage("field grid differs from the problem grid");
        }
        if *u.valid() != self.grid().full_box() {
            return usage("field must be defined on the whole grid");
        }
        Ok(())
    }
}

fn node_label(grid: &Grid, i: usize) -> String {
    let k = grid.multi(i);
    let x = grid.point(i);
    format!("node {:?} at x = {:?}", &k[..grid.n()], &x[..grid.n()])
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// Node-wise evaluation engine over one grid.
struct Engine<'a> {
    problem: &'a VarProblem,
    grid: Grid,
    energy_nodes: Vec<usize>,
    unknowns: Vec<usize>,
    weight: f64,
    hess: Vec<SymMat>,
    scatter: Vec<f64>,
    full: Vec<f64>,
}

struct Eval {
    energy: f64,
    /// Sum of `|F|` hⁿ, the roundoff scale of `energy`.
    magnitude: f64,
    grad: Vec<f64>,
    max_hessian: f64,
}

impl<'a> Engine<'a> {
    fn new(problem: &'a VarProblem) -> Engine<'a> {
        let grid = *problem.grid();
        Engine {
            problem,
            grid,
            energy_nodes: problem.energy_box().nodes(&grid),
            unknowns: problem.unknown_box().nodes(&grid),
            weight: grid.cell_volume(),
            hess: vec![SymMat::zeros(grid.n()); grid.len()],
            scatter: vec![0.0; grid.len()],
            full: problem.boundary_data.values().to_vec(),
        }
    }

    fn load(&mut self, x: &[f64]) {
        for (k, &i) in self.unknowns.iter().enumerate() {
            self.full[i] = x[k];
        }
    }

    fn unknowns_of(&self, u: &ScalarField) -> Vec<f64> {
        self.unknowns.iter().map(|&i| u.at(i)).collect()
    }

    fn field(&self) -> ScalarField {
        ScalarField::from_values(self.grid, self.full.clone()).expect("iterates stay finite")
    }

    /// Energy only; `Err` names the first node whose Hessian fails the guard.
    fn energy(&mut self, x: &[f64]) -> Result<(f64, f64)> {
        self.load(x);
        hessian_into(&self.grid, &self.full, &self.energy_nodes, &mut self.hess);
        let f = &*self.problem.f;
        let mut vals = Vec::with_capacity(self.energy_nodes.len());
        for &i in &self.energy_nodes {
            let v = eval_F(f, &self.hess[i])
                .map_err(|e| Error::Domain(format!("{} ({e})", node_label(&self.grid, i))))?;
            vals.push(v);
        }
        let e = compensated_sum(vals.iter().copied()) * self.weight;
        let mag = compensated_sum(vals.iter().map(|v| v.abs())) * self.weight;
        Ok((e, mag))
    }

    fn eval(&mut self, x: &[f64], bound: Option<&HessianBound>) -> Result<Eval> {
        let (energy, magnitude) = self.energy(x)?;
        let f = &*self.problem.f;
        let mut max_hessian: f64 = 0.0;
        for &i in &self.energy_nodes {
            let m = self.hess[i];
            max_hessian = max_hessian.max(match bound {
                Some(b) => b.measure(&m),
                None => m.norm(),
            });
            self.hess[i] = grad_F(f, &m)? * self.weight;
        }
        self.scatter.iter_mut().for_each(|v| *v = 0.0);
        hessian_adjoint_into(&self.grid, &self.hess, &self.energy_nodes, &mut self.scatter);
        let grad = self.unknowns.iter().map(|&i| self.scatter[i]).collect();
        Ok(Eval { energy, magnitude, grad, max_hessian })
    }

    /// Energy of the nodes whose Hessian involves unknown `k`.
    fn local_energy(&mut self, x: &[f64], k: usize) -> Result<f64> {
        self.load(x);
        let center = self.grid.multi(self.unknowns[k]);
        let mut b = self.problem.energy_box();
        for a in 0..self.grid.n() {
            b.lo[a] = b.lo[a].max(center[a] - 1);
            b.hi[a] = b.hi[a].min(center[a] + 1);
        }
        let nodes = b.nodes(&self.grid);
        hessian_into(&self.grid, &self.full, &nodes, &mut self.hess);
        let f = &*self.problem.f;
        let vals: Result<Vec<f64>> = nodes.iter().map(|&i| eval_F(f, &self.hess[i])).collect();
        Ok(compensated_sum(vals?.into_iter()) * self.weight)
    }
}

/// `Σ_interior F(D²u) hⁿ`.
pub fn energy(problem: &VarProblem, u: &ScalarField) -> Result<f64> {
    problem.check_field(u)?;
    let mut eng = Engine::new(problem);
    eng.full = u.values().to_vec();
    let x = eng.unknowns_of(u);
    Ok(eng.energy(&x)?.0)
}

/// Exact gradient of [`energy`] with respect to the free node values; zero on the band.
pub fn grad_energy(problem: &VarProblem, u: &ScalarField) -> Result<ScalarField> {
    problem.check_field(u)?;
    let mut eng = Engine::new(problem);
    eng.full = u.values().to_vec();
    let x = eng.unknowns_of(u);
    let ev = eng.eval(&x, None)?;
    let mut out = vec![0.0; eng.grid.len()];
    for (k, &i) in eng.unknowns.iter().enumerate() {
        out[i] = ev.grad[k];
    }
    ScalarField::from_values(eng.grid, out)
}

/// Matrix of `D^T c D hⁿ` on the free nodes, banded-Cholesky factored.
struct Preconditioner {
    chol: BandedCholesky,
}

/// `S(d)`: the Hessian stencil weight a unit node value contributes at offset `d`.
fn stencil_weight(n: usize, d: &[i64], h2: f64) -> SymMat {
    let mut s = SymMat::zeros(n);
    for a in 0..n {
        let others_zero = |skip: &[usize]| (0..n).all(|c| skip.contains(&c) || d[c] == 0);
        if others_zero(&[a]) {
            match d[a] {
                0 => s.set(a, a, -2.0 / h2),
                1 | -1 => s.set(a, a, 1.0 / h2),
                _ => {}
            }
        }
        for b in a + 1..n {
            if d[a].abs() == 1 && d[b].abs() == 1 && others_zero(&[a, b]) {
                s.set(a, b, (d[a] * d[b]) as f64 / (4.0 * h2));
            }
        }
    }
    s
}

/// `K(o) = hⁿ Σ_x c(S(x), S(x − o))` for offsets `o ∈ [−2, 2]ⁿ`, indexed base 5.
fn operator_kernel(c: &Tensor4, grid: &Grid) -> Vec<f64> {
    let n = grid.n();
    let h2 = grid.h() * grid.h();
    let decode = |mut idx: usize, span: usize, shift: i64| -> Vec<i64> {
        let mut d = vec![0i64; n];
        for a in (0..n).rev() {
            d[a] = (idx % span) as i64 - shift;
            idx /= span;
        }
        d
    };
    let mut k = vec![0.0; 5usize.pow(n as u32)];
    for (oi, slot) in k.iter_mut().enumerate() {
        let o = decode(oi, 5, 2);
        let mut s = 0.0;
        for xi in 0..3usize.pow(n as u32) {
            let x = decode(xi, 3, 1);
            let y: Vec<i64> = x.iter().zip(&o).map(|(a, b)| a - b).collect();
            if y.iter().all(|v| v.abs() <= 1) {
                s += c.bilinear(&stencil_weight(n, &x, h2), &stencil_weight(n, &y, h2)).unwrap();
            }
        }
        *slot = s * grid.cell_volume();
    }
    k
}

/// Largest band storage (in f64 entries) the preconditioner may allocate.
const MAX_BAND_ENTRIES: usize = 40_000_000;

impl Preconditioner {
    fn build(c: &Tensor4, problem: &VarProblem) -> Result<Option<Preconditioner>> {
        let grid = *problem.grid();
        let n = grid.n();
        let ub = problem.unknown_box();
        let width = ub.hi[0] - ub.lo[0] + 1;
        let count = width.pow(n as u32);
        let p: usize = (0..n).map(|a| 2 * width.pow((n - 1 - a) as u32)).sum();
        if count * (p + 1) > MAX_BAND_ENTRIES {
            return Ok(None);
        }
        let kernel = operator_kernel(c, &grid);
        let multi = |mut i: usize| {
            let mut k = [0usize; 3];
            for a in (0..n).rev() {
                k[a] = i % width;
                i /= width;
            }
            k
        };
        let entry = |i: usize, j: usize| {
            let (ki, kj) = (multi(i), multi(j));
            let mut idx = 0usize;
            for a in 0..n {
                let d = kj[a] as i64 - ki[a] as i64;
                if d.abs() > 2 {
                    return 0.0;
                }
                idx = idx * 5 + (d + 2) as usize;
            }
            kernel[idx]
        };
        Ok(Some(Preconditioner { chol: BandedCholesky::factor(count, p, entry)? }))
    }

    fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.chol.solve(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradientDescent,
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeOptions {
    /// Target for `max |grad_energy|`.
    pub tol: f64,
    pub max_iter: usize,
    pub method: Method,
    pub memory: usize,
    pub precondition: bool,
    pub armijo_c: f64,
    pub backtrack: f64,
    /// Free nodes whose gradient entry is checked against central differences.
    pub fd_check_nodes: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            tol: 1e-10,
            max_iter: 2000,
            method: Method::Lbfgs,
            memory: 8,
            precondition: true,
            armijo_c: 1e-4,
            backtrack: 0.5,
            fd_check_nodes: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationCap,
    LineSearchFailure,
}

/// Per-iteration record of a minimization (index 0 is the initial guess).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub energy: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Accepted-step decrease; from energy values when resolvable, otherwise
    /// the trapezoid estimate `−½α(g₀ + g₁)·d`.
    pub decrease: Vec<f64>,
    pub decrease_from_energy: Vec<bool>,
    pub step: Vec<f64>,
    pub max_hessian: Vec<f64>,
    pub warnings: Vec<String>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub fd_check_error: Option<f64>,
    pub preconditioned: bool,
    pub options: MinimizeOptions,
}

impl SolveTrace {
    /// Energy strictly decreased at every step whose decrease was resolvable
    /// from energy values, and every accepted step had a positive decrease.
    pub fn strictly_decreasing(&self) -> bool {
        self.decrease.iter().all(|&d| d > 0.0)
            && self
                .energy
                .windows(2)
                .zip(&self.decrease_from_energy)
                .all(|(w, &resolved)| !resolved || w[1] < w[0])
    }
}

#[derive(Debug, Clone)]
pub struct VarSolution {
    pub u: ScalarField,
    pub trace: SolveTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Reference coefficients for the preconditioner: `b` at the mean initial Hessian.
fn reference_coefficients(problem: &VarProblem) -> Result<Tensor4> {
    let d2 = hessian(&problem.init)?;
    let nodes = problem.energy_box().nodes(problem.grid());
    let n = problem.grid().n();
    let mut mean = SymMat::zeros(n);
    for &i in &nodes {
        mean += *d2.at(i);
    }
    let mean = mean * (1.0 / nodes.len() as f64);
    let c = b_tensor(&*problem.f, &mean)?.major_symmetrized();
    if legendre_constant(&c) > 0.0 {
        Ok(c)
    } else {
        Ok(Tensor4::identity_pairing(n))
    }
}

/// Descent with Armijo backtracking until `max |grad| / hⁿ ≤ tol`.
pub fn minimize(problem: &VarProblem, opts: &MinimizeOptions) -> Result<VarSolution> {
    problem.check_field(&problem.init)?;
    let grid = *problem.grid();
    let n = grid.n();
    if !(opts.tol > 0.0 && opts.armijo_c > 0.0 && opts.armijo_c < 1.0) {
        return usage("tolerance and Armijo constant must be positive (c < 1)");
    }
    if !(opts.backtrack > 0.0 && opts.backtrack < 1.0) {
        return usage("backtracking factor must lie in (0, 1)");
    }
    // band of init must agree with the boundary data
    let ub = problem.unknown_box();
    for i in 0..grid.len() {
        if !ub.contains(n, &grid.multi(i)) {
            let (a, b) = (problem.init.at(i), problem.boundary_data.at(i));
            if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
                return usage(format!("init differs from boundary data at band {}", node_label(&grid, i)));
            }
        }
    }
    let bound = problem.hessian_bound;
    let d2 = hessian(&problem.init)?;
    for i in problem.energy_box().nodes(&grid) {
        let m = d2.at(i);
        if !problem.f.admits(&m.gram()) {
            return Err(Error::Domain(format!(
                "functional guard fails for the initial Hessian at {}",
                node_label(&grid, i)
            )));
        }
        if let Some(b) = bound {
            if b.measure(m) > b.radius {
                return Err(Error::Domain(format!(
                    "initial Hessian at {} has norm {:.4} outside the certified radius {}",
                    node_label(&grid, i),
                    b.measure(m),
                    b.radius
                )));
            }
        }
    }

    let mut eng = Engine::new(problem);
    let mut x = eng.unknowns_of(&problem.init);
    let mut cur = eng.eval(&x, bound.as_ref())?;

    let precond = if opts.precondition {
        Preconditioner::build(&reference_coefficients(problem)?, problem)?
    } else {
        None
    };
    let mut trace = SolveTrace {
        energy: vec![cur.energy],
        grad_norm: vec![sup(&cur.grad)],
        decrease: Vec::new(),
        decrease_from_energy: Vec::new(),
        step: Vec::new(),
        max_hessian: vec![cur.max_hessian],
        warnings: Vec::new(),
        status: SolveStatus::IterationCap,
        iterations: 0,
        fd_check_error: None,
        preconditioned: precond.is_some(),
        options: *opts,
    };
    if opts.precondition && precond.is_none() {
        trace.warnings.push("grid too large for the banded preconditioner; running unpreconditioned".into());
    }
    trace.fd_check_error = fd_check(&mut eng, &x, &cur.grad, cur.max_hessian, opts.fd_check_nodes)?;

    let apply_h0 = |g: &[f64], gamma: f64| -> Vec<f64> {
        match &precond {
            Some(p) => p.apply(g),
            None => g.iter().map(|v| gamma * v).collect(),
        }
    };
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut gamma = 1.0 / sup(&cur.grad).max(1e-300);
    let mut last_bb: Option<f64> = None;

    while trace.iterations < opts.max_iter {
        if sup(&cur.grad) <= opts.tol {
            trace.status = SolveStatus::Converged;
            break;
        }
        let g = &cur.grad;
        let mut d = match opts.method {
            Method::Lbfgs => {
                let mut q = g.clone();
                let mut alphas = Vec::with_capacity(hist.len());
                for (s, y, rho) in hist.iter().rev() {
                    let a = rho * dot(s, &q);
                    q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                    alphas.push(a);
                }
                let mut r = apply_h0(&q, gamma);
                for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                    let b = rho * dot(y, &r);
                    r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
                }
                r
            }
            Method::GradientDescent => apply_h0(g, 1.0),
        };
        d.iter_mut().for_each(|v| *v = -*v);
        let mut gd = dot(g, &d);
        if !(gd < 0.0) {
            hist.clear();
            d = apply_h0(g, gamma).into_iter().map(|v| -v).collect();
            gd = dot(g, &d);
        }
        let mut alpha = match (opts.method, &precond, last_bb) {
            (Method::GradientDescent, None, Some(bb)) => bb,
            (Method::GradientDescent, None, None) => gamma,
            _ => 1.0,
        };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let (e1, _) = match eng.energy(&trial) {
                Ok(v) => v,
                Err(Error::Domain(_)) => {
                    alpha *= opts.backtrack;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let noise = 64.0 * f64::EPSILON * cur.magnitude;
            if e1 <= cur.energy + opts.armijo_c * alpha * gd && (cur.energy - e1).abs() > noise {
                let next = eng.eval(&trial, bound.as_ref())?;
                accepted = Some((trial, next, cur.energy - e1, true));
                break;
            }
            if (e1 - cur.energy).abs() <= noise {
                // energy differences are below roundoff: use the trapezoid estimate
                let next = eng.eval(&trial, bound.as_ref())?;
                let g1d = dot(&next.grad, &d);
                let est = -0.5 * alpha * (gd + g1d);
                if est >= -opts.armijo_c * alpha * gd && est > 0.0 {
                    accepted = Some((trial, next, est, false));
                    break;
                }
            }
            alpha *= opts.backtrack;
        }
        let Some((x1, next, dec, resolved)) = accepted else {
            trace.status = SolveStatus::LineSearchFailure;
            trace.warnings.push(format!("line search failed at iteration {}", trace.iterations));
            break;
        };
        let s: Vec<f64> = x1.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            gamma = sy / dot(&y, &y);
            last_bb = Some(dot(&s, &s) / sy);
            hist.push((s, y, 1.0 / sy));
            if hist.len() > opts.memory.max(1) {
                hist.remove(0);
            }
        }
        x = x1;
        cur = next;
        trace.iterations += 1;
        trace.energy.push(cur.energy);
        trace.grad_norm.push(sup(&cur.grad));
        trace.decrease.push(dec);
        trace.decrease_from_energy.push(resolved);
        trace.step.push(alpha);
        trace.max_hessian.push(cur.max_hessian);
        if let Some(b) = bound {
            if cur.max_hessian > b.radius {
                trace.warnings.push(format!(
                    "iteration {}: max node Hessian {:.4} exceeds certified radius {}",
                    trace.iterations, cur.max_hessian, b.radius
                ));
            }
        }
    }
    if trace.status == SolveStatus::IterationCap && sup(&cur.grad) <= opts.tol {
        trace.status = SolveStatus::Converged;
    }
    eng.load(&x);
    Ok(VarSolution { u: eng.field(), trace })
}

/// Largest relative error between `grad` and Richardson-extrapolated central
/// differences of the local energy, at the free nodes with the largest gradient.
///
/// The step is `10⁻³ h² max(1, |D²u|)`: small against the Hessian, large
/// enough that energy differences sit well above roundoff.
fn fd_check(eng: &mut Engine, x: &[f64], grad: &[f64], hess_scale: f64, count: usize) -> Result<Option<f64>> {
    if count == 0 || x.is_empty() {
        return Ok(None);
    }
    let h = eng.grid.h();
    let step = 1e-3 * h * h * hess_scale.max(1.0);
    let gscale = sup(grad);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for &k in order.iter().take(count) {
        let mut central = |d: f64| -> Result<f64> {
            probe[k] = x[k] + d;
            let ep = eng.local_energy(&probe, k)?;
            probe[k] = x[k] - d;
            let em = eng.local_energy(&probe, k)?;
            probe[k] = x[k];
            Ok((ep - em) / (2.0 * d))
        };
        let fd = (4.0 * central(0.5 * step)? - central(step)?) / 3.0;
        let denom = grad[k].abs().max(1e-3 * gscale).max(1e-300);
        worst = worst.max((fd - grad[k]).abs() / denom);
    }
    Ok(Some(worst))
}

/// How `D²η` enters the weak residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Stencil Hessian of the sampled bump: the discrete Euler–Lagrange pairing.
    Discrete,
    /// Exact Hessian of the bump: measures consistency with the continuous equation.
    Analytic,
}

/// Centers (in `[−0.4, 0.4]ⁿ`) and radii of the deterministic test bumps; every
/// support stays inside `|x|∞ ≤ 0.8`.
pub fn test_bumps(n: usize, count: usize) -> Vec<(Vec<f64>, f64)> {
    // additive recurrence with the generalized golden ratio of dimension n
    let phi = match n {
        1 => 1.618_033_988_749_895,
        2 => 1.324_717_957_244_746,
        _ => 1.220_744_084_605_759_5,
    };
    let alpha: Vec<f64> = (1..=n).map(|k| 1.0 / f64::powi(phi, k as i32)).collect();
    let widths = [0.4, 0.2, 0.1];
    (0..count)
        .map(|t| {
            let c = alpha.iter().map(|a| 0.8 * ((0.5 + (t + 1) as f64 * a).fract() - 0.5)).collect();
            (c, widths[t % widths.len()])
        })
        .collect()
}

/// `max_η |Σ a(D²u) : D²u : D²η hⁿ| / ‖D²η‖_{L²}` over `test_count` bumps.
pub fn weak_residual(problem: &VarProblem, u: &ScalarField, test_count: usize, pairing: Pairing) -> Result<f64> {
    problem.check_field(u)?;
    let grid = *problem.grid();
    let n = grid.n();
    let d2 = hessian(u)?;
    let nodes = problem.energy_box().nodes(&grid);
    let f = &*problem.f;
    // a(M):M per node, computed once
    let mut flux = vec![SymMat::zeros(n); grid.len()];
    for &i in &nodes {
        let m = d2.at(i);
        flux[i] = a_tensor(f, m)
            .map_err(|e| Error::Domain(format!("{} ({e})", node_label(&grid, i))))?
            .contract_right(m)?;
    }
    let w = grid.cell_volume();
    let mut worst: f64 = 0.0;
    for (center, radius) in test_bumps(n, test_count) {
        let de = match pairing {
            Pairing::Discrete => Some(hessian(&quartic_bump(grid, &center, radius))?),
            Pairing::Analytic => None,
        };
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &nodes {
            let e = match &de {
                Some(de) => *de.at(i),
                None => quartic_bump_hessian(&center, radius, &grid.point(i)[..n]),
            };
            num += flux[i].dot(&e);
            den += e.norm_sq();
        }
        if den > 0.0 {
            worst = worst.max((num * w).abs() / (den * w).sqrt());
        }
    }
    Ok(worst)
}
