//! Coefficient tensors induced by a catalog functional.
//!
//! For `F(M) = f(M²)` with `G = ∂f/∂w`, the double-divergence coefficients
//! are `a^{ij,kl} = G_il δ_jk + G_kj δ_il` (minor-symmetrized), which makes
//! `∂F/∂M_ij = Σ_pq a^{pq,ij} M_pq`. The linearized coefficients
//! `b^{ij,kl} = a^{ij,kl} + Σ_pq ∂a^{pq,kl}/∂M_ij M_pq` coincide with the
//! second derivative of `F`; the unit tests pin that index convention.

use crate::error::{Error, Result};
use crate::functionals::{grad_F, MatrixFunctional};
use crate::symtensor::{SymMat, Tensor4};

/// `∂a^{pq,kl}/∂M_ij`, stored densely with stride 3.
#[derive(Clone, PartialEq)]
pub struct Tensor6 {
    n: usize,
    e: Vec<f64>,
}

#[inline]
fn t6_index(p: usize, q: usize, k: usize, l: usize, i: usize, j: usize) -> usize {
    ((((p * 3 + q) * 3 + k) * 3 + l) * 3 + i) * 3 + j
}

impl Tensor6 {
    fn from_slices(n: usize, slices: &[[Tensor4; 3]; 3]) -> Self {
        let mut e = vec![0.0; 729];
        for p in 0..n {
            for q in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                e[t6_index(p, q, k, l, i, j)] = slices[i][j].get(p, q, k, l);
                            }
                        }
                    }
                }
            }
        }
        Tensor6 { n, e }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, k: usize, l: usize, i: usize, j: usize) -> f64 {
        self.e[t6_index(p, q, k, l, i, j)]
    }

    pub fn norm(&self) -> f64 {
        self.e.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|v| v.is_finite())
    }

    /// Largest violation of the three minor symmetries.
    pub fn minor_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        for i in 0..n {
                            for j in 0..n {
                                let v = self.get(p, q, k, l, i, j);
                                worst = worst
                                    .max((v - self.get(q, p, k, l, i, j)).abs())
                                    .max((v - self.get(p, q, l, k, i, j)).abs())
                                    .max((v - self.get(p, q, k, l, j, i)).abs());
                            }
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn sub(&self, other: &Tensor6) -> Tensor6 {
        Tensor6 {
            n: self.n,
            e: self.e.iter().zip(&other.e).map(|(a, b)| a - b).collect(),
        }
    }
}

impl std::fmt::Debug for Tensor6 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor6(n={}, |.|={})", self.n, self.norm())
    }
}

fn guarded(f: &dyn MatrixFunctional, m: &SymMat) -> Result<SymMat> {
    let w = m.gram();
    if !f.admits(&w) {
        return Err(Error::Domain(format!("{}: guard fails at M = {:?}", f.name(), m)));
    }
    Ok(w)
}

/// The `a`-pattern `G_il δ_jk + G_kj δ_il` for a given symmetric `G`.
fn a_pattern(g: &SymMat) -> Tensor4 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    Tensor4::from_fn(g.n(), |i, j, k, l| g.get(i, l) * d(j, k) + g.get(k, j) * d(i, l))
}

/// `a^{ij,kl}(M)` for `w = MᵀM`.
pub fn a_tensor(f: &dyn MatrixFunctional, m: &SymMat) -> Result<Tensor4> {
    let w = guarded(f, m)?;
    Ok(a_pattern(&f.grad(&w)))
}

/// `|∂F/∂M − Σ_pq a^{pq,··} M_pq|_F`; vanishes for every `f(MᵀM)` functional.
pub fn structure_residual(f: &dyn MatrixFunctional, m: &SymMat) -> Result<f64> {
    let g = grad_F(f, m)?;
    let a = a_tensor(f, m)?;
    Ok((g - a.contract_right(m)?).norm())
}

/// Slices `da[i][j] = ∂a/∂M_ij` (a Tensor4 over `(p,q,k,l)`), derivative
/// taken along the symmetric basis element for `(i,j)`.
fn da_slices(f: &dyn MatrixFunctional, m: &SymMat, w: &SymMat) -> [[Tensor4; 3]; 3] {
    let n = m.n();
    let h = f.hess(w);
    let mut out = [[Tensor4::zeros(n); 3]; 3];
    for i in 0..n {
        for j in i..n {
            let e = SymMat::basis(n, i, j);
            let dw = e.sym_product(m) * 2.0;
            let slice = a_pattern(&h.contract_trailing(&dw));
            out[i][j] = slice;
            out[j][i] = slice;
        }
    }
    out
}

/// `∂a^{pq,kl}/∂M_ij`, analytic through `w = M²` and the functional's Hessian.
pub fn da_tensor(f: &dyn MatrixFunctional, m: &SymMat) -> Result<Tensor6> {
    let w = guarded(f, m)?;
    Ok(Tensor6::from_slices(m.n(), &da_slices(f, m, &w)))
}

/// `a(A) + Σ_pq D[p][q][k][l][i][j] M_pq` where `D` is given by slices.
fn add_contracted(a: Tensor4, slices: &[[Tensor4; 3]; 3], m: &SymMat) -> Tensor4 {
    let n = m.n();
    let mut rows = [[SymMat::zeros(n); 3]; 3];
    for i in 0..n {
        for j in i..n {
            let r = slices[i][j].contract_right_unchecked(m);
            rows[i][j] = r;
            rows[j][i] = r;
        }
    }
    a + Tensor4::from_fn(n, |i, j, k, l| rows[i][j].get(k, l))
}

/// `b^{ij,kl} = a^{ij,kl} + Σ_pq ∂a^{pq,kl}/∂M_ij M_pq`.
pub fn b_tensor(f: &dyn MatrixFunctional, m: &SymMat) -> Result<Tensor4> {
    let w = guarded(f, m)?;
    let a = a_pattern(&f.grad(&w));
    Ok(add_contracted(a, &da_slices(f, m, &w), m))
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(count: usize) -> Vec<(f64, f64)> {
    assert!(count >= 1);
    let nf = count as f64;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        // Newton on P_count starting from the Chebyshev-like guess
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=count {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let p = if count == 1 { x } else { p1 };
            let pm1 = if count == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let weight = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * weight));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

pub const DEFAULT_QUAD_POINTS: usize = 8;

/// `b̃ = a(M1) + [∫₀¹ ∂a^{pq,kl}/∂M_ij(tM1 + (1−t)M0) dt] M0_pq`.
pub fn btilde_tensor(
    f: &dyn MatrixFunctional,
    m0: &SymMat,
    m1: &SymMat,
    quad_points: usize,
) -> Result<Tensor4> {
    if quad_points == 0 {
        return Err(Error::Usage("quad_points must be at least 1".into()));
    }
    if m0.n() != m1.n() {
        return Err(Error::Usage("segment endpoints differ in dimension".into()));
    }
    let n = m0.n();
    let a1 = a_tensor(f, m1)?;
    let mut avg = [[Tensor4::zeros(n); 3]; 3];
    for (t, wt) in gauss_legendre_unit(quad_points) {
        let mt = *m1 * t + *m0 * (1.0 - t);
        let w = guarded(f, &mt)?;
        let s = da_slices(f, &mt, &w);
        for i in 0..n {
            for j in 0..n {
                avg[i][j] = avg[i][j] + s[i][j] * wt;
            }
        }
    }
    Ok(add_contracted(a1, &avg, m0))
}
