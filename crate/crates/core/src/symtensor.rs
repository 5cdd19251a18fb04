//! Small-dimension symmetric matrices and fourth-order coefficient tensors.
//!
//! Everything here is dense and sized for `n <= 3`. Symmetric matrices are
//! packed once per unordered index pair (diagonal first, then the upper
//! off-diagonals in row order), which is also the component order of the
//! isometric vectorization used for quadratic-form eigenanalysis.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

pub const MAX_DIM: usize = 3;

/// Number of independent components of a symmetric `n x n` matrix.
pub const fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed position of entry `(i, j)` for dimension `n`.
#[inline]
fn packed(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    if a == b {
        a
    } else {
        // off-diagonals after the n diagonal entries, upper triangle row by row
        let mut idx = n;
        for r in 0..a {
            idx += n - r - 1;
        }
        idx + (b - a - 1)
    }
}

/// Unordered index pair for packed position `p`.
pub fn pair_of(n: usize, p: usize) -> (usize, usize) {
    for i in 0..n {
        for j in i..n {
            if packed(n, i, j) == p {
                return (i, j);
            }
        }
    }
    panic!("packed index {p} out of range for n = {n}");
}

/// Symmetric `n x n` matrix, `1 <= n <= 3`.
#[derive(Clone, Copy, PartialEq)]
pub struct SymMat {
    n: usize,
    e: [f64; 6],
}

impl SymMat {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "dimension {n} unsupported");
        SymMat { n, e: [0.0; 6] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds `½(f(i,j) + f(j,i))`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = if i == j { f(i, i) } else { 0.5 * (f(i, j) + f(j, i)) };
                m.set(i, j, v);
            }
        }
        m
    }

    /// Builds from full rows; the rows must be symmetric to 1e-12 relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if !(1..=MAX_DIM).contains(&n) || rows.iter().any(|r| r.len() != n) {
            return usage(format!("expected a square matrix of size 1..=3, got {n} rows"));
        }
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() {
                    return usage(format!("non-finite matrix entry ({i},{j})"));
                }
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return usage(format!("matrix not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    /// Symmetric basis element `½(e_a e_bᵀ + e_b e_aᵀ)` (or `e_a e_aᵀ`).
    ///
    /// `Σ_ij G_ij E_ij = G_ab` for symmetric `G`, so directional derivatives
    /// along this element are exactly the packed partials used everywhere.
    pub fn basis(n: usize, a: usize, b: usize) -> Self {
        let mut m = Self::zeros(n);
        m.set(a, b, if a == b { 1.0 } else { 0.5 });
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.e[packed(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.e[packed(self.n, i, j)] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.e[..sym_dim(self.n)].iter().all(|v| v.is_finite())
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius inner product `Σ_ij A_ij B_ij`.
    pub fn dot(&self, other: &SymMat) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute eigenvalue.
    pub fn operator_norm(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j));
        let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Full matrix product `A B` as a plain array (not symmetric in general).
    pub fn matmul(&self, other: &SymMat) -> [[f64; 3]; 3] {
        let n = self.n;
        let mut out = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += self.get(i, k) * other.get(k, j);
                }
                out[i][j] = s;
            }
        }
        out
    }

    /// Symmetrized product `½(AB + BA)`.
    pub fn sym_product(&self, other: &SymMat) -> SymMat {
        let ab = self.matmul(other);
        SymMat::from_fn(self.n, |i, j| 0.5 * (ab[i][j] + ab[j][i]))
    }

    /// `MᵀM = M²` for symmetric `M`.
    pub fn gram(&self) -> SymMat {
        self.sym_product(self)
    }

    pub fn det(&self) -> f64 {
        match self.n {
            1 => self.get(0, 0),
            2 => self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(0, 1),
            _ => {
                let m = |i, j| self.get(i, j);
                m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(1, 2))
                    - m(0, 1) * (m(0, 1) * m(2, 2) - m(1, 2) * m(0, 2))
                    + m(0, 2) * (m(0, 1) * m(1, 2) - m(1, 1) * m(0, 2))
            }
        }
    }

    /// Inverse by cofactors; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<SymMat> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = |i, j| self.get(i, j);
        let mut inv = SymMat::zeros(self.n);
        match self.n {
            1 => inv.set(0, 0, 1.0 / d),
            2 => {
                inv.set(0, 0, m(1, 1) / d);
                inv.set(1, 1, m(0, 0) / d);
                inv.set(0, 1, -m(0, 1) / d);
            }
            _ => {
                inv.set(0, 0, (m(1, 1) * m(2, 2) - m(1, 2) * m(1, 2)) / d);
                inv.set(1, 1, (m(0, 0) * m(2, 2) - m(0, 2) * m(0, 2)) / d);
                inv.set(2, 2, (m(0, 0) * m(1, 1) - m(0, 1) * m(0, 1)) / d);
                inv.set(0, 1, (m(0, 2) * m(1, 2) - m(0, 1) * m(2, 2)) / d);
                inv.set(0, 2, (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / d);
                inv.set(1, 2, (m(0, 1) * m(0, 2) - m(0, 0) * m(1, 2)) / d);
            }
        }
        Some(inv)
    }

    /// `QᵀMQ` for an orthogonal (or any) `Q` given as rows.
    pub fn congruence(&self, q: &[[f64; 3]; 3]) -> SymMat {
        let n = self.n;
        SymMat::from_fn(n, |i, j| {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += q[a][i] * self.get(a, b) * q[b][j];
                }
            }
            s
        })
    }

    /// Isometric vectorization: diagonal entries, then `√2`-scaled off-diagonals.
    pub fn to_symvec(&self) -> Vec<f64> {
        let n = self.n;
        (0..sym_dim(n))
            .map(|p| {
                let (i, j) = pair_of(n, p);
                if i == j {
                    self.e[p]
                } else {
                    std::f64::consts::SQRT_2 * self.e[p]
                }
            })
            .collect()
    }

    pub fn from_symvec(n: usize, v: &[f64]) -> Result<SymMat> {
        if v.len() != sym_dim(n) {
            return usage(format!("symvec length {} does not match n = {n}", v.len()));
        }
        let mut m = SymMat::zeros(n);
        for (p, &x) in v.iter().enumerate() {
            let (i, j) = pair_of(n, p);
            m.e[p] = if i == j { x } else { x / std::f64::consts::SQRT_2 };
        }
        Ok(m)
    }
}

impl fmt::Debug for SymMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMat{:?}", self.rows())
    }
}

impl Add for SymMat {
    type Output = SymMat;
    fn add(mut self, rhs: SymMat) -> SymMat {
        debug_assert_eq!(self.n, rhs.n);
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a += b;
        }
        self
    }
}

impl AddAssign for SymMat {
    fn add_assign(&mut self, rhs: SymMat) {
        *self = *self + rhs;
    }
}

impl Sub for SymMat {
    type Output = SymMat;
    fn sub(self, rhs: SymMat) -> SymMat {
        self + (-rhs)
    }
}

impl Neg for SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        self * -1.0
    }
}

impl Mul<f64> for SymMat {
    type Output = SymMat;
    fn mul(mut self, s: f64) -> SymMat {
        for a in self.e.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Serialize for SymMat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[inline]
fn t4_index(i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * 3 + j) * 3 + k) * 3 + l
}

/// Fourth-order tensor `T[i][j][k][l]` with the minor symmetries
/// `(i,j)` and `(k,l)` enforced on construction.
#[derive(Clone, Copy, PartialEq)]
pub struct Tensor4 {
    n: usize,
    e: [f64; 81],
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&n), "dimension {n} unsupported");
        Tensor4 { n, e: [0.0; 81] }
    }

    /// Builds from raw entries, symmetrizing in `(i,j)` and in `(k,l)`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut raw = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        raw.e[t4_index(i, j, k, l)] = f(i, j, k, l);
                    }
                }
            }
        }
        raw.minor_symmetrized()
    }

    /// `δ_ik δ_jl`, symmetrized: the pairing whose quadratic form is `|ξ|²_F`.
    pub fn identity_pairing(n: usize) -> Self {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Self::from_fn(n, |i, j, k, l| d(i, k) * d(j, l))
    }

    pub fn minor_symmetrized(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        // pairwise sums keep the result exactly symmetric
                        let x = self.e[t4_index(i, j, k, l)] + self.e[t4_index(j, i, k, l)];
                        let y = self.e[t4_index(i, j, l, k)] + self.e[t4_index(j, i, l, k)];
                        out.e[t4_index(i, j, k, l)] = 0.25 * (x + y);
                    }
                }
            }
        }
        out
    }

    /// Swap of the index pairs, `T[k][l][i][j]`.
    pub fn transpose_pairs(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        out.e[t4_index(i, j, k, l)] = self.e[t4_index(k, l, i, j)];
                    }
                }
            }
        }
        out
    }

    /// `½(T[ijkl] + T[klij])`.
    pub fn major_symmetrized(&self) -> Self {
        (*self + self.transpose_pairs()) * 0.5
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.e[t4_index(i, j, k, l)]
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm over all `n⁴` entries.
    pub fn norm(&self) -> f64 {
        self.e.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest deviation from the minor symmetries (0 by construction).
    pub fn minor_asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = self.get(i, j, k, l);
                        worst = worst
                            .max((v - self.get(j, i, k, l)).abs())
                            .max((v - self.get(i, j, l, k)).abs());
                    }
                }
            }
        }
        worst
    }

    fn check_dim(&self, xi: &SymMat) -> Result<()> {
        if xi.n() != self.n {
            return usage(format!(
                "dimension mismatch: tensor n = {}, matrix n = {}",
                self.n,
                xi.n()
            ));
        }
        Ok(())
    }

    /// `Σ_ijkl T[i][j][k][l] ξ_ij ξ_kl`.
    pub fn apply_quadratic(&self, xi: &SymMat) -> Result<f64> {
        self.bilinear(xi, xi)
    }

    /// `Σ_ijkl T[i][j][k][l] ξ_ij η_kl`.
    pub fn bilinear(&self, xi: &SymMat, eta: &SymMat) -> Result<f64> {
        self.check_dim(xi)?;
        self.check_dim(eta)?;
        Ok(self.contract_right_unchecked(xi).dot(eta))
    }

    /// Contracts the leading pair: `M_kl = Σ_ij T[i][j][k][l] ξ_ij`.
    pub fn contract_right(&self, xi: &SymMat) -> Result<SymMat> {
        self.check_dim(xi)?;
        Ok(self.contract_right_unchecked(xi))
    }

    pub(crate) fn contract_right_unchecked(&self, xi: &SymMat) -> SymMat {
        let n = self.n;
        let mut raw = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                let x = xi.get(i, j);
                if x == 0.0 {
                    continue;
                }
                for k in 0..n {
                    for l in 0..n {
                        raw[k][l] += self.e[t4_index(i, j, k, l)] * x;
                    }
                }
            }
        }
        SymMat::from_fn(n, |k, l| raw[k][l])
    }

    /// Contracts the trailing pair: `N_ij = Σ_kl T[i][j][k][l] ξ_kl`.
    pub fn contract_trailing(&self, xi: &SymMat) -> SymMat {
        let n = self.n;
        SymMat::from_fn(n, |i, j| {
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    s += self.e[t4_index(i, j, k, l)] * xi.get(k, l);
                }
            }
            s
        })
    }

    /// Matrix `Q` with `vec(ξ)ᵀ Q vec(ξ) = Σ T_sym ξ ξ`, `T_sym` the major symmetrization.
    pub fn to_quadform(&self) -> DMatrix<f64> {
        let n = self.n;
        let nn = sym_dim(n);
        let sym = self.major_symmetrized();
        let weight = |i: usize, j: usize| if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
        DMatrix::from_fn(nn, nn, |a, b| {
            let (i, j) = pair_of(n, a);
            let (k, l) = pair_of(n, b);
            weight(i, j) * weight(k, l) * sym.get(i, j, k, l)
        })
    }

    /// Extremal eigenvalues `(min, max)` of the quadratic form on unit-Frobenius `ξ`.
    pub fn quadform_eigen_range(&self) -> (f64, f64) {
        let ev = SymmetricEigen::new(self.to_quadform()).eigenvalues;
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Free-function form of [`Tensor4::apply_quadratic`].
pub fn apply_quadratic(t: &Tensor4, xi: &SymMat) -> Result<f64> {
    t.apply_quadratic(xi)
}

/// Free-function form of [`Tensor4::contract_right`].
pub fn contract_right(t: &Tensor4, xi: &SymMat) -> Result<SymMat> {
    t.contract_right(xi)
}

/// Free-function form of [`Tensor4::to_quadform`].
pub fn t4_to_quadform(t: &Tensor4) -> DMatrix<f64> {
    t.to_quadform()
}

impl fmt::Debug for Tensor4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4(n={}, ", self.n)?;
        f.debug_list().entries(self.nested().iter()).finish()?;
        write!(f, ")")
    }
}

impl Tensor4 {
    /// Nested `[i][j][k][l]` entries, for serialization and display.
    pub fn nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        let n = self.n;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (0..n)
                            .map(|k| (0..n).map(|l| self.get(i, j, k, l)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl Serialize for Tensor4 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tensor4 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Vec<Vec<Vec<f64>>>>::deserialize(d)?;
        let n = v.len();
        let ok = (1..=MAX_DIM).contains(&n)
            && v.iter().all(|a| {
                a.len() == n && a.iter().all(|b| b.len() == n && b.iter().all(|c| c.len() == n))
            });
        if !ok {
            return Err(serde::de::Error::custom("tensor must be n x n x n x n, 1 <= n <= 3"));
        }
        Ok(Tensor4::from_fn(n, |i, j, k, l| v[i][j][k][l]))
    }
}

impl Add for Tensor4 {
    type Output = Tensor4;
    fn add(mut self, rhs: Tensor4) -> Tensor4 {
        debug_assert_eq!(self.n, rhs.n);
        for (a, b) in self.e.iter_mut().zip(rhs.e) {
            *a += b;
        }
        self
    }
}

impl Sub for Tensor4 {
    type Output = Tensor4;
    fn sub(self, rhs: Tensor4) -> Tensor4 {
        self + (-rhs)
    }
}

impl Neg for Tensor4 {
    type Output = Tensor4;
    fn neg(self) -> Tensor4 {
        self * -1.0
    }
}

impl Mul<f64> for Tensor4 {
    type Output = Tensor4;
    fn mul(mut self, s: f64) -> Tensor4 {
        for a in self.e.iter_mut() {
            *a *= s;
        }
        self
    }
}
