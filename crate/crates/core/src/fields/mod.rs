//! Uniform-grid fields on `[-1, 1]^n` and the measurements a regularity
//! bootstrap relies on.
//!
//! Every field stores values on the full lattice together with the index box
//! on which they are meaningful. Stencil operations shrink that box; values
//! outside it are zero and never read by the measurement routines.

mod io;
mod measures;
mod stencils;

pub use io::{read_field, write_field, write_field_csv};
pub use measures::{
    ball_mean, campanato, decay_fit, dyadic_radii, holder_seminorm, l2_norm_sq, quartic_bump,
    quartic_bump_hessian, BallRegion, DecayFit, DecayProfile, DEFAULT_HOLDER_PAIRS,
};
pub use stencils::{diff_quotient, diff_quotient_mat, hessian, hessian_adjoint, third_derivatives};
pub(crate) use stencils::{hessian_adjoint_into, hessian_into};

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::symtensor::{SymMat, MAX_DIM};

/// Smallest admissible node count per axis.
pub const MIN_NODES: usize = 9;

/// Lattice of `m^n` nodes with spacing `h = 2/(m-1)` covering `[-1, 1]^n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    m: usize,
}

pub type Multi = [usize; MAX_DIM];

impl Grid {
    pub fn new(n: usize, m: usize) -> Result<Grid> {
        if !(1..=MAX_DIM).contains(&n) {
            return usage(format!("grid dimension {n} unsupported"));
        }
        if m < MIN_NODES {
            return usage(format!("grid needs at least {MIN_NODES} nodes per axis, got {m}"));
        }
        if (m as f64).powi(n as i32) > 5.0e7 {
            return usage(format!("grid with {m}^{n} nodes is too large"));
        }
        Ok(Grid { n, m })
    }

    /// Grid whose spacing is `h`; `2/h` must be an integer.
    pub fn with_spacing(n: usize, h: f64) -> Result<Grid> {
        let cells = 2.0 / h;
        if !(cells.is_finite() && (cells - cells.round()).abs() < 1e-9 && cells >= 1.0) {
            return usage(format!("spacing {h} does not divide [-1, 1]"));
        }
        Grid::new(n, cells.round() as usize + 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        2.0 / (self.m - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `hⁿ`, the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.n as i32)
    }

    /// Flat offset of a unit step along `axis` (axis 0 varies slowest).
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.n - 1 - axis) as u32)
    }

    pub fn index(&self, k: &Multi) -> usize {
        (0..self.n).fold(0, |acc, a| acc * self.m + k[a])
    }

    pub fn multi(&self, mut idx: usize) -> Multi {
        let mut k = [0; MAX_DIM];
        for a in (0..self.n).rev() {
            k[a] = idx % self.m;
            idx /= self.m;
        }
        k
    }

    pub fn coord(&self, k: usize) -> f64 {
        -1.0 + k as f64 * self.h()
    }

    /// Node coordinates; unused trailing entries are zero.
    pub fn point(&self, idx: usize) -> [f64; MAX_DIM] {
        let k = self.multi(idx);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.n {
            x[a] = self.coord(k[a]);
        }
        x
    }

    /// Nearest node index along one axis to coordinate `x`.
    pub fn nearest(&self, x: f64) -> usize {
        (((x + 1.0) / self.h()).round().max(0.0) as usize).min(self.m - 1)
    }

    pub fn full_box(&self) -> IndexBox {
        let mut hi = [0; MAX_DIM];
        for h in hi.iter_mut().take(self.n) {
            *h = self.m - 1;
        }
        IndexBox { lo: [0; MAX_DIM], hi }
    }
}

/// Inclusive box of multi-indices; axes beyond `n` are pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    pub lo: Multi,
    pub hi: Multi,
}

impl IndexBox {
    pub fn contains(&self, n: usize, k: &Multi) -> bool {
        (0..n).all(|a| self.lo[a] <= k[a] && k[a] <= self.hi[a])
    }

    /// Box shrunk by `lo_cut` at the low end and `hi_cut` at the high end of `axis`.
    pub fn cut(&self, axis: usize, lo_cut: usize, hi_cut: usize) -> Option<IndexBox> {
        let mut b = *self;
        b.lo[axis] += lo_cut;
        b.hi[axis] = b.hi[axis].checked_sub(hi_cut)?;
        (b.lo[axis] <= b.hi[axis]).then_some(b)
    }

    /// Box shrunk by `k` on every side of the first `n` axes.
    pub fn shrink(&self, n: usize, k: usize) -> Option<IndexBox> {
        (0..n).try_fold(*self, |b, a| b.cut(a, k, k))
    }

    pub fn intersect(&self, n: usize, other: &IndexBox) -> Option<IndexBox> {
        let mut b = *self;
        for a in 0..n {
            b.lo[a] = b.lo[a].max(other.lo[a]);
            b.hi[a] = b.hi[a].min(other.hi[a]);
            if b.lo[a] > b.hi[a] {
                return None;
            }
        }
        Some(b)
    }

    /// Flat indices of all nodes in the box, in row-major order.
    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        let n = grid.n();
        let mut out = Vec::new();
        let mut k = self.lo;
        loop {
            out.push(grid.index(&k));
            let mut a = n;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if k[a] < self.hi[a] {
                    k[a] += 1;
                    break;
                }
                k[a] = self.lo[a];
            }
        }
    }
}

/// Values of a field at one node, flattened so that the Euclidean norm is
/// the natural (Frobenius) norm of the value.
pub trait NodeField {
    fn grid(&self) -> &Grid;
    fn valid(&self) -> &IndexBox;
    fn components(&self) -> usize;
    fn write_components(&self, idx: usize, out: &mut [f64]);
}

/// Scalar field such as `u`, a difference quotient `g`, or a test bump.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    valid: IndexBox,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> ScalarField {
        ScalarField { grid, values: vec![0.0; grid.len()], valid: grid.full_box() }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> ScalarField {
        let n = grid.n();
        let values = (0..grid.len()).map(|i| f(&grid.point(i)[..n])).collect();
        ScalarField { grid, values, valid: grid.full_box() }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return usage(format!("{} values for a grid of {} nodes", values.len(), grid.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return usage(format!("non-finite value at node {i}"));
        }
        Ok(ScalarField { grid, values, valid: grid.full_box() })
    }

    pub(crate) fn with_box(grid: Grid, values: Vec<f64>, valid: IndexBox) -> ScalarField {
        ScalarField { grid, values, valid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn valid(&self) -> &IndexBox {
        &self.valid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    /// Sup norm over the valid box.
    pub fn sup_norm(&self) -> f64 {
        self.valid.nodes(&self.grid).iter().map(|&i| self.values[i].abs()).fold(0.0, f64::max)
    }

    /// Sup norm of `self − other` over the intersection of valid boxes.
    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        match self.valid.intersect(self.grid.n(), &other.valid) {
            Some(b) => b
                .nodes(&self.grid)
                .iter()
                .map(|&i| (self.values[i] - other.values[i]).abs())
                .fold(0.0, f64::max),
            None => 0.0,
        }
    }
}

impl NodeField for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn valid(&self) -> &IndexBox {
        &self.valid
    }
    fn components(&self) -> usize {
        1
    }
    fn write_components(&self, idx: usize, out: &mut [f64]) {
        out[0] = self.values[idx];
    }
}

/// One symmetric matrix per node (Hessians `D²u`, `D²g`, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct MatField {
    grid: Grid,
    values: Vec<SymMat>,
    valid: IndexBox,
}

impl MatField {
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> SymMat) -> MatField {
        let n = grid.n();
        let values = (0..grid.len()).map(|i| f(&grid.point(i)[..n])).collect();
        MatField { grid, values, valid: grid.full_box() }
    }

    pub(crate) fn with_box(grid: Grid, values: Vec<SymMat>, valid: IndexBox) -> MatField {
        MatField { grid, values, valid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn valid(&self) -> &IndexBox {
        &self.valid
    }

    pub fn at(&self, idx: usize) -> &SymMat {
        &self.values[idx]
    }

    pub fn values(&self) -> &[SymMat] {
        &self.values
    }

    /// Adds a constant matrix at every node.
    pub fn shifted(&self, c: &SymMat) -> MatField {
        MatField {
            grid: self.grid,
            values: self.values.iter().map(|v| *v + *c).collect(),
            valid: self.valid,
        }
    }

    /// Largest Frobenius norm over the valid box.
    pub fn sup_norm(&self) -> f64 {
        self.valid.nodes(&self.grid).iter().map(|&i| self.values[i].norm()).fold(0.0, f64::max)
    }
}

impl NodeField for MatField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn valid(&self) -> &IndexBox {
        &self.valid
    }
    fn components(&self) -> usize {
        crate::symtensor::sym_dim(self.grid.n())
    }
    fn write_components(&self, idx: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.values[idx].to_symvec());
    }
}

/// All third partial derivatives `u_ijk` per node, stored for every index
/// permutation (`27` slots, stride `9, 3, 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdField {
    grid: Grid,
    values: Vec<[f64; 27]>,
    valid: IndexBox,
}

impl ThirdField {
    pub(crate) fn with_box(grid: Grid, values: Vec<[f64; 27]>, valid: IndexBox) -> ThirdField {
        ThirdField { grid, values, valid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn valid(&self) -> &IndexBox {
        &self.valid
    }

    pub fn get(&self, idx: usize, i: usize, j: usize, k: usize) -> f64 {
        self.values[idx][i * 9 + j * 3 + k]
    }

    /// Frobenius norm of the third-derivative tensor at a node.
    pub fn norm_at(&self, idx: usize) -> f64 {
        let n = self.grid.n();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    s += self.get(idx, i, j, k).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

impl NodeField for ThirdField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn valid(&self) -> &IndexBox {
        &self.valid
    }
    fn components(&self) -> usize {
        self.grid.n().pow(3)
    }
    fn write_components(&self, idx: usize, out: &mut [f64]) {
        let n = self.grid.n();
        let mut c = 0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[c] = self.get(idx, i, j, k);
                    c += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = Grid::with_spacing(2, 1.0 / 64.0).unwrap();
        assert_eq!(g.m(), 129);
        assert_eq!(g.len(), 129 * 129);
        assert!((g.h() - 1.0 / 64.0).abs() < 1e-15);
        let idx = g.index(&[3, 7, 0]);
        assert_eq!(g.multi(idx), [3, 7, 0]);
        assert_eq!(g.stride(0), 129);
        assert_eq!(g.point(g.index(&[64, 64, 0]))[..2], [0.0, 0.0]);
        assert!(Grid::new(2, 8).is_err());
        assert!(Grid::new(4, 9).is_err());
        assert!(Grid::with_spacing(2, 0.3).is_err());
    }

    #[test]
    fn box_nodes_are_row_major() {
        let g = Grid::new(3, 9).unwrap();
        let b = g.full_box().shrink(3, 3).unwrap();
        let nodes = b.nodes(&g);
        assert_eq!(nodes.len(), 27);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(g.full_box().shrink(3, 5).is_none());
    }
}
