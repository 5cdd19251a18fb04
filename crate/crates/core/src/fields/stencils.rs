//! Finite-difference stencils: difference quotients, Hessians and third
//! derivatives, each shrinking the valid box by its reach.

use super::{Grid, IndexBox, MatField, ScalarField, ThirdField};
use crate::error::{usage, Result};
use crate::symtensor::SymMat;

fn quotient_box(grid: &Grid, valid: &IndexBox, axis: usize, steps: isize) -> Result<IndexBox> {
    if axis >= grid.n() {
        return usage(format!("axis {axis} out of range for n = {}", grid.n()));
    }
    if steps == 0 {
        return usage("difference quotient needs a nonzero step");
    }
    let s = steps.unsigned_abs();
    let cut = if steps > 0 { valid.cut(axis, 0, s) } else { valid.cut(axis, s, 0) };
    cut.ok_or_else(|| crate::Error::Usage("difference quotient domain is empty".into()))
}

fn offset(idx: usize, stride: usize, steps: isize) -> usize {
    (idx as isize + steps * stride as isize) as usize
}

/// `(u(x + s·h·e_axis) − u(x)) / (s·h)`; negative `s` gives the backward quotient.
pub fn diff_quotient(u: &ScalarField, axis: usize, steps: isize) -> Result<ScalarField> {
    let grid = *u.grid();
    let valid = quotient_box(&grid, u.valid(), axis, steps)?;
    let stride = grid.stride(axis);
    let denom = steps as f64 * grid.h();
    let mut values = vec![0.0; grid.len()];
    for i in valid.nodes(&grid) {
        values[i] = (u.at(offset(i, stride, steps)) - u.at(i)) / denom;
    }
    Ok(ScalarField::with_box(grid, values, valid))
}

/// Node-wise difference quotient of a matrix field.
pub fn diff_quotient_mat(f: &MatField, axis: usize, steps: isize) -> Result<MatField> {
    let grid = *f.grid();
    let valid = quotient_box(&grid, f.valid(), axis, steps)?;
    let stride = grid.stride(axis);
    let inv = 1.0 / (steps as f64 * grid.h());
    let mut values = vec![SymMat::zeros(grid.n()); grid.len()];
    for i in valid.nodes(&grid) {
        values[i] = (*f.at(offset(i, stride, steps)) - *f.at(i)) * inv;
    }
    Ok(MatField::with_box(grid, values, valid))
}

/// Second difference `(1, −2, 1)/h²` along `a`, or the cross stencil `/(4h²)`.
#[inline]
pub(crate) fn second(v: &[f64], i: usize, sa: usize, sb: usize, same: bool, h2: f64) -> f64 {
    if same {
        (v[i + sa] - 2.0 * v[i] + v[i - sa]) / h2
    } else {
        (v[i + sa + sb] - v[i + sa - sb] - v[i - sa + sb] + v[i - sa - sb]) / (4.0 * h2)
    }
}

/// Discrete Hessian with second-order central stencils.
pub fn hessian(u: &ScalarField) -> Result<MatField> {
    let grid = *u.grid();
    let n = grid.n();
    let valid = u
        .valid()
        .shrink(n, 1)
        .ok_or_else(|| crate::Error::Usage("field too small for a Hessian".into()))?;
    let mut values = vec![SymMat::zeros(n); grid.len()];
    hessian_into(&grid, u.values(), &valid.nodes(&grid), &mut values);
    Ok(MatField::with_box(grid, values, valid))
}

/// Adjoint of [`hessian`] under the Frobenius pairing: returns `D^T F` with
/// `Σ_x F(x) : D²φ(x) = Σ_y (D^T F)(y) φ(y)`, scattering from `F`'s valid box.
pub fn hessian_adjoint(f: &MatField) -> Result<ScalarField> {
    let grid = *f.grid();
    let n = grid.n();
    let inner = grid.full_box().shrink(n, 1);
    if inner.and_then(|b| b.intersect(n, f.valid())) != Some(*f.valid()) {
        return usage("adjoint needs a matrix field supported at interior nodes");
    }
    let mut out = vec![0.0; grid.len()];
    hessian_adjoint_into(&grid, f.values(), &f.valid().nodes(&grid), &mut out);
    Ok(ScalarField::with_box(grid, out, grid.full_box()))
}

/// Accumulates `D^T F` from the listed interior nodes into `out`.
pub(crate) fn hessian_adjoint_into(grid: &Grid, f: &[SymMat], nodes: &[usize], out: &mut [f64]) {
    let n = grid.n();
    let h2 = grid.h() * grid.h();
    let st: Vec<usize> = (0..n).map(|a| grid.stride(a)).collect();
    for &i in nodes {
        let m = &f[i];
        for a in 0..n {
            let sa = st[a];
            let d = m.get(a, a) / h2;
            out[i + sa] += d;
            out[i] -= 2.0 * d;
            out[i - sa] += d;
            for b in a + 1..n {
                let sb = st[b];
                // off-diagonal pairs appear twice in the Frobenius pairing
                let c = 2.0 * m.get(a, b) / (4.0 * h2);
                out[i + sa + sb] += c;
                out[i + sa - sb] -= c;
                out[i - sa + sb] -= c;
                out[i - sa - sb] += c;
            }
        }
    }
}

/// Hessian at the listed interior nodes, written into `out`.
pub(crate) fn hessian_into(grid: &Grid, v: &[f64], nodes: &[usize], out: &mut [SymMat]) {
    let n = grid.n();
    let h2 = grid.h() * grid.h();
    let st: Vec<usize> = (0..n).map(|a| grid.stride(a)).collect();
    for &i in nodes {
        let m = &mut out[i];
        for a in 0..n {
            for b in a..n {
                m.set(a, b, second(v, i, st[a], st[b], a == b, h2));
            }
        }
    }
}

/// All third derivatives. One stencil per sorted index triple, copied to every
/// permutation, so the result is exactly symmetric.
pub fn third_derivatives(u: &ScalarField) -> Result<ThirdField> {
    let grid = *u.grid();
    let n = grid.n();
    let valid = u
        .valid()
        .shrink(n, 2)
        .ok_or_else(|| crate::Error::Usage("field too small for third derivatives".into()))?;
    let h = grid.h();
    let h2 = h * h;
    let h3 = h2 * h;
    let st: Vec<usize> = (0..n).map(|a| grid.stride(a)).collect();
    let v = u.values();
    let mut values = vec![[0.0; 27]; grid.len()];
    for i in valid.nodes(&grid) {
        let mut t = [0.0; 27];
        for a in 0..n {
            for b in a..n {
                for c in b..n {
                    let val = if a == b && b == c {
                        let s = st[a];
                        (v[i + 2 * s] - 2.0 * v[i + s] + 2.0 * v[i - s] - v[i - 2 * s]) / (2.0 * h3)
                    } else if a == b || b == c {
                        // repeated index r, single index q: central_q of D_rr
                        let (r, q) = if a == b { (a, c) } else { (b, a) };
                        let (sr, sq) = (st[r], st[q]);
                        (second(v, i + sq, sr, sr, true, h2) - second(v, i - sq, sr, sr, true, h2))
                            / (2.0 * h)
                    } else {
                        let (sa, sb, sc) = (st[a], st[b], st[c]);
                        let mut acc = 0.0;
                        for (da, db, dc) in [
                            (1, 1, 1),
                            (1, 1, -1),
                            (1, -1, 1),
                            (1, -1, -1),
                            (-1, 1, 1),
                            (-1, 1, -1),
                            (-1, -1, 1),
                            (-1, -1, -1),
                        ] {
                            let j = offset(offset(offset(i, sa, da), sb, db), sc, dc);
                            acc += (da * db * dc) as f64 * v[j];
                        }
                        acc / (8.0 * h3)
                    };
                    for (x, y, z) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
                    {
                        t[x * 9 + y * 3 + z] = val;
                    }
                }
            }
        }
        values[i] = t;
    }
    Ok(ThirdField::with_box(grid, values, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(m: usize) -> Grid {
        Grid::new(2, m).unwrap()
    }

    #[test]
    fn quotient_examples() {
        let g = grid2(33);
        let h = g.h();
        let c = ScalarField::from_fn(g, |_| 3.5);
        assert_eq!(diff_quotient(&c, 0, 1).unwrap().sup_norm(), 0.0);

        let q = ScalarField::from_fn(g, |x| x[0] * x[0]);
        let d = diff_quotient(&q, 0, 1).unwrap();
        for i in d.valid().nodes(&g) {
            let x = g.point(i);
            assert!((d.at(i) - (2.0 * x[0] + h)).abs() < 1e-12);
        }
        assert_eq!(d.valid().hi[0], 31);

        let s = ScalarField::from_fn(g, |x| x[0].sin());
        let d = diff_quotient(&s, 0, 1).unwrap();
        for i in d.valid().nodes(&g) {
            let x = g.point(i);
            assert!((d.at(i) - x[0].cos()).abs() <= 0.5 * h * 1.0 + 1e-14);
        }
        assert!(diff_quotient(&s, 0, 0).is_err());
        assert!(diff_quotient(&s, 2, 1).is_err());
        let small = ScalarField::from_fn(grid2(9), |x| x[0]);
        assert!(diff_quotient(&small, 0, 9).is_err());
    }

    #[test]
    fn hessian_exact_on_low_degree() {
        let g = Grid::new(3, 11).unwrap();
        let a = SymMat::from_rows(&[
            vec![1.0, 0.3, -0.2],
            vec![0.3, -2.0, 0.5],
            vec![-0.2, 0.5, 0.7],
        ])
        .unwrap();
        let u = ScalarField::from_fn(g, |x| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a.get(i, j) * x[j];
                }
            }
            s + 2.0 * x[0] - x[2] + 4.0
        });
        let d2 = hessian(&u).unwrap();
        for i in d2.valid().nodes(&g) {
            assert!((*d2.at(i) - a).norm() < 1e-12);
        }
        let g2 = grid2(17);
        let c = ScalarField::from_fn(g2, |x| x[0].powi(3) + x[0] * x[0] * x[1]);
        let d2 = hessian(&c).unwrap();
        for i in d2.valid().nodes(&g2) {
            let x = g2.point(i);
            assert!((d2.at(i).get(0, 0) - (6.0 * x[0] + 2.0 * x[1])).abs() < 1e-11);
            assert!((d2.at(i).get(0, 1) - 2.0 * x[0]).abs() < 1e-11);
        }
    }

    #[test]
    fn hessian_refinement_is_second_order() {
        let err = |m: usize| {
            let g = grid2(m);
            let u = ScalarField::from_fn(g, |x| x[0].sin() * x[1].sin());
            let d2 = hessian(&u).unwrap();
            d2.valid()
                .nodes(&g)
                .iter()
                .map(|&i| {
                    let x = g.point(i);
                    let exact = SymMat::from_rows(&[
                        vec![-x[0].sin() * x[1].sin(), x[0].cos() * x[1].cos()],
                        vec![x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()],
                    ])
                    .unwrap();
                    (*d2.at(i) - exact).norm()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn third_derivative_examples() {
        let g = Grid::new(3, 13).unwrap();
        let q = ScalarField::from_fn(g, |x| x[0] * x[1] + 0.5 * x[2] * x[2] - x[0]);
        let t = third_derivatives(&q).unwrap();
        for i in t.valid().nodes(&g) {
            assert!(t.norm_at(i) < 1e-9);
        }
        let c = ScalarField::from_fn(g, |x| x[0].powi(3) + x[0] * x[1] * x[2] + x[1] * x[1] * x[2]);
        let t = third_derivatives(&c).unwrap();
        for i in t.valid().nodes(&g) {
            assert!((t.get(i, 0, 0, 0) - 6.0).abs() < 1e-9);
            assert!((t.get(i, 2, 1, 0) - 1.0).abs() < 1e-9);
            assert!((t.get(i, 1, 2, 1) - 2.0).abs() < 1e-9);
            assert!(t.get(i, 0, 0, 1).abs() < 1e-9);
        }
        let s = ScalarField::from_fn(g, |x| (x[0] + 2.0 * x[1]).sin() * x[2].exp());
        let t = third_derivatives(&s).unwrap();
        for i in t.valid().nodes(&g) {
            for (a, b, c) in [(0, 1, 2), (1, 1, 0), (2, 0, 0)] {
                assert!((t.get(i, a, b, c) - t.get(i, a, c, b)).abs() <= 1e-10);
                assert!((t.get(i, a, b, c) - t.get(i, c, b, a)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn quotient_commutes_with_hessian() {
        let g = grid2(21);
        let u = ScalarField::from_fn(g, |x| (1.3 * x[0]).exp() * (x[1] - 0.2).cos());
        for p in 0..2 {
            let lhs = hessian(&diff_quotient(&u, p, 1).unwrap()).unwrap();
            let rhs = diff_quotient_mat(&hessian(&u).unwrap(), p, 1).unwrap();
            let common = lhs.valid().intersect(2, rhs.valid()).unwrap();
            for i in common.nodes(&g) {
                assert!((*lhs.at(i) - *rhs.at(i)).norm() <= 1e-12 * (1.0 + rhs.at(i).norm()));
            }
        }
    }

    #[test]
    fn hessian_adjointness() {
        let g = grid2(19);
        let h2 = g.h() * g.h();
        let phi = ScalarField::from_fn(g, |x| (2.0 * x[0] - x[1]).sin() + x[0] * x[1] * x[1]);
        let psi = MatField::from_fn(g, |x| {
            SymMat::from_rows(&[vec![x[0].cos(), x[1] - x[0]], vec![x[1] - x[0], (x[0] * x[1]).exp()]])
                .unwrap()
        });
        // restrict ψ to interior nodes, as the adjoint requires
        let inner = g.full_box().shrink(2, 1).unwrap();
        let psi = MatField::with_box(g, psi.values().to_vec(), inner);
        let d2 = hessian(&phi).unwrap();
        let lhs: f64 = inner.nodes(&g).iter().map(|&i| d2.at(i).dot(psi.at(i))).sum::<f64>() * h2;
        let adj = hessian_adjoint(&psi).unwrap();
        let rhs: f64 = (0..g.len()).map(|i| phi.at(i) * adj.at(i)).sum::<f64>() * h2;
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn summation_by_parts() {
        let g = grid2(25);
        let h = g.h();
        // supported two nodes away from the boundary
        let support = |x: &[f64]| x.iter().all(|c| c.abs() <= 1.0 - 2.5 * h);
        let f = ScalarField::from_fn(g, |x| if support(x) { (3.0 * x[0]).sin() + x[1] } else { 0.0 });
        let w = ScalarField::from_fn(g, |x| if support(x) { x[0] * x[1].exp() } else { 0.0 });
        for p in 0..2 {
            let fp = diff_quotient(&f, p, 1).unwrap();
            let wm = diff_quotient(&w, p, -1).unwrap();
            let lhs: f64 = fp.valid().nodes(&g).iter().map(|&i| fp.at(i) * w.at(i)).sum::<f64>() * h * h;
            let rhs: f64 = wm.valid().nodes(&g).iter().map(|&i| f.at(i) * wm.at(i)).sum::<f64>() * h * h;
            assert!((lhs + rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }
    }
}
