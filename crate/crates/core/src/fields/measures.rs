//! Ball-restricted measurements: means, Campanato functionals, `L²` norms,
//! Hölder seminorms, and power-law fits of decay profiles.

use serde::{Deserialize, Serialize};

use super::{Grid, MatField, NodeField, ScalarField};
use crate::error::{usage, Result};
use crate::symtensor::SymMat;

/// Pair budget used for Hölder seminorms unless configured otherwise.
pub const DEFAULT_HOLDER_PAIRS: usize = 1 << 21;

/// Relative slack in the node-inclusion test `|x − c|² ≤ ρ²`.
const INCLUSION_SLACK: f64 = 1e-12;

const MIN_BALL_NODES: usize = 5;

/// Closed ball `{|x − center| ≤ radius}` sampled by node inclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallRegion {
    pub fn new(center: Vec<f64>, radius: f64) -> BallRegion {
        BallRegion { center, radius }
    }

    /// Ball centered at the origin.
    pub fn centered(n: usize, radius: f64) -> BallRegion {
        BallRegion { center: vec![0.0; n], radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        d2 <= self.radius * self.radius * (1.0 + INCLUSION_SLACK)
    }

    /// Flat indices of grid nodes inside the ball, in row-major order.
    pub fn nodes(&self, grid: &Grid) -> Result<Vec<usize>> {
        let n = grid.n();
        if self.center.len() != n {
            return usage(format!("ball center has {} coordinates, grid has n = {n}", self.center.len()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return usage(format!("ball radius {} must be positive", self.radius));
        }
        for a in 0..n {
            if self.center[a] - self.radius < -1.0 - 1e-12 || self.center[a] + self.radius > 1.0 + 1e-12 {
                return usage(format!("ball {self:?} leaves the grid"));
            }
        }
        let h = grid.h();
        let mut bbox = grid.full_box();
        for a in 0..n {
            let lo = ((self.center[a] - self.radius + 1.0) / h - 1e-9).floor().max(0.0) as usize;
            let hi = ((self.center[a] + self.radius + 1.0) / h + 1e-9).ceil() as usize;
            bbox.lo[a] = lo.min(grid.m() - 1);
            bbox.hi[a] = hi.min(grid.m() - 1);
        }
        Ok(bbox
            .nodes(grid)
            .into_iter()
            .filter(|&i| self.contains(&grid.point(i)[..n]))
            .collect())
    }

    /// Ball nodes, checked to lie in the field's valid box and to be numerous enough.
    pub fn field_nodes<F: NodeField + ?Sized>(&self, f: &F) -> Result<Vec<usize>> {
        let grid = f.grid();
        let nodes = self.nodes(grid)?;
        if nodes.len() < MIN_BALL_NODES {
            return usage(format!(
                "ball of radius {} holds {} nodes; need at least {MIN_BALL_NODES}",
                self.radius,
                nodes.len()
            ));
        }
        let n = grid.n();
        if let Some(&bad) = nodes.iter().find(|&&i| !f.valid().contains(n, &grid.multi(i))) {
            return usage(format!(
                "ball {self:?} reaches node {:?} outside the field's valid region",
                grid.multi(bad)
            ));
        }
        Ok(nodes)
    }
}

fn gather<F: NodeField + ?Sized>(f: &F, nodes: &[usize]) -> Vec<Vec<f64>> {
    let c = f.components();
    nodes
        .iter()
        .map(|&i| {
            let mut v = vec![0.0; c];
            f.write_components(i, &mut v);
            v
        })
        .collect()
}

fn mean_components(values: &[Vec<f64>]) -> Vec<f64> {
    let c = values[0].len();
    let mut m = vec![0.0; c];
    for v in values {
        for k in 0..c {
            m[k] += v[k];
        }
    }
    let count = values.len() as f64;
    m.iter().map(|s| s / count).collect()
}

/// Arithmetic mean of a matrix field over the ball's nodes.
pub fn ball_mean(f: &MatField, ball: &BallRegion) -> Result<SymMat> {
    let nodes = ball.field_nodes(f)?;
    SymMat::from_symvec(f.grid().n(), &mean_components(&gather(f, &nodes)))
}

/// `Σ_{nodes in ball} |F(x) − (F)_ρ|² hⁿ` for any node field.
pub fn campanato<F: NodeField + ?Sized>(f: &F, ball: &BallRegion) -> Result<f64> {
    let nodes = ball.field_nodes(f)?;
    let values = gather(f, &nodes);
    let mean = mean_components(&values);
    let s: f64 = values
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    Ok(s * f.grid().cell_volume())
}

/// `Σ_{nodes in ball} |F(x)|² hⁿ`.
pub fn l2_norm_sq<F: NodeField + ?Sized>(f: &F, ball: &BallRegion) -> Result<f64> {
    let nodes = ball.field_nodes(f)?;
    let s: f64 = gather(f, &nodes).iter().map(|v| v.iter().map(|a| a * a).sum::<f64>()).sum();
    Ok(s * f.grid().cell_volume())
}

/// `max |F(x) − F(y)| / |x − y|^α` over deterministic node pairs in the ball.
///
/// All pairs are used when there are at most `pair_budget` of them; otherwise
/// pairs follow a two-dimensional additive recurrence (low discrepancy).
/// Pairs closer than `2h` are below resolution and skipped.
pub fn holder_seminorm<F: NodeField + ?Sized>(
    f: &F,
    alpha: f64,
    region: &BallRegion,
    pair_budget: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return usage(format!("Hölder exponent {alpha} must lie in (0, 1]"));
    }
    let nodes = region.field_nodes(f)?;
    let grid = f.grid();
    let n = grid.n();
    let values = gather(f, &nodes);
    let points: Vec<[f64; 3]> = nodes.iter().map(|&i| grid.point(i)).collect();
    let min_dist = 2.0 * grid.h() * (1.0 - 1e-9);
    let quotient = |a: usize, b: usize| -> f64 {
        let d: f64 = (0..n).map(|k| (points[a][k] - points[b][k]).powi(2)).sum::<f64>().sqrt();
        if d < min_dist {
            return 0.0;
        }
        let diff: f64 =
            values[a].iter().zip(&values[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff / d.powf(alpha)
    };
    let k = nodes.len();
    let total = k * (k - 1) / 2;
    let mut best: f64 = 0.0;
    if total <= pair_budget {
        for a in 0..k {
            for b in a + 1..k {
                best = best.max(quotient(a, b));
            }
        }
    } else {
        // plastic-number recurrence
        let g = 1.324_717_957_244_746_f64;
        let (s1, s2) = (1.0 / g, 1.0 / (g * g));
        for t in 0..pair_budget {
            let a = ((0.5 + t as f64 * s1).fract() * k as f64) as usize;
            let b = ((0.5 + t as f64 * s2).fract() * k as f64) as usize;
            if a != b {
                best = best.max(quotient(a.min(k - 1), b.min(k - 1)));
            }
        }
    }
    Ok(best)
}

/// Slope and RMS residual of a log-log least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub residual: f64,
    pub used: usize,
    pub dropped_zeros: usize,
}

/// Fits `log φ ≈ e·log ρ + c`; zero values are dropped and counted.
pub fn decay_fit(radii: &[f64], values: &[f64]) -> Result<DecayFit> {
    if radii.len() != values.len() {
        return usage("radii and values differ in length");
    }
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&r, &v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 4 {
        return usage(format!("decay fit needs 4 positive samples, got {}", pts.len()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rms = (pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / k).sqrt();
    Ok(DecayFit { exponent: slope, residual: rms, used: pts.len(), dropped_zeros: radii.len() - pts.len() })
}

/// Sampled `φ(ρ)` with its power-law fit (absent when too few positive values).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayProfile {
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
    pub fitted_exponent: Option<f64>,
    pub fit_residual: Option<f64>,
    pub dropped_zeros: usize,
    /// Set when the profile is at or below the measurement noise floor.
    pub vacuous: bool,
}

impl DecayProfile {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<DecayProfile> {
        if radii.len() != values.len() {
            return usage("radii and values differ in length");
        }
        if radii.windows(2).any(|w| w[0] >= w[1]) {
            return usage("profile radii must be strictly increasing");
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return usage("profile values must be finite and nonnegative");
        }
        let fit = decay_fit(&radii, &values).ok();
        let dropped = values.iter().filter(|&&v| v <= 0.0).count();
        Ok(DecayProfile {
            fitted_exponent: fit.map(|f| f.exponent),
            fit_residual: fit.map(|f| f.residual),
            dropped_zeros: dropped,
            vacuous: fit.is_none(),
            radii,
            values,
        })
    }

    /// Marks the profile vacuous if every value is at most `floor`.
    pub fn with_noise_floor(mut self, floor: f64) -> DecayProfile {
        if self.values.iter().all(|&v| v <= floor) {
            self.vacuous = true;
        }
        self
    }
}

/// Dyadic radii `max·2^{-k}`, `k = count−1, …, 0`, in increasing order.
pub fn dyadic_radii(max: f64, count: usize) -> Vec<f64> {
    (0..count).rev().map(|k| max / f64::powi(2.0, k as i32)).collect()
}

/// `η(x) = (1 − |x − c|²/r²)⁴` inside the ball, zero outside.
pub fn quartic_bump(grid: Grid, center: &[f64], radius: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let s: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (radius * radius);
        if s < 1.0 {
            (1.0 - s).powi(4)
        } else {
            0.0
        }
    })
}

/// Exact Hessian of [`quartic_bump`] at `x`.
pub fn quartic_bump_hessian(center: &[f64], radius: f64, x: &[f64]) -> SymMat {
    let n = x.len();
    let r2 = radius * radius;
    let d: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
    let s: f64 = d.iter().map(|v| v * v).sum::<f64>() / r2;
    if s >= 1.0 {
        return SymMat::zeros(n);
    }
    let t = 1.0 - s;
    SymMat::from_fn(n, |i, j| {
        let diag = if i == j { 1.0 } else { 0.0 };
        48.0 * t * t * d[i] * d[j] / (r2 * r2) - 8.0 * t.powi(3) * diag / r2
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::hessian;

    fn grid(n: usize, h: f64) -> Grid {
        Grid::with_spacing(n, h).unwrap()
    }

    fn e11(n: usize) -> SymMat {
        SymMat::basis(n, 0, 0)
    }

    #[test]
    fn ball_mean_examples() {
        let g = grid(2, 1.0 / 32.0);
        let c = SymMat::diag(&[1.0, -2.0]);
        let ball = BallRegion::centered(2, 0.5);
        assert!((ball_mean(&MatField::from_fn(g, |_| c), &ball).unwrap() - c).norm() < 1e-14);
        let odd = MatField::from_fn(g, |x| e11(2) * x[0]);
        assert!(ball_mean(&odd, &ball).unwrap().norm() < 1e-12);

        let g = grid(2, 1.0 / 64.0);
        let sq = MatField::from_fn(g, |x| e11(2) * (x[0] * x[0] + x[1] * x[1]));
        let m = ball_mean(&sq, &ball).unwrap().get(0, 0);
        let exact = 2.0 * 0.25 / 4.0;
        assert!((m - exact).abs() <= 0.02 * exact, "{m} vs {exact}");

        let tiny = BallRegion::centered(2, 0.01);
        assert!(ball_mean(&sq, &tiny).is_err());
        assert!(ball_mean(&sq, &BallRegion::new(vec![0.9, 0.0], 0.5)).is_err());
    }

    #[test]
    fn campanato_examples() {
        let g = grid(2, 1.0 / 64.0);
        let ball = BallRegion::centered(2, 0.5);
        let c = MatField::from_fn(g, |_| SymMat::diag(&[3.0, 1.0]));
        assert_eq!(campanato(&c, &ball).unwrap(), 0.0);
        let lin = MatField::from_fn(g, |x| e11(2) * x[0]);
        let value = campanato(&lin, &ball).unwrap();
        let exact = std::f64::consts::PI * 0.5f64.powi(4) / 4.0;
        assert!((value - exact).abs() <= 0.03 * exact, "{value} vs {exact}");
        assert!(value <= l2_norm_sq(&lin, &ball).unwrap());
        let shifted = lin.shifted(&SymMat::from_rows(&[vec![0.3, 2.0], vec![2.0, -1.0]]).unwrap());
        assert!((campanato(&shifted, &ball).unwrap() - value).abs() < 1e-12);
    }

    #[test]
    fn holder_examples() {
        let g = grid(2, 1.0 / 16.0);
        let ball = BallRegion::centered(2, 0.5);
        let c = ScalarField::from_fn(g, |_| 2.0);
        assert_eq!(holder_seminorm(&c, 0.5, &ball, 1000).unwrap(), 0.0);
        let x1 = ScalarField::from_fn(g, |x| x[0]);
        assert!((holder_seminorm(&x1, 1.0, &ball, DEFAULT_HOLDER_PAIRS).unwrap() - 1.0).abs() < 1e-12);
        // budgeted sampling stays below the exhaustive value
        let budget = holder_seminorm(&x1, 1.0, &ball, 500).unwrap();
        assert!(budget <= 1.0 + 1e-12 && budget > 0.5);

        let root = |h: f64, alpha: f64| {
            let g = grid(2, h);
            let f = ScalarField::from_fn(g, |x| x[0].abs().sqrt());
            holder_seminorm(&f, alpha, &BallRegion::centered(2, 0.25), DEFAULT_HOLDER_PAIRS).unwrap()
        };
        assert!(root(1.0 / 32.0, 0.5) <= 1.0 + 1e-9);
        assert!(root(1.0 / 64.0, 1.0) >= 1.3 * root(1.0 / 32.0, 1.0));
    }

    #[test]
    fn decay_fit_examples() {
        let r = dyadic_radii(0.4, 6);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        let quartic: Vec<f64> = r.iter().map(|x| x.powi(4)).collect();
        let fit = decay_fit(&r, &quartic).unwrap();
        assert!((fit.exponent - 4.0).abs() < 1e-9 && fit.residual < 1e-9);
        let sq: Vec<f64> = r.iter().map(|x| 3.0 * x * x).collect();
        assert!((decay_fit(&r, &sq).unwrap().exponent - 2.0).abs() < 1e-9);
        let wiggle: Vec<f64> = r.iter().map(|x| x * x * (1.0 + 0.1 * x.ln().sin())).collect();
        let fit = decay_fit(&r, &wiggle).unwrap();
        assert!((fit.exponent - 2.0).abs() <= 0.15 && fit.residual > 0.0);
        let mut zeros = quartic.clone();
        zeros[0] = 0.0;
        zeros[1] = 0.0;
        assert_eq!(decay_fit(&r, &zeros).unwrap().dropped_zeros, 2);
        zeros[2] = 0.0;
        assert!(decay_fit(&r, &zeros).is_err());
        assert!(DecayProfile::new(vec![0.2, 0.1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn bump_hessian_matches_stencil() {
        let g = grid(2, 1.0 / 128.0);
        let c = [0.1, -0.2];
        let eta = quartic_bump(g, &c, 0.3);
        let d2 = hessian(&eta).unwrap();
        let err = d2
            .valid()
            .nodes(&g)
            .iter()
            .map(|&i| (*d2.at(i) - quartic_bump_hessian(&c, 0.3, &g.point(i)[..2])).norm())
            .fold(0.0, f64::max);
        // O(h²) against a peak curvature of 8/r²
        assert!(err < 5e-3 * 8.0 / 0.09, "{err}");
    }
}
