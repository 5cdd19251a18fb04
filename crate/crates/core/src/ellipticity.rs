//! Ellipticity certificates for coefficient tensors over regions of Hessian space.
//!
//! An equation is certified *regular* on a sampled region when the full
//! Legendre constant of `a` is positive and either `b` or `−b` is positive
//! definite on symmetric matrices, each with the requested margin.
//! Certificates are sampled, never global.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coefficients::{a_tensor, b_tensor};
use crate::error::{Error, Result};
use crate::functionals::MatrixFunctional;
use crate::rng;
use crate::symtensor::{sym_dim, SymMat, Tensor4};

/// Minimum eigenvalue of the (major-symmetrized) quadratic form of `t`
/// over unit-Frobenius symmetric matrices.
pub fn legendre_constant(t: &Tensor4) -> f64 {
    t.quadform_eigen_range().0
}

/// `Σ_ab A_ab X^a X^b` style reduction: the quadratic form of `t` restricted
/// to `q ↦ sym(p ⊗ q)` as an `n x n` matrix.
fn restricted_form(t: &Tensor4, p: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = t.n();
    let xs: Vec<SymMat> = (0..n)
        .map(|a| SymMat::from_fn(n, |i, j| 0.5 * (p[i] * kd(j, a) + kd(i, a) * p[j])))
        .collect();
    let numer = DMatrix::from_fn(n, n, |a, b| {
        0.5 * (t.bilinear(&xs[a], &xs[b]).unwrap() + t.bilinear(&xs[b], &xs[a]).unwrap())
    });
    let pp: f64 = p.iter().map(|v| v * v).sum();
    // |sym(p⊗q)|² = ½(|p|²|q|² + (p·q)²)
    let denom = DMatrix::from_fn(n, n, |a, b| 0.5 * (pp * kd(a, b) + p[a] * p[b]));
    (numer, denom)
}

fn kd(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Minimum of the generalized Rayleigh quotient `qᵀAq / qᵀBq`.
fn generalized_min(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let l = b.clone().cholesky().expect("denominator form is positive definite").unpack();
    let linv = l.try_inverse().expect("triangular factor invertible");
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    SymmetricEigen::new(c).eigenvalues.min()
}

#[cfg(test)]
fn rank_one_quotient(t: &Tensor4, p: &[f64], q: &[f64]) -> f64 {
    let n = t.n();
    let xi = SymMat::from_fn(n, |i, j| 0.5 * (p[i] * q[j] + q[i] * p[j]));
    t.apply_quadratic(&xi).unwrap() / xi.norm_sq()
}

/// `min_q T(sym(p⊗q))/|sym(p⊗q)|²` for a fixed direction `p`.
fn profile(t: &Tensor4, p: &[f64]) -> f64 {
    let (a, b) = restricted_form(t, p);
    generalized_min(&a, &b)
}

fn direction(n: usize, x: &[f64]) -> Vec<f64> {
    match n {
        1 => vec![1.0],
        2 => vec![x[0].cos(), x[0].sin()],
        _ => vec![x[0].sin() * x[1].cos(), x[0].sin() * x[1].sin(), x[0].cos()],
    }
}

/// Nelder–Mead on the angle coordinates of `p`.
fn refine(t: &Tensor4, start: &[f64], step: f64) -> f64 {
    let n = t.n();
    let d = start.len();
    let g = |x: &[f64]| profile(t, &direction(n, x));
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=d)
        .map(|k| {
            let mut x = start.to_vec();
            if k > 0 {
                x[k - 1] += step;
            }
            let v = g(&x);
            (x, v)
        })
        .collect();
    for _ in 0..400 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[d].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= 1e-15 * (1.0 + simplex[0].1.abs()) && size < 1e-9 {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|i| simplex[..d].iter().map(|(x, _)| x[i]).sum::<f64>() / d as f64)
            .collect();
        let along = |s: f64| -> Vec<f64> {
            (0..d).map(|i| centroid[i] + s * (simplex[d].0[i] - centroid[i])).collect()
        };
        let xr = along(-1.0);
        let fr = g(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = g(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let xc = along(0.5);
            let fc = g(&xc);
            if fc < simplex[d].1 {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, v) in simplex.iter_mut().skip(1) {
                    for i in 0..d {
                        x[i] = best[i] + 0.5 * (x[i] - best[i]);
                    }
                    *v = g(x);
                }
            }
        }
    }
    simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min)
}

/// Smallest value found of `T(sym(p⊗q))/|sym(p⊗q)|²` over unit `p`, `q`.
///
/// For each direction `p` the minimum over `q` is an exact generalized
/// eigenproblem, which leaves a search over the sphere of `p` (at most two
/// angles). A coarse angular scan is refined by Nelder–Mead from the best
/// scan points and from `restarts` seeded random angles. The result is an
/// upper bound on the true rank-one constant.
pub fn rank_one_constant(t: &Tensor4, restarts: usize) -> f64 {
    let n = t.n();
    if n == 1 {
        return profile(t, &[1.0]);
    }
    let pi = std::f64::consts::PI;
    let mut scan: Vec<(Vec<f64>, f64)> = Vec::new();
    let step;
    if n == 2 {
        step = pi / 24.0;
        for k in 0..24 {
            let x = vec![k as f64 * step];
            scan.push((x.clone(), profile(t, &direction(n, &x))));
        }
    } else {
        step = pi / 16.0;
        for a in 0..=8 {
            for b in 0..32 {
                let x = vec![a as f64 * step, b as f64 * step];
                scan.push((x.clone(), profile(t, &direction(n, &x))));
                if a == 0 {
                    break;
                }
            }
        }
    }
    scan.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best = scan[0].1;
    let mut starts: Vec<Vec<f64>> = scan.iter().take(3).map(|s| s.0.clone()).collect();
    let mut rng = rng::stream(0x5eed, "rank_one_starts");
    for _ in 0..restarts {
        starts.push((0..n - 1).map(|_| rng.gen_range(0.0..2.0 * pi)).collect());
    }
    for x in starts {
        best = best.min(refine(t, &x, 0.5 * step));
    }
    best
}

/// Region of Hessian space to certify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SamplerMode {
    FrobeniusBall { radius: f64 },
    OperatorBall { radius: f64 },
    ExplicitList { matrices: Vec<SymMat> },
}

/// Deterministic sampler of symmetric matrices in a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianSampler {
    pub dim: usize,
    #[serde(flatten)]
    pub mode: SamplerMode,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl HessianSampler {
    pub fn label(&self) -> String {
        match &self.mode {
            SamplerMode::FrobeniusBall { radius } => format!("frobenius_ball({radius})"),
            SamplerMode::OperatorBall { radius } => format!("operator_ball({radius})"),
            SamplerMode::ExplicitList { matrices } => format!("explicit_list[{}]", matrices.len()),
        }
    }

    pub fn samples(&self) -> Result<Vec<SymMat>> {
        let n = self.dim;
        if !(1..=3).contains(&n) {
            return Err(Error::Usage(format!("sampler dimension {n} unsupported")));
        }
        let dof = sym_dim(n);
        let mut rng = rng::stream(self.seed, "sampler");
        let ball = |radius: f64, rng: &mut rng::StreamRng| {
            let g: Vec<f64> = (0..dof).map(|_| rng.sample(StandardNormal)).collect();
            let u: f64 = rng.gen();
            let r = radius * u.powf(1.0 / dof as f64);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v: Vec<f64> = g.iter().map(|x| x * r / norm).collect();
            SymMat::from_symvec(n, &v).expect("length matches")
        };
        match &self.mode {
            SamplerMode::FrobeniusBall { radius } => {
                check_radius(*radius)?;
                Ok((0..self.count).map(|_| ball(*radius, &mut rng)).collect())
            }
            SamplerMode::OperatorBall { radius } => {
                check_radius(*radius)?;
                // rejection from the circumscribed Frobenius ball keeps the law uniform
                let outer = radius * (n as f64).sqrt();
                let mut out = Vec::with_capacity(self.count);
                while out.len() < self.count {
                    let m = ball(outer, &mut rng);
                    if m.operator_norm() <= *radius {
                        out.push(m);
                    }
                }
                Ok(out)
            }
            SamplerMode::ExplicitList { matrices } => {
                if let Some(bad) = matrices.iter().find(|m| m.n() != n) {
                    return Err(Error::Usage(format!(
                        "explicit sample {bad:?} does not have dimension {n}"
                    )));
                }
                Ok(matrices.clone())
            }
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Usage(format!("sampler radius {r} must be finite and nonnegative")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    RegularPlus,
    RegularMinus,
    Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EllipticityReport {
    pub functional: String,
    pub region: String,
    pub samples: usize,
    pub threshold: f64,
    pub lambda_legendre: f64,
    /// Upper bound only: the rank-one search is a non-convex optimization.
    pub lambda_rank_one: f64,
    pub lambda_rank_one_is_upper_bound: bool,
    pub lambda_b_plus: f64,
    pub lambda_b_minus: f64,
    pub worst_sample: Option<SymMat>,
    pub worst_index: Option<usize>,
    pub verdict: Verdict,
    pub failure: Option<String>,
    pub disclaimer: String,
}

/// Random restarts used for the rank-one search in certificates.
pub const CERTIFY_RANK_ONE_RESTARTS: usize = 2;

/// Evaluates the regularity conditions at every sample of the region.
pub fn certify_region(
    f: &dyn MatrixFunctional,
    sampler: &HessianSampler,
    threshold: f64,
) -> Result<EllipticityReport> {
    let samples = sampler.samples()?;
    let mut report = EllipticityReport {
        functional: f.name().to_string(),
        region: sampler.label(),
        samples: samples.len(),
        threshold,
        lambda_legendre: f64::INFINITY,
        lambda_rank_one: f64::INFINITY,
        lambda_rank_one_is_upper_bound: true,
        lambda_b_plus: f64::INFINITY,
        lambda_b_minus: f64::INFINITY,
        worst_sample: None,
        worst_index: None,
        verdict: Verdict::Fails,
        failure: None,
        disclaimer: "sampled certificate: constants are minima over the listed samples only"
            .to_string(),
    };
    if samples.is_empty() {
        report.failure = Some("no samples".into());
        return Ok(report);
    }
    let mut plus = (f64::INFINITY, 0usize);
    let mut minus = (f64::INFINITY, 0usize);
    for (s, m) in samples.iter().enumerate() {
        let (a, b) = match (a_tensor(f, m), b_tensor(f, m)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                report.verdict = Verdict::Fails;
                report.failure = Some(format!("sample {s}: {e}"));
                report.worst_sample = Some(*m);
                report.worst_index = Some(s);
                return Ok(report);
            }
        };
        let legendre = legendre_constant(&a);
        let rank_one = rank_one_constant(&a, CERTIFY_RANK_ONE_RESTARTS);
        let (lo, hi) = b.quadform_eigen_range();
        report.lambda_legendre = report.lambda_legendre.min(legendre);
        report.lambda_rank_one = report.lambda_rank_one.min(rank_one);
        report.lambda_b_plus = report.lambda_b_plus.min(lo);
        report.lambda_b_minus = report.lambda_b_minus.min(-hi);
        let mp = legendre.min(lo);
        let mm = legendre.min(-hi);
        if mp < plus.0 {
            plus = (mp, s);
        }
        if mm < minus.0 {
            minus = (mm, s);
        }
    }
    let (verdict, worst) = if plus.0 > threshold {
        (Verdict::RegularPlus, plus.1)
    } else if minus.0 > threshold {
        (Verdict::RegularMinus, minus.1)
    } else if plus.0 >= minus.0 {
        (Verdict::Fails, plus.1)
    } else {
        (Verdict::Fails, minus.1)
    };
    report.verdict = verdict;
    report.worst_index = Some(worst);
    report.worst_sample = Some(samples[worst]);
    Ok(report)
}

/// Outcome of a convexity-frontier search along a ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Frontier {
    Found(f64),
    NoneWithin(f64),
}

pub const FRONTIER_MAX_RADIUS: f64 = 10.0;
const FRONTIER_SCAN_STEPS: usize = 400;

fn b_margin(f: &dyn MatrixFunctional, dir: &SymMat, t: f64) -> Result<f64> {
    Ok(legendre_constant(&b_tensor(f, &(*dir * t))?))
}

/// Largest `t` with `b(t·d/|d|)` positive semidefinite before the first sign
/// change, located by a coarse scan over `(0, 10]` and refined by bisection.
pub fn convexity_frontier(f: &dyn MatrixFunctional, direction: &SymMat, tol: f64) -> Result<Frontier> {
    let norm = direction.norm();
    if norm == 0.0 {
        return Err(Error::Usage("frontier direction must be nonzero".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Usage("frontier tolerance must be positive".into()));
    }
    let dir = *direction * (1.0 / norm);
    if b_margin(f, &dir, 0.0)? < 0.0 {
        return Err(Error::Usage("b is not positive at the origin".into()));
    }
    let dt = FRONTIER_MAX_RADIUS / FRONTIER_SCAN_STEPS as f64;
    let mut lo = 0.0;
    for k in 1..=FRONTIER_SCAN_STEPS {
        let t = dt * k as f64;
        if b_margin(f, &dir, t)? < 0.0 {
            let mut hi = t;
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if b_margin(f, &dir, mid)? >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(Frontier::Found(lo));
        }
        lo = t;
    }
    Ok(Frontier::NoneWithin(FRONTIER_MAX_RADIUS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{HamStat, TraceQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, n: usize) -> Tensor4 {
        let raw: Vec<f64> = (0..81).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor4::from_fn(n, |i, j, k, l| raw[((i * 3 + j) * 3 + k) * 3 + l])
    }

    #[test]
    fn legendre_examples() {
        assert!((legendre_constant(&Tensor4::identity_pairing(3)) - 1.0).abs() < 1e-12);
        let a = a_tensor(&TraceQuadratic, &SymMat::diag(&[0.4, -1.0])).unwrap();
        assert!((legendre_constant(&a) - 2.0).abs() < 1e-12);
        let a = a_tensor(&HamStat, &SymMat::zeros(2)).unwrap();
        assert!((legendre_constant(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_examples() {
        assert!((rank_one_constant(&Tensor4::identity_pairing(2), 4) - 1.0).abs() < 1e-12);
        let a = a_tensor(&TraceQuadratic, &SymMat::identity(3)).unwrap();
        assert!((rank_one_constant(&a, 4) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_bounds_legendre_and_is_attained_on_rank_one_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for n in [2, 3] {
            for _ in 0..30 {
                let t = random_tensor(&mut rng, n);
                let l = legendre_constant(&t);
                let r = rank_one_constant(&t, 4);
                assert!(r >= l - 1e-9, "rank-one {r} < legendre {l}");
                // brute force over a grid of directions is never better than the search
                let mut brute = f64::INFINITY;
                for a in 0..40 {
                    for b in 0..40 {
                        let (ta, tb) = (a as f64 * 0.0785, b as f64 * 0.0785);
                        let p: Vec<f64> = if n == 2 {
                            vec![ta.cos(), ta.sin()]
                        } else {
                            vec![ta.cos(), ta.sin() * tb.cos(), ta.sin() * tb.sin()]
                        };
                        let q: Vec<f64> = if n == 2 {
                            vec![tb.cos(), tb.sin()]
                        } else {
                            vec![tb.cos(), tb.sin() * ta.cos(), tb.sin() * ta.sin()]
                        };
                        brute = brute.min(rank_one_quotient(&t, &p, &q));
                    }
                }
                assert!(r <= brute + 1e-9, "search {r} worse than brute {brute}");
            }
        }
    }

    #[test]
    fn legendre_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let t = random_tensor(&mut rng, 3);
            let c = rng.gen_range(0.1..10.0);
            let lhs = legendre_constant(&(t * c));
            let rhs = c * legendre_constant(&t);
            assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()) * c);
        }
    }

    #[test]
    fn samplers_respect_their_bounds() {
        for (mode, bound) in [
            (SamplerMode::FrobeniusBall { radius: 0.7 }, 0),
            (SamplerMode::OperatorBall { radius: 0.7 }, 1),
        ] {
            let s = HessianSampler { dim: 3, mode, count: 300, seed: 3 };
            let samples = s.samples().unwrap();
            assert_eq!(samples.len(), 300);
            for m in &samples {
                let v = if bound == 0 { m.norm() } else { m.operator_norm() };
                assert!(v <= 0.7 + 1e-12);
            }
            assert_eq!(samples, s.samples().unwrap());
        }
    }

    #[test]
    fn certify_trace_quadratic() {
        let s = HessianSampler {
            dim: 2,
            mode: SamplerMode::FrobeniusBall { radius: 10.0 },
            count: 200,
            seed: 1,
        };
        let r = certify_region(&TraceQuadratic, &s, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::RegularPlus);
        assert!((r.lambda_legendre - 2.0).abs() < 1e-9);
        assert!((r.lambda_b_plus - 2.0).abs() < 1e-9);
        assert!(r.lambda_rank_one >= r.lambda_legendre - 1e-9);
    }

    #[test]
    fn certify_hamstat_examples() {
        let s = HessianSampler {
            dim: 2,
            mode: SamplerMode::FrobeniusBall { radius: 0.5 },
            count: 500,
            seed: 7,
        };
        let r = certify_region(&HamStat, &s, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::RegularPlus);
        assert!(r.lambda_b_plus > 0.0);

        let s = HessianSampler {
            dim: 2,
            mode: SamplerMode::ExplicitList { matrices: vec![SymMat::zeros(2)] },
            count: 0,
            seed: 0,
        };
        let r = certify_region(&HamStat, &s, 0.0).unwrap();
        assert!((r.lambda_b_plus - 1.0).abs() < 1e-12);

        let s = HessianSampler {
            dim: 2,
            mode: SamplerMode::OperatorBall { radius: 5.0 },
            count: 200,
            seed: 7,
        };
        let r = certify_region(&HamStat, &s, 0.0).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(r.worst_sample.is_some());
    }

    #[test]
    fn certificate_is_deterministic() {
        let s = HessianSampler {
            dim: 3,
            mode: SamplerMode::OperatorBall { radius: 0.8 },
            count: 50,
            seed: 99,
        };
        let a = serde_json::to_string(&certify_region(&HamStat, &s, 0.0).unwrap()).unwrap();
        let b = serde_json::to_string(&certify_region(&HamStat, &s, 0.0).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frontier_examples() {
        assert_eq!(
            convexity_frontier(&TraceQuadratic, &SymMat::diag(&[0.3, 1.0]), 1e-6).unwrap(),
            Frontier::NoneWithin(10.0)
        );
        let tol = 1e-4;
        match convexity_frontier(&HamStat, &SymMat::diag(&[1.0, 0.0]), tol).unwrap() {
            Frontier::Found(t) => assert!(t >= 0.95, "t* = {t}"),
            Frontier::NoneWithin(_) => {}
        }
        let id = SymMat::identity(2);
        let t = match convexity_frontier(&HamStat, &id, tol).unwrap() {
            Frontier::Found(t) => t,
            other => panic!("expected a frontier along I, got {other:?}"),
        };
        // dense scan oracle at spacing tol
        let dir = id * (1.0 / id.norm());
        let mut k = 1usize;
        let mut last_ok = 0.0;
        loop {
            let s = k as f64 * tol;
            if legendre_constant(&b_tensor(&HamStat, &(dir * s)).unwrap()) < 0.0 {
                break;
            }
            last_ok = s;
            k += 1;
        }
        assert!((t - last_ok).abs() <= 2.0 * tol, "bisection {t} vs scan {last_ok}");
    }

    #[test]
    fn convex_entries_have_positive_b_inside_half_ball() {
        let s = HessianSampler {
            dim: 3,
            mode: SamplerMode::FrobeniusBall { radius: 0.5 },
            count: 200,
            seed: 12,
        };
        for m in s.samples().unwrap() {
            for f in [&HamStat as &dyn MatrixFunctional, &TraceQuadratic] {
                assert!(b_tensor(f, &m).unwrap().quadform_eigen_range().0 > 0.0);
            }
        }
    }
}
