//! Hessian functionals of the form `F(M) = f(MᵀM)` with exact derivatives.
//!
//! Derivative conventions, shared by every module: for symmetric `w` the
//! gradient `G = ∂f/∂w` satisfies `df = Σ_ab G_ab dw_ab` over all ordered
//! pairs, and the Hessian `H[a][b][c][d]` satisfies `dG_ab = Σ_cd H_abcd dw_cd`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::symtensor::{SymMat, Tensor4};

/// A function `f(w)` of a positive semidefinite symmetric matrix.
pub trait MatrixFunctional: Send + Sync {
    fn name(&self) -> &str;
    fn value(&self, w: &SymMat) -> f64;
    fn grad(&self, w: &SymMat) -> SymMat;
    fn hess(&self, w: &SymMat) -> Tensor4;
    /// Domain guard on `w`.
    fn admits(&self, w: &SymMat) -> bool {
        w.is_finite()
    }
}

impl fmt::Debug for dyn MatrixFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MatrixFunctional({})", self.name())
    }
}

/// `f(w) = tr(w)`, so `F(M) = |M|²_F`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceQuadratic;

impl MatrixFunctional for TraceQuadratic {
    fn name(&self) -> &str {
        "trace_quadratic"
    }

    fn value(&self, w: &SymMat) -> f64 {
        w.trace()
    }

    fn grad(&self, w: &SymMat) -> SymMat {
        SymMat::identity(w.n())
    }

    fn hess(&self, w: &SymMat) -> Tensor4 {
        Tensor4::zeros(w.n())
    }
}

/// `f(w) = √det(I + w)`: the area integrand of a Lagrangian graph.
#[derive(Debug, Clone, Copy, Default)]
pub struct HamStat;

impl HamStat {
    fn shifted(w: &SymMat) -> SymMat {
        *w + SymMat::identity(w.n())
    }
}

impl MatrixFunctional for HamStat {
    fn name(&self) -> &str {
        "hamstat"
    }

    fn value(&self, w: &SymMat) -> f64 {
        Self::shifted(w).det().sqrt()
    }

    fn grad(&self, w: &SymMat) -> SymMat {
        let a = Self::shifted(w);
        let s = a.det().sqrt();
        a.inverse().expect("guarded: I + w invertible") * (0.5 * s)
    }

    fn hess(&self, w: &SymMat) -> Tensor4 {
        let a = Self::shifted(w);
        let s = a.det().sqrt();
        let ai = a.inverse().expect("guarded: I + w invertible");
        // dG = ¼ s tr(A⁻¹dw) A⁻¹ − ½ s A⁻¹ dw A⁻¹
        Tensor4::from_fn(w.n(), |p, q, c, d| {
            0.25 * s * ai.get(p, q) * ai.get(c, d)
                - 0.25 * s * (ai.get(p, c) * ai.get(d, q) + ai.get(p, d) * ai.get(c, q))
        })
    }

    fn admits(&self, w: &SymMat) -> bool {
        w.is_finite() && Self::shifted(w).det() > 0.0
    }
}

type ValueFn = dyn Fn(&SymMat) -> f64 + Send + Sync;
type GradFn = dyn Fn(&SymMat) -> SymMat + Send + Sync;
type HessFn = dyn Fn(&SymMat) -> Tensor4 + Send + Sync;
type GuardFn = dyn Fn(&SymMat) -> bool + Send + Sync;

/// Catalog entry assembled from caller-supplied callbacks.
pub struct UserFunctional {
    name: String,
    value: Box<ValueFn>,
    grad: Box<GradFn>,
    hess: Box<HessFn>,
    guard: Option<Box<GuardFn>>,
}

impl UserFunctional {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(&SymMat) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&SymMat) -> SymMat + Send + Sync + 'static,
        hess: impl Fn(&SymMat) -> Tensor4 + Send + Sync + 'static,
    ) -> Self {
        UserFunctional {
            name: name.into(),
            value: Box::new(value),
            grad: Box::new(grad),
            hess: Box::new(hess),
            guard: None,
        }
    }

    pub fn with_guard(mut self, guard: impl Fn(&SymMat) -> bool + Send + Sync + 'static) -> Self {
        self.guard = Some(Box::new(guard));
        self
    }
}

impl MatrixFunctional for UserFunctional {
    fn name(&self) -> &str {
        &self.name
    }
    fn value(&self, w: &SymMat) -> f64 {
        (self.value)(w)
    }
    fn grad(&self, w: &SymMat) -> SymMat {
        (self.grad)(w)
    }
    fn hess(&self, w: &SymMat) -> Tensor4 {
        (self.hess)(w)
    }
    fn admits(&self, w: &SymMat) -> bool {
        w.is_finite() && self.guard.as_ref().is_none_or(|g| g(w))
    }
}

/// Named catalog of functionals; the built-ins are always present.
#[derive(Clone)]
pub struct FunctionalCatalog {
    entries: BTreeMap<String, Arc<dyn MatrixFunctional>>,
}

impl Default for FunctionalCatalog {
    fn default() -> Self {
        let mut entries: BTreeMap<String, Arc<dyn MatrixFunctional>> = BTreeMap::new();
        entries.insert("trace_quadratic".into(), Arc::new(TraceQuadratic));
        entries.insert("hamstat".into(), Arc::new(HamStat));
        FunctionalCatalog { entries }
    }
}

impl FunctionalCatalog {
    pub fn get(&self, name: &str) -> Result<Arc<dyn MatrixFunctional>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown functional '{name}' (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn register(&mut self, f: Arc<dyn MatrixFunctional>) {
        self.entries.insert(f.name().to_string(), f);
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }
}

fn guarded_gram(f: &dyn MatrixFunctional, m: &SymMat) -> Result<SymMat> {
    let w = m.gram();
    if !f.admits(&w) {
        return Err(Error::Domain(format!(
            "{}: guard rejects w = MᵀM at M = {:?}",
            f.name(),
            m
        )));
    }
    Ok(w)
}

/// `F(M) = f(MᵀM)`.
#[allow(non_snake_case)]
pub fn eval_F(f: &dyn MatrixFunctional, m: &SymMat) -> Result<f64> {
    let w = guarded_gram(f, m)?;
    Ok(f.value(&w))
}

/// `∂F/∂M_ij = (MG + GM)_ij` with `G = ∂f/∂w` at `w = M²`.
#[allow(non_snake_case)]
pub fn grad_F(f: &dyn MatrixFunctional, m: &SymMat) -> Result<SymMat> {
    let w = guarded_gram(f, m)?;
    Ok(m.sym_product(&f.grad(&w)) * 2.0)
}

/// Second derivative of `F` on symmetric matrices, built directly from
/// `d(MG + GM) = ηG + Gη + M dG + dG M` with `dG = H : (ηM + Mη)`.
#[allow(non_snake_case)]
pub fn hess_F(f: &dyn MatrixFunctional, m: &SymMat) -> Result<Tensor4> {
    let n = m.n();
    let w = guarded_gram(f, m)?;
    let g = f.grad(&w);
    let h = f.hess(&w);
    // column (k,l): derivative of grad_F along the basis element E_kl
    let mut table = [[SymMat::zeros(n); 3]; 3];
    for k in 0..n {
        for l in k..n {
            let eta = SymMat::basis(n, k, l);
            let dw = eta.sym_product(m) * 2.0;
            let dg = h.contract_trailing(&dw);
            let dgrad = (eta.sym_product(&g) + m.sym_product(&dg)) * 2.0;
            table[k][l] = dgrad;
            table[l][k] = dgrad;
        }
    }
    Ok(Tensor4::from_fn(n, |i, j, k, l| table[k][l].get(i, j)))
}

/// Worst relative errors found by [`check_derivatives`].
#[derive(Debug, Clone, serde::Serialize)]
pub struct DerivativeReport {
    pub grad_error: f64,
    pub hess_error: f64,
    pub worst_sample: usize,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.grad_error.max(self.hess_error)
    }
}

/// Compares `grad` with central differences of `value`, and `hess` with
/// central differences of `grad`, at `w = M²` for every sample `M`.
///
/// Errors are measured as `|analytic − fd| / (1 + |analytic|)` per component.
pub fn check_derivatives(
    f: &dyn MatrixFunctional,
    samples: &[SymMat],
    step: f64,
) -> Result<DerivativeReport> {
    if !(step > 0.0) {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let mut report = DerivativeReport { grad_error: 0.0, hess_error: 0.0, worst_sample: 0 };
    let mut worst = -1.0;
    for (s, m) in samples.iter().enumerate() {
        let n = m.n();
        let w = m.gram();
        for a in 0..n {
            for b in a..n {
                let e = SymMat::basis(n, a, b);
                for t in [-2.0 * step, 2.0 * step] {
                    if !f.admits(&(w + e * t)) {
                        return Err(Error::Domain(format!(
                            "{}: guard margin 2·step violated at sample {s}",
                            f.name()
                        )));
                    }
                }
            }
        }
        let g = f.grad(&w);
        let h = f.hess(&w);
        let mut ge = 0.0f64;
        let mut he = 0.0f64;
        for c in 0..n {
            for d in c..n {
                let e = SymMat::basis(n, c, d);
                let (wp, wm) = (w + e * step, w - e * step);
                let fd = (f.value(&wp) - f.value(&wm)) / (2.0 * step);
                ge = ge.max((g.get(c, d) - fd).abs() / (1.0 + g.get(c, d).abs()));
                let dg = (f.grad(&wp) - f.grad(&wm)) * (0.5 / step);
                for a in 0..n {
                    for b in a..n {
                        let an = h.get(a, b, c, d);
                        he = he.max((an - dg.get(a, b)).abs() / (1.0 + an.abs()));
                    }
                }
            }
        }
        report.grad_error = report.grad_error.max(ge);
        report.hess_error = report.hess_error.max(he);
        if ge.max(he) > worst {
            worst = ge.max(he);
            report.worst_sample = s;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> SymMat {
        let m = SymMat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = m.norm().max(1e-12);
        m * (radius * rng.gen_range(0.0..1.0) / norm)
    }

    fn rotation(theta: f64, phi: f64) -> [[f64; 3]; 3] {
        let (c, s) = (theta.cos(), theta.sin());
        let (cp, sp) = (phi.cos(), phi.sin());
        let rz = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let mut q = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                q[i][j] = (0..3).map(|k| rz[i][k] * rx[k][j]).sum();
            }
        }
        q
    }

    #[test]
    fn eval_examples() {
        let hs = HamStat;
        let tq = TraceQuadratic;
        assert_eq!(eval_F(&hs, &SymMat::zeros(2)).unwrap(), 1.0);
        assert_eq!(eval_F(&tq, &SymMat::identity(2)).unwrap(), 2.0);
        let v = eval_F(&hs, &SymMat::diag(&[1.0, 0.0])).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn grad_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_sym(&mut rng, 3, 2.0);
        let g = grad_F(&TraceQuadratic, &m).unwrap();
        assert!((g - m * 2.0).norm() < 1e-14);
        assert_eq!(grad_F(&HamStat, &SymMat::zeros(2)).unwrap(), SymMat::zeros(2));

        let t = 0.05;
        let step = 1e-5;
        let g = grad_F(&HamStat, &SymMat::diag(&[t, 0.0])).unwrap();
        let fd = (eval_F(&HamStat, &SymMat::diag(&[t + step, 0.0])).unwrap()
            - eval_F(&HamStat, &SymMat::diag(&[t - step, 0.0])).unwrap())
            / (2.0 * step);
        assert!((g.get(0, 0) - fd).abs() < 1e-8);
        assert!((g.get(0, 0) - t / (1.0 + t * t).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn check_derivatives_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1: Vec<SymMat> = (0..10).map(|_| random_sym(&mut rng, 2, 1.0)).collect();
        let r = check_derivatives(&TraceQuadratic, &s1, 1e-4).unwrap();
        assert!(r.max_error() <= 1e-8, "{r:?}");
        let s2: Vec<SymMat> = (0..10).map(|_| random_sym(&mut rng, 3, 0.5)).collect();
        let r = check_derivatives(&HamStat, &s2, 1e-4).unwrap();
        assert!(r.max_error() <= 1e-6, "{r:?}");
    }

    #[test]
    fn check_derivatives_detects_wrong_gradient() {
        let bad = UserFunctional::new(
            "bad",
            |w: &SymMat| w.trace() + w.norm_sq(),
            |w: &SymMat| SymMat::identity(w.n()),
            |w: &SymMat| Tensor4::zeros(w.n()),
        );
        let samples = vec![SymMat::diag(&[0.5, 0.7]), SymMat::identity(2)];
        let r = check_derivatives(&bad, &samples, 1e-4).unwrap();
        assert!(r.max_error() >= 1e-2);
    }

    #[test]
    fn check_derivatives_rejects_guard_margin() {
        let guarded = UserFunctional::new(
            "bounded",
            |w: &SymMat| w.trace(),
            |w: &SymMat| SymMat::identity(w.n()),
            |w: &SymMat| Tensor4::zeros(w.n()),
        )
        .with_guard(|w| w.trace() < 0.501);
        let samples = vec![SymMat::diag(&[std::f64::consts::FRAC_1_SQRT_2, 0.0])];
        assert!(matches!(
            check_derivatives(&guarded, &samples, 1e-3),
            Err(Error::Domain(_))
        ));
        assert!(eval_F(&guarded, &SymMat::diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn grad_matches_finite_differences_for_catalog() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cat = FunctionalCatalog::default();
        for name in cat.names() {
            let f = cat.get(&name).unwrap();
            for _ in 0..100 {
                let n = rng.gen_range(2..=3);
                let m = random_sym(&mut rng, n, 1.0);
                let g = grad_F(f.as_ref(), &m).unwrap();
                let step = 1e-4;
                let mut err = 0.0f64;
                for a in 0..n {
                    for b in a..n {
                        let e = SymMat::basis(n, a, b);
                        let fd = (eval_F(f.as_ref(), &(m + e * step)).unwrap()
                            - eval_F(f.as_ref(), &(m - e * step)).unwrap())
                            / (2.0 * step);
                        err = err.max((g.get(a, b) - fd).abs());
                    }
                }
                assert!(err / (1.0 + g.norm()) <= 1e-6, "{name}: {err}");
            }
        }
    }

    #[test]
    fn hamstat_is_at_least_one_and_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let m = random_sym(&mut rng, 3, 3.0);
            let v = eval_F(&HamStat, &m).unwrap();
            assert!(v >= 1.0);
            let q = rotation(rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
            let vr = eval_F(&HamStat, &m.congruence(&q)).unwrap();
            assert!((v - vr).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn hessians_are_major_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let w = random_sym(&mut rng, 3, 0.8).gram();
            let h = HamStat.hess(&w);
            assert!((h - h.transpose_pairs()).norm() <= 1e-12 * (1.0 + h.norm()));
            assert_eq!(h.minor_asymmetry(), 0.0);
        }
    }

    #[test]
    fn catalog_lookup() {
        let mut cat = FunctionalCatalog::default();
        assert!(cat.get("hamstat").is_ok());
        assert!(matches!(cat.get("nope"), Err(Error::Config(_))));
        cat.register(Arc::new(UserFunctional::new(
            "mine",
            |w: &SymMat| w.trace(),
            |w: &SymMat| SymMat::identity(w.n()),
            |w: &SymMat| Tensor4::zeros(w.n()),
        )));
        assert_eq!(cat.get("mine").unwrap().name(), "mine");
    }
}
