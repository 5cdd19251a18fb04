//! Versioned JSON run configuration.

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use crate::diagnostics::{BootstrapConfig, ProbeConfig};
use crate::ellipticity::SamplerMode;
use crate::error::{Error, Result};
use crate::fields::{BallRegion, Grid, ScalarField};
use crate::functionals::{FunctionalCatalog, MatrixFunctional};
use crate::symtensor::SymMat;
use crate::var_solver::{HessianBound, MinimizeOptions};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    /// Nodes per axis; `h = 2/(m − 1)`.
    pub m: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n: 2, m: 129 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySpec {
    pub sampler: SamplerMode,
    pub count: usize,
    pub threshold: f64,
}

impl Default for CertifySpec {
    fn default() -> Self {
        CertifySpec { sampler: SamplerMode::OperatorBall { radius: 0.5 }, count: 200, threshold: 0.0 }
    }
}

/// Constant coefficients for `solve-cc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `c(ξ, η) = ξ : η` (discrete biharmonic).
    Identity,
    /// The functional's `b` tensor at a fixed Hessian.
    FrozenB { hessian: SymMat },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcSpec {
    pub region: BallRegion,
    pub coefficients: CoefficientSpec,
    pub tol: f64,
    /// Radii of the decay profiles; empty skips them.
    pub radii: Vec<f64>,
}

impl Default for CcSpec {
    fn default() -> Self {
        CcSpec {
            region: BallRegion::new(Vec::new(), 0.75),
            coefficients: CoefficientSpec::Identity,
            tol: crate::cc_solver::DEFAULT_CC_TOL,
            radii: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarSpec {
    pub minimize: MinimizeOptions,
    pub hessian_bound: Option<HessianBound>,
    pub test_count: usize,
}

impl Default for VarSpec {
    fn default() -> Self {
        VarSpec { minimize: MinimizeOptions::default(), hessian_bound: None, test_count: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub order: usize,
    #[serde(default)]
    pub config: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSpec {
    pub cases: usize,
    pub samples: usize,
}

impl Default for LemmaSpec {
    fn default() -> Self {
        LemmaSpec { cases: 1000, samples: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSpec {
    /// Field file to diagnose; when absent the variational problem is solved inline.
    pub field: Option<String>,
    pub alpha: f64,
    pub bootstrap: BootstrapConfig,
    /// Also solve at half the spacing and tabulate the refinement.
    pub refine: bool,
    pub probe: Option<ProbeSpec>,
    pub lemma: bool,
}

impl Default for DiagnoseSpec {
    fn default() -> Self {
        DiagnoseSpec {
            field: None,
            alpha: 0.5,
            bootstrap: BootstrapConfig::default(),
            refine: false,
            probe: None,
            lemma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub functional: String,
    #[serde(default)]
    pub grid: GridSpec,
    /// Boundary data (and default initial guess) as an expression in `x1 … xn`.
    #[serde(default = "zero_expr")]
    pub boundary: String,
    #[serde(default)]
    pub init: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub certify: CertifySpec,
    #[serde(default)]
    pub cc: CcSpec,
    #[serde(default)]
    pub var: VarSpec,
    #[serde(default)]
    pub diagnose: DiagnoseSpec,
    #[serde(default)]
    pub lemma: LemmaSpec,
}

fn zero_expr() -> String {
    "0".into()
}

impl RunConfig {
    /// Parses and validates; nothing is computed before this succeeds.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        FunctionalCatalog::default().get(&self.functional)?;
        self.grid()?;
        self.expr(&self.boundary)?;
        if let Some(init) = &self.init {
            self.expr(init)?;
        }
        let n = self.grid.n;
        if !self.cc.region.center.is_empty() && self.cc.region.center.len() != n {
            return Err(Error::Config(format!("cc.region.center must have {n} coordinates")));
        }
        if let CoefficientSpec::FrozenB { hessian } = &self.cc.coefficients {
            if hessian.n() != n {
                return Err(Error::Config(format!("cc.coefficients.hessian must be {n}×{n}")));
            }
        }
        if !(self.diagnose.alpha > 0.0 && self.diagnose.alpha <= 1.0) {
            return Err(Error::Config("diagnose.alpha must lie in (0, 1]".into()));
        }
        if let Some(p) = &self.diagnose.probe {
            if !(3..=4).contains(&p.order) {
                return Err(Error::Config("diagnose.probe.order must be 3 or 4".into()));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.n, self.grid.m).map_err(|e| Error::Config(format!("grid: {e}")))
    }

    pub fn functional(&self) -> Result<std::sync::Arc<dyn MatrixFunctional>> {
        FunctionalCatalog::default().get(&self.functional)
    }

    fn expr(&self, src: &str) -> Result<Expr> {
        let e = Expr::parse(src)?;
        if e.max_var() > self.grid.n {
            return Err(Error::Config(format!("expression '{src}' uses x{} but n = {}", e.max_var(), self.grid.n)));
        }
        Ok(e)
    }

    /// Samples an expression on a grid.
    pub fn sample(&self, src: &str, grid: Grid) -> Result<ScalarField> {
        let e = self.expr(src)?;
        let field = ScalarField::from_fn(grid, |x| e.eval(x));
        ScalarField::from_values(grid, field.values().to_vec())
            .map_err(|_| Error::Config(format!("expression '{src}' is not finite on the grid")))
    }

    pub fn region(&self) -> BallRegion {
        let mut r = self.cc.region.clone();
        if r.center.is_empty() {
            r.center = vec![0.0; self.grid.n];
        }
        r
    }
}
