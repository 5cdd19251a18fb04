//! Configuration, expression parsing and the batch commands behind the
//! `regboot` binary. Commands live here so they can be tested in-process.

mod commands;
mod config;
mod expr;

pub use commands::{exit_code, run, run_file, Command, Outcome};
pub use config::{
    CcSpec, CertifySpec, CoefficientSpec, DiagnoseSpec, GridSpec, LemmaSpec, ProbeSpec, RunConfig, VarSpec,
    SCHEMA_VERSION,
};
pub use expr::Expr;
