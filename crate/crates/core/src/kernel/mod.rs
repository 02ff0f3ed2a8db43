//! Scale functions, jump kernels and numerical checks of their structural conditions.

mod checks;
mod jump;
mod scale;

pub use checks::{
    check_jc1, check_jc2, check_jphi, check_jt, check_phi, jc2_separation, log_grid, reproduce_witness, ConditionId,
    ConditionReport, Jc1Config, Jc2Config, JphiConfig, JtOptions, PhiOptions, PhiReport, TestSet, Verdict, Witness,
};
pub(crate) use jump::radial_integral;
pub use jump::{
    ball_mass, shell_mass, tail_mass, BallMass, JumpKernelSpec, Kappa, Mass, MassOptions, Profile, Temper,
    BALL_MASS_POINTS, MASS_REL_TOL,
};
pub use scale::{ScaleForm, ScaleFunction};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("tabulated scale function queried at r = {r} outside [{lo}, {hi}]")]
    Extrapolation { r: f64, lo: f64, hi: f64 },
    #[error("tail integral diverges beyond r = {radius}")]
    Divergent { radius: f64 },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
}
