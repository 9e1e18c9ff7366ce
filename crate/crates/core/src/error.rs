use thiserror::Error;

/// Errors raised by field operations, model assembly and the stepper.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("vacuum: min density {min_rho:e} below floor {floor:e}")]
    Vacuum { min_rho: f64, floor: f64 },
    #[error("degenerate deformation: min det F {min_det:e} below floor {floor:e}")]
    DegenerateDeformation { min_det: f64, floor: f64 },
    #[error("incompatible deformation: curl residual {residual:e} exceeds {tol:e}")]
    IncompatibleDeformation { residual: f64, tol: f64 },
    #[error("non-gradient constant part: |mean(U)| = {mean:e} exceeds {tol:e}")]
    NonGradientMean { mean: f64, tol: f64 },
    #[error("compressibility link violated: max |1+theta - det(I+U)| = {residual:e} exceeds {tol:e}")]
    Compatibility { residual: f64, tol: f64 },
    #[error("zero magnetization at grid point {index}")]
    ZeroMagnetization { index: usize },
    #[error("picard iteration did not converge in {iters} iterations (last update {last_update:e})")]
    PicardDiverged { iters: usize, last_update: f64 },
    #[error("not enough snapshots: {0}")]
    Snapshots(String),
}

pub type Result<T> = std::result::Result<T, Error>;
