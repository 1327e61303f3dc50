//! The kernel library: every math routine the layer and solver stacks launch,
//! implemented as pure scalar loops and registered into the device runtime in
//! three groups (layer-related, BLAS-related, solver-related).
//!
//! Kernels are pure functions of their inputs; repeat runs are bitwise
//! identical, which is what makes host and emulated backends agree exactly.

use thiserror::Error;

pub mod blas;
pub mod conv;
pub mod misc;
pub mod norm;
pub mod pool;
pub mod registry;
pub mod updates;

pub use conv::ConvGeometry;
pub use pool::PoolGeometry;
pub use registry::default_registry;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid argument: {0}")]
    BadArg(String),
}

/// Converts a launch scalar to an index, rejecting negatives and fractions.
pub(crate) fn as_index(v: f64, what: &str) -> Result<usize, KernelError> {
    if v < 0.0 || v.fract() != 0.0 || v > (1u64 << 52) as f64 {
        return Err(KernelError::BadArg(format!("{} must be a non-negative integer, got {}", what, v)));
    }
    Ok(v as usize)
}

pub(crate) fn check_len<S>(name: &str, buf: &[S], expected: usize) -> Result<(), KernelError> {
    if buf.len() != expected {
        return Err(KernelError::DimMismatch(format!(
            "{}: expected {} elements, got {}",
            name,
            expected,
            buf.len()
        )));
    }
    Ok(())
}
