//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Voxel index outside the grid.
    #[error("voxel index ({x}, {y}, {z}) out of bounds for {dims_x}x{dims_y}x{dims_z} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        z: usize,
        dims_x: usize,
        dims_y: usize,
        dims_z: usize,
    },

    /// Fusion over an empty active part set.
    #[error("active part set is empty")]
    EmptyActiveSet,

    /// Two containers that must agree in length do not.
    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Grid shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Density must be non-negative.
    #[error("negative density {value} at flat index {index}")]
    NegativeDensity { index: usize, value: f64 },

    /// Camera pitch within 1e-6 of 0 or pi; the up vector is parallel to the
    /// view direction and no basis can be formed.
    #[error("degenerate camera pitch {pitch}: within 1e-6 of 0 or pi")]
    DegeneratePose { pitch: f64 },

    /// Masked mean over an empty region.
    #[error("all pixels are marked edited; the masked mean is undefined")]
    EmptyRegion,

    /// Materialization would exceed available memory.
    #[error("allocation of {required_bytes} bytes for materialized volume failed")]
    Allocation { required_bytes: usize },

    /// Malformed part-set container or image file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
