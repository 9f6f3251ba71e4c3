use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A geometry component (dims, spacing, origin) failed validation.
    #[error("invalid geometry field `{field}`: {reason}")]
    InvalidGeometry { field: &'static str, reason: String },

    /// Two grids that must share a geometry differ in `field`.
    #[error("geometry mismatch in `{field}`")]
    GeometryMismatch { field: &'static str },

    /// Voxel data violates the invariants of the target type.
    #[error("invalid voxel data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The descent loop produced a NaN or infinite loss or gradient.
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize },

    /// Malformed or unsupported MetaImage content.
    #[error("MetaImage format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn geometry(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidGeometry {
            field,
            reason: reason.into(),
        }
    }
}
