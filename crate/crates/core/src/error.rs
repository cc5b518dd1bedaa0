use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backprop root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite loss while probing parameter `{param}` ({probe})")]
    NonFinite { param: String, probe: String },

    #[error("invalid irreps `{0}`")]
    Irreps(String),

    #[error("feature layout error: {0}")]
    Layout(String),

    #[error("unsupported spherical harmonic degree {0} (only 0 and 1)")]
    UnsupportedDegree(u32),

    #[error("direction is not a unit vector (norm {0})")]
    NotUnitVector(f64),

    #[error("no Clebsch-Gordan path ({l_out}, {l_in}, {l_f})")]
    EmptyPath { l_out: u32, l_in: u32, l_f: u32 },

    #[error("rotation matrix is not a proper rotation: {0}")]
    NotRotation(String),

    #[error("negative distance {0}")]
    NegativeDistance(f64),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("unreachable output irreps: {0}")]
    UnreachableOutput(String),

    #[error("equivariance violation: {0}")]
    EquivarianceViolation(String),

    #[error("unknown element `{0}`")]
    UnknownElement(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("target `{0}` has zero spread")]
    DegenerateTarget(String),

    #[error("missing model column `{0}`")]
    MissingColumn(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("empty {0} split")]
    EmptySplit(String),

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("target `{target}` missing for molecules {molecules:?}")]
    MissingTargets {
        target: String,
        molecules: Vec<usize>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
