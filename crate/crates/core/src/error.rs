use alloc::string::String;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("controls live on different grids")]
    GridMismatch,

    #[error("point is not inside the domain interior")]
    OutsideDomain,

    #[error("trajectory blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("tangent map at t = {time} is numerically singular (condition {condition:e})")]
    SingularTangentMap { time: f64, condition: f64 },

    #[error("zero vector where a non-zero one is required")]
    ZeroVector,

    #[error("control is not normalized: cell {cell} has norm {norm}")]
    NotNormalized { cell: usize, norm: f64 },

    #[error("time {0} is not a node of the integration grid")]
    NotOnGrid(f64),

    #[error("degenerate sampling: {0}")]
    DegenerateSampling(String),

    #[error("initial covector is not on the unit Hamiltonian level (level = {level})")]
    NonUnitLevel { level: f64 },

    #[error("horizon must be non-negative, got {0}")]
    NegativeHorizon(f64),

    #[error("empty sampling grid")]
    EmptyGrid,

    #[error("homotopy member for s = {0} is missing or left the domain")]
    MissingMember(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not certifiable: {0}")]
    NotCertifiable(String),
}

pub type Result<T> = core::result::Result<T, Error>;
