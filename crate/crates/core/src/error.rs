use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scaling: {0}")]
    InvalidScaling(String),

    #[error("zero mass in requested region")]
    ZeroMass,

    #[error("density support scaling failed: xi={xi}, scaled micro mass {achieved} vs target {target}")]
    SupportScaling { xi: f64, achieved: f64, target: f64 },

    #[error("grids are incompatible: {0}")]
    IncompatibleGrids(String),

    #[error("time step rejected: {0}")]
    StepRejected(String),

    #[error("{0}")]
    UnknownPreset(String),

    #[error("scenario parse error at line {line}: {msg}")]
    ScenarioParse { line: usize, msg: String },

    #[error("scenario validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("unsupported override key `{0}`")]
    OverrideKey(String),

    #[error("invalid value for `{key}`: {msg}")]
    OverrideValue { key: String, msg: String },

    #[error("{0}")]
    UnknownCase(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
