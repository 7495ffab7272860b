//! Crate-wide error type.

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("{path}: missing required header `{header}`")]
    MissingHeader { path: String, header: String },

    #[error("{path}: unknown header `{header}` (the schema is fixed)")]
    UnknownHeader { path: String, header: String },

    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumericCell {
        path: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: row {row}: field `{column}` must not be empty")]
    MissingRequiredField {
        path: String,
        row: usize,
        column: String,
    },

    #[error("duplicate firm-year key ({firm_id}, {year})")]
    DuplicateKey { firm_id: String, year: i32 },

    #[error("duplicate macro year {year}")]
    DuplicateYear { year: i32 },

    #[error("macro series has gaps; missing years: {missing:?}")]
    YearGap { missing: Vec<i32> },

    #[error("no usable observations remain after validation")]
    EmptyDataset,

    #[error("under-identified: {rows} usable rows for {cols} columns (need at least {})", cols + 2)]
    UnderIdentified { rows: usize, cols: usize },

    #[error("design is rank deficient; dependent columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("solver did not converge after {iterations} iterations (duality gap {gap:.3e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        /// Best coefficient iterate reached before the cap.
        best: Vec<f64>,
    },

    #[error("quantile must lie strictly inside (0, 1), got {tau}")]
    InvalidTau { tau: f64 },

    #[error("empty input: {context}")]
    EmptyInput { context: String },

    #[error("state dummy has no variation: {context}")]
    SingleState { context: String },

    #[error("unknown coefficient `{name}`")]
    UnknownCoefficient { name: String },

    #[error("unknown firm `{firm_id}`")]
    UnknownFirm { firm_id: String },

    #[error("degenerate fit: {message}")]
    DegenerateFit { message: String },

    #[error("adjustment speed too small to invert (speed {speed:.4}, guard {guard})")]
    SpeedTooSmall { speed: f64, guard: f64 },

    #[error("missing covariance: {context}")]
    MissingCovariance { context: String },

    #[error("invalid configuration: {message}")]
    InvalidConfig { message: String },

    #[error("bootstrap exhausted the redraw budget ({attempts} attempts for {wanted} replicates)")]
    BootstrapExhausted { attempts: usize, wanted: usize },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn stage(stage: &str, source: Error) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
