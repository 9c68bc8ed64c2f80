use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("point at infinity: |w| = {w:e} is below the homogeneous divide threshold")]
    PointAtInfinity { w: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("projection stack is in state `{found}`, expected `{expected}`")]
    State {
        expected: &'static str,
        found: &'static str,
    },

    #[error("reference volume is constant; VIF is undefined")]
    DegenerateReference,

    #[error("optimization diverged at iteration {iteration}: non-finite gradient")]
    Divergence { iteration: usize, trace: Vec<f64> },

    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by user configuration rather than the pipeline.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
