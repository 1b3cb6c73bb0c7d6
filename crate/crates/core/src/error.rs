use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("feature {feature} is invalid for a {width}x{height} window")]
    InvalidFeature {
        feature: String,
        width: usize,
        height: usize,
    },

    #[error("feature placed at ({ox}, {oy}) falls outside the {width}x{height} image")]
    OutOfBounds {
        ox: usize,
        oy: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid samples: {0}")]
    InvalidSamples(String),

    #[error("empty candidate feature set")]
    NoCandidates,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("feature space exhausted: {requested} features requested, {remaining} unused remain")]
    FeatureSpaceExhausted { requested: usize, remaining: usize },

    #[error("only {available} positives survive the cascade, {required} required")]
    InsufficientPositives { available: usize, required: usize },

    #[error("empty population")]
    EmptyPopulation,

    #[error("box has zero area")]
    ZeroAreaBox,

    #[error("empty false-positive grid")]
    EmptyGrid,

    #[error("malformed model file, line {line}: {message}")]
    Model { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
