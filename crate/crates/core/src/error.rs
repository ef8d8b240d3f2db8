use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown mode label `{0}`")]
    UnknownMode(String),

    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),

    #[error("empty mode selection")]
    EmptySelection,

    #[error("layout mismatch: expected [{expected}], found [{found}]")]
    LayoutMismatch { expected: String, found: String },

    #[error("invalid bipartition: {0}")]
    InvalidBipartition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid hamiltonian: {0}")]
    InvalidHamiltonian(String),

    #[error("ill-conditioned transform (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("unstable environment: normal-mode eigenvalue {value:.6e} at index {index} is not positive")]
    UnstableEnvironment { index: usize, value: f64 },

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("matrix exponential out of range: t*|h| = {0:.3e} exceeds the 1e3 budget")]
    PropagatorRange(f64),

    #[error("amplitudes coincide; |alpha - beta|^2 = 0")]
    DegenerateAmplitudes,

    #[error("vanishing diagonal weight in coherence patch")]
    VanishingWeight,

    #[error("integration unstable after {halvings} step halvings (trace drift {drift:.3e})")]
    IntegrationUnstable { halvings: u32, drift: f64 },

    #[error("[{tag}] {source}")]
    Tagged { tag: String, source: Box<Error> },
}

impl Error {
    pub fn tagged(self, tag: impl Into<String>) -> Self {
        Error::Tagged { tag: tag.into(), source: Box::new(self) }
    }
}
