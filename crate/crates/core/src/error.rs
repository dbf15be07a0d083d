use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("generator has a degenerate null space (more than one stationary state)")]
    DegenerateSteadyState,
    #[error("probability entry {value:e} at state {state} is below the positivity floor")]
    NegativeProbability { state: usize, value: f64 },
    #[error("correlation undefined: steady-state occupation of level {level} is zero")]
    UndefinedCorrelation { level: usize },
    #[error("event cap of {cap} exceeded")]
    EventCap { cap: u64 },
    #[error("input stream is not sorted at index {index}")]
    Unsorted { index: usize },
    #[error("invalid histogram window: {0}")]
    Window(String),
    #[error("normalization undefined: {0}")]
    Normalization(String),
    #[error("channel {channel} is all background (n_d = n)")]
    AllBackground { channel: &'static str },
    #[error("grid step {step_ps} ps is coarser than half the IRF sigma ({half_sigma_ps} ps)")]
    Resolution { step_ps: f64, half_sigma_ps: f64 },
    #[error("grid is not uniform")]
    NonUniformGrid,
    #[error("fit curvature matrix is singular")]
    DegenerateFit,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("pump conversion is unidentifiable: {0}")]
    Unidentifiable(String),
    #[error("no dip resolved (minimum {minimum} > 0.9)")]
    NoDip { minimum: f64 },
}
