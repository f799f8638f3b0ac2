use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported field extension degree m={0} (expected 1, 4, 8 or 16)")]
    UnsupportedField(u8),
    #[error("unsupported field size q={0} (expected 2, 16, 256 or 65536)")]
    UnsupportedFieldSize(u32),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("coefficient matrix is singular")]
    Singular,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),
    #[error("packets from different generations ({0} and {1}) cannot be recoded together")]
    MixedGenerations(u32, u32),
    #[error("recoding needs at least one buffered packet")]
    EmptyBuffer,
    #[error("packet for generation {got} offered to decoder of generation {expected}")]
    WrongGeneration { expected: u32, got: u32 },
    #[error("check degree {degree} exceeds the generation count {generations}")]
    DegreeExceedsGenerations { degree: usize, generations: usize },
    #[error("outer code parity system stayed singular after resampling (check {check})")]
    EncodingSingular { check: usize },
    #[error("pre-code parity system stayed singular after resampling")]
    PrecodeSingular,
    #[error("decoder already finished")]
    WrongPhase,
    #[error("value {0} outside the range of the incomplete gamma function")]
    OutOfRange(f64),
    #[error("invalid interval: need 0 < x0 < 1 - delta, got x0={x0}, delta={delta}")]
    InvalidInterval { x0: f64, delta: f64 },
    #[error("no feasible r0 up to {0}")]
    Infeasible(f64),
    #[error("no (R, delta) grid cell admits a feasible design")]
    NothingFeasible,
    #[error("feasibility not monotone in r0: {0} feasible but {1} infeasible")]
    MonotonicityViolation(f64, f64),
    #[error("LP solver failed: {0}")]
    Solver(String),
    #[error("malformed stream: {0}")]
    MalformedStream(String),
}
