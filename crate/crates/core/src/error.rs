use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate basis: Gram determinant {gram_det:e} below threshold")]
    DegenerateBasis { gram_det: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid projector: {0}")]
    InvalidProjector(String),
    #[error("atom mass must be finite and strictly positive, got {0}")]
    InvalidMass(f64),
    #[error("non-finite coordinate in atom position")]
    NonFinitePosition,

    #[error("quadrature grid too coarse: refinement {0} < 2")]
    GridTooCoarse(usize),
    #[error("quadrature grid does not cover the kernel support around the query point")]
    GridDoesNotCover,
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),

    #[error("singular map: |det Df| = {det:e}")]
    SingularMap { det: f64 },
    #[error("step gate violated: c3 * delta = {lhs:e} > (M+1)^-3 eps^8 = {rhs:e}")]
    GateViolated { lhs: f64, rhs: f64 },
    #[error("mass bound exceeded: mass {mass} > M + 1 = {limit}")]
    MassBoundExceeded { mass: f64, limit: f64 },
    #[error("time {t} outside trace span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),

    #[error("combined support of {size} points exceeds cap {cap}")]
    SupportTooLarge { size: usize, cap: usize },
    #[error("LP solver failure: {0}")]
    SolverFailure(String),

    #[error("weight must be strictly positive, got {0}")]
    NonpositiveWeight(f64),
    #[error("barrier vanishes at the query point (psi = {0:e})")]
    ZeroBarrier(f64),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("traces do not share a time grid")]
    GridMismatch,

    #[error("degenerate simplex {index} (measure {measure:e})")]
    DegenerateSimplex { index: usize, measure: f64 },
    #[error("mesh is not closed: {0}")]
    OpenMesh(String),
    #[error("vertices {a} and {b} collide after advection")]
    SelfIntersectionSuspected { a: usize, b: usize },
    #[error("displacement bound delta = {0} must be < 1")]
    DeltaTooLarge(f64),
    #[error("ball is not interior to a bounded region: {0}")]
    BallNotInterior(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error("missing frames: {0}")]
    MissingFrames(String),
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
