use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("w{index} = {value} is not positive")]
    NonPositiveW { index: usize, value: f64 },
    #[error("field {field} is not finite")]
    NonFinite { field: &'static str },
    #[error("|w{j}^2 - w{k}^2| = {gap:e} below the division guard while |eta{i}| = {eta:e}")]
    DegenerateDenominator { i: usize, j: usize, k: usize, gap: f64, eta: f64 },
    #[error("right-hand side undefined at the initial state: {0}")]
    ImmediateSingularity(Box<Error>),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },
    #[error("f(t) = f0/(1 - f0 (t - t0)) has its pole inside the span")]
    PoleReached,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("Kahler certificate broken at t = {t}: drift {drift:e}")]
    CertificateBroken { t: f64, drift: f64 },
    #[error("analytic and finite-difference curvature disagree: relative gap {gap:e}")]
    InconsistentDerivative { gap: f64 },
    #[error("quartic is identically zero")]
    DegenerateQuartic,
    #[error("fractional linear normalization is singular")]
    SingularTransform,
    #[error("certificate f = {f} satisfies the relations but the quartic has {doubles} double roots")]
    InconsistentCertificate { f: f64, doubles: usize },
    #[error("closed-form z0 = {formula} disagrees with the double root {root} (gap {gap:e})")]
    BranchMismatch { formula: String, root: String, gap: f64 },
    #[error("degenerate branch not realizable: {0}")]
    NotRealizable(String),
    #[error("closed-form and direct dOmega disagree: gap {gap:e}")]
    FormMismatch { gap: f64 },
    #[error("point z = {z} lies on the pole locus (|det A| = {det:e})")]
    OnPoleLocus { z: String, det: f64 },
    #[error("pencil numerator does not fit degree {degree}: residual {residual:e}")]
    FitFailure { degree: usize, residual: f64 },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("tags {0} and {1} both match")]
    AmbiguousClassification(&'static str, &'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
