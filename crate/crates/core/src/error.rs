//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the analysis routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Expression could not be parsed; `position` is a 1-based character index.
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    /// An identifier that is neither a state variable nor a known function.
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    /// Number of expressions does not match the declared dimension.
    #[error("dimension mismatch: expected {expected} expressions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Step-size control collapsed below the representable floor.
    #[error("integration stalled near t = {t}: step size underflow (stiffness failure)")]
    StepSizeUnderflow { t: f64 },
    /// State norm exceeded the overflow guard during integration.
    #[error("state norm overflow at t = {t} (|x| = {norm:.3e})")]
    StateOverflow { t: f64, norm: f64 },
    /// Backward trajectory left the guarded region while estimating a PF vector.
    #[error("backward trajectory blew up before reaching s = {s_requested} (reached {s_reached})")]
    BackwardBlowup { s_requested: f64, s_reached: f64 },

    /// A vector expected inside a cone was found outside it.
    #[error("vector is not in the cone (margin {margin:.3e})")]
    NotInCone { margin: f64 },
    /// Degenerate input to a cone gauge (both vectors vanish, or a zero ray).
    #[error("degenerate cone gauge input: {0}")]
    DegenerateGauge(String),
    /// Boundary sampling is not implemented for this variant/dimension pair.
    #[error("boundary rays unsupported for {variant} in dimension {dim}")]
    UnsupportedBoundary { variant: &'static str, dim: usize },
    /// Transport matrix is numerically singular.
    #[error("transport map is singular (condition number {cond:.3e})")]
    SingularTransport { cond: f64 },
    /// Cone construction received inconsistent data.
    #[error("invalid cone: {0}")]
    InvalidCone(String),

    /// Power iteration escaped the cone or degenerated to zero.
    #[error("power iteration failed: {0}")]
    PowerIteration(String),
    /// A Hilbert distance became infinite where contraction was expected.
    #[error("projective distance diverged: {0}")]
    ProjectiveDivergence(String),
    /// A trajectory left the boundedness guard during classification.
    #[error("trajectory unbounded over the requested horizon (|x| = {norm:.3e} at t = {t})")]
    UnboundedTrajectory { t: f64, norm: f64 },

    /// Newton iteration on f(x) = 0 failed to converge.
    #[error("fixed-point search did not converge from the given seed")]
    NewtonDiverged,
    /// Spectral split assumptions violated at a fixed point.
    #[error("spectral split failed: {0}")]
    SpectralSplit(String),
    /// No transversal return to the Poincare section was found.
    #[error("no return to the section within t_max = {t_max}")]
    NoReturn { t_max: f64 },
    /// Crossing of the section was tangential (normal velocity below tolerance).
    #[error("tangential section crossing at t = {t} (normal speed {speed:.3e})")]
    TangentialCrossing { t: f64, speed: f64 },
    /// Attractor model is inconsistent with the requested operation.
    #[error("invalid attractor model: {0}")]
    InvalidAttractor(String),

    /// Normal-hyperbolicity certificate is negative where a positive one is required.
    #[error("normal hyperbolicity certificate negative: {0}")]
    CertificateNegative(String),
    /// Quadrature for the adapted metric failed to settle.
    #[error("adapted-metric quadrature diverged: {0}")]
    QuadratureDiverged(String),
    /// Nearest-point projection onto the attractor is ambiguous at this radius.
    #[error("nearest-point projection ambiguous at distance {dist:.3e}")]
    ProjectionAmbiguous { dist: f64 },
    /// Sampled forward invariance could not be established for any tested tube radius.
    #[error("no forward-invariant tube radius found below c = {c}")]
    NoInvariantTube { c: f64 },
    /// Trajectory did not enter the tube within the configured horizon.
    #[error("tube entry time exceeded tau_max = {tau_max}")]
    EntryTimeExceeded { tau_max: f64 },

    /// A pipeline stage failed; the tag names the stage.
    #[error("certificate stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
