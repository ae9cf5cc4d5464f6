use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unit cell thicknesses sum to {sum}, expected 1")]
    NonUnitPeriod { sum: f64 },
    #[error("layer {index} has non-positive thickness {thickness}")]
    NonPositiveThickness { index: usize, thickness: f64 },
    #[error("layer {index} has zero permittivity")]
    ZeroPermittivity { index: usize },
    #[error("layer {index} has a non-finite value")]
    NonFiniteLayer { index: usize },
    #[error("profile has no layers")]
    EmptyProfile,
    #[error("defect layers sum to {sum}, declared width is {width}")]
    DefectWidthMismatch { width: f64, sum: f64 },
    #[error("position {x} outside [0, {width}]")]
    OutOfDomain { x: f64, width: f64 },
    #[error("Bloch frequency {alpha} outside (-pi, pi]")]
    AlphaOutOfRange { alpha: f64 },
    #[error("incidence angle {theta} not in (-pi/2, pi/2)")]
    ThetaOutOfRange { theta: f64 },

    #[error("layer thickness {0} must be positive")]
    DegenerateLayer(f64),

    #[error("trace has imaginary part {0}; expected a real spectral point")]
    NonRealTrace(f64),
    #[error("band edge: eigenvalues of the monodromy matrix coincide (|tr| - 2 = {0})")]
    DegenerateEigenvalues(f64),
    #[error("point (k = {k}, alpha = {alpha}) is not in a gap")]
    NotInGap { k: f64, alpha: f64 },

    #[error("grazing incidence: beta0 = 0")]
    GrazingIncidence,
    #[error("denominator of the reflection coefficient vanishes on the real axis (|q| = {0:e})")]
    PoleOnAxis(f64),
    #[error("boundary-value system is singular")]
    SingularSystem,
    #[error("|tr| = {0} > 2: envelope only defined inside a band")]
    OutsideBand(f64),

    #[error("lost track of the Floquet multiplier branch at k = {0}")]
    BranchTrackingLost(num_complex::Complex64),
    #[error("Newton iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("iterate escaped the neighbourhood of the seed (|k - k0| = {0})")]
    EscapedNeighborhood(f64),
    #[error("gamma undefined away from a defect mode (|d0| = {0:e})")]
    UndefinedAtNonMode(f64),
    #[error("circle fit residual {rms:e} exceeds bound for diameter {diameter}")]
    PoorFit { rms: f64, diameter: f64 },

    #[error("|tr| of the superstructure is {0} >= 2 at the defect mode")]
    NoBandFound(f64),

    #[error("numerical check failed: {0}")]
    Numerical(String),
}
