use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("step too coarse: {0}")]
    StepTooCoarse(String),
    #[error("box too small: boundary mass {mass:.3e} at t = {t}")]
    BoxTooSmall { t: f64, mass: f64 },
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("profile not normalizable: {0}")]
    NotNormalizable(String),
    #[error("indeterminate: {0}")]
    Indeterminate(String),
    #[error("no root with positive real part")]
    NoRoot,
    #[error("newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("contour unresolved: min |F| = {min_abs:.3e} after {attempts} attempts")]
    ContourUnresolved { min_abs: f64, attempts: usize },
    #[error("no regime transition in range")]
    NoTransitionInRange,
    #[error("rank budget exceeded: {rank} > {budget}")]
    RankBudget { rank: usize, budget: usize },
    #[error("test function support clipped by the grid: {0}")]
    SupportClipped(String),
    #[error("gram matrix not hermitian: defect {0:.3e}")]
    NonHermitian(f64),
    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    /// Numerical guards (box and step size) as opposed to inconclusive analysis.
    pub fn is_guard(&self) -> bool {
        matches!(self, Error::BoxTooSmall { .. } | Error::StepTooCoarse(_))
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(
            self,
            Error::Indeterminate(_) | Error::ContourUnresolved { .. } | Error::NoTransitionInRange
        )
    }
}
