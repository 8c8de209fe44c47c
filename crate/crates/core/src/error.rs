use thiserror::Error;

/// Which of the two Theorem-1 weighting matrices failed the definiteness test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Weight {
    Gamma,
    Omega,
}

impl std::fmt::Display for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weight::Gamma => f.write_str("Gamma"),
            Weight::Omega => f.write_str("Omega"),
        }
    }
}

#[derive(Debug, Error)]
pub enum NcsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} is not symmetric")]
    NotSymmetric(String),
    #[error("{0} is not positive semi-definite")]
    NotPsd(String),
    #[error("{0} is not positive definite")]
    NotPd(String),
    #[error("{0} contains non-finite entries")]
    NonFinite(String),
    #[error("dropout probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("assumption 4 needs a solved P_W")]
    NeedPw,
    #[error("innovation covariance singular at step {0}")]
    SingularInnovation(usize),
    #[error("{which} not positive definite at step {k}")]
    NotPositiveDefinite { k: usize, which: Weight },
    #[error("NoConvergence: coupled ARE iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("Gamma singular at step {0}")]
    SingularGamma(usize),
    #[error("Omega singular at step {0}")]
    SingularOmega(usize),
    #[error("ARE solution not certified: {0}")]
    NotCertified(String),
    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),
    #[error("covariance recursion did not converge after {0} iterations")]
    CovNotConverged(usize),
    #[error("closed loop not mean-square stable: {0}")]
    NotStable(String),
    #[error("plant has additive noise; the total infinite-horizon cost is unbounded")]
    NoisyPlant,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NcsError {
    /// Errors that mean the problem instance has no (certified) solution, as
    /// opposed to malformed input.
    pub fn is_mathematical(&self) -> bool {
        matches!(
            self,
            NcsError::NotPositiveDefinite { .. }
                | NcsError::NoConvergence(_)
                | NcsError::SingularGamma(_)
                | NcsError::SingularOmega(_)
                | NcsError::SingularInnovation(_)
                | NcsError::NotCertified(_)
                | NcsError::CovNotConverged(_)
                | NcsError::NotStable(_)
                | NcsError::NoisyPlant
        )
    }
}

pub type Result<T, E = NcsError> = std::result::Result<T, E>;
