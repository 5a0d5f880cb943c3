use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{0} must be symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("{0} must be symmetric positive semidefinite")]
    NotPositiveSemidefinite(&'static str),

    #[error("lesion keeps {functioning} units but the network only has {network} units")]
    LesionOutOfRange { functioning: usize, network: usize },

    /// The regression matrix does not determine every quadratic coefficient:
    /// the episode is too short or the data is not exciting enough.
    #[error("rank-deficient regression: rank {rank} of {required} required ({samples} samples)")]
    RankDeficient {
        rank: usize,
        required: usize,
        samples: usize,
    },

    #[error("action block H22 is ill-conditioned (condition number {condition:e} > {ceiling:e})")]
    IllConditioned { condition: f64, ceiling: f64 },

    #[error("state diverged at step {step}: |omega|_inf = {norm:e} exceeds guard {guard:e}")]
    Diverged { step: usize, norm: f64, guard: f64 },

    #[error("episode {episode}: {source}")]
    InEpisode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("discounted Riccati iteration did not converge in {iterations} iterations (last step {residual:e})")]
    RiccatiNotConverged { iterations: usize, residual: f64 },

    /// The discounted closed loop is not Schur stable so the value is infinite.
    #[error("closed loop is not stable under discounting (spectral radius {spectral_radius})")]
    UnstableClosedLoop { spectral_radius: f64 },

    #[error("no stabilizing initial policy found after {attempts} draws")]
    NoStabilizingPolicy { attempts: usize },
}

impl Error {
    /// Short machine-readable class used in run summaries.
    pub fn class(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NotPositiveDefinite(_) | Error::NotPositiveSemidefinite(_) => "invalid_weights",
            Error::LesionOutOfRange { .. } => "lesion_out_of_range",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Diverged { .. } => "divergence",
            Error::InEpisode { source, .. } => source.class(),
            Error::RiccatiNotConverged { .. } => "riccati_not_converged",
            Error::UnstableClosedLoop { .. } => "unstable_closed_loop",
            Error::NoStabilizingPolicy { .. } => "no_stabilizing_policy",
        }
    }

    /// Strips [`Error::InEpisode`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::InEpisode { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
