use thiserror::Error;

/// Errors raised by the certification, simulation and verification layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PetcError {
    /// A state left the region where the model (typically its feedback law) is defined.
    #[error("DomainError: {detail}{}{}", time_suffix(*.time), index_suffix(*.index))]
    Domain { detail: String, time: Option<f64>, index: Option<usize> },

    #[error("ConfigError: {0}")]
    Config(String),

    /// A standing assumption (decrease condition, Lie derivative bound, ...) failed numerically.
    #[error("AssumptionViolation: {0}")]
    AssumptionViolation(String),

    /// The network delivered fewer packets than the loss bound allows.
    #[error("ProtocolViolation: {message}{}", index_suffix(*.index))]
    ProtocolViolation { message: String, index: Option<usize> },

    #[error("TraceError: {0}")]
    Trace(String),

    #[error("PreconditionError: {0}")]
    Precondition(String),

    #[error("ParseError: {0}")]
    Parse(String),
}

fn time_suffix(time: Option<f64>) -> String {
    match time {
        Some(t) => format!(" at t = {t:e}"),
        None => String::new(),
    }
}

fn index_suffix(index: Option<usize>) -> String {
    match index {
        Some(z) => format!(" (sampling index {z})"),
        None => String::new(),
    }
}

impl PetcError {
    /// Short stable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            PetcError::Domain { .. } => "DomainError",
            PetcError::Config(_) => "ConfigError",
            PetcError::AssumptionViolation(_) => "AssumptionViolation",
            PetcError::ProtocolViolation { .. } => "ProtocolViolation",
            PetcError::Trace(_) => "TraceError",
            PetcError::Precondition(_) => "PreconditionError",
            PetcError::Parse(_) => "ParseError",
        }
    }

    /// Attaches a sampling index to domain and protocol errors.
    pub fn at_index(self, z: usize) -> Self {
        match self {
            PetcError::Domain { detail, time, .. } => PetcError::Domain { detail, time, index: Some(z) },
            PetcError::ProtocolViolation { message, .. } => {
                PetcError::ProtocolViolation { message, index: Some(z) }
            }
            other => other,
        }
    }
}

impl PetcError {
    pub(crate) fn outside_domain(time: Option<f64>) -> Self {
        PetcError::Domain { detail: "state outside model domain".into(), time, index: None }
    }
}

pub type Result<T, E = PetcError> = std::result::Result<T, E>;
