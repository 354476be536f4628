use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("sample out of hybrid-time order: ({t}, {j}) after ({last_t}, {last_j})")]
    Ordering {
        t: f64,
        j: usize,
        last_t: f64,
        last_j: usize,
    },

    #[error("state diverged: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("requested dwell time {t_star} is not below the admissible bound {t_cal}")]
    InfeasibleDwell { t_star: f64, t_cal: f64 },

    #[error("no certified epsilon above {floor:e}: {reason}")]
    CertificateInfeasible { floor: f64, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integration error: {0}")]
    Integration(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine-readable tag, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Ordering { .. } => "ordering",
            Error::Divergence(_) => "divergence",
            Error::Config(_) => "config",
            Error::Certificate(_) => "certificate",
            Error::InfeasibleDwell { .. } => "infeasible_dwell",
            Error::CertificateInfeasible { .. } => "certificate_infeasible",
            Error::Domain(_) => "domain",
            Error::Integration(_) => "integration",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
