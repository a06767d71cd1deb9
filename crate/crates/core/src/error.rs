use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("integration blow-up at t = {t}: component {index} is not finite or exceeds bound")]
    BlowUp { t: f64, index: usize },

    #[error("history underflow: requested t = {tau}, earliest available t = {earliest}")]
    HistoryUnderflow { tau: f64, earliest: f64 },

    #[error("history overrun: requested t = {tau}, latest available t = {latest}")]
    HistoryOverrun { tau: f64, latest: f64 },

    #[error("gain synthesis failed ({context}): worst margin {margin:.3e} at rho = {worst_rho:?}")]
    SynthesisFailure {
        context: &'static str,
        margin: f64,
        worst_rho: Vec<f64>,
    },

    #[error("numeric failure in term `{term}`")]
    NumericFailure { term: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Guard for a computed quantity: non-finite values become a tagged numeric failure.
pub(crate) fn finite(value: f64, term: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericFailure { term })
    }
}
