use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-varying input-dynamics delay `Δ(t)` with its analytic rate `Δ̇(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayProfile {
    Constant { delta0: f64 },
    /// `Δ(t) = delta0 + amp * sin(omega * t)`
    Sinusoidal { delta0: f64, amp: f64, omega: f64 },
}

impl DelayProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            DelayProfile::Constant { delta0 } => delta0,
            DelayProfile::Sinusoidal { delta0, amp, omega } => delta0 + amp * (omega * t).sin(),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            DelayProfile::Constant { .. } => 0.0,
            DelayProfile::Sinusoidal { amp, omega, .. } => amp * omega * (omega * t).cos(),
        }
    }

    /// Uniform upper bound on `Δ(t)`.
    pub fn max_delay(&self) -> f64 {
        match *self {
            DelayProfile::Constant { delta0 } => delta0,
            DelayProfile::Sinusoidal { delta0, amp, .. } => delta0 + amp.abs(),
        }
    }

    pub fn min_delay(&self) -> f64 {
        match *self {
            DelayProfile::Constant { delta0 } => delta0,
            DelayProfile::Sinusoidal { delta0, amp, .. } => delta0 - amp.abs(),
        }
    }

    /// Supremum of `|Δ̇|`.
    pub fn max_rate(&self) -> f64 {
        match *self {
            DelayProfile::Constant { .. } => 0.0,
            DelayProfile::Sinusoidal { amp, omega, .. } => (amp * omega).abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match *self {
            DelayProfile::Constant { delta0 } => delta0.is_finite(),
            DelayProfile::Sinusoidal { delta0, amp, omega } => {
                delta0.is_finite() && amp.is_finite() && omega.is_finite()
            }
        };
        if !finite || self.min_delay() < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "delay profile must be finite and nonnegative: {self:?}"
            )));
        }
        Ok(())
    }
}
