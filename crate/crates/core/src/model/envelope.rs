use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::Output;
use crate::error::{Error, Result};

/// Bounds on the ratio `φ_(i,i+1) / φ_(i-1,i)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioBound {
    pub lower: f64,
    pub upper: f64,
}

/// Known bounding functions of the uncertain terms, plus the truth-side
/// `ψ`-dependent pieces (`V_ψ` and the `μ̄_·ψ` bounds) that only monitors read.
pub trait EnvelopeFunctions: Send + Sync {
    fn gamma(&self, x1: f64) -> f64;
    fn mu_bar(&self, y: Output, u: f64) -> f64;
    fn mu_bar1(&self, y: Output, u: f64) -> f64;
    fn mu_bar1a(&self, x1: f64) -> f64;
    fn mu_tilde1(&self, y: Output, u: f64) -> f64;
    fn mu_bar2(&self, y: Output, u: f64) -> f64;
    fn gamma2(&self, x1: f64) -> f64;
    fn gamma_s(&self, y: Output, u: f64) -> f64;
    fn gamma_s_bar(&self, x1: f64) -> f64;
    /// Class-K∞ decay rate as a function of `|ψ|`.
    fn alpha_psi(&self, psi_norm: f64) -> f64;

    fn v_psi(&self, psi: &[f64]) -> f64;
    fn v_psi_grad(&self, psi: &[f64], out: &mut [f64]);
    fn mu_bar1_psi(&self, psi: &[f64]) -> f64;
    fn mu_tilde1_psi(&self, psi: &[f64]) -> f64;
    fn mu_bar2_psi(&self, psi: &[f64]) -> f64;
}

#[derive(Clone)]
pub struct BoundEnvelope {
    pub sigma: f64,
    /// Entry `k` bounds `φ_(k+3,k+4) / φ_(k+2,k+3)`, i.e. indices `i = 3..n-1`.
    pub ratio_bounds: Vec<RatioBound>,
    pub mu_lower: f64,
    pub k_psi_bar: f64,
    pub v_psi_lower: f64,
    pub delta_bar: f64,
    pub functions: Arc<dyn EnvelopeFunctions>,
}

impl std::fmt::Debug for BoundEnvelope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundEnvelope")
            .field("sigma", &self.sigma)
            .field("ratio_bounds", &self.ratio_bounds)
            .field("mu_lower", &self.mu_lower)
            .field("k_psi_bar", &self.k_psi_bar)
            .field("v_psi_lower", &self.v_psi_lower)
            .field("delta_bar", &self.delta_bar)
            .finish()
    }
}

impl BoundEnvelope {
    pub fn validate(&self, n: usize) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) {
            return Err(Error::InvalidSpec("sigma must be positive".into()));
        }
        if !positive(self.mu_lower) || !positive(self.k_psi_bar) || !positive(self.v_psi_lower) {
            return Err(Error::InvalidSpec(
                "mu_lower, k_psi_bar and v_psi_lower must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.delta_bar) {
            return Err(Error::InvalidSpec("delta_bar must lie in [0, 1)".into()));
        }
        let expected = n.saturating_sub(3);
        if self.ratio_bounds.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "expected {expected} ratio bounds for n = {n}, got {}",
                self.ratio_bounds.len()
            )));
        }
        for b in &self.ratio_bounds {
            if !positive(b.lower) || !(b.upper >= b.lower) || !b.upper.is_finite() {
                return Err(Error::InvalidSpec(format!("bad ratio bound {b:?}")));
            }
        }
        Ok(())
    }

    /// Interval of `φ_(i+1,i+2) / φ_(2,3)` for superdiagonal entry `i = 1..n-2`
    /// of the normalized gain matrices (entry 1 is identically 1).
    pub fn superdiag_interval(&self, i: usize) -> (f64, f64) {
        let mut lo = 1.0;
        let mut hi = 1.0;
        for b in self.ratio_bounds.iter().take(i.saturating_sub(1)) {
            lo *= b.lower;
            hi *= b.upper;
        }
        (lo, hi)
    }
}
