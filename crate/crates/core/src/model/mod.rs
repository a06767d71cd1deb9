//! Plant class: a strict-feedback-like nominal chain driven through an
//! uncertain input map `μ` by appended, delayed input unmodeled dynamics `ψ`.
//!
//! ```text
//! ẋ_i = φ_(i,i+1)(x_1) x_{i+1} + φ_i(t, x)        i = 1..n-1
//! ẋ_n = μ(t, x, ψ, u)
//! ψ̇   = q_ψ(t, x, ψ, u, x(t-Δ), ψ(t-Δ), u(t-Δ))
//! y   = [x_1, x_n]
//! ```

mod assumptions;
mod delay;
mod envelope;
mod example;

use std::sync::Arc;

pub use assumptions::{check_assumptions, AssumptionMargin, AssumptionReport, Sampler};
pub use delay::DelayProfile;
pub use envelope::{BoundEnvelope, EnvelopeFunctions, RatioBound};
pub use example::{build_example, ExampleParams, ExamplePlant};

use crate::error::{Error, Result};

/// Measured output `y = [x_1, x_n]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Output {
    pub x1: f64,
    pub xn: f64,
}

impl Output {
    pub fn of(x: &[f64]) -> Self {
        Output { x1: x[0], xn: x[x.len() - 1] }
    }
}

/// Delayed arguments `(x(t-Δ), ψ(t-Δ), u(t-Δ))` of the unmodeled dynamics.
#[derive(Clone, Copy, Debug)]
pub struct Delayed<'a> {
    pub x: &'a [f64],
    pub psi: &'a [f64],
    pub u: f64,
}

/// The known part of the plant: the dimension and the upper-diagonal functions.
/// `phi_upper(i, x1)` is `φ_(i,i+1)` for `i = 1..n-1`.
pub trait UpperChain: Send + Sync {
    fn n(&self) -> usize;
    fn phi_upper(&self, i: usize, x1: f64) -> f64;

    /// The function every gain is proportional to: `φ_(2,3)`, or `φ_(1,2)` when `n = 2`.
    fn scaling_phi(&self, x1: f64) -> f64 {
        if self.n() >= 3 {
            self.phi_upper(2, x1)
        } else {
            self.phi_upper(1, x1)
        }
    }
}

/// Truth-side plant functions; only the simulator and the checkers call these.
pub trait PlantDynamics: UpperChain {
    fn n_psi(&self) -> usize;
    /// Writes `φ_1..φ_{n-1}` into `out`.
    fn phi_pert(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn mu(&self, t: f64, x: &[f64], psi: &[f64], u: f64) -> f64;
    fn q_psi(&self, t: f64, x: &[f64], psi: &[f64], u: f64, delayed: Delayed<'_>, out: &mut [f64]);
}

#[derive(Clone)]
pub struct PlantModel {
    pub dynamics: Arc<dyn PlantDynamics>,
    pub delay: DelayProfile,
    /// The unknown `θ` of the bounds; read only by the truth-side monitor and checker.
    pub true_theta: f64,
}

impl std::fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantModel")
            .field("n", &self.n())
            .field("n_psi", &self.n_psi())
            .field("delay", &self.delay)
            .field("true_theta", &self.true_theta)
            .finish()
    }
}

impl PlantModel {
    pub fn new(dynamics: Arc<dyn PlantDynamics>, delay: DelayProfile, true_theta: f64) -> Result<Self> {
        if dynamics.n() < 2 {
            return Err(Error::InvalidSpec("plant dimension n must be at least 2".into()));
        }
        if !(true_theta >= 0.0) {
            return Err(Error::InvalidSpec("true theta must be nonnegative".into()));
        }
        delay.validate()?;
        Ok(PlantModel { dynamics, delay, true_theta })
    }

    pub fn n(&self) -> usize {
        self.dynamics.n()
    }

    pub fn n_psi(&self) -> usize {
        self.dynamics.n_psi()
    }

    pub fn phi_upper(&self, i: usize, x1: f64) -> f64 {
        self.dynamics.phi_upper(i, x1)
    }

    /// Evaluates the plant vector field, writing `ẋ` and `ψ̇` into the output slices.
    #[allow(clippy::too_many_arguments)]
    pub fn rhs_into(
        &self,
        t: f64,
        x: &[f64],
        psi: &[f64],
        u: f64,
        delayed: Delayed<'_>,
        dx: &mut [f64],
        dpsi: &mut [f64],
    ) -> Result<()> {
        let n = self.n();
        self.dynamics.phi_pert(t, x, &mut dx[..n - 1]);
        for i in 0..n - 1 {
            dx[i] += self.dynamics.phi_upper(i + 1, x[0]) * x[i + 1];
        }
        dx[n - 1] = self.dynamics.mu(t, x, psi, u);
        self.dynamics.q_psi(t, x, psi, u, delayed, dpsi);
        if let Some(index) = dx.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t, index });
        }
        if let Some(k) = dpsi.iter().position(|v| !v.is_finite()) {
            return Err(Error::BlowUp { t, index: n + k });
        }
        Ok(())
    }

    pub fn eval_plant_rhs(
        &self,
        t: f64,
        x: &[f64],
        psi: &[f64],
        u: f64,
        delayed: Delayed<'_>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut dx = vec![0.0; self.n()];
        let mut dpsi = vec![0.0; self.n_psi()];
        self.rhs_into(t, x, psi, u, delayed, &mut dx, &mut dpsi)?;
        Ok((dx, dpsi))
    }
}
