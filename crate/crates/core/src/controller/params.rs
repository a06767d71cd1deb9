use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::GainSet;
use crate::model::BoundEnvelope;

/// The free design constants. Every field only has to be positive (the floors
/// nonnegative); `c` and `c_ψ` are derived from their lower bounds by the two
/// factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerTuning {
    pub c_u: f64,
    pub c_theta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_psi1: f64,
    pub c_psi2: f64,
    pub nu_u: f64,
    pub vartheta1_star: f64,
    pub a_theta: f64,
    pub eps_r: f64,
    pub r_bar: f64,
    pub omega_bar: f64,
    pub r_u_bar: f64,
    pub omega_u_bar: f64,
    pub pi_k: f64,
    /// `c` as a multiple of its lower bound; must exceed 1.
    pub c_factor: f64,
    /// `c_ψ` as a multiple of its lower bound; at least 1.
    pub c_psi_factor: f64,
}

impl Default for ControllerTuning {
    fn default() -> Self {
        ControllerTuning {
            c_u: 1.0,
            c_theta: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            c_psi1: 1.0,
            c_psi2: 1.0,
            nu_u: 0.1,
            vartheta1_star: 1.0,
            a_theta: 1.0,
            eps_r: 0.1,
            r_bar: 1.0,
            omega_bar: 1.0,
            r_u_bar: 1.0,
            omega_u_bar: 1.0,
            pi_k: 1.0,
            c_factor: 1.05,
            c_psi_factor: 1.05,
        }
    }
}

impl ControllerTuning {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_u", self.c_u),
            ("c_theta", self.c_theta),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c_psi1", self.c_psi1),
            ("c_psi2", self.c_psi2),
            ("nu_u", self.nu_u),
            ("vartheta1_star", self.vartheta1_star),
            ("a_theta", self.a_theta),
            ("eps_r", self.eps_r),
            ("pi_k", self.pi_k),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("r_bar", self.r_bar),
            ("omega_bar", self.omega_bar),
            ("r_u_bar", self.r_u_bar),
            ("omega_u_bar", self.omega_u_bar),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.c_factor > 1.0 && self.c_factor.is_finite()) {
            return Err(Error::InvalidSpec("c_factor must exceed 1".into()));
        }
        if !(self.c_psi_factor >= 1.0 && self.c_psi_factor.is_finite()) {
            return Err(Error::InvalidSpec("c_psi_factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tuning plus every derived constant of the design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    #[serde(flatten)]
    pub tuning: ControllerTuning,
    pub c: f64,
    pub c_psi: f64,
    pub nu_a: f64,
    pub nu_b: f64,
    pub delta_tilde: f64,
    pub c_psi_tilde: f64,
    pub k_psi1: f64,
    /// `θ + θ²`; only the truth-side monitor reads it.
    pub theta_star: f64,
}

/// `4 λ_max²(P_c) ḡ² / (ν̃_o ν_c)`
pub fn c_lower_bound(gains: &GainSet) -> f64 {
    4.0 * gains.lambda_max_pc().powi(2) * gains.g_bar.powi(2) / (gains.nu_tilde_o * gains.nu_c)
}

/// `c_u [2 k_ψ1 + Δ̃ c_ψ1 k̄_ψ]`
pub fn c_psi_lower_bound(tuning: &ControllerTuning, env: &BoundEnvelope) -> f64 {
    let k_psi1 = 0.5 * (tuning.c_psi1 + 3.0 * tuning.c_psi2) * env.k_psi_bar;
    let delta_tilde = 1.0 / (1.0 - env.delta_bar);
    tuning.c_u * (2.0 * k_psi1 + delta_tilde * tuning.c_psi1 * env.k_psi_bar)
}

impl ControllerParams {
    pub fn derive(tuning: ControllerTuning, gains: &GainSet, env: &BoundEnvelope, true_theta: f64) -> Result<Self> {
        tuning.validate()?;
        gains.validate()?;
        env.validate(gains.n)?;
        let c = tuning.c_factor * c_lower_bound(gains);
        let c_psi = tuning.c_psi_factor * c_psi_lower_bound(&tuning, env);
        let delta_tilde = 1.0 / (1.0 - env.delta_bar);
        let params = ControllerParams {
            c,
            c_psi,
            nu_a: (1.0 / (c * gains.nu_o)).max(1.0 / (gains.nu_c * env.sigma)),
            nu_b: (1.0 / (c * gains.nu_o_lower)).max(1.0 / gains.nu_c_lower),
            delta_tilde,
            c_psi_tilde: c_psi * (2.0 - env.delta_bar) / (1.0 - env.delta_bar),
            k_psi1: 0.5 * (tuning.c_psi1 + 3.0 * tuning.c_psi2) * env.k_psi_bar,
            theta_star: true_theta + true_theta * true_theta,
            tuning,
        };
        params.validate(gains, env)?;
        Ok(params)
    }

    /// Checks both constraint inequalities and that every derived constant
    /// agrees with its defining formula.
    pub fn validate(&self, gains: &GainSet, env: &BoundEnvelope) -> Result<()> {
        self.tuning.validate()?;
        let c_min = c_lower_bound(gains);
        if !(self.c > c_min) || !self.c.is_finite() {
            return Err(Error::InvalidSpec(format!("c = {} must exceed {c_min}", self.c)));
        }
        let c_psi_min = c_psi_lower_bound(&self.tuning, env);
        if !(self.c_psi >= c_psi_min) || !self.c_psi.is_finite() {
            return Err(Error::InvalidSpec(format!("c_psi = {} must be at least {c_psi_min}", self.c_psi)));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        let dt = 1.0 / (1.0 - env.delta_bar);
        let expected = [
            ("nu_a", self.nu_a, (1.0 / (self.c * gains.nu_o)).max(1.0 / (gains.nu_c * env.sigma))),
            ("nu_b", self.nu_b, (1.0 / (self.c * gains.nu_o_lower)).max(1.0 / gains.nu_c_lower)),
            ("delta_tilde", self.delta_tilde, dt),
            ("c_psi_tilde", self.c_psi_tilde, self.c_psi * (2.0 - env.delta_bar) * dt),
            ("k_psi1", self.k_psi1, 0.5 * (self.tuning.c_psi1 + 3.0 * self.tuning.c_psi2) * env.k_psi_bar),
        ];
        for (name, got, want) in expected {
            if !close(got, want) {
                return Err(Error::InvalidSpec(format!("{name} = {got} is inconsistent (expected {want})")));
            }
        }
        Ok(())
    }
}
