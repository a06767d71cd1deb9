//! The dynamic output-feedback controller: reduced-order observer, nominal
//! law `ũ`, dynamic extension `ζ`, dual scalings `r`, `r_u` and the adaptation
//! `θ̂`. It reads only `y = [x1, xn]` and its own state; it never sees `ψ`, any
//! delayed signal or the delay itself.

mod antiderivative;
mod params;

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use antiderivative::Antiderivative;
pub use params::{c_lower_bound, c_psi_lower_bound, ControllerParams, ControllerTuning};

use crate::error::{finite, Error, Result};
use crate::gains::{controller_matrix_at, GainSet};
use crate::linalg::{dot, frobenius, norm};
use crate::model::{BoundEnvelope, Output, UpperChain};

/// Tolerance of the adaptive quadrature behind `f_i`.
pub const F_TOL: f64 = 1e-10;

/// Cubic smoothstep: 1 for `s > 0`, 0 for `s < -eps`, `3w² - 2w³` with
/// `w = (s + eps)/eps` in between.
pub fn lambda_clamp(s: f64, eps: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < -eps {
        0.0
    } else {
        let w = (s + eps) / eps;
        w * w * (3.0 - 2.0 * w)
    }
}

/// `Π(a) = tanh(k a) + 1`, bounded by `Π̄ = 2`.
pub fn pi_fn(a: f64, k: f64) -> f64 {
    (k * a).tanh() + 1.0
}

pub const PI_BAR: f64 = 2.0;

/// `Π'(a) = k sech²(k a)`, written so it stays positive far into the tail.
pub fn pi_prime(a: f64, k: f64) -> f64 {
    let e = (-2.0 * (k * a).abs()).exp();
    4.0 * k * e / ((1.0 + e) * (1.0 + e))
}

/// Central difference with step `1e-6 max(1, |x|)`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `u = ζ - r_u x_n`
pub fn compute_u(zeta: f64, r_u: f64, xn: f64) -> f64 {
    zeta - r_u * xn
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// `x̂_2..x̂_n`
    pub xhat: Vec<f64>,
    pub zeta: f64,
    pub r: f64,
    pub r_u: f64,
    pub theta_hat: f64,
}

impl ControllerState {
    pub fn initial(n: usize, a_theta: f64) -> Self {
        ControllerState { xhat: vec![0.0; n - 1], zeta: 0.0, r: 1.0, r_u: 1.0, theta_hat: a_theta }
    }

    pub fn validate(&self, n: usize, a_theta: f64) -> Result<()> {
        if self.xhat.len() + 1 != n {
            return Err(Error::InvalidSpec(format!("controller state needs {} observer entries", n - 1)));
        }
        if !(self.r >= 1.0) || !(self.r_u >= 1.0) || !(self.theta_hat >= a_theta) {
            return Err(Error::InvalidSpec("controller state needs r >= 1, r_u >= 1, theta_hat >= a_theta".into()));
        }
        if !self.xhat.iter().chain([&self.zeta, &self.r, &self.r_u, &self.theta_hat]).all(|v| v.is_finite()) {
            return Err(Error::InvalidSpec("controller state must be finite".into()));
        }
        Ok(())
    }
}

/// `λ(target - current) · rate_fn` together with its ingredients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingRate {
    pub rate: f64,
    pub target: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub r_target: f64,
    pub omega: f64,
    pub r_u_target: f64,
    pub omega_u: f64,
    pub vartheta: f64,
    pub u_d_bar: f64,
    pub beta1: f64,
    pub xi_u1_bar: f64,
    pub xi_u2_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerDerivs {
    pub xhat_dot: Vec<f64>,
    pub zeta_dot: f64,
    pub r_dot: f64,
    pub r_u_dot: f64,
    pub theta_hat_dot: f64,
    pub u: f64,
    pub u_tilde: f64,
    pub varpi: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Every quantity that depends on `x1` alone.
#[derive(Clone, Debug, PartialEq)]
pub struct PointTerms {
    pub x1: f64,
    pub phi12: f64,
    /// Gain scaling function `φ_(2,3)` (or `φ_(1,2)` when `n = 2`).
    pub phi23: f64,
    /// `φ_(j,j+1)` for `j = 2..n-1`.
    pub phi_mid: Vec<f64>,
    pub gamma: f64,
    pub gamma2: f64,
    pub mu1a: f64,
    pub gamma_s_bar: f64,
    pub k_norm: f64,
    pub k_prime_norm: f64,
    pub g_norm: f64,
    pub ac_norm: f64,
    pub q1: f64,
    pub q2: f64,
    pub qbar1: f64,
    pub qbar2: f64,
    pub vartheta1: f64,
    pub vartheta1_prime: f64,
    pub beta4: f64,
    pub beta6: f64,
    pub beta7: f64,
    pub beta8: f64,
    pub w_tilde1: f64,
    pub q_tilde2: f64,
    pub qbar5: f64,
    pub w_bar2: f64,
}

/// The design: plant chain, envelope, gains and constants, with the cached
/// observer integral. Evaluation is pure apart from the cache.
#[derive(Clone)]
pub struct Controller {
    chain: Arc<dyn UpperChain>,
    env: BoundEnvelope,
    gains: GainSet,
    params: ControllerParams,
    f_cache: Arc<Antiderivative>,
    n: usize,
    lmax_po: f64,
    lmax_pc: f64,
    dc_norm: f64,
    k_tilde_norm: f64,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller").field("n", &self.n).field("params", &self.params).finish()
    }
}

impl Controller {
    pub fn new(chain: Arc<dyn UpperChain>, env: BoundEnvelope, gains: GainSet, params: ControllerParams) -> Result<Self> {
        let n = chain.n();
        if gains.n != n {
            return Err(Error::InvalidSpec(format!("gain set is for n = {}, plant has n = {n}", gains.n)));
        }
        params.validate(&gains, &env)?;
        let f_cache = Arc::new(Antiderivative::new(chain.clone(), F_TOL));
        Ok(Controller {
            lmax_po: gains.lambda_max_po(),
            lmax_pc: gains.lambda_max_pc(),
            dc_norm: ((1..n).map(|i| (i * i) as f64).sum::<f64>()).sqrt(),
            k_tilde_norm: norm(&gains.k_tilde),
            chain,
            env,
            gains,
            params,
            f_cache,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn envelope(&self) -> &BoundEnvelope {
        &self.env
    }

    pub fn chain(&self) -> &Arc<dyn UpperChain> {
        &self.chain
    }

    /// The controller with `ũ` replaced by `-ũ`; a deliberately broken design
    /// used as a negative control.
    pub fn with_flipped_u_tilde(&self) -> FlippedController {
        FlippedController(self.clone())
    }

    // ---- observer integrals and scaled estimates -------------------------

    /// `f_i(x1)` for `i = 2..n`.
    pub fn compute_f(&self, x1: f64, i: usize) -> Result<f64> {
        if i < 2 || i > self.n {
            return Err(Error::InvalidSpec(format!("f_i needs 2 <= i <= {}, got {i}", self.n)));
        }
        Ok(self.gains.g_tilde[i - 2] * self.f_cache.value(x1)?)
    }

    /// `[f_2(x1), ..., f_n(x1)]`
    pub fn f_all(&self, x1: f64) -> Result<Vec<f64>> {
        let big_f = self.f_cache.value(x1)?;
        Ok(self.gains.g_tilde.iter().map(|g| g * big_f).collect())
    }

    /// `ϑ(x1, θ̂) = θ̂ x1 ϑ_1(x1)`
    pub fn compute_vartheta(&self, x1: f64, theta_hat: f64) -> f64 {
        theta_hat * x1 * self.compute_vartheta1(x1)
    }

    pub fn compute_varpi(&self, state: &ControllerState, x1: f64) -> Result<Vec<f64>> {
        let f = self.f_all(x1)?;
        Ok(self.varpi_from(state, x1, &f))
    }

    fn varpi_from(&self, state: &ControllerState, x1: f64, f: &[f64]) -> Vec<f64> {
        let r = state.r;
        let vartheta = self.compute_vartheta(x1, state.theta_hat);
        (0..self.n - 1)
            .map(|k| {
                let p = r.powi(k as i32 + 1);
                let extra = if k == 0 { vartheta } else { 0.0 };
                (state.xhat[k] + p * f[k] + extra) / p
            })
            .collect()
    }

    /// Inverse of `compute_varpi`: the observer state that yields `varpi`.
    pub fn xhat_from_varpi(&self, varpi: &[f64], x1: f64, r: f64, theta_hat: f64) -> Result<Vec<f64>> {
        let f = self.f_all(x1)?;
        let vartheta = self.compute_vartheta(x1, theta_hat);
        Ok((0..self.n - 1)
            .map(|k| {
                let p = r.powi(k as i32 + 1);
                let extra = if k == 0 { vartheta } else { 0.0 };
                p * varpi[k] - p * f[k] - extra
            })
            .collect())
    }

    /// Scaled observer errors `ε_i = (x̂_i + r^{i-1} f_i(x1) - x_i)/r^{i-1}`;
    /// needs the true state, so only the monitor calls this.
    pub fn compute_epsilon(&self, state: &ControllerState, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.f_all(x[0])?;
        Ok((0..self.n - 1)
            .map(|k| {
                let p = state.r.powi(k as i32 + 1);
                (state.xhat[k] + p * f[k] - x[k + 1]) / p
            })
            .collect())
    }

    /// `ũ = -r^n K(x1) ϖ`
    pub fn compute_u_tilde(&self, r: f64, x1: f64, varpi: &[f64]) -> f64 {
        let k = self.gains.k_row(self.chain.as_ref(), x1);
        -r.powi(self.n as i32) * dot(&k, varpi)
    }

    pub fn k_norm(&self, x1: f64) -> f64 {
        self.k_tilde_norm * self.chain.scaling_phi(x1)
    }

    // ---- x1-only design functions ----------------------------------------

    pub fn q1(&self, x1: f64) -> f64 {
        let g = &self.gains;
        let p12 = self.chain.phi_upper(1, x1);
        let p23 = self.chain.scaling_phi(x1);
        4.0 * p12 * p12 / (self.params.c * g.nu_o) + 8.0 * p12 * p12 / (g.nu_c * p23) + self.lmax_pc * self.lmax_pc + 2.0
    }

    pub fn q2(&self, x1: f64) -> f64 {
        let g = &self.gains;
        let p12 = self.chain.phi_upper(1, x1);
        let p23 = self.chain.scaling_phi(x1);
        let gamma = self.env.functions.gamma(x1);
        let gb2 = g.g_bar * g.g_bar;
        2.0 * gamma
            + 1.0
            + 8.0 * self.lmax_pc.powi(2) * gb2 * p23 / g.nu_c * gamma * gamma / (p12 * p12)
            + 8.0 * self.n as f64 / (self.params.c * g.nu_o)
                * self.lmax_po.powi(2)
                * gamma
                * gamma
                * (1.0 + gb2 * p23 * p23 / (p12 * p12))
    }

    pub fn qbar2(&self, x1: f64) -> f64 {
        self.q2(x1) + self.params.c_psi_tilde * self.env.functions.gamma2(x1)
    }

    /// `ϑ_1 = (4/φ_(1,2)) [(q̄_1 + ϑ_1*)/a_θ + q̄_2]`
    pub fn compute_vartheta1(&self, x1: f64) -> f64 {
        let t = &self.params.tuning;
        4.0 / self.chain.phi_upper(1, x1) * ((self.q1(x1) + t.vartheta1_star) / t.a_theta + self.qbar2(x1))
    }

    pub fn point_terms(&self, x1: f64) -> PointTerms {
        let n = self.n;
        let nf = n as f64;
        let t = &self.params.tuning;
        let e = &self.env.functions;
        let phi12 = self.chain.phi_upper(1, x1);
        let phi23 = self.chain.scaling_phi(x1);
        let phi_mid: Vec<f64> = (2..n).map(|j| self.chain.phi_upper(j, x1)).collect();
        let gamma = e.gamma(x1);
        let gamma2 = e.gamma2(x1);
        let mu1a = e.mu_bar1a(x1);
        let gamma_s_bar = e.gamma_s_bar(x1);
        let k_norm = self.k_tilde_norm * phi23;
        let k_prime_norm = self.k_tilde_norm * central_difference(|s| self.chain.scaling_phi(s), x1).abs();
        let g_norm = norm(&self.gains.g_tilde) * phi23;
        let ac: DMatrix<f64> = controller_matrix_at(&self.gains, self.chain.as_ref(), x1);
        let q1 = self.q1(x1);
        let q2 = self.q2(x1);
        let qbar2 = q2 + self.params.c_psi_tilde * gamma2;
        let vartheta1 = self.compute_vartheta1(x1);
        let vartheta1_prime = central_difference(|s| self.compute_vartheta1(s), x1);
        let sum_mid: f64 = phi_mid.iter().sum();
        let beta4 = phi12 + k_norm + sum_mid + nf.powf(1.5) * gamma;
        let beta6 = (nf + 1.0) * gamma;
        let beta7 = 1.5 * k_prime_norm * phi12;
        let beta8 = k_prime_norm * gamma;
        let w_tilde1 = t.c1 * (1.0 + mu1a * mu1a) + beta7 + beta4 * beta4 / t.c_psi2 + beta8 * beta8 / (2.0 * t.c4);
        let q_tilde2 = t.c3 * (1.0 + mu1a * mu1a) + beta6 * beta6 / (2.0 * t.c_psi2) + t.c4 / 2.0;
        let qbar5 = t.c_u * (q_tilde2 + t.c3 * self.params.delta_tilde * mu1a * mu1a);
        let w_bar2 = 2.0 * self.params.c_psi_tilde * gamma_s_bar * gamma2 * k_norm * k_norm;
        PointTerms {
            x1,
            phi12,
            phi23,
            phi_mid,
            gamma,
            gamma2,
            mu1a,
            gamma_s_bar,
            k_norm,
            k_prime_norm,
            g_norm,
            ac_norm: frobenius(&ac),
            q1,
            q2,
            qbar1: q1,
            qbar2,
            vartheta1,
            vartheta1_prime,
            beta4,
            beta6,
            beta7,
            beta8,
            w_tilde1,
            q_tilde2,
            qbar5,
            w_bar2,
        }
    }

    // ---- θ̂-dependent design functions ------------------------------------

    pub fn beta5(&self, pt: &PointTerms, theta_hat: f64) -> f64 {
        pt.phi12 * theta_hat * pt.vartheta1 + self.n as f64 * pt.gamma * theta_hat * pt.vartheta1
    }

    pub fn q_tilde1(&self, pt: &PointTerms, theta_hat: f64) -> f64 {
        let t = &self.params.tuning;
        let b5 = self.beta5(pt, theta_hat);
        t.c2 * (1.0 + theta_hat.powi(2) * pt.vartheta1.powi(2) * pt.mu1a.powi(2)) + b5 * b5 / (2.0 * t.c_psi2)
    }

    pub fn w1(&self, pt: &PointTerms, theta_hat: f64, theta_hat_dot: f64) -> f64 {
        let nf = self.n as f64;
        let d_vartheta_dx1 = theta_hat * (pt.vartheta1 + pt.x1 * pt.vartheta1_prime);
        let s = pt.vartheta1 + pt.vartheta1_prime * pt.x1;
        3.0 * self.lmax_pc * d_vartheta_dx1.abs() * pt.phi12
            + pt.vartheta1.powi(2) * theta_hat_dot.powi(2)
            + self.lmax_pc.powi(2) * theta_hat.powi(2) * s * s * (pt.gamma.powi(2) + pt.phi12.powi(2) * pt.vartheta1.powi(2))
            + 3.0 * self.lmax_po * (nf + nf * nf) * pt.gamma
            + nf * self.lmax_po.powi(2) * theta_hat.powi(2) * pt.vartheta1.powi(2)
    }

    pub fn w_bar1(&self, pt: &PointTerms, theta_hat: f64, theta_hat_dot: f64) -> f64 {
        let p = &self.params;
        let t = &p.tuning;
        self.w1(pt, theta_hat, theta_hat_dot)
            + self.lmax_po.powi(2) * p.c * p.c
            + t.c_u * (pt.w_tilde1 + t.c1 * p.delta_tilde * pt.mu1a.powi(2))
            + 3.0 * p.c_psi_tilde * pt.gamma2
    }

    pub fn qbar3(&self, pt: &PointTerms, theta_hat: f64) -> f64 {
        3.0 * self.params.c_psi_tilde * pt.gamma2 * theta_hat * theta_hat
    }

    pub fn qbar4(&self, pt: &PointTerms, theta_hat: f64) -> f64 {
        let p = &self.params;
        let t = &p.tuning;
        t.c_u * (self.q_tilde1(pt, theta_hat) + t.c2 * p.delta_tilde * theta_hat.powi(2) * pt.vartheta1.powi(2) * pt.mu1a.powi(2))
    }

    /// `Q̄_θ = c_θ (q̄_2 + q̄_5/r) x1²`
    pub fn compute_theta_hat_dot(&self, pt: &PointTerms, r: f64) -> f64 {
        self.params.tuning.c_theta * (pt.qbar2 + pt.qbar5 / r) * pt.x1 * pt.x1
    }

    /// `R(x1, θ̂, θ̂̇)`
    pub fn r_target(&self, pt: &PointTerms, theta_hat: f64, theta_hat_dot: f64) -> f64 {
        let p = &self.params;
        let w_bar1 = self.w_bar1(pt, theta_hat, theta_hat_dot);
        let qbar3 = self.qbar3(pt, theta_hat);
        let qbar4 = self.qbar4(pt, theta_hat);
        let a = 16.0 * p.nu_a * w_bar1;
        let b = (16.0 * p.nu_a * pt.w_bar2).powi(2);
        let c = (4.0 * qbar3 * pt.vartheta1 / (theta_hat * pt.phi12)).powi(2);
        let d = 4.0 * (qbar4 + theta_hat * pt.qbar5) / (theta_hat * pt.phi12 * pt.vartheta1);
        p.tuning.r_bar.max(a).max(b).max(c).max(d)
    }

    /// `Ω(x1, θ̂, θ̂̇, r)`
    pub fn omega(&self, pt: &PointTerms, theta_hat: f64, theta_hat_dot: f64, r: f64) -> f64 {
        let p = &self.params;
        let w_bar1 = self.w_bar1(pt, theta_hat, theta_hat_dot);
        let qbar3 = self.qbar3(pt, theta_hat);
        let qbar4 = self.qbar4(pt, theta_hat);
        let a = 2.0 * p.nu_b * r * w_bar1;
        let b = 2.0 * p.nu_b * r.powf(1.5) * pt.w_bar2;
        let c = 2.0 * (qbar3 * pt.vartheta1.powi(2) * r.powf(1.5) + r * qbar4 + theta_hat * r * pt.qbar5);
        p.tuning.omega_bar.max(a).max(b).max(c)
    }

    pub fn compute_r_dot(&self, pt: &PointTerms, theta_hat: f64, theta_hat_dot: f64, r: f64) -> Result<ScalingRate> {
        let target = finite(self.r_target(pt, theta_hat, theta_hat_dot), "R")?;
        let omega = self.omega(pt, theta_hat, theta_hat_dot, r);
        let lam = lambda_clamp(target - r, self.params.tuning.eps_r);
        let rate = if lam == 0.0 { 0.0 } else { finite(lam * finite(omega, "Omega")?, "r_dot")? };
        Ok(ScalingRate { rate, target, omega })
    }

    // ---- input-channel functions -----------------------------------------

    fn sum_mid_powers(&self, pt: &PointTerms, r: f64) -> f64 {
        pt.phi_mid.iter().enumerate().map(|(k, phi)| phi * r.powi(k as i32 + 2)).sum()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn beta1(&self, pt: &PointTerms, y: Output, u: f64, r: f64, r_dot: f64, theta_hat: f64) -> f64 {
        let n = self.n as i32;
        let nf = self.n as f64;
        let mu2 = self.env.functions.mu_bar2(y, u);
        let s = pt.vartheta1 + pt.vartheta1_prime * pt.x1;
        mu2 * (r * pt.phi12 + r.powi(n) * pt.k_norm + self.sum_mid_powers(pt, r) + r.powi(n - 1) * nf.powf(1.5) * pt.gamma)
            + nf * r.powi(n - 1) * r_dot * pt.k_norm
            + r.powi(n - 1) * r_dot * pt.k_norm * self.dc_norm
            + r.powi(n) * pt.k_prime_norm * (theta_hat * pt.vartheta1 * pt.x1).abs() * pt.phi12
            + r.powi(n + 1) * pt.k_norm * pt.ac_norm
            + r.powi(n + 1) * pt.k_norm * pt.g_norm
            + r.powi(n) * pt.k_norm * theta_hat * s.abs() * pt.phi12
    }

    pub fn beta2(&self, pt: &PointTerms, y: Output, u: f64, r: f64, theta_hat: f64, theta_hat_dot: f64) -> f64 {
        let n = self.n as i32;
        let nf = self.n as f64;
        let mu2 = self.env.functions.mu_bar2(y, u);
        let s = pt.vartheta1 + pt.vartheta1_prime * pt.x1;
        mu2 * theta_hat * pt.vartheta1 * (pt.phi12 + nf * pt.gamma)
            + r.powi(n - 1) * pt.k_norm * theta_hat * theta_hat * s.abs() * pt.phi12 * pt.vartheta1.abs()
            + r.powi(n - 1) * pt.k_norm * (theta_hat_dot * pt.vartheta1).abs()
    }

    pub fn beta3(&self, pt: &PointTerms, y: Output, u: f64, r: f64, theta_hat: f64) -> f64 {
        let n = self.n as i32;
        let nf = self.n as f64;
        let mu2 = self.env.functions.mu_bar2(y, u);
        let s = pt.vartheta1 + pt.vartheta1_prime * pt.x1;
        (nf + 1.0) * mu2 * pt.gamma
            + r.powi(n) * pt.k_norm * pt.g_norm / pt.phi12 * pt.gamma
            + r.powi(n - 1) * pt.k_norm * theta_hat * s.abs() * pt.gamma
    }

    /// `Ξ_u1`, returned with `β_1` since the diagnostics expose both.
    #[allow(clippy::too_many_arguments)]
    pub fn xi_u1(
        &self,
        pt: &PointTerms,
        y: Output,
        u: f64,
        r: f64,
        r_dot: f64,
        theta_hat: f64,
        theta_hat_dot: f64,
    ) -> (f64, f64) {
        let t = &self.params.tuning;
        let e = &self.env.functions;
        let n = self.n as i32;
        let nf = self.n as f64;
        let mu2 = e.mu_bar2(y, u);
        let mu_tt = e.mu_bar1(y, u) + e.mu_tilde1(y, u);
        let b1 = self.beta1(pt, y, u, r, r_dot, theta_hat);
        let b2 = self.beta2(pt, y, u, r, theta_hat, theta_hat_dot);
        let b3 = self.beta3(pt, y, u, r, theta_hat);
        let r15 = r.powf(1.5);
        let r2n1 = r.powi(2 * n - 1);
        let xi = mu2 / r.powi(n)
            + 1.0 / (2.0 * t.c_psi1 * r15)
            + b1 * b1 / (2.0 * t.c1 * r.powi(2 * n + 1))
            + mu_tt * mu_tt / (t.c_psi1 * r15)
            + b2 * b2 / (4.0 * t.c2 * r2n1)
            + b3 * b3 / (4.0 * t.c3 * r2n1)
            + (1.0 / (2.0 * t.c3 * r2n1) + nf / (t.c1 * r.powi(3)) + 1.0 / (2.0 * t.c2 * r2n1)) * mu_tt * mu_tt;
        (xi, b1)
    }

    /// `ū_d = μ̄(y, u) + r^n |K(x1)| |ϖ|`
    pub fn u_d_bar(&self, pt: &PointTerms, y: Output, u: f64, r: f64, varpi: &[f64]) -> f64 {
        self.env.functions.mu_bar(y, u) + r.powi(self.n as i32) * pt.k_norm * norm(varpi)
    }

    /// `Ξ̄_u2`
    pub fn xi_u2_bar(&self, pt: &PointTerms, r: f64, u_d_bar: f64) -> f64 {
        let n = self.n as f64;
        (1.0 / r.powf(2.0 * n - 3.0) + 2.0 * self.params.c_psi_tilde * pt.gamma2 * pt.gamma_s_bar / r.powf(2.0 * n - 1.5))
            * (1.0 + u_d_bar * u_d_bar)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn compute_r_u_dot(
        &self,
        pt: &PointTerms,
        y: Output,
        u: f64,
        r: f64,
        r_dot: f64,
        theta_hat: f64,
        theta_hat_dot: f64,
        varpi: &[f64],
        r_u: f64,
    ) -> Result<(ScalingRate, Diagnostics)> {
        let t = &self.params.tuning;
        let mu_lower = self.env.mu_lower;
        let rn = r.powi(self.n as i32);
        let (xi_u1, beta1) = self.xi_u1(pt, y, u, r, r_dot, theta_hat, theta_hat_dot);
        let xi_u1_bar = finite(t.c_u * xi_u1, "Xi_u1")?;
        let u_d_bar = finite(self.u_d_bar(pt, y, u, r, varpi), "u_d_bar")?;
        let xi_u2_bar = finite(self.xi_u2_bar(pt, r, u_d_bar), "Xi_u2")?;
        let target = t
            .r_u_bar
            .max(4.0 * rn * xi_u1_bar / (t.c_u * mu_lower))
            .max(8.0 * rn * PI_BAR * (xi_u2_bar + t.nu_u) * (1.0 + u_d_bar * u_d_bar) / (t.c_u * mu_lower));
        let target = finite(target, "R_u")?;
        let pi = pi_fn(r_u, t.pi_k);
        let omega_u = t
            .omega_u_bar
            .max(2.0 * pi * pi * rn / (t.c_u * pi_prime(r_u, t.pi_k)) * (xi_u1_bar / pi + xi_u2_bar + t.nu_u));
        let lam = lambda_clamp(target - r_u, t.eps_r);
        let rate = if lam == 0.0 { 0.0 } else { finite(lam * finite(omega_u, "Omega_u")?, "r_u_dot")? };
        let diag = Diagnostics {
            r_u_target: target,
            omega_u,
            u_d_bar,
            beta1,
            xi_u1_bar,
            xi_u2_bar,
            ..Diagnostics::default()
        };
        Ok((ScalingRate { rate, target, omega: omega_u }, diag))
    }

    // ---- observer ---------------------------------------------------------

    pub fn compute_observer_dot(
        &self,
        state: &ControllerState,
        x1: f64,
        r_dot: f64,
        u_tilde: f64,
    ) -> Result<Vec<f64>> {
        let f = self.f_all(x1)?;
        Ok(self.observer_dot_from(state, x1, &f, r_dot, u_tilde))
    }

    fn observer_dot_from(&self, state: &ControllerState, x1: f64, f: &[f64], r_dot: f64, u_tilde: f64) -> Vec<f64> {
        let n = self.n;
        let r = state.r;
        let g = self.gains.g_col(self.chain.as_ref(), x1);
        let injection = state.xhat[0] + r * f[0];
        (2..=n)
            .map(|i| {
                let k = i - 2;
                let lead = if i < n {
                    self.chain.phi_upper(i, x1) * (state.xhat[k + 1] + r.powi(i as i32) * f[k + 1])
                } else {
                    u_tilde
                };
                lead - r.powi(i as i32 - 1) * g[k] * injection - (i - 1) as f64 * r_dot * r.powi(i as i32 - 2) * f[k]
            })
            .collect()
    }

    // ---- assembly ---------------------------------------------------------

    pub fn step(&self, state: &ControllerState, y: Output) -> Result<ControllerDerivs> {
        self.step_with_sign(state, y, 1.0)
    }

    fn step_with_sign(&self, state: &ControllerState, y: Output, sign: f64) -> Result<ControllerDerivs> {
        let x1 = y.x1;
        let f = self.f_all(x1)?;
        let varpi = self.varpi_from(state, x1, &f);
        let vartheta = self.compute_vartheta(x1, state.theta_hat);
        let u_tilde = sign * self.compute_u_tilde(state.r, x1, &varpi);
        let u = compute_u(state.zeta, state.r_u, y.xn);
        let pt = self.point_terms(x1);
        let theta_hat_dot = self.compute_theta_hat_dot(&pt, state.r);
        let r_rate = self.compute_r_dot(&pt, state.theta_hat, theta_hat_dot, state.r)?;
        let (ru_rate, mut diagnostics) = self.compute_r_u_dot(
            &pt,
            y,
            u,
            state.r,
            r_rate.rate,
            state.theta_hat,
            theta_hat_dot,
            &varpi,
            state.r_u,
        )?;
        let xhat_dot = self.observer_dot_from(state, x1, &f, r_rate.rate, u_tilde);
        let zeta_dot = ru_rate.rate * y.xn + state.r_u * u_tilde;
        diagnostics.r_target = r_rate.target;
        diagnostics.omega = r_rate.omega;
        diagnostics.vartheta = vartheta;
        Ok(ControllerDerivs {
            xhat_dot,
            zeta_dot,
            r_dot: r_rate.rate,
            r_u_dot: ru_rate.rate,
            theta_hat_dot,
            u,
            u_tilde,
            varpi,
            diagnostics,
        })
    }
}

/// Anything the simulator can close the loop with.
pub trait Feedback: Send + Sync {
    fn design(&self) -> &Controller;
    fn step(&self, state: &ControllerState, y: Output) -> Result<ControllerDerivs>;
}

impl Feedback for Controller {
    fn design(&self) -> &Controller {
        self
    }

    fn step(&self, state: &ControllerState, y: Output) -> Result<ControllerDerivs> {
        Controller::step(self, state, y)
    }
}

/// The design with the sign of `ũ` reversed everywhere it is applied.
#[derive(Clone, Debug)]
pub struct FlippedController(Controller);

impl Feedback for FlippedController {
    fn design(&self) -> &Controller {
        &self.0
    }

    fn step(&self, state: &ControllerState, y: Output) -> Result<ControllerDerivs> {
        self.0.step_with_sign(state, y, -1.0)
    }
}
