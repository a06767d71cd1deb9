//! The built-in fourth-order example with a two-state delayed input
//! unmodeled dynamics, together with its bounding envelope.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    BoundEnvelope, DelayProfile, Delayed, EnvelopeFunctions, Output, PlantDynamics, PlantModel,
    RatioBound, UpperChain,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleBounds {
    pub a_upper: [f64; 2],
    pub a_lower: [f64; 2],
    pub b_upper: [f64; 7],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleDelay {
    #[serde(flatten)]
    pub profile: DelayProfile,
    pub delta_bar: f64,
}

/// Truth parameters and known bounds of the example plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    pub theta: [f64; 3],
    pub b: [f64; 7],
    pub a: [f64; 2],
    pub bounds: ExampleBounds,
    pub delay: ExampleDelay,
}

impl Default for ExampleParams {
    fn default() -> Self {
        ExampleParams {
            theta: [0.5, -0.3, 0.4],
            b: [0.2, -0.1, 0.15, 0.1, -0.2, 0.1, 0.2],
            a: [1.0, 1.0],
            bounds: ExampleBounds { a_upper: [1.0, 1.0], a_lower: [1.0, 1.0], b_upper: [0.2; 7] },
            delay: ExampleDelay { profile: DelayProfile::Constant { delta0: 0.3 }, delta_bar: 0.1 },
        }
    }
}

impl ExampleParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = self
            .theta
            .iter()
            .chain(&self.b)
            .chain(&self.a)
            .chain(&self.bounds.a_upper)
            .chain(&self.bounds.a_lower)
            .chain(&self.bounds.b_upper)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidSpec("example parameters must be finite".into()));
        }
        for i in 0..2 {
            let (lo, a, hi) = (self.bounds.a_lower[i], self.a[i], self.bounds.a_upper[i]);
            if !(lo > 0.0 && lo <= a && a <= hi) {
                return Err(Error::InvalidSpec(format!(
                    "need 0 < a_lower[{i}] <= a[{i}] <= a_upper[{i}], got {lo} <= {a} <= {hi}"
                )));
            }
        }
        for i in 0..7 {
            if self.b[i].abs() > self.bounds.b_upper[i] {
                return Err(Error::InvalidSpec(format!(
                    "|b[{i}]| = {} exceeds its bound {}",
                    self.b[i].abs(),
                    self.bounds.b_upper[i]
                )));
            }
        }
        let db = self.delay.delta_bar;
        if !(0.0..1.0).contains(&db) {
            return Err(Error::InvalidSpec("delta_bar must lie in [0, 1)".into()));
        }
        self.delay.profile.validate()
    }

    /// `θ = max(θ_a, θ_b)` with `θ_a = max(1, |θ_1|, |θ_2|, |θ_3|)` and `θ_b = 1`.
    pub fn overall_theta(&self) -> f64 {
        self.theta.iter().fold(1.0f64, |m, t| m.max(t.abs()))
    }
}

/// Plant and envelope of the example; one value serves both trait roles.
#[derive(Clone, Debug)]
pub struct ExamplePlant {
    pub params: ExampleParams,
}

impl UpperChain for ExamplePlant {
    fn n(&self) -> usize {
        4
    }

    fn phi_upper(&self, i: usize, x1: f64) -> f64 {
        match i {
            1 => 1.0 + x1 * x1,
            2 => 1.0 + x1 + x1 * x1,
            3 => 1.0 + 2.0 * x1 * x1,
            _ => panic!("phi_upper index {i} out of range for n = 4"),
        }
    }
}

impl PlantDynamics for ExamplePlant {
    fn n_psi(&self) -> usize {
        2
    }

    fn phi_pert(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let [th1, th2, th3] = self.params.theta;
        let b1 = self.params.b[0];
        let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
        let x1s = x1 * x1;
        out[0] = th1 * x1s * x3.cos();
        out[1] = th2 * x1s * x1 * x2.cos() + x1s * x2;
        out[2] = th3 * x1s + b1 * (x1s * x1 * x3 + x1 * x4);
    }

    fn mu(&self, t: f64, x: &[f64], psi: &[f64], u: f64) -> f64 {
        let [a1, a2] = self.params.a;
        let (x1, x3, x4) = (x[0], x[2], x[3]);
        a1 * (2.0 + psi[0].cos()) * u
            + a1 * t.sin() * x1 * u * u
            + (a1 + a2) * (2.0 + x3.sin() * psi[1].sin() + x1 * x1 + x4 * x4) * u * u * u
    }

    fn q_psi(&self, t: f64, x: &[f64], psi: &[f64], u: f64, d: Delayed<'_>, out: &mut [f64]) {
        let b = &self.params.b;
        let (x1, x3, x4) = (x[0], x[2], x[3]);
        let (x1d, x2d, x3d, x4d) = (d.x[0], d.x[1], d.x[2], d.x[3]);
        out[0] = psi[1] - psi[0]
            + b[1] * x1d * x3.sin()
            + b[2] * t.cos() * x1 * x1d * x1d
            + b[3] * x1d * x1d * x3d * x4d.cos()
            + b[4] * u * d.psi[0].cos() * x1;
        out[1] = -2.0 * psi[1]
            + psi[1] * (d.psi[0] * d.psi[1]).cos()
            + b[5] * x1 * x2d * x4.sin()
            + b[6] * x1 * u * d.u.cos();
    }
}

impl EnvelopeFunctions for ExamplePlant {
    fn gamma(&self, x1: f64) -> f64 {
        let b1 = self.params.bounds.b_upper[0];
        let ax = x1.abs();
        // The cubic term bounds |b_1 x_1^3 x_3| and therefore carries |x_1|^3.
        1f64.max(b1) * ax + ax * ax + b1 * ax * ax * ax
    }

    fn mu_bar(&self, y: Output, u: f64) -> f64 {
        let [a1, a2] = self.params.bounds.a_upper;
        let au = u.abs();
        3.0 * a1 * au + a1 * y.x1.abs() * au * au + (a1 + a2) * (3.0 + y.x1 * y.x1 + y.xn * y.xn) * au.powi(3)
    }

    fn mu_bar1(&self, y: Output, u: f64) -> f64 {
        let [a1, a2] = self.params.bounds.a_upper;
        let b = &self.params.bounds.b_upper;
        let au = u.abs();
        let ax1 = y.x1.abs();
        (a1 * au + (a1 + a2) * au.powi(3))
            * (1.0 + b[1] + b[2] * ax1 + b[3] + b[4] * au + b[5] * ax1 + b[6] * au)
    }

    fn mu_bar1a(&self, x1: f64) -> f64 {
        1.0 + x1.abs() + x1 * x1
    }

    fn mu_tilde1(&self, _y: Output, u: f64) -> f64 {
        self.params.bounds.a_upper[0] * u * u
    }

    fn mu_bar2(&self, y: Output, u: f64) -> f64 {
        let [a1, a2] = self.params.bounds.a_upper;
        let au = u.abs();
        a1 * u * u + (a1 + a2) * (1.0 + 2.0 * y.x1.abs() + 2.0 * y.xn.abs()) * au.powi(3)
    }

    fn gamma2(&self, x1: f64) -> f64 {
        let b = &self.params.bounds.b_upper;
        let x2 = x1 * x1;
        4.0 * (b[1].powi(2) + b[2].powi(4) * x2 + b[2].powi(4) * x2.powi(3) + b[3].powi(2) * x2 * x2 + b[4].powi(2))
            + 2.0 * (b[5].powi(4) * x2 + b[6].powi(2))
    }

    fn gamma_s(&self, y: Output, u: f64) -> f64 {
        let s = 1.0 + y.x1 * y.x1;
        s * s * u * u
    }

    fn gamma_s_bar(&self, x1: f64) -> f64 {
        let v = 4.0 * (1.0 + x1 * x1) / (3.0 * self.params.bounds.a_lower[0]);
        v * v
    }

    fn alpha_psi(&self, psi_norm: f64) -> f64 {
        0.25 * psi_norm * psi_norm
    }

    fn v_psi(&self, psi: &[f64]) -> f64 {
        0.5 * (psi[0] * psi[0] + psi[1] * psi[1])
    }

    fn v_psi_grad(&self, psi: &[f64], out: &mut [f64]) {
        out[0] = psi[0];
        out[1] = psi[1];
    }

    fn mu_bar1_psi(&self, psi: &[f64]) -> f64 {
        // Dominates max(|ψ1| + |ψ2|, 3|ψ2|), the ψ-part of |∂μ/∂ψ q_ψ| split per
        // input-gain channel, while keeping μ̄1ψ² ≤ k̄_ψ α_ψ with k̄_ψ = 36.
        3.0 * (psi[0] * psi[0] + psi[1] * psi[1]).sqrt()
    }

    fn mu_tilde1_psi(&self, _psi: &[f64]) -> f64 {
        0.0
    }

    fn mu_bar2_psi(&self, _psi: &[f64]) -> f64 {
        0.0
    }
}

/// Builds the example plant and its envelope.
pub fn build_example(params: &ExampleParams) -> Result<(PlantModel, BoundEnvelope)> {
    params.validate()?;
    let shared = Arc::new(ExamplePlant { params: params.clone() });
    let model = PlantModel::new(shared.clone(), params.delay.profile.clone(), params.overall_theta())?;
    let env = BoundEnvelope {
        sigma: 0.75,
        ratio_bounds: vec![RatioBound { lower: 0.8, upper: 4.0 }],
        mu_lower: 2.0 / 3.0 * params.bounds.a_lower[0],
        k_psi_bar: 36.0,
        v_psi_lower: 0.5,
        delta_bar: params.delay.delta_bar,
        functions: shared,
    };
    env.validate(4)?;
    Ok((model, env))
}
