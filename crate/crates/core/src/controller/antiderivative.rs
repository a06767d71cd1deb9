use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::model::UpperChain;
use crate::quadrature::integrate;

const SPACING: f64 = 0.25;
const MAX_KNOTS: usize = 4096;

/// Cached `F(x1) = ∫_0^{x1} s(π)/φ_(1,2)(π) dπ`, where `s` is the gain scaling
/// function, so that `f_i(x1) = g̃_i F(x1)`.
///
/// Knot values at multiples of a fixed spacing are accumulated panel by panel
/// on first use; a query adds one adaptive integral from the nearest knot
/// toward zero. The knot values never depend on the order of queries, so runs
/// stay bitwise reproducible.
pub struct Antiderivative {
    chain: Arc<dyn UpperChain>,
    tol: f64,
    positive: Mutex<Vec<f64>>,
    negative: Mutex<Vec<f64>>,
}

impl std::fmt::Debug for Antiderivative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Antiderivative").field("tol", &self.tol).finish()
    }
}

impl Antiderivative {
    pub fn new(chain: Arc<dyn UpperChain>, tol: f64) -> Self {
        Antiderivative { chain, tol, positive: Mutex::new(vec![0.0]), negative: Mutex::new(vec![0.0]) }
    }

    fn integrand(&self, s: f64) -> f64 {
        self.chain.scaling_phi(s) / self.chain.phi_upper(1, s)
    }

    fn knot(&self, k: usize, sign: f64) -> Result<f64> {
        let table = if sign > 0.0 { &self.positive } else { &self.negative };
        let mut knots = table.lock().unwrap_or_else(|p| p.into_inner());
        while knots.len() <= k {
            let j = knots.len();
            let a = sign * SPACING * (j - 1) as f64;
            let b = sign * SPACING * j as f64;
            let panel = integrate(|s| self.integrand(s), a, b, self.tol)?;
            let prev = knots[j - 1];
            knots.push(prev + panel);
        }
        Ok(knots[k])
    }

    pub fn value(&self, x1: f64) -> Result<f64> {
        if !x1.is_finite() {
            return Err(Error::NumericFailure { term: "f_i" });
        }
        if x1 == 0.0 {
            return Ok(0.0);
        }
        let k = (x1.abs() / SPACING).floor();
        if k as usize >= MAX_KNOTS {
            return integrate(|s| self.integrand(s), 0.0, x1, self.tol);
        }
        let sign = x1.signum();
        let base = self.knot(k as usize, sign)?;
        let start = sign * SPACING * k;
        Ok(base + integrate(|s| self.integrand(s), start, x1, self.tol)?)
    }
}
