use std::sync::Arc;

use crate::error::{Error, Result};

/// Values of the lagged channels before the initial time.
#[derive(Clone, Default)]
pub enum InitialHistory {
    /// The initial values held constant.
    #[default]
    Constant,
    /// Channel values as a function of `τ < t0`; rates are taken as zero.
    Function(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl std::fmt::Debug for InitialHistory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialHistory::Constant => f.write_str("Constant"),
            InitialHistory::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Time-stamped samples of the lagged channels with their time derivatives,
/// read back by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    channels: usize,
    max_delay: f64,
    initial: InitialHistory,
    times: Vec<f64>,
    values: Vec<f64>,
    rates: Vec<f64>,
}

impl HistoryBuffer {
    pub fn new(channels: usize, max_delay: f64, initial: InitialHistory) -> Self {
        HistoryBuffer { channels, max_delay, initial, times: Vec::new(), values: Vec::new(), rates: Vec::new() }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Earliest time a lookup may ask for.
    pub fn earliest(&self) -> f64 {
        self.times.first().map_or(f64::NAN, |t0| t0 - self.max_delay)
    }

    pub fn latest(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NAN)
    }

    pub fn values_at(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn push(&mut self, t: f64, values: &[f64], rates: &[f64]) -> Result<()> {
        if values.len() != self.channels || rates.len() != self.channels {
            return Err(Error::InvalidSpec("history sample has the wrong number of channels".into()));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidSpec(format!("history times must increase: {t} after {last}")));
            }
        }
        self.times.push(t);
        self.values.extend_from_slice(values);
        self.rates.extend_from_slice(rates);
        Ok(())
    }

    /// Replaces the derivative stored with the newest sample.
    pub fn set_latest_rates(&mut self, rates: &[f64]) {
        let k = self.times.len() - 1;
        self.rates[k * self.channels..(k + 1) * self.channels].copy_from_slice(rates);
    }

    pub fn lookup(&self, tau: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.lookup_into(tau, &mut out)?;
        Ok(out)
    }

    pub fn lookup_into(&self, tau: f64, out: &mut [f64]) -> Result<()> {
        let (Some(&t0), Some(&tn)) = (self.times.first(), self.times.last()) else {
            return Err(Error::HistoryUnderflow { tau, earliest: f64::NAN });
        };
        if !tau.is_finite() || tau > tn {
            return Err(Error::HistoryOverrun { tau, latest: tn });
        }
        if tau < t0 {
            // The slack absorbs rounding in t - Δ(t) at the edge of the window.
            let earliest = t0 - self.max_delay;
            if tau < earliest - 1e-12 * earliest.abs().max(1.0) {
                return Err(Error::HistoryUnderflow { tau, earliest });
            }
            match &self.initial {
                InitialHistory::Constant => out.copy_from_slice(self.values_at(0)),
                InitialHistory::Function(f) => {
                    let v = f(tau);
                    if v.len() != self.channels {
                        return Err(Error::InvalidSpec("initial history returned the wrong number of channels".into()));
                    }
                    out.copy_from_slice(&v);
                }
            }
            return Ok(());
        }
        // First index with times[k] >= tau.
        let k = self.times.partition_point(|&t| t < tau);
        if self.times[k] == tau {
            out.copy_from_slice(self.values_at(k));
            return Ok(());
        }
        let (a, b) = (k - 1, k);
        let (ta, tb) = (self.times[a], self.times[b]);
        let dt = tb - ta;
        let s = (tau - ta) / dt;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let c = self.channels;
        for j in 0..c {
            let (ya, yb) = (self.values[a * c + j], self.values[b * c + j]);
            let (ma, mb) = (self.rates[a * c + j], self.rates[b * c + j]);
            out[j] = h00 * ya + h10 * dt * ma + h01 * yb + h11 * dt * mb;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic(t: f64) -> f64 {
        0.5 * t * t * t - t * t + 2.0 * t - 0.25
    }

    fn cubic_rate(t: f64) -> f64 {
        1.5 * t * t - 2.0 * t + 2.0
    }

    fn filled() -> HistoryBuffer {
        let mut b = HistoryBuffer::new(1, 0.5, InitialHistory::Constant);
        for k in 0..=20 {
            let t = 0.1 * k as f64;
            b.push(t, &[cubic(t)], &[cubic_rate(t)]).unwrap();
        }
        b
    }

    #[test]
    fn node_lookup_is_exact() {
        let b = filled();
        for k in 0..=20 {
            let t = 0.1 * k as f64;
            assert_eq!(b.lookup(t).unwrap()[0].to_bits(), cubic(t).to_bits());
        }
    }

    #[test]
    fn cubic_is_reproduced_between_nodes() {
        let b = filled();
        for k in 0..20 {
            let t = 0.1 * k as f64 + 0.05;
            assert!((b.lookup(t).unwrap()[0] - cubic(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn range_errors_and_initial_segment() {
        let b = filled();
        assert_eq!(b.lookup(-0.3).unwrap()[0], cubic(0.0));
        assert!(matches!(b.lookup(-0.6), Err(Error::HistoryUnderflow { .. })));
        assert!(matches!(b.lookup(2.5), Err(Error::HistoryOverrun { .. })));
        let mut b = HistoryBuffer::new(1, 0.5, InitialHistory::Function(Arc::new(|t| vec![t])));
        b.push(0.0, &[0.0], &[1.0]).unwrap();
        assert_eq!(b.lookup(-0.25).unwrap()[0], -0.25);
        assert!(b.push(0.0, &[0.0], &[0.0]).is_err());
    }
}
