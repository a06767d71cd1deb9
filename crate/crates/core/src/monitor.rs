//! Truth-side evaluation of the Lyapunov functions along a recorded run. The
//! monitor knows `θ`, `ψ` and the `ψ`-dependent bounds; the controller never does.

use serde::{Deserialize, Serialize};

use crate::controller::{pi_fn, Controller};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::PlantModel;
use crate::quadrature::simpson_uniform;
use crate::sim::{SimResult, TrajectoryRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSnapshot {
    pub t: f64,
    pub v_o: f64,
    pub v_c: f64,
    pub v_x: f64,
    pub v_u: f64,
    pub v_psi_tilde: f64,
    pub v_delay: f64,
    pub v_adapt: f64,
    pub v_total: f64,
    /// The negative-definite part of the decrease bound at this sample.
    pub decay_bound: f64,
}

pub struct Monitor<'a> {
    pub controller: &'a Controller,
    pub model: &'a PlantModel,
}

/// Signals shared by the snapshot, the delay integrand and the decay bound.
struct RowSignals {
    eps: Vec<f64>,
    varpi: Vec<f64>,
}

impl<'a> Monitor<'a> {
    pub fn new(controller: &'a Controller, model: &'a PlantModel) -> Result<Self> {
        if controller.n() != model.n() {
            return Err(Error::InvalidSpec("monitor: controller and plant dimensions differ".into()));
        }
        Ok(Monitor { controller, model })
    }

    fn signals(&self, row: &TrajectoryRow) -> Result<RowSignals> {
        let state = row.controller_state();
        Ok(RowSignals {
            eps: self.controller.compute_epsilon(&state, &row.x)?,
            varpi: self.controller.compute_varpi(&state, row.x[0])?,
        })
    }

    /// Integrand of the delay term at one sample.
    pub fn delay_integrand(&self, row: &TrajectoryRow) -> Result<f64> {
        let s = self.signals(row)?;
        Ok(self.delay_integrand_with(row, &s))
    }

    fn delay_integrand_with(&self, row: &TrajectoryRow, s: &RowSignals) -> f64 {
        let c = self.controller;
        let p = c.params();
        let t = &p.tuning;
        let e = &c.envelope().functions;
        let n = c.n() as f64;
        let theta = self.model.true_theta;
        let x1 = row.x[0];
        let r = row.r;
        let th = row.theta_hat;
        let v1 = c.compute_vartheta1(x1);
        let gs = e.gamma_s_bar(x1);
        let k = c.k_norm(x1);
        let varpi2 = s.varpi.iter().map(|v| v * v).sum::<f64>();
        let eps2 = s.eps.iter().map(|v| v * v).sum::<f64>();
        let mu1a2 = e.mu_bar1a(x1).powi(2);
        let r_psi = r.powf(2.0 * n - 1.5);

        let block1 = p.c_psi
            * e.gamma2(x1)
            * (theta * x1 * x1
                + 3.0 * (varpi2 + eps2)
                + 3.0 * th * th * v1 * v1 * x1 * x1 / r.sqrt()
                + 2.0 * r.powf(1.5) * gs * k * k * varpi2
                + 2.0 * gs * row.u_d * row.u_d / r_psi);
        let block2 = t.c_u / r * (t.c3 * theta * theta + t.c2 * th * th * v1 * v1) * mu1a2 * x1 * x1;
        let weighted: f64 = s
            .varpi
            .iter()
            .zip(&s.eps)
            .enumerate()
            .map(|(j, (w, ep))| r.powi(2 * j as i32) * (w * w + ep * ep))
            .sum();
        let block3 = t.c_u * t.c1 / r.powf(2.0 * n - 3.0) * weighted * mu1a2;
        let block4 = t.c_u * t.c_psi1 * e.mu_bar1_psi(&row.psi).powi(2) / (2.0 * r_psi);
        block1 + block2 + block3 + block4
    }

    /// Snapshot of the pointwise terms; `v_delay` is left at zero.
    fn pointwise(&self, row: &TrajectoryRow, s: &RowSignals) -> LyapunovSnapshot {
        let c = self.controller;
        let g = c.gains();
        let p = c.params();
        let e = &c.envelope().functions;
        let n = c.n();
        let r = row.r;
        let x1 = row.x[0];
        let quad = |m: &nalgebra::DMatrix<f64>, v: &[f64]| -> f64 {
            let v = nalgebra::DVector::from_column_slice(v);
            (v.transpose() * m * &v)[(0, 0)]
        };
        let v_o = r * quad(&g.p_o, &s.eps);
        let v_c = r * quad(&g.p_c, &s.varpi) + 0.5 * (1.0 + 1.0 / r) * x1 * x1;
        let v_x = p.c * v_o + v_c;
        let log_ud = row.u_d.powi(2).ln_1p();
        let v_u = log_ud / (2.0 * r.powi(n as i32) * pi_fn(row.r_u, p.tuning.pi_k));
        let v_psi_tilde = e.v_psi(&row.psi) / r.powf(2.0 * n as f64 - 1.5);
        let v_adapt = (row.theta_hat - p.theta_star).powi(2) / (2.0 * p.tuning.c_theta);
        let eps2: f64 = s.eps.iter().map(|v| v * v).sum();
        let varpi2: f64 = s.varpi.iter().map(|v| v * v).sum();
        let decay_bound = r * r * (p.c * g.nu_o / 8.0) * eps2
            + r * r * (g.nu_c / 8.0) * c.chain().scaling_phi(x1) * varpi2
            + p.tuning.vartheta1_star * x1 * x1
            + p.c_psi * c.envelope().v_psi_lower / 2.0 * v_psi_tilde
            + p.tuning.nu_u * log_ud;
        LyapunovSnapshot {
            t: row.t,
            v_o,
            v_c,
            v_x,
            v_u,
            v_psi_tilde,
            v_delay: 0.0,
            v_adapt,
            v_total: 0.0,
            decay_bound,
        }
    }

    /// Snapshot at row `k` of a run sampled every `spacing` seconds.
    pub fn compute_snapshot(&self, rows: &[TrajectoryRow], k: usize, spacing: f64) -> Result<LyapunovSnapshot> {
        check_index(rows, k, spacing)?;
        let from = window_start(rows, k).saturating_sub(1);
        let mut integrand = vec![0.0; k + 1];
        for j in from..=k {
            integrand[j] = self.delay_integrand(&rows[j])?;
        }
        let s = self.signals(&rows[k])?;
        let mut snap = self.pointwise(&rows[k], &s);
        snap.v_delay = self.delay_term(rows, k, spacing, &integrand);
        snap.v_total = self.total(&snap);
        Ok(snap)
    }

    /// Snapshots at every row, sharing the integrand evaluations.
    pub fn compute_snapshots(&self, rows: &[TrajectoryRow], spacing: f64) -> Result<Vec<LyapunovSnapshot>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        check_index(rows, 0, spacing)?;
        let mut integrand = Vec::with_capacity(rows.len());
        let mut snaps = Vec::with_capacity(rows.len());
        for row in rows {
            let s = self.signals(row)?;
            integrand.push(self.delay_integrand_with(row, &s));
            snaps.push(self.pointwise(row, &s));
        }
        for (k, snap) in snaps.iter_mut().enumerate() {
            snap.v_delay = self.delay_term(rows, k, spacing, &integrand);
            snap.v_total = self.total(snap);
        }
        Ok(snaps)
    }

    fn total(&self, s: &LyapunovSnapshot) -> f64 {
        let p = self.controller.params();
        s.v_x + p.c_psi * s.v_psi_tilde + p.tuning.c_u * s.v_u + s.v_adapt + s.v_delay
    }

    /// `1/(1-Δ̄) ∫_{t-Δ}^{t}` of the integrand: composite Simpson over the
    /// samples inside the window, a trapezoid on the partial interval before
    /// the first of them, and the constant initial history before `t0`.
    fn delay_term(&self, rows: &[TrajectoryRow], k: usize, spacing: f64, integrand: &[f64]) -> f64 {
        let t = rows[k].t;
        let delta = rows[k].delta;
        if !(delta > 0.0) {
            return 0.0;
        }
        let lower = t - delta;
        let first = window_start(rows, k);
        let mut total = simpson_uniform(&integrand[first..=k], spacing);
        let t_first = rows[first].t;
        if first == 0 && lower < t_first {
            total += (t_first - lower) * integrand[0];
        } else if lower < t_first {
            let (ta, ia, ib) = (rows[first - 1].t, integrand[first - 1], integrand[first]);
            let at_lower = ia + (lower - ta) / (t_first - ta) * (ib - ia);
            total += 0.5 * (t_first - lower) * (at_lower + ib);
        }
        total / (1.0 - self.controller.envelope().delta_bar)
    }
}

fn check_index(rows: &[TrajectoryRow], k: usize, spacing: f64) -> Result<()> {
    if k >= rows.len() || !(spacing > 0.0) {
        return Err(Error::InvalidSpec("snapshot index out of range or bad spacing".into()));
    }
    Ok(())
}

/// First sample at or after `t - Δ(t)`.
fn window_start(rows: &[TrajectoryRow], k: usize) -> usize {
    let lower = rows[k].t - rows[k].delta.max(0.0);
    rows[..=k].partition_point(|r| r.t < lower).min(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub t: f64,
    /// How far the check was missed, in the units of the checked quantity.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    pub tol: f64,
    pub intervals: usize,
    /// Steps where `V(t_{k+1}) > V(t_k) + tol·h·(1 + V(t_k))`.
    pub violations: Vec<Violation>,
    pub worst_excess: f64,
    /// Fraction of intervals where the finite-difference derivative of `V`
    /// stays below minus the decay bound plus `tol·(1 + V)`.
    pub instantaneous_fraction: f64,
    pub instantaneous_misses: usize,
    pub passed: bool,
}

/// Required share of intervals on which the instantaneous bound holds.
pub const INSTANTANEOUS_SHARE: f64 = 0.99;

/// Checks the decrease of `V_total` along snapshots spaced `spacing` apart.
pub fn check_decrease(snapshots: &[LyapunovSnapshot], spacing: f64, tol: f64) -> DecreaseReport {
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut misses = 0usize;
    for (k, pair) in snapshots.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let allowed = a.v_total + tol * spacing * (1.0 + a.v_total);
        let excess = b.v_total - allowed;
        worst = worst.max(excess);
        if !(excess <= 0.0) {
            violations.push(Violation { index: k + 1, t: b.t, excess });
        }
        let rate = (b.v_total - a.v_total) / spacing;
        let bound = -0.5 * (a.decay_bound + b.decay_bound) + tol * (1.0 + a.v_total);
        if !(rate <= bound) {
            misses += 1;
        }
    }
    let intervals = snapshots.len().saturating_sub(1);
    let fraction = if intervals == 0 { 1.0 } else { 1.0 - misses as f64 / intervals as f64 };
    DecreaseReport {
        tol,
        intervals,
        passed: violations.is_empty() && fraction >= INSTANTANEOUS_SHARE,
        violations,
        worst_excess: if intervals == 0 { 0.0 } else { worst },
        instantaneous_fraction: fraction,
        instantaneous_misses: misses,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupNorms {
    pub x: f64,
    pub psi: f64,
    pub xhat: f64,
    pub zeta: f64,
    pub u: f64,
    pub r: f64,
    pub r_u: f64,
    pub theta_hat: f64,
}

/// Last-decile spread `max - min` of a monotone signal and its ratio to the final value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub variation: f64,
    pub relative: f64,
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMetrics {
    pub completed: bool,
    pub sup: SupNorms,
    pub initial_norm: f64,
    pub terminal_x: f64,
    pub terminal_psi: f64,
    pub terminal_xhat: f64,
    pub terminal_r: f64,
    pub terminal_r_u: f64,
    pub terminal_theta_hat: f64,
    pub r_plateau: Plateau,
    pub r_u_plateau: Plateau,
    pub theta_hat_plateau: Plateau,
    /// `(threshold, first t with ‖x‖ + ‖ψ‖ ≤ threshold·initial)`.
    pub crossings: Vec<(f64, Option<f64>)>,
}

impl ConvergenceMetrics {
    pub fn crossing(&self, threshold: f64) -> Option<f64> {
        self.crossings.iter().find(|(th, _)| *th == threshold).and_then(|(_, t)| *t)
    }
}

pub const CROSSING_THRESHOLDS: [f64; 3] = [1e-1, 1e-2, 1e-3];

fn plateau(values: &[f64]) -> Plateau {
    let monotone = values.windows(2).all(|w| w[1] >= w[0]);
    if values.is_empty() {
        return Plateau { variation: 0.0, relative: 0.0, monotone };
    }
    let start = values.len() - values.len().div_ceil(10);
    let tail = &values[start..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let variation = max - min;
    let last = *values.last().unwrap();
    Plateau { variation, relative: if last != 0.0 { variation / last.abs() } else { variation }, monotone }
}

pub fn convergence_metrics(result: &SimResult) -> ConvergenceMetrics {
    metrics_from_rows(&result.rows, result.status.completed())
}

/// As [`convergence_metrics`] for a bare trajectory, e.g. one read back from CSV.
pub fn metrics_from_rows(rows: &[TrajectoryRow], completed: bool) -> ConvergenceMetrics {
    let sup = |f: &dyn Fn(&TrajectoryRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let combined = |r: &TrajectoryRow| norm(&r.x) + norm(&r.psi);
    let initial_norm = rows.first().map_or(0.0, combined);
    let crossings = CROSSING_THRESHOLDS
        .iter()
        .map(|&th| (th, rows.iter().find(|r| combined(r) <= th * initial_norm).map(|r| r.t)))
        .collect();
    let series = |f: &dyn Fn(&TrajectoryRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let last = |f: &dyn Fn(&TrajectoryRow) -> f64| rows.last().map_or(f64::NAN, f);
    ConvergenceMetrics {
        completed,
        sup: SupNorms {
            x: sup(&|r| norm(&r.x)),
            psi: sup(&|r| norm(&r.psi)),
            xhat: sup(&|r| norm(&r.xhat)),
            zeta: sup(&|r| r.zeta.abs()),
            u: sup(&|r| r.u.abs()),
            r: sup(&|r| r.r),
            r_u: sup(&|r| r.r_u),
            theta_hat: sup(&|r| r.theta_hat),
        },
        initial_norm,
        terminal_x: last(&|r| norm(&r.x)),
        terminal_psi: last(&|r| norm(&r.psi)),
        terminal_xhat: last(&|r| norm(&r.xhat)),
        terminal_r: last(&|r| r.r),
        terminal_r_u: last(&|r| r.r_u),
        terminal_theta_hat: last(&|r| r.theta_hat),
        r_plateau: plateau(&series(&|r| r.r)),
        r_u_plateau: plateau(&series(&|r| r.r_u)),
        theta_hat_plateau: plateau(&series(&|r| r.theta_hat)),
        crossings,
    }
}

/// Relative last-decile variation below which a scaling counts as settled.
pub const PLATEAU_TOLERANCE: f64 = 1e-6;

impl ConvergenceMetrics {
    pub fn monotone(&self) -> bool {
        self.r_plateau.monotone && self.r_u_plateau.monotone && self.theta_hat_plateau.monotone
    }

    pub fn plateaued(&self) -> bool {
        [self.r_plateau, self.r_u_plateau, self.theta_hat_plateau]
            .iter()
            .all(|p| p.relative < PLATEAU_TOLERANCE)
    }

    /// Completed and `‖x‖ + ‖ψ‖` fell below the smallest threshold.
    pub fn converged(&self) -> bool {
        self.completed && (self.initial_norm == 0.0 || self.crossing(1e-3).is_some())
    }
}

/// Everything the monitor can say about one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    pub samples: usize,
    pub spacing: f64,
    pub snapshots_nonnegative: bool,
    pub decrease: DecreaseReport,
    pub metrics: ConvergenceMetrics,
    pub monotone: bool,
    pub plateaued: bool,
    pub converged: bool,
    /// The run completed, converged and its Lyapunov function decreased.
    pub passed: bool,
}

impl Monitor<'_> {
    /// Full verdict for a trajectory recorded at uniform `spacing`.
    pub fn evaluate(&self, rows: &[TrajectoryRow], spacing: f64, tol: f64, completed: bool) -> Result<MonitorVerdict> {
        let snapshots = self.compute_snapshots(rows, spacing)?;
        let nonneg = snapshots.iter().all(|s| {
            [s.v_o, s.v_c, s.v_x, s.v_u, s.v_psi_tilde, s.v_delay, s.v_adapt, s.v_total].iter().all(|v| *v >= 0.0)
        });
        let decrease = check_decrease(&snapshots, spacing, tol);
        let metrics = metrics_from_rows(rows, completed);
        let (monotone, plateaued, converged) = (metrics.monotone(), metrics.plateaued(), metrics.converged());
        Ok(MonitorVerdict {
            samples: snapshots.len(),
            spacing,
            snapshots_nonnegative: nonneg,
            passed: completed && converged && decrease.passed && nonneg && monotone && snapshots.len() >= 2,
            decrease,
            metrics,
            monotone,
            plateaued,
            converged,
        })
    }
}
