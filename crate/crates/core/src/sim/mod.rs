//! Fixed-step RK4 integration of the closed loop as a delay differential
//! equation. Delayed arguments are read per stage from an interpolated history.

mod csv_io;
mod history;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use csv_io::{read_csv, write_csv, csv_header};
pub use history::{HistoryBuffer, InitialHistory};

use crate::controller::{ControllerState, Diagnostics, Feedback};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::model::{DelayProfile, Delayed, Output, PlantModel};

/// A delay system `ż = F(t, z, w(t - Δ(t)))`, where `w` are lagged channels
/// that are functions of the state.
pub trait DelaySystem {
    fn state_dim(&self) -> usize;
    fn lag_dim(&self) -> usize;
    fn delay(&self, t: f64) -> f64;
    fn max_delay(&self) -> f64;
    fn lag_channels(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()>;
    /// Time derivative of the lagged channels given `ż`.
    fn lag_rates(&self, t: f64, z: &[f64], dz: &[f64], out: &mut [f64]) -> Result<()>;
    fn rhs(&self, t: f64, z: &[f64], lagged: &[f64], dz: &mut [f64]) -> Result<()>;
}

/// How an integration ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    BlowUp { t: f64, index: usize },
    NumericFailure { t: f64, term: String },
}

impl RunStatus {
    pub fn completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// Callback verdict after each accepted node.
pub(crate) enum NodeAction {
    Continue,
    Halt(RunStatus),
}

/// Runs `steps` RK4 steps from `(t0, z0)`, handing every node (including the
/// first and the last) and its derivative to `on_node`.
pub(crate) fn integrate<S: DelaySystem>(
    sys: &S,
    t0: f64,
    z0: &[f64],
    h: f64,
    steps: usize,
    initial: InitialHistory,
    mut on_node: impl FnMut(usize, f64, &[f64], &[f64]) -> NodeAction,
) -> (RunStatus, usize) {
    let dim = sys.state_dim();
    let lag = sys.lag_dim();
    let mut history = HistoryBuffer::new(lag, sys.max_delay(), initial);
    let mut z = z0.to_vec();
    let mut t = t0;
    let mut evals = 0usize;
    let mut w_node = vec![0.0; lag];
    let mut w_rate = vec![0.0; lag];
    let mut lagged = vec![0.0; lag];
    let mut w_stage = vec![0.0; lag];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut zs = vec![0.0; dim];

    // Right-hand side at a stage; the lag at t - Δ may fall after the newest
    // node when Δ is shorter than the stage offset, in which case it is read
    // off the segment between the newest node and the stage itself.
    let stage = |history: &HistoryBuffer,
                 ts: f64,
                 zs: &[f64],
                 lagged: &mut [f64],
                 w_stage: &mut [f64],
                 out: &mut [f64]|
     -> Result<()> {
        let delta = sys.delay(ts);
        let tau = ts - delta;
        let latest = history.latest();
        if delta == 0.0 || tau > latest {
            sys.lag_channels(ts, zs, w_stage)?;
            if delta == 0.0 || ts == latest {
                lagged.copy_from_slice(w_stage);
            } else {
                let k = history.len() - 1;
                let w0 = history.values_at(k);
                let s = (tau - latest) / (ts - latest);
                for j in 0..lagged.len() {
                    lagged[j] = w0[j] + s * (w_stage[j] - w0[j]);
                }
            }
        } else {
            history.lookup_into(tau, lagged)?;
        }
        sys.rhs(ts, zs, lagged, out)
    };

    let fail = |t: f64, e: Error| match e {
        Error::BlowUp { index, .. } => RunStatus::BlowUp { t, index },
        Error::NumericFailure { term } => RunStatus::NumericFailure { t, term: term.to_string() },
        other => RunStatus::NumericFailure { t, term: other.to_string() },
    };

    if let Err(e) = sys.lag_channels(t, &z, &mut w_node) {
        return (fail(t, e), evals);
    }
    history.push(t, &w_node, &vec![0.0; lag]).expect("first history sample");
    for step in 0..=steps {
        // Derivative at the node: it completes the Hermite data of this node
        // and is the first RK4 stage of the next step.
        evals += 1;
        let node_eval = stage(&history, t, &z, &mut lagged, &mut w_stage, &mut k1)
            .and_then(|_| sys.lag_rates(t, &z, &k1, &mut w_rate));
        if let Err(e) = node_eval {
            return (fail(t, e), evals);
        }
        history.set_latest_rates(&w_rate);
        if let NodeAction::Halt(status) = on_node(step, t, &z, &k1) {
            return (status, evals);
        }
        if step == steps {
            break;
        }
        let result = (|| -> Result<()> {
            for i in 0..dim {
                zs[i] = z[i] + 0.5 * h * k1[i];
            }
            stage(&history, t + 0.5 * h, &zs, &mut lagged, &mut w_stage, &mut k2)?;
            for i in 0..dim {
                zs[i] = z[i] + 0.5 * h * k2[i];
            }
            stage(&history, t + 0.5 * h, &zs, &mut lagged, &mut w_stage, &mut k3)?;
            for i in 0..dim {
                zs[i] = z[i] + h * k3[i];
            }
            stage(&history, t + h, &zs, &mut lagged, &mut w_stage, &mut k4)?;
            Ok(())
        })();
        evals += 3;
        if let Err(e) = result {
            return (fail(t, e), evals);
        }
        for i in 0..dim {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = t0 + (step + 1) as f64 * h;
        if let Some(index) = z.iter().position(|v| !v.is_finite()) {
            return (RunStatus::BlowUp { t, index }, evals);
        }
        if let Err(e) = sys.lag_channels(t, &z, &mut w_node) {
            return (fail(t, e), evals);
        }
        // Rates are filled in at the top of the next iteration.
        history.push(t, &w_node, &w_rate).expect("increasing time");
    }
    (RunStatus::Completed, evals)
}

/// Number of steps of a horizon, robust to `T/h` landing a hair below an integer.
pub fn step_count(h: f64, horizon: f64) -> usize {
    (horizon / h + 1e-9).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialHistoryMode {
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub h: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub psi0: Vec<f64>,
    /// Defaults to `x̂ = 0, ζ = 0, r = r_u = 1, θ̂ = a_θ`.
    pub controller0: Option<ControllerState>,
    pub initial_history: InitialHistoryMode,
    /// Overrides the plant's delay profile.
    pub delay: Option<DelayProfile>,
    /// Record every `decimation`-th step.
    pub decimation: usize,
    /// Bound on the norms of the signal blocks `x`, `ψ`, `x̂`, `(ζ, u)`.
    pub blowup_bound: f64,
    pub record_diagnostics: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            horizon: 10.0,
            x0: Vec::new(),
            psi0: Vec::new(),
            controller0: None,
            initial_history: InitialHistoryMode::Constant,
            delay: None,
            decimation: 1,
            blowup_bound: 1e9,
            record_diagnostics: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, n: usize, n_psi: usize, a_theta: f64) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) || !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidSpec("h and horizon must be positive".into()));
        }
        if self.x0.len() != n || self.psi0.len() != n_psi {
            return Err(Error::InvalidSpec(format!("x0 needs {n} entries and psi0 {n_psi}")));
        }
        if self.x0.iter().chain(&self.psi0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("initial state must be finite".into()));
        }
        if self.decimation == 0 {
            return Err(Error::InvalidSpec("decimation must be at least 1".into()));
        }
        if !(self.blowup_bound > 0.0) {
            return Err(Error::InvalidSpec("blowup_bound must be positive".into()));
        }
        if let Some(s) = &self.controller0 {
            s.validate(n, a_theta)?;
        }
        if let Some(d) = &self.delay {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub psi: Vec<f64>,
    pub xhat: Vec<f64>,
    pub zeta: f64,
    pub r: f64,
    pub r_u: f64,
    pub theta_hat: f64,
    pub u: f64,
    pub u_tilde: f64,
    pub u_d: f64,
    pub eps_norm: f64,
    pub varpi_norm: f64,
    pub delta: f64,
    pub diagnostics: Option<Diagnostics>,
}

impl TrajectoryRow {
    /// The row in trajectory-CSV column order, without diagnostics.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.x.len() + self.psi.len() + self.xhat.len() + 10);
        v.push(self.t);
        v.extend(self.x.iter().chain(&self.psi).chain(&self.xhat));
        v.extend([
            self.zeta,
            self.r,
            self.r_u,
            self.theta_hat,
            self.u,
            self.u_tilde,
            self.u_d,
            self.eps_norm,
            self.varpi_norm,
            self.delta,
        ]);
        v
    }

    pub fn controller_state(&self) -> ControllerState {
        ControllerState { xhat: self.xhat.clone(), zeta: self.zeta, r: self.r, r_u: self.r_u, theta_hat: self.theta_hat }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingCase {
    /// `r ≥ R`: the scaling is at or past its target.
    AtTarget,
    /// `r < R`: the scaling grows at its full rate.
    Growing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    RCase { t: f64, case: ScalingCase },
    RuCase { t: f64, case: ScalingCase },
    Halted { t: f64, status: RunStatus },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalNorms {
    pub x: f64,
    pub psi: f64,
    pub xhat: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    pub rhs_evals: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimResult {
    pub n: usize,
    pub n_psi: usize,
    pub h: f64,
    pub decimation: usize,
    pub rows: Vec<TrajectoryRow>,
    pub status: RunStatus,
    pub events: Vec<SimEvent>,
    pub terminal: TerminalNorms,
    pub stats: RunStats,
}

impl SimResult {
    /// Everything except wall-clock timing; two runs of one config agree here bit for bit.
    pub fn same_trajectory(&self, other: &SimResult) -> bool {
        self.rows == other.rows && self.events == other.events && self.status == other.status
    }
}

/// The closed loop: the plant, truth side, with the controller's input.
struct ClosedLoop<'a> {
    model: &'a PlantModel,
    delay: &'a DelayProfile,
    feedback: &'a dyn Feedback,
    n: usize,
    n_psi: usize,
}

impl ClosedLoop<'_> {
    fn split<'z>(&self, z: &'z [f64]) -> (&'z [f64], &'z [f64], ControllerState) {
        let n = self.n;
        let np = self.n_psi;
        let x = &z[..n];
        let psi = &z[n..n + np];
        let c = &z[n + np..];
        let state = ControllerState {
            xhat: c[..n - 1].to_vec(),
            zeta: c[n - 1],
            r: c[n],
            r_u: c[n + 1],
            theta_hat: c[n + 2],
        };
        (x, psi, state)
    }

    fn pack(x: &[f64], psi: &[f64], s: &ControllerState) -> Vec<f64> {
        let mut z = Vec::with_capacity(x.len() + psi.len() + s.xhat.len() + 4);
        z.extend_from_slice(x);
        z.extend_from_slice(psi);
        z.extend_from_slice(&s.xhat);
        z.extend_from_slice(&[s.zeta, s.r, s.r_u, s.theta_hat]);
        z
    }
}

impl DelaySystem for ClosedLoop<'_> {
    fn state_dim(&self) -> usize {
        2 * self.n + self.n_psi + 3
    }

    fn lag_dim(&self) -> usize {
        self.n + self.n_psi + 1
    }

    fn delay(&self, t: f64) -> f64 {
        self.delay.value(t)
    }

    fn max_delay(&self) -> f64 {
        self.delay.max_delay()
    }

    fn lag_channels(&self, _t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let np = self.n_psi;
        out[..n + np].copy_from_slice(&z[..n + np]);
        let base = n + np;
        // u = ζ - r_u x_n
        out[n + np] = z[base + n - 1] - z[base + n + 1] * z[n - 1];
        Ok(())
    }

    fn lag_rates(&self, _t: f64, z: &[f64], dz: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let np = self.n_psi;
        out[..n + np].copy_from_slice(&dz[..n + np]);
        let base = n + np;
        out[n + np] = dz[base + n - 1] - dz[base + n + 1] * z[n - 1] - z[base + n + 1] * dz[n - 1];
        Ok(())
    }

    fn rhs(&self, t: f64, z: &[f64], lagged: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.n;
        let np = self.n_psi;
        let (x, psi, state) = self.split(z);
        let d = self.feedback.step(&state, Output::of(x))?;
        let delayed = Delayed { x: &lagged[..n], psi: &lagged[n..n + np], u: lagged[n + np] };
        let (dx, rest) = dz.split_at_mut(n);
        let (dpsi, dc) = rest.split_at_mut(np);
        self.model.rhs_into(t, x, psi, d.u, delayed, dx, dpsi)?;
        dc[..n - 1].copy_from_slice(&d.xhat_dot);
        dc[n - 1] = d.zeta_dot;
        dc[n] = d.r_dot;
        dc[n + 1] = d.r_u_dot;
        dc[n + 2] = d.theta_hat_dot;
        Ok(())
    }
}

/// Integrates the closed loop of `model` and `feedback` under `cfg`, with the
/// constant-extension initial history.
pub fn simulate(model: &PlantModel, feedback: &dyn Feedback, cfg: &SimConfig) -> Result<SimResult> {
    simulate_with_history(model, feedback, cfg, InitialHistory::Constant)
}

/// As [`simulate`] with an explicit pre-`t = 0` history of the lagged
/// channels `(x, ψ, u)`.
pub fn simulate_with_history(
    model: &PlantModel,
    feedback: &dyn Feedback,
    cfg: &SimConfig,
    initial: InitialHistory,
) -> Result<SimResult> {
    let design = feedback.design();
    let n = model.n();
    let n_psi = model.n_psi();
    if design.n() != n {
        return Err(Error::InvalidSpec("controller and plant dimensions differ".into()));
    }
    let a_theta = design.params().tuning.a_theta;
    cfg.validate(n, n_psi, a_theta)?;
    let delay = cfg.delay.as_ref().unwrap_or(&model.delay);
    let sys = ClosedLoop { model, delay, feedback, n, n_psi };
    let state0 = cfg.controller0.clone().unwrap_or_else(|| ControllerState::initial(n, a_theta));
    let z0 = ClosedLoop::pack(&cfg.x0, &cfg.psi0, &state0);
    let steps = step_count(cfg.h, cfg.horizon);

    let started = Instant::now();
    let mut rows = Vec::with_capacity(steps / cfg.decimation + 1);
    let mut events = Vec::new();
    let mut last_cases: Option<(ScalingCase, ScalingCase)> = None;
    let bound = cfg.blowup_bound;

    let on_node = |step: usize, t: f64, z: &[f64], _dz: &[f64]| -> NodeAction {
        let (x, psi, state) = sys.split(z);
        let row = (|| -> Result<TrajectoryRow> {
            let d = feedback.step(&state, Output::of(x))?;
            let eps = design.compute_epsilon(&state, x)?;
            let mu = model.dynamics.mu(t, x, psi, d.u);
            Ok(TrajectoryRow {
                t,
                x: x.to_vec(),
                psi: psi.to_vec(),
                xhat: state.xhat.clone(),
                zeta: state.zeta,
                r: state.r,
                r_u: state.r_u,
                theta_hat: state.theta_hat,
                u: d.u,
                u_tilde: d.u_tilde,
                u_d: mu - d.u_tilde,
                eps_norm: norm(&eps),
                varpi_norm: norm(&d.varpi),
                delta: delay.value(t),
                diagnostics: Some(d.diagnostics),
            })
        })();
        let mut row = match row {
            Ok(row) => row,
            Err(e) => {
                let status = match e {
                    Error::NumericFailure { term } => RunStatus::NumericFailure { t, term: term.to_string() },
                    other => RunStatus::NumericFailure { t, term: other.to_string() },
                };
                return NodeAction::Halt(status);
            }
        };
        let diag = row.diagnostics.expect("set above");
        let case = |v: f64, target: f64| if v >= target { ScalingCase::AtTarget } else { ScalingCase::Growing };
        let cases = (case(row.r, diag.r_target), case(row.r_u, diag.r_u_target));
        match last_cases {
            Some(prev) => {
                if prev.0 != cases.0 {
                    events.push(SimEvent::RCase { t, case: cases.0 });
                }
                if prev.1 != cases.1 {
                    events.push(SimEvent::RuCase { t, case: cases.1 });
                }
            }
            None => {
                events.push(SimEvent::RCase { t, case: cases.0 });
                events.push(SimEvent::RuCase { t, case: cases.1 });
            }
        }
        last_cases = Some(cases);
        // Signal blocks checked against the bound; the scaling parameters
        // only need to stay finite.
        let blocks: [(usize, f64); 4] = [
            (0, norm(&row.x)),
            (n, norm(&row.psi)),
            (n + n_psi, norm(&row.xhat)),
            (2 * n + n_psi - 1, row.zeta.abs().max(row.u.abs())),
        ];
        let blown = blocks.iter().find(|(_, v)| !(v.is_finite() && *v <= bound)).map(|(i, _)| *i);
        if !cfg.record_diagnostics {
            row.diagnostics = None;
        }
        let halted = blown.is_some();
        if step % cfg.decimation == 0 || halted {
            rows.push(row);
        }
        match blown {
            Some(index) => NodeAction::Halt(RunStatus::BlowUp { t, index }),
            None => NodeAction::Continue,
        }
    };
    let (status, evals) = integrate(&sys, 0.0, &z0, cfg.h, steps, initial, on_node);
    if !status.completed() {
        let t = match &status {
            RunStatus::BlowUp { t, .. } | RunStatus::NumericFailure { t, .. } => *t,
            RunStatus::Completed => unreachable!(),
        };
        events.push(SimEvent::Halted { t, status: status.clone() });
    }
    let terminal = rows
        .last()
        .map(|r| TerminalNorms { x: norm(&r.x), psi: norm(&r.psi), xhat: norm(&r.xhat) })
        .unwrap_or(TerminalNorms { x: f64::NAN, psi: f64::NAN, xhat: f64::NAN });
    let steps_done = rows.last().map_or(0, |r| (r.t / cfg.h).round() as usize);
    Ok(SimResult {
        n,
        n_psi,
        h: cfg.h,
        decimation: cfg.decimation,
        rows,
        status,
        events,
        terminal,
        stats: RunStats { steps: steps_done, rhs_evals: evals, wall_seconds: started.elapsed().as_secs_f64() },
    })
}

/// The plant alone, driven by a known input signal `u(t)`.
struct OpenLoop<'a, U: Fn(f64) -> f64> {
    model: &'a PlantModel,
    input: U,
}

impl<U: Fn(f64) -> f64> DelaySystem for OpenLoop<'_, U> {
    fn state_dim(&self) -> usize {
        self.model.n() + self.model.n_psi()
    }

    fn lag_dim(&self) -> usize {
        self.state_dim() + 1
    }

    fn delay(&self, t: f64) -> f64 {
        self.model.delay.value(t)
    }

    fn max_delay(&self) -> f64 {
        self.model.delay.max_delay()
    }

    fn lag_channels(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        let d = z.len();
        out[..d].copy_from_slice(z);
        out[d] = (self.input)(t);
        Ok(())
    }

    fn lag_rates(&self, t: f64, _z: &[f64], dz: &[f64], out: &mut [f64]) -> Result<()> {
        let d = dz.len();
        out[..d].copy_from_slice(dz);
        out[d] = crate::controller::central_difference(&self.input, t);
        Ok(())
    }

    fn rhs(&self, t: f64, z: &[f64], lagged: &[f64], dz: &mut [f64]) -> Result<()> {
        let n = self.model.n();
        let np = self.model.n_psi();
        let delayed = Delayed { x: &lagged[..n], psi: &lagged[n..n + np], u: lagged[n + np] };
        let (dx, dpsi) = dz.split_at_mut(n);
        self.model.rhs_into(t, &z[..n], &z[n..], (self.input)(t), delayed, dx, dpsi)
    }
}

/// Open-loop plant trajectory under the input `u(t)`; returns the terminal
/// `(x, ψ)`. Used for integrator self-convergence studies.
pub fn simulate_open_loop(
    model: &PlantModel,
    input: impl Fn(f64) -> f64,
    x0: &[f64],
    psi0: &[f64],
    h: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    if x0.len() != model.n() || psi0.len() != model.n_psi() {
        return Err(Error::InvalidSpec("initial state has the wrong dimension".into()));
    }
    let sys = OpenLoop { model, input };
    let z0: Vec<f64> = x0.iter().chain(psi0).copied().collect();
    let mut terminal = Vec::new();
    let steps = step_count(h, horizon);
    let (status, _) = integrate(&sys, 0.0, &z0, h, steps, InitialHistory::Constant, |k, _, z, _| {
        if k == steps {
            terminal = z.to_vec();
        }
        NodeAction::Continue
    });
    match status {
        RunStatus::Completed => Ok(terminal),
        RunStatus::BlowUp { t, index } => Err(Error::BlowUp { t, index }),
        RunStatus::NumericFailure { .. } => Err(Error::NumericFailure { term: "open loop" }),
    }
}
