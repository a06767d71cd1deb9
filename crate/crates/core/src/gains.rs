//! Observer and controller gain synthesis under the parameterization
//! `g_i(x1) = g̃_i φ_(2,3)(x1)` and `k_i(x1) = k̃_i φ_(2,3)(x1)`.
//!
//! With this parameterization `A_o(x1) = φ_(2,3)(x1) Ã_o(ρ)` where `Ã_o` has
//! first column `-g̃` and superdiagonal `ρ_i = φ_(i+1,i+2)/φ_(2,3)`; the ratios
//! live in a box fixed by the cascading-dominance bounds. The same holds for the
//! controller matrix with last row `-k̃`. The Lyapunov inequalities are affine in
//! `ρ`, so the worst case over the box sits at a vertex and a grid that contains
//! the vertices certifies the whole box.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, lyap_form, poly_from_neg_roots, solve_lyapunov, sym_eigen};
use crate::model::{BoundEnvelope, UpperChain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    /// Pole magnitudes for the observer matrix at the reference ratios; empty
    /// selects `2, 3, 4, ...`.
    pub observer_poles: Vec<f64>,
    /// Empty selects `1, 1.5, 2, ...`.
    pub controller_poles: Vec<f64>,
    /// Grid points per varying ratio dimension.
    pub grid_per_dim: usize,
    /// Fraction of each certified eigenvalue bound held back as slack.
    pub reserve: f64,
    /// How many times the pole magnitudes may be doubled after a failed certificate.
    pub max_retries: usize,
    /// Supergradient iterations of the Lyapunov-matrix search.
    pub iterations: usize,
    /// Place poles at the geometric centre of the ratio box instead of at ρ = 1.
    pub center_reference: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            observer_poles: Vec::new(),
            controller_poles: Vec::new(),
            grid_per_dim: 50,
            reserve: 0.1,
            max_retries: 4,
            iterations: 4000,
            center_reference: true,
        }
    }
}

fn default_poles(m: usize, start: f64, step: f64) -> Vec<f64> {
    (0..m).map(|k| start + step * k as f64).collect()
}

mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Result of one side (observer or controller) of the synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideCertificate {
    pub gains: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub p: DMatrix<f64>,
    /// Minimum over the ratio grid of `-λ_max(P Ã(ρ) + Ã(ρ)^T P)`.
    pub grid_margin: f64,
    pub worst_rho: Vec<f64>,
    /// Extreme eigenvalues of `P D̃ + D̃ P`.
    pub coupling_eigs: (f64, f64),
    pub poles: Vec<f64>,
}

/// Certified gains, Lyapunov matrices and constants of both coupled pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub n: usize,
    /// `g̃_2..g̃_n`
    pub g_tilde: Vec<f64>,
    /// `k̃_2..k̃_n`
    pub k_tilde: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub p_o: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub p_c: DMatrix<f64>,
    pub nu_o: f64,
    pub nu_tilde_o: f64,
    pub nu_o_lower: f64,
    pub nu_o_upper: f64,
    pub nu_c: f64,
    pub nu_c_lower: f64,
    pub nu_c_upper: f64,
    pub g_bar: f64,
    /// Raw grid minima before the reserve is taken out.
    pub observer_grid_margin: f64,
    pub controller_grid_margin: f64,
}

impl GainSet {
    pub fn lambda_max_po(&self) -> f64 {
        lambda_max(&self.p_o)
    }

    pub fn lambda_max_pc(&self) -> f64 {
        lambda_max(&self.p_c)
    }

    /// `K(x1) = [k_2(x1), ..., k_n(x1)]`.
    pub fn k_row(&self, chain: &dyn UpperChain, x1: f64) -> Vec<f64> {
        let s = chain.scaling_phi(x1);
        self.k_tilde.iter().map(|k| k * s).collect()
    }

    pub fn g_col(&self, chain: &dyn UpperChain, x1: f64) -> Vec<f64> {
        let s = chain.scaling_phi(x1);
        self.g_tilde.iter().map(|g| g * s).collect()
    }

    /// All gains multiplied by `factor`; used to build negative controls.
    pub fn scaled(&self, factor: f64) -> GainSet {
        let mut out = self.clone();
        out.g_tilde.iter_mut().for_each(|g| *g *= factor);
        out.k_tilde.iter_mut().for_each(|k| *k *= factor);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.n.checked_sub(1).filter(|m| *m >= 1).ok_or_else(|| Error::InvalidSpec("gain set n < 2".into()))?;
        if self.g_tilde.len() != m || self.k_tilde.len() != m || self.p_o.nrows() != m || self.p_c.nrows() != m {
            return Err(Error::InvalidSpec("gain set dimensions inconsistent with n".into()));
        }
        let scalars = [
            self.nu_o, self.nu_tilde_o, self.nu_o_lower, self.nu_o_upper, self.nu_c, self.nu_c_lower,
            self.nu_c_upper, self.g_bar,
        ];
        let all_finite = scalars.iter().all(|v| v.is_finite())
            && self.g_tilde.iter().chain(&self.k_tilde).all(|v| v.is_finite())
            && self.p_o.iter().chain(self.p_c.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidSpec("gain set contains non-finite values".into()));
        }
        Ok(())
    }
}

/// `D̃ = diag(1, ..., m) - I/2`.
pub fn d_tilde(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { i as f64 + 0.5 } else { 0.0 })
}

/// Normalized observer matrix: first column `-g`, superdiagonal `rho`.
pub fn observer_matrix(g: &[f64], rho: &[f64]) -> DMatrix<f64> {
    let m = g.len();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, 0)] -= g[i];
    }
    for (i, r) in rho.iter().enumerate() {
        a[(i, i + 1)] += r;
    }
    a
}

/// Normalized controller matrix: last row `-k`, superdiagonal `rho`.
pub fn controller_matrix(k: &[f64], rho: &[f64]) -> DMatrix<f64> {
    let m = k.len();
    let mut a = DMatrix::zeros(m, m);
    for (i, r) in rho.iter().enumerate() {
        a[(i, i + 1)] += r;
    }
    for j in 0..m {
        a[(m - 1, j)] -= k[j];
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Observer,
    Controller,
}

impl Side {
    fn matrix(self, gains: &[f64], rho: &[f64]) -> DMatrix<f64> {
        match self {
            Side::Observer => observer_matrix(gains, rho),
            Side::Controller => controller_matrix(gains, rho),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::Observer => "observer",
            Side::Controller => "controller",
        }
    }
}

/// Gains placing the eigenvalues of the normalized matrix at `-poles` for the
/// superdiagonal `rho`.
fn place_poles(side: Side, poles: &[f64], rho: &[f64]) -> Vec<f64> {
    let m = poles.len();
    let c = poly_from_neg_roots(poles);
    // prefix[k] = rho_1 * ... * rho_k
    let mut prefix = vec![1.0; m];
    for k in 1..m {
        prefix[k] = prefix[k - 1] * rho[k - 1];
    }
    match side {
        // det(sI - A) = s^m + sum_k g_k (rho_1..rho_{k-1}) s^{m-k}
        Side::Observer => (0..m).map(|k| c[k] / prefix[k]).collect(),
        // det(sI - A) = s^m + sum_j k_{m-j+1} (rho_{m-j+1}..rho_{m-1}) s^{m-j}
        Side::Controller => {
            let mut k = vec![0.0; m];
            for j in 1..=m {
                let idx = m - j; // zero-based k index
                let tail: f64 = rho[idx..].iter().product();
                k[idx] = c[j - 1] / tail;
            }
            k
        }
    }
}

/// Ratio-box description: per superdiagonal entry, its interval.
pub fn ratio_box(env: &BoundEnvelope, m: usize) -> Vec<(f64, f64)> {
    (1..m).map(|i| env.superdiag_interval(i)).collect()
}

fn box_grid(bounds: &[(f64, f64)], per_dim: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for &(lo, hi) in bounds {
        let axis: Vec<f64> = if hi > lo && per_dim >= 2 {
            (0..per_dim).map(|k| lo + (hi - lo) * k as f64 / (per_dim - 1) as f64).collect()
        } else {
            vec![lo]
        };
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    points
}

fn box_vertices(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    box_grid(bounds, 2)
}

/// Minimum over `rhos` of `-λ_max(P A(ρ) + A(ρ)^T P)` and the minimizing ρ.
fn robust_margin(side: Side, gains: &[f64], p: &DMatrix<f64>, rhos: &[Vec<f64>]) -> (f64, Vec<f64>) {
    rhos.iter()
        .map(|rho| (-lambda_max(&lyap_form(p, &side.matrix(gains, rho))), rho.clone()))
        .fold((f64::INFINITY, Vec::new()), |acc, cur| if cur.0 < acc.0 { cur } else { acc })
}

/// Maximizes `min(robust margin at the vertices, λ_min(P D̃ + D̃ P))` over
/// symmetric `P` with unit trace by projected supergradient ascent.
fn search_lyapunov_matrix(
    side: Side,
    gains: &[f64],
    seed: DMatrix<f64>,
    vertices: &[Vec<f64>],
    iterations: usize,
) -> DMatrix<f64> {
    let m = gains.len();
    let dt = d_tilde(m);
    let mats: Vec<DMatrix<f64>> = vertices.iter().map(|rho| side.matrix(gains, rho)).collect();
    let normalize = |p: DMatrix<f64>| {
        let s = crate::linalg::symmetrize(&p);
        let tr = s.trace();
        s / tr
    };
    // Objective and a supergradient of the active term.
    let evaluate = |p: &DMatrix<f64>| -> (f64, DMatrix<f64>) {
        let mut best = (f64::INFINITY, DMatrix::zeros(m, m));
        for a in &mats {
            let l = -lyap_form(p, a);
            let (vals, vecs) = sym_eigen(&l);
            if vals[0] < best.0 {
                let v = vecs.column(0).into_owned();
                let vvt = &v * v.transpose();
                best = (vals[0], -(a * &vvt + &vvt * a.transpose()));
            }
        }
        let (vals, vecs) = sym_eigen(&lyap_form(p, &dt));
        if vals[0] < best.0 {
            let v = vecs.column(0).into_owned();
            let vvt = &v * v.transpose();
            best = (vals[0], &dt * &vvt + &vvt * &dt);
        }
        best
    };
    let mut p = normalize(seed);
    let (mut best_val, _) = evaluate(&p);
    let mut best_p = p.clone();
    for k in 0..iterations {
        let (_, g) = evaluate(&p);
        // Remove the trace direction so the step stays on tr(P) = 1.
        let g = &g - DMatrix::identity(m, m) * (g.trace() / m as f64);
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        let step = 0.05 / (1.0 + k as f64).sqrt();
        p = normalize(&p + g * (step / gn));
        let (val, _) = evaluate(&p);
        if val > best_val {
            best_val = val;
            best_p = p.clone();
        }
    }
    best_p
}

fn synthesize_side(side: Side, env: &BoundEnvelope, n: usize, opts: &SynthesisOptions) -> Result<SideCertificate> {
    if n < 2 {
        return Err(Error::InvalidSpec("n must be at least 2".into()));
    }
    env.validate(n)?;
    let m = n - 1;
    let bounds = ratio_box(env, m);
    let reference: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| if opts.center_reference { (lo * hi).sqrt() } else { 1.0 })
        .collect();
    let base_poles = match side {
        Side::Observer if !opts.observer_poles.is_empty() => opts.observer_poles.clone(),
        Side::Controller if !opts.controller_poles.is_empty() => opts.controller_poles.clone(),
        Side::Observer => default_poles(m, 2.0, 1.0),
        Side::Controller => default_poles(m, 1.0, 0.5),
    };
    if base_poles.len() != m || base_poles.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidSpec(format!("{} poles: need {m} positive magnitudes", side.name())));
    }
    let vertices = box_vertices(&bounds);
    let grid = box_grid(&bounds, opts.grid_per_dim.max(2));
    let dt = d_tilde(m);
    let mut last_failure = (f64::NEG_INFINITY, Vec::new());
    for attempt in 0..=opts.max_retries {
        let scale = 2f64.powi(attempt as i32);
        let poles: Vec<f64> = base_poles.iter().map(|p| p * scale).collect();
        let gains = place_poles(side, &poles, &reference);
        let a_ref = side.matrix(&gains, &reference);
        let seed = solve_lyapunov(&a_ref, &DMatrix::identity(m, m))?;
        let p = search_lyapunov_matrix(side, &gains, seed, &vertices, opts.iterations);
        let (margin, worst_rho) = robust_margin(side, &gains, &p, &grid);
        let coupling = sym_eigen(&lyap_form(&p, &dt)).0;
        let coupling_eigs = (coupling[0], coupling[m - 1]);
        if margin > 0.0 && coupling_eigs.0 > 0.0 && lambda_min(&p) > 0.0 {
            return Ok(SideCertificate { gains, p, grid_margin: margin, worst_rho, coupling_eigs, poles });
        }
        let score = margin.min(coupling_eigs.0);
        if score > last_failure.0 {
            last_failure = (score, worst_rho);
        }
    }
    Err(Error::SynthesisFailure { context: side.name(), margin: last_failure.0, worst_rho: last_failure.1 })
}

pub struct ObserverSynthesis {
    pub g_tilde: Vec<f64>,
    pub p_o: DMatrix<f64>,
    pub nu_tilde_grid: f64,
    pub nu_o: f64,
    pub nu_tilde_o: f64,
    pub nu_o_lower: f64,
    pub nu_o_upper: f64,
    pub g_bar: f64,
    pub certificate: SideCertificate,
}

/// Observer-context gains. `ν̃` is the grid minimum; with the reserve `r`,
/// `ν_o = σ(1-r)ν̃/2` and `ν̃_o = (1-r)ν̃/2`.
pub fn synthesize_observer_gains(env: &BoundEnvelope, n: usize, opts: &SynthesisOptions) -> Result<ObserverSynthesis> {
    let cert = synthesize_side(Side::Observer, env, n, opts)?;
    let keep = 1.0 - opts.reserve;
    let nu = keep * cert.grid_margin;
    Ok(ObserverSynthesis {
        g_tilde: cert.gains.clone(),
        p_o: cert.p.clone(),
        nu_tilde_grid: cert.grid_margin,
        nu_o: env.sigma * nu / 2.0,
        nu_tilde_o: nu / 2.0,
        nu_o_lower: keep * cert.coupling_eigs.0,
        nu_o_upper: cert.coupling_eigs.1 / keep,
        g_bar: cert.gains.iter().map(|g| g * g).sum::<f64>().sqrt(),
        certificate: cert,
    })
}

pub struct ControllerSynthesis {
    pub k_tilde: Vec<f64>,
    pub p_c: DMatrix<f64>,
    pub nu_c_grid: f64,
    pub nu_c: f64,
    pub nu_c_lower: f64,
    pub nu_c_upper: f64,
    pub certificate: SideCertificate,
}

pub fn synthesize_controller_gains(env: &BoundEnvelope, n: usize, opts: &SynthesisOptions) -> Result<ControllerSynthesis> {
    let cert = synthesize_side(Side::Controller, env, n, opts)?;
    let keep = 1.0 - opts.reserve;
    Ok(ControllerSynthesis {
        k_tilde: cert.gains.clone(),
        p_c: cert.p.clone(),
        nu_c_grid: cert.grid_margin,
        nu_c: keep * cert.grid_margin,
        nu_c_lower: keep * cert.coupling_eigs.0,
        nu_c_upper: cert.coupling_eigs.1 / keep,
        certificate: cert,
    })
}

pub fn synthesize(env: &BoundEnvelope, n: usize, opts: &SynthesisOptions) -> Result<GainSet> {
    let o = synthesize_observer_gains(env, n, opts)?;
    let c = synthesize_controller_gains(env, n, opts)?;
    Ok(GainSet {
        n,
        g_tilde: o.g_tilde,
        k_tilde: c.k_tilde,
        p_o: o.p_o,
        p_c: c.p_c,
        nu_o: o.nu_o,
        nu_tilde_o: o.nu_tilde_o,
        nu_o_lower: o.nu_o_lower,
        nu_o_upper: o.nu_o_upper,
        nu_c: c.nu_c,
        nu_c_lower: c.nu_c_lower,
        nu_c_upper: c.nu_c_upper,
        g_bar: o.g_bar,
        observer_grid_margin: o.nu_tilde_grid,
        controller_grid_margin: c.nu_c_grid,
    })
}

/// Worst eigen-margins of the four inequalities over a direct `x1` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    /// `λ_min(-(P_o A_o + A_o^T P_o) - ν_o I - ν̃_o φ_(2,3) C^T C)`
    pub observer_decay: f64,
    pub observer_decay_at: f64,
    /// `min(λ_min(S_o) - ν̲_o, ν̄_o - λ_max(S_o), ν̲_o)` with `S_o = P_o D̃ + D̃ P_o`.
    pub observer_coupling: f64,
    /// `λ_min(-(P_c A_c + A_c^T P_c) - ν_c φ_(2,3) I)`
    pub controller_decay: f64,
    pub controller_decay_at: f64,
    pub controller_coupling: f64,
    /// `min(ḡ φ_(2,3) - |G|)` over the sweep.
    pub g_bar_slack: f64,
    pub grid: usize,
}

impl CouplingReport {
    pub fn margins(&self) -> [f64; 4] {
        [self.observer_decay, self.observer_coupling, self.controller_decay, self.controller_coupling]
    }

    pub fn passed(&self) -> bool {
        self.margins().iter().all(|m| *m > 0.0)
    }
}

/// `A_o(x1)` from the actual upper-diagonal functions.
pub fn observer_matrix_at(gains: &GainSet, chain: &dyn UpperChain, x1: f64) -> DMatrix<f64> {
    let m = gains.n - 1;
    let rho: Vec<f64> = (1..m).map(|i| chain.phi_upper(i + 1, x1)).collect();
    observer_matrix(&gains.g_col(chain, x1), &rho)
}

/// `A_c(x1)` from the actual upper-diagonal functions.
pub fn controller_matrix_at(gains: &GainSet, chain: &dyn UpperChain, x1: f64) -> DMatrix<f64> {
    let m = gains.n - 1;
    let rho: Vec<f64> = (1..m).map(|i| chain.phi_upper(i + 1, x1)).collect();
    controller_matrix(&gains.k_row(chain, x1), &rho)
}

pub fn verify_coupled_lyapunov(
    gains: &GainSet,
    chain: &dyn UpperChain,
    x1_range: (f64, f64),
    grid: usize,
) -> Result<CouplingReport> {
    let (lo, hi) = x1_range;
    if grid == 0 || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidSpec("verify_coupled_lyapunov needs a nonempty finite range".into()));
    }
    gains.validate()?;
    let m = gains.n - 1;
    let eye = DMatrix::<f64>::identity(m, m);
    let mut ctc = DMatrix::<f64>::zeros(m, m);
    ctc[(0, 0)] = 1.0;
    let dt = d_tilde(m);

    let mut report = CouplingReport {
        observer_decay: f64::INFINITY,
        observer_decay_at: lo,
        observer_coupling: 0.0,
        controller_decay: f64::INFINITY,
        controller_decay_at: lo,
        controller_coupling: 0.0,
        g_bar_slack: f64::INFINITY,
        grid,
    };
    for k in 0..grid {
        let x1 = if grid == 1 { lo } else { lo + (hi - lo) * k as f64 / (grid - 1) as f64 };
        let s = chain.scaling_phi(x1);
        let ao = observer_matrix_at(gains, chain, x1);
        let lo_mat = -lyap_form(&gains.p_o, &ao) - &eye * gains.nu_o - &ctc * (gains.nu_tilde_o * s);
        let v = lambda_min(&lo_mat);
        if v < report.observer_decay {
            report.observer_decay = v;
            report.observer_decay_at = x1;
        }
        let ac = controller_matrix_at(gains, chain, x1);
        let lc_mat = -lyap_form(&gains.p_c, &ac) - &eye * (gains.nu_c * s);
        let v = lambda_min(&lc_mat);
        if v < report.controller_decay {
            report.controller_decay = v;
            report.controller_decay_at = x1;
        }
        let g_norm = gains.g_col(chain, x1).iter().map(|g| g * g).sum::<f64>().sqrt();
        report.g_bar_slack = report.g_bar_slack.min(gains.g_bar * s - g_norm);
    }
    let coupling = |p: &DMatrix<f64>, lower: f64, upper: f64| {
        let e = sym_eigen(&lyap_form(p, &dt)).0;
        (e[0] - lower).min(upper - e[m - 1]).min(lower)
    };
    report.observer_coupling = coupling(&gains.p_o, gains.nu_o_lower, gains.nu_o_upper);
    report.controller_coupling = coupling(&gains.p_c, gains.nu_c_lower, gains.nu_c_upper);
    Ok(report)
}
