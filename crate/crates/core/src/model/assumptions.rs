//! Sampled numerical checking of the standing assumptions on a plant and its
//! declared envelope. Each check reports its worst margin (bound minus actual);
//! a check passes when that margin is at least `-tolerance`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoundEnvelope, Delayed, Output, PlantModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampler {
    pub seed: u64,
    pub samples: usize,
    /// Each state component is drawn uniformly from `[-x_box, x_box]`.
    pub x_box: f64,
    pub psi_box: f64,
    pub u_box: f64,
    pub t_range: (f64, f64),
    pub x1_sweep: (f64, f64, usize),
    pub delay_sweep_points: usize,
    pub tolerance: f64,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            seed: 0,
            samples: 10_000,
            x_box: 5.0,
            psi_box: 5.0,
            u_box: 5.0,
            t_range: (0.0, 20.0),
            x1_sweep: (-10.0, 10.0, 2001),
            delay_sweep_points: 2001,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionMargin {
    pub id: String,
    pub margin: f64,
    /// Sample coordinates at which the worst margin occurred.
    pub worst_at: Vec<f64>,
    pub passed: bool,
    /// True when the check can only cover the sampled range of a limit statement.
    pub partial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub margins: Vec<AssumptionMargin>,
    /// Smallest observed `φ_(i,i+1)/φ_(i-1,i)` over the x1 sweep and where it occurred.
    pub min_ratio: Option<(f64, f64)>,
    pub passed: bool,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&AssumptionMargin> {
        self.margins.iter().find(|m| m.id == id)
    }
}

/// Central difference with relative step `1e-6 * max(1, |arg|)`.
fn central_diff<F: FnMut(f64) -> f64>(mut f: F, at: f64) -> f64 {
    let h = 1e-6 * at.abs().max(1.0);
    (f(at + h) - f(at - h)) / (2.0 * h)
}

struct Sample {
    t: f64,
    x: Vec<f64>,
    psi: Vec<f64>,
    u: f64,
    xd: Vec<f64>,
    psid: Vec<f64>,
    ud: f64,
}

impl Sample {
    fn coords(&self) -> Vec<f64> {
        let mut v = vec![self.t];
        v.extend(&self.x);
        v.extend(&self.psi);
        v.push(self.u);
        v.extend(&self.xd);
        v.extend(&self.psid);
        v.push(self.ud);
        v
    }
}

const SAMPLE_CHECKS: [&str; 11] =
    ["A2", "A4a", "A4b", "A4c", "A4d", "A4e", "A4-growth", "A5", "A5-gamma_s", "A5-alpha", "A5-k_psi"];

/// Per-check (margin, sample index) minimum, tie-broken by index so the merge
/// is independent of how work is partitioned.
type Worst = Vec<(f64, usize)>;

fn merge(a: Worst, b: Worst) -> Worst {
    a.into_iter()
        .zip(b)
        .map(|(p, q)| if q.0 < p.0 || (q.0 == p.0 && q.1 < p.1) { q } else { p })
        .collect()
}

fn sample_margins(model: &PlantModel, env: &BoundEnvelope, s: &Sample, u_box: f64) -> [f64; 11] {
    let n = model.n();
    let npsi = model.n_psi();
    let dyn_ = &model.dynamics;
    let fns = &env.functions;
    let theta = model.true_theta;
    let y = Output::of(&s.x);
    let yd = Output::of(&s.xd);
    let delayed = Delayed { x: &s.xd, psi: &s.psid, u: s.ud };
    let mu = |t: f64, x: &[f64], psi: &[f64], u: f64| dyn_.mu(t, x, psi, u);
    let mu0 = mu(s.t, &s.x, &s.psi, s.u);
    let sum_abs_tail = |x: &[f64]| x[1..].iter().map(|v| v.abs()).sum::<f64>();
    let sum_sq_tail = |x: &[f64]| x[1..].iter().map(|v| v * v).sum::<f64>();

    // A2, with the sum running over x_2..x_n.
    let mut phi = vec![0.0; n - 1];
    dyn_.phi_pert(s.t, &s.x, &mut phi);
    let a2_bound = fns.gamma(s.x[0]) * (theta * s.x[0].abs() + sum_abs_tail(&s.x));
    let a2 = phi.iter().map(|p| a2_bound - p.abs()).fold(f64::INFINITY, f64::min);

    let a4a = central_diff(|u| mu(s.t, &s.x, &s.psi, u), s.u) - env.mu_lower;
    let a4b = fns.mu_bar(y, s.u) - mu0.abs();

    let mut q = vec![0.0; npsi];
    dyn_.q_psi(s.t, &s.x, &s.psi, s.u, delayed, &mut q);
    let mut dmu_dpsi_q = 0.0;
    let mut psi_work = s.psi.clone();
    for k in 0..npsi {
        let base = psi_work[k];
        let g = central_diff(
            |p| {
                psi_work[k] = p;
                let v = mu(s.t, &s.x, &psi_work, s.u);
                psi_work[k] = base;
                v
            },
            base,
        );
        dmu_dpsi_q += g * q[k];
    }
    let inner = |x: &[f64], psi: &[f64]| {
        fns.mu_bar1a(x[0]) * (theta * x[0].abs() + sum_abs_tail(x)) + fns.mu_bar1_psi(psi)
    };
    let a4c = fns.mu_bar1(y, s.u) * (inner(&s.x, &s.psi) + inner(&s.xd, &s.psid)) - dmu_dpsi_q.abs();

    let dmu_dt = central_diff(|t| mu(t, &s.x, &s.psi, s.u), s.t);
    let a4d = fns.mu_tilde1(y, s.u) * (theta * s.x[0].abs() + sum_abs_tail(&s.x) + fns.mu_tilde1_psi(&s.psi))
        - dmu_dt.abs();

    let mut xw = s.x.clone();
    let mut grad_sq = 0.0;
    for k in 0..n {
        let base = xw[k];
        let g = central_diff(
            |v| {
                xw[k] = v;
                let r = mu(s.t, &xw, &s.psi, s.u);
                xw[k] = base;
                r
            },
            base,
        );
        grad_sq += g * g;
    }
    let a4e = fns.mu_bar2(y, s.u) + fns.mu_bar2_psi(&s.psi) - grad_sq.sqrt();

    let grow = |u: f64| mu(s.t, &s.x, &s.psi, u).abs();
    let a4_growth = (grow(u_box) - grow(0.5 * u_box)).min(grow(-u_box) - grow(-0.5 * u_box));

    let psi_norm = s.psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grad_v = vec![0.0; npsi];
    fns.v_psi_grad(&s.psi, &mut grad_v);
    let vdot: f64 = grad_v.iter().zip(&q).map(|(g, qq)| g * qq).sum();
    let supply = |x: &[f64], yy: Output, u: f64| {
        fns.gamma2(x[0]) * (theta * x[0] * x[0] + sum_sq_tail(x) + fns.gamma_s(yy, u))
    };
    let a5 = -fns.alpha_psi(psi_norm) + supply(&s.x, y, s.u) + supply(&s.xd, yd, s.ud) - vdot;

    let a5_gs = fns.gamma_s_bar(s.x[0]) * mu0 * mu0 - fns.gamma_s(y, s.u);
    let a5_alpha = fns.alpha_psi(psi_norm) - env.v_psi_lower * fns.v_psi(&s.psi);
    let psi_bounds = fns.mu_bar1_psi(&s.psi).powi(2) + fns.mu_tilde1_psi(&s.psi).powi(2) + fns.mu_bar2_psi(&s.psi).powi(2);
    let a5_k = env.k_psi_bar * fns.alpha_psi(psi_norm) - psi_bounds;

    [a2, a4a, a4b, a4c, a4d, a4e, a4_growth, a5, a5_gs, a5_alpha, a5_k]
}

fn envelope_min(env: &BoundEnvelope, s: &Sample) -> f64 {
    let f = &env.functions;
    let y = Output::of(&s.x);
    let psi_norm = s.psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    [
        f.gamma(s.x[0]),
        f.mu_bar(y, s.u),
        f.mu_bar1(y, s.u),
        f.mu_bar1a(s.x[0]),
        f.mu_tilde1(y, s.u),
        f.mu_bar2(y, s.u),
        f.gamma2(s.x[0]),
        f.gamma_s(y, s.u),
        f.gamma_s_bar(s.x[0]),
        f.alpha_psi(psi_norm),
        f.v_psi(&s.psi),
        f.mu_bar1_psi(&s.psi),
        f.mu_tilde1_psi(&s.psi),
        f.mu_bar2_psi(&s.psi),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// Samples the assumptions and reports the worst margin of each.
pub fn check_assumptions(model: &PlantModel, env: &BoundEnvelope, sampler: &Sampler) -> Result<AssumptionReport> {
    if sampler.samples == 0 || sampler.x1_sweep.2 == 0 || sampler.delay_sweep_points == 0 {
        return Err(Error::InvalidSpec("sampler must draw at least one point of each kind".into()));
    }
    let n = model.n();
    let npsi = model.n_psi();
    env.validate(n)?;
    let tol = sampler.tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut box_draw = |m: usize, r: f64| -> Vec<f64> { (0..m).map(|_| rng.gen_range(-r..=r)).collect() };
    let samples: Vec<Sample> = (0..sampler.samples)
        .map(|_| {
            let t = box_draw(1, 1.0)[0];
            let t = sampler.t_range.0 + 0.5 * (t + 1.0) * (sampler.t_range.1 - sampler.t_range.0);
            let x = box_draw(n, sampler.x_box);
            let psi = box_draw(npsi, sampler.psi_box);
            let u = box_draw(1, sampler.u_box)[0];
            let xd = box_draw(n, sampler.x_box);
            let psid = box_draw(npsi, sampler.psi_box);
            let ud = box_draw(1, sampler.u_box)[0];
            Sample { t, x, psi, u, xd, psid, ud }
        })
        .collect();

    let identity: Worst = vec![(f64::INFINITY, usize::MAX); SAMPLE_CHECKS.len() + 1];
    let worst = samples
        .par_iter()
        .enumerate()
        .fold(
            || identity.clone(),
            |acc, (idx, s)| {
                let mut m = sample_margins(model, env, s, sampler.u_box).to_vec();
                m.push(envelope_min(env, s));
                let here: Worst = m.into_iter().map(|v| (if v.is_nan() { f64::NEG_INFINITY } else { v }, idx)).collect();
                merge(acc, here)
            },
        )
        .reduce(|| identity.clone(), merge);

    let mut margins = Vec::new();
    let ids = SAMPLE_CHECKS.iter().copied().chain(std::iter::once("ENV"));
    for (id, (margin, idx)) in ids.zip(worst) {
        margins.push(AssumptionMargin {
            id: id.to_string(),
            margin,
            worst_at: samples.get(idx).map(Sample::coords).unwrap_or_default(),
            passed: margin >= -tol,
            partial: id == "A4-growth",
        });
    }

    // x1 sweep for A1 and A3.
    let (lo, hi, count) = sampler.x1_sweep;
    let sweep: Vec<f64> = if count == 1 {
        vec![lo]
    } else {
        (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
    };
    let mut a1 = (f64::INFINITY, f64::NAN);
    let mut a3 = (f64::INFINITY, f64::NAN);
    let mut min_ratio: Option<(f64, f64)> = None;
    for &x1 in &sweep {
        for i in 1..n {
            let m = model.phi_upper(i, x1) - env.sigma;
            if m < a1.0 {
                a1 = (m, x1);
            }
        }
        for (k, b) in env.ratio_bounds.iter().enumerate() {
            let i = k + 3;
            let ratio = model.phi_upper(i, x1) / model.phi_upper(i - 1, x1);
            let m = (ratio - b.lower).min(b.upper - ratio);
            if m < a3.0 {
                a3 = (m, x1);
            }
            if min_ratio.map_or(true, |(r, _)| ratio < r) {
                min_ratio = Some((ratio, x1));
            }
        }
    }
    margins.push(AssumptionMargin { id: "A1".into(), margin: a1.0, worst_at: vec![a1.1], passed: a1.0 >= -tol, partial: false });
    if !env.ratio_bounds.is_empty() {
        margins.push(AssumptionMargin { id: "A3".into(), margin: a3.0, worst_at: vec![a3.1], passed: a3.0 >= -tol, partial: false });
    }

    // Delay profile sweep.
    let (t0, t1) = sampler.t_range;
    let points = sampler.delay_sweep_points;
    let mut a6 = (f64::INFINITY, t0);
    let mut min_delay = f64::INFINITY;
    for k in 0..points {
        let t = if points == 1 { t0 } else { t0 + (t1 - t0) * k as f64 / (points - 1) as f64 };
        let m = env.delta_bar - model.delay.rate(t).abs();
        if m < a6.0 {
            a6 = (m, t);
        }
        min_delay = min_delay.min(model.delay.value(t));
    }
    let a6_ok = a6.0 >= -tol && env.delta_bar < 1.0 && min_delay >= 0.0;
    margins.push(AssumptionMargin { id: "A6".into(), margin: a6.0, worst_at: vec![a6.1], passed: a6_ok, partial: false });

    let passed = margins.iter().all(|m| m.passed);
    Ok(AssumptionReport { margins, min_ratio, passed })
}
