//! A second, independent transcription of the controller's design functions.
//! The oracle writes every formula out longhand with closed-form plant
//! functions; only the envelope bounds and the two numerical derivatives are
//! shared inputs.

use delayscale::controller::{Controller, ControllerState, PointTerms};
use delayscale::model::Output;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 100;
pub const TOL: f64 = 1e-12;

/// One library value against its oracle value.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub name: &'static str,
    pub library: f64,
    pub oracle: f64,
    /// `|library - oracle| / max(scale, |library|, |oracle|)`
    pub error: f64,
}

impl Comparison {
    pub fn new(name: &'static str, library: f64, oracle: f64, scale: f64) -> Self {
        let s = scale.max(library.abs()).max(oracle.abs()).max(f64::MIN_POSITIVE);
        Comparison { name, library, oracle, error: (library - oracle).abs() / s }
    }

    pub fn ok(&self) -> bool {
        self.error <= TOL
    }
}

pub fn phi(i: usize, x: f64) -> f64 {
    match i {
        1 => 1.0 + x * x,
        2 => 1.0 + x + x * x,
        3 => 1.0 + 2.0 * x * x,
        _ => unreachable!(),
    }
}

fn big_f(x: f64) -> f64 {
    x + 0.5 * (1.0 + x * x).ln()
}

#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub x1: f64,
    pub xn: f64,
    pub u: f64,
    pub r: f64,
    pub r_dot: f64,
    pub th: f64,
    pub th_dot: f64,
    pub varpi: [f64; 3],
    pub r_u: f64,
    pub xhat: [f64; 3],
}

pub fn samples(a_theta: f64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    (0..POINTS)
        .map(|_| Sample {
            x1: rng.gen_range(-2.0..2.0),
            xn: rng.gen_range(-2.0..2.0),
            u: rng.gen_range(-3.0..3.0),
            r: rng.gen_range(1.0..20.0),
            r_dot: rng.gen_range(0.0..50.0),
            th: a_theta + rng.gen_range(0.0..3.0),
            th_dot: rng.gen_range(0.0..5.0),
            varpi: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            r_u: rng.gen_range(1.0..5.0),
            xhat: [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
        })
        .collect()
}

/// Everything the oracle needs that is not a formula under test.
struct Inputs<'a> {
    c: &'a Controller,
    /// `|∂K/∂x1|` and `ϑ_1'` as the library approximates them.
    k_prime: f64,
    vt1_prime: f64,
}

pub struct Oracle<'a> {
    inp: Inputs<'a>,
    x1: f64,
}

impl Oracle<'_> {
    fn n(&self) -> f64 {
        4.0
    }
    fn lpo(&self) -> f64 {
        self.inp.c.gains().lambda_max_po()
    }
    fn lpc(&self) -> f64 {
        self.inp.c.gains().lambda_max_pc()
    }
    fn gamma(&self) -> f64 {
        self.inp.c.envelope().functions.gamma(self.x1)
    }
    fn gamma2(&self) -> f64 {
        self.inp.c.envelope().functions.gamma2(self.x1)
    }
    fn mu1a(&self) -> f64 {
        self.inp.c.envelope().functions.mu_bar1a(self.x1)
    }
    fn k_norm(&self) -> f64 {
        let k = &self.inp.c.gains().k_tilde;
        (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt() * phi(2, self.x1)
    }
    fn g_norm(&self) -> f64 {
        let g = &self.inp.c.gains().g_tilde;
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt() * phi(2, self.x1)
    }
    fn ac_norm(&self) -> f64 {
        let x = self.x1;
        (phi(2, x).powi(2) + phi(3, x).powi(2) + self.k_norm().powi(2)).sqrt()
    }

    fn q1(&self) -> f64 {
        let (p12, p23) = (phi(1, self.x1), phi(2, self.x1));
        let g = self.inp.c.gains();
        let c = self.inp.c.params().c;
        4.0 / (c * g.nu_o) * p12 * p12 + 8.0 / (g.nu_c * p23) * p12 * p12 + self.lpc() * self.lpc() + 2.0
    }
    fn q2(&self) -> f64 {
        let (p12, p23) = (phi(1, self.x1), phi(2, self.x1));
        let g = self.inp.c.gains();
        let c = self.inp.c.params().c;
        let gam = self.gamma();
        let gb = g.g_bar;
        2.0 * gam + 1.0 + 8.0 * self.lpc().powi(2) * gb * gb * p23 / g.nu_c * gam * gam / (p12 * p12)
            + 8.0 * self.n() / (c * g.nu_o) * self.lpo().powi(2) * gam * gam * (1.0 + gb * gb * p23 * p23 / (p12 * p12))
    }
    fn qb2(&self) -> f64 {
        self.q2() + self.inp.c.params().c_psi_tilde * self.gamma2()
    }
    fn vt1(&self) -> f64 {
        let t = &self.inp.c.params().tuning;
        4.0 / phi(1, self.x1) * ((self.q1() + t.vartheta1_star) / t.a_theta + self.qb2())
    }
    fn beta4(&self) -> f64 {
        let x = self.x1;
        phi(1, x) + self.k_norm() + phi(2, x) + phi(3, x) + self.n().powf(1.5) * self.gamma()
    }
    fn beta5(&self, th: f64) -> f64 {
        phi(1, self.x1) * th * self.vt1() + self.n() * self.gamma() * th * self.vt1()
    }
    fn beta6(&self) -> f64 {
        (self.n() + 1.0) * self.gamma()
    }
    fn beta7(&self) -> f64 {
        1.5 * self.inp.k_prime * phi(1, self.x1)
    }
    fn beta8(&self) -> f64 {
        self.inp.k_prime * self.gamma()
    }
    fn w_tilde1(&self) -> f64 {
        let t = &self.inp.c.params().tuning;
        t.c1 * (1.0 + self.mu1a().powi(2)) + self.beta7() + self.beta4().powi(2) / t.c_psi2 + self.beta8().powi(2) / (2.0 * t.c4)
    }
    fn q_tilde1(&self, th: f64) -> f64 {
        let t = &self.inp.c.params().tuning;
        t.c2 * (1.0 + th * th * self.vt1().powi(2) * self.mu1a().powi(2)) + self.beta5(th).powi(2) / (2.0 * t.c_psi2)
    }
    fn q_tilde2(&self) -> f64 {
        let t = &self.inp.c.params().tuning;
        t.c3 * (1.0 + self.mu1a().powi(2)) + self.beta6().powi(2) / (2.0 * t.c_psi2) + t.c4 / 2.0
    }
    fn slope(&self) -> f64 {
        self.vt1() + self.inp.vt1_prime * self.x1
    }
    fn w1(&self, th: f64, th_dot: f64) -> f64 {
        let p12 = phi(1, self.x1);
        let vt1 = self.vt1();
        let dvt = th * self.slope();
        3.0 * self.lpc() * dvt.abs() * p12
            + vt1 * vt1 * th_dot * th_dot
            + self.lpc().powi(2) * th * th * self.slope().powi(2) * (self.gamma().powi(2) + p12 * p12 * vt1 * vt1)
            + 3.0 * self.lpo() * (self.n() + self.n() * self.n()) * self.gamma()
            + self.n() * self.lpo().powi(2) * th * th * vt1 * vt1
    }
    fn w_bar1(&self, th: f64, th_dot: f64) -> f64 {
        let p = self.inp.c.params();
        self.w1(th, th_dot)
            + self.lpo().powi(2) * p.c * p.c
            + p.tuning.c_u * (self.w_tilde1() + p.tuning.c1 * p.delta_tilde * self.mu1a().powi(2))
            + 3.0 * p.c_psi_tilde * self.gamma2()
    }
    fn w_bar2(&self) -> f64 {
        let gs = self.inp.c.envelope().functions.gamma_s_bar(self.x1);
        2.0 * self.inp.c.params().c_psi_tilde * gs * self.gamma2() * self.k_norm().powi(2)
    }
    fn qb3(&self, th: f64) -> f64 {
        3.0 * self.inp.c.params().c_psi_tilde * self.gamma2() * th * th
    }
    fn qb4(&self, th: f64) -> f64 {
        let p = self.inp.c.params();
        p.tuning.c_u * (self.q_tilde1(th) + p.tuning.c2 * p.delta_tilde * th * th * self.vt1().powi(2) * self.mu1a().powi(2))
    }
    fn qb5(&self) -> f64 {
        let p = self.inp.c.params();
        p.tuning.c_u * (self.q_tilde2() + p.tuning.c3 * p.delta_tilde * self.mu1a().powi(2))
    }
    fn theta_dot(&self, r: f64) -> f64 {
        self.inp.c.params().tuning.c_theta * (self.qb2() + self.qb5() / r) * self.x1 * self.x1
    }
    fn big_r(&self, th: f64, th_dot: f64) -> f64 {
        let p = self.inp.c.params();
        let p12 = phi(1, self.x1);
        let cands = [
            p.tuning.r_bar,
            16.0 * p.nu_a * self.w_bar1(th, th_dot),
            (16.0 * p.nu_a * self.w_bar2()).powi(2),
            (4.0 * self.qb3(th) * self.vt1() / (th * p12)).powi(2),
            4.0 * (self.qb4(th) + th * self.qb5()) / (th * p12 * self.vt1()),
        ];
        cands.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
    fn big_omega(&self, th: f64, th_dot: f64, r: f64) -> f64 {
        let p = self.inp.c.params();
        let cands = [
            p.tuning.omega_bar,
            2.0 * p.nu_b * r * self.w_bar1(th, th_dot),
            2.0 * p.nu_b * r.powf(1.5) * self.w_bar2(),
            2.0 * (self.qb3(th) * self.vt1().powi(2) * r.powf(1.5) + r * self.qb4(th) + th * r * self.qb5()),
        ];
        cands.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn mu2(&self, s: &Sample) -> f64 {
        self.inp.c.envelope().functions.mu_bar2(Output { x1: s.x1, xn: s.xn }, s.u)
    }
    fn beta1(&self, s: &Sample) -> f64 {
        let (r, x) = (s.r, self.x1);
        let n = self.n();
        let kn = self.k_norm();
        let dc = (1.0f64 + 4.0 + 9.0).sqrt();
        self.mu2(s) * (r * phi(1, x) + r.powf(n) * kn + phi(2, x) * r * r + phi(3, x) * r * r * r + r.powf(n - 1.0) * n.powf(1.5) * self.gamma())
            + n * r.powf(n - 1.0) * s.r_dot * kn
            + r.powf(n - 1.0) * s.r_dot * kn * dc
            + r.powf(n) * self.inp.k_prime * (s.th * self.vt1() * x).abs() * phi(1, x)
            + r.powf(n + 1.0) * kn * self.ac_norm()
            + r.powf(n + 1.0) * kn * self.g_norm()
            + r.powf(n) * kn * s.th * self.slope().abs() * phi(1, x)
    }
    fn beta2(&self, s: &Sample) -> f64 {
        let n = self.n();
        let p12 = phi(1, self.x1);
        let vt1 = self.vt1();
        self.mu2(s) * s.th * vt1 * (p12 + n * self.gamma())
            + s.r.powf(n - 1.0) * self.k_norm() * s.th * s.th * self.slope().abs() * p12 * vt1.abs()
            + s.r.powf(n - 1.0) * self.k_norm() * (s.th_dot * vt1).abs()
    }
    fn beta3(&self, s: &Sample) -> f64 {
        let n = self.n();
        (n + 1.0) * self.mu2(s) * self.gamma()
            + s.r.powf(n) * self.k_norm() * self.g_norm() / phi(1, self.x1) * self.gamma()
            + s.r.powf(n - 1.0) * self.k_norm() * s.th * self.slope().abs() * self.gamma()
    }
    fn xi_u1(&self, s: &Sample) -> f64 {
        let t = &self.inp.c.params().tuning;
        let e = &self.inp.c.envelope().functions;
        let y = Output { x1: s.x1, xn: s.xn };
        let n = self.n();
        let r = s.r;
        let mt = e.mu_bar1(y, s.u) + e.mu_tilde1(y, s.u);
        self.mu2(s) / r.powf(n)
            + 1.0 / (2.0 * t.c_psi1 * r.powf(1.5))
            + self.beta1(s).powi(2) / (2.0 * t.c1 * r.powf(2.0 * n + 1.0))
            + mt * mt / (t.c_psi1 * r.powf(1.5))
            + self.beta2(s).powi(2) / (4.0 * t.c2 * r.powf(2.0 * n - 1.0))
            + self.beta3(s).powi(2) / (4.0 * t.c3 * r.powf(2.0 * n - 1.0))
            + (1.0 / (2.0 * t.c3 * r.powf(2.0 * n - 1.0)) + n / (t.c1 * r.powf(3.0)) + 1.0 / (2.0 * t.c2 * r.powf(2.0 * n - 1.0))) * mt * mt
    }
    fn u_d_bar(&self, s: &Sample) -> f64 {
        let mu = self.inp.c.envelope().functions.mu_bar(Output { x1: s.x1, xn: s.xn }, s.u);
        let w = s.varpi;
        mu + s.r.powf(self.n()) * self.k_norm() * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt()
    }
    fn xi_u2_bar(&self, s: &Sample) -> f64 {
        let n = self.n();
        let gs = self.inp.c.envelope().functions.gamma_s_bar(self.x1);
        let ud = self.u_d_bar(s);
        (1.0 / s.r.powf(2.0 * n - 3.0) + 2.0 * self.inp.c.params().c_psi_tilde * self.gamma2() * gs / s.r.powf(2.0 * n - 1.5))
            * (1.0 + ud * ud)
    }
    fn r_u_target(&self, s: &Sample) -> f64 {
        let p = self.inp.c.params();
        let mu_l = self.inp.c.envelope().mu_lower;
        let rn = s.r.powf(self.n());
        let xi1 = p.tuning.c_u * self.xi_u1(s);
        let ud = self.u_d_bar(s);
        p.tuning
            .r_u_bar
            .max(4.0 * rn * xi1 / (p.tuning.c_u * mu_l))
            .max(8.0 * rn * 2.0 * (self.xi_u2_bar(s) + p.tuning.nu_u) * (1.0 + ud * ud) / (p.tuning.c_u * mu_l))
    }
    fn omega_u(&self, s: &Sample) -> f64 {
        let t = &self.inp.c.params().tuning;
        let pi = (t.pi_k * s.r_u).tanh() + 1.0;
        let pi_p = t.pi_k / (t.pi_k * s.r_u).cosh().powi(2);
        let xi1 = t.c_u * self.xi_u1(s);
        t.omega_u_bar.max(2.0 * pi * pi * s.r.powf(self.n()) / (t.c_u * pi_p) * (xi1 / pi + self.xi_u2_bar(s) + t.nu_u))
    }

    /// Observer right-hand side; returns the value and the sum of magnitudes
    /// of its terms, the natural scale for cancellation.
    fn observer(&self, s: &Sample, r_dot: f64, u_tilde: f64) -> Vec<(f64, f64)> {
        let (x, r) = (self.x1, s.r);
        let g = &self.inp.c.gains().g_tilde;
        let f = |i: usize| g[i - 2] * big_f(x);
        let gi = |i: usize| g[i - 2] * phi(2, x);
        let xh = |i: usize| s.xhat[i - 2];
        let inj = xh(2) + r * f(2);
        (2..=4)
            .map(|i| {
                let ii = i as f64;
                let lead = if i < 4 { phi(i, x) * (xh(i + 1) + r.powf(ii) * f(i + 1)) } else { u_tilde };
                let b = r.powf(ii - 1.0) * gi(i) * inj;
                let c = (ii - 1.0) * r_dot * r.powf(ii - 2.0) * f(i);
                (lead - b - c, lead.abs() + b.abs() + c.abs())
            })
            .collect()
    }
    fn varpi(&self, s: &Sample) -> [f64; 3] {
        let (x, r) = (self.x1, s.r);
        let g = &self.inp.c.gains().g_tilde;
        let vt = s.th * x * self.vt1();
        [
            (s.xhat[0] + r * g[0] * big_f(x) + vt) / r,
            (s.xhat[1] + r * r * g[1] * big_f(x)) / (r * r),
            (s.xhat[2] + r * r * r * g[2] * big_f(x)) / (r * r * r),
        ]
    }
    fn u_tilde(&self, r: f64, varpi: &[f64; 3]) -> f64 {
        let k = &self.inp.c.gains().k_tilde;
        let s = phi(2, self.x1);
        -r.powi(4) * (k[0] * s * varpi[0] + k[1] * s * varpi[1] + k[2] * s * varpi[2])
    }
}


pub fn oracle<'a>(c: &'a Controller, pt: &PointTerms) -> Oracle<'a> {
    Oracle { inp: Inputs { c, k_prime: pt.k_prime_norm, vt1_prime: pt.vartheta1_prime }, x1: pt.x1 }
}

/// Functions of `x1` and `θ̂` alone, the `q`/`w` families and `R`, `Ω`.
pub fn point_functions(c: &Controller) -> Vec<Comparison> {
    let mut out = Vec::new();
    for s in samples(c.params().tuning.a_theta) {
        let pt = c.point_terms(s.x1);
        let o = oracle(c, &pt);
        let mut push = |name, lib, ora| out.push(Comparison::new(name, lib, ora, 0.0));
        push("phi12", pt.phi12, phi(1, s.x1));
        push("|K|", pt.k_norm, o.k_norm());
        push("|G|", pt.g_norm, o.g_norm());
        push("|A_c|", pt.ac_norm, o.ac_norm());
        push("q1", pt.q1, o.q1());
        push("q2", pt.q2, o.q2());
        push("qbar2", pt.qbar2, o.qb2());
        push("vartheta1", pt.vartheta1, o.vt1());
        push("beta4", pt.beta4, o.beta4());
        push("beta5", c.beta5(&pt, s.th), o.beta5(s.th));
        push("beta6", pt.beta6, o.beta6());
        push("beta7", pt.beta7, o.beta7());
        push("beta8", pt.beta8, o.beta8());
        push("w_tilde1", pt.w_tilde1, o.w_tilde1());
        push("q_tilde1", c.q_tilde1(&pt, s.th), o.q_tilde1(s.th));
        push("q_tilde2", pt.q_tilde2, o.q_tilde2());
        push("w1", c.w1(&pt, s.th, s.th_dot), o.w1(s.th, s.th_dot));
        push("w_bar1", c.w_bar1(&pt, s.th, s.th_dot), o.w_bar1(s.th, s.th_dot));
        push("w_bar2", pt.w_bar2, o.w_bar2());
        push("qbar3", c.qbar3(&pt, s.th), o.qb3(s.th));
        push("qbar4", c.qbar4(&pt, s.th), o.qb4(s.th));
        push("qbar5", pt.qbar5, o.qb5());
        push("theta_hat_dot", c.compute_theta_hat_dot(&pt, s.r), o.theta_dot(s.r));
        push("R", c.r_target(&pt, s.th, s.th_dot), o.big_r(s.th, s.th_dot));
        push("Omega", c.omega(&pt, s.th, s.th_dot, s.r), o.big_omega(s.th, s.th_dot, s.r));
    }
    out
}

/// `β_1..β_3`, the `Ξ` terms and the input-scaling law.
pub fn input_channel(c: &Controller) -> Vec<Comparison> {
    let mut out = Vec::new();
    for s in samples(c.params().tuning.a_theta) {
        let pt = c.point_terms(s.x1);
        let o = oracle(c, &pt);
        let y = Output { x1: s.x1, xn: s.xn };
        let (xi, _) = c.xi_u1(&pt, y, s.u, s.r, s.r_dot, s.th, s.th_dot);
        let udb = c.u_d_bar(&pt, y, s.u, s.r, &s.varpi);
        let rate = c.compute_r_u_dot(&pt, y, s.u, s.r, s.r_dot, s.th, s.th_dot, &s.varpi, s.r_u);
        let mut push = |name, lib, ora| out.push(Comparison::new(name, lib, ora, 0.0));
        push("beta1", c.beta1(&pt, y, s.u, s.r, s.r_dot, s.th), o.beta1(&s));
        push("beta2", c.beta2(&pt, y, s.u, s.r, s.th, s.th_dot), o.beta2(&s));
        push("beta3", c.beta3(&pt, y, s.u, s.r, s.th), o.beta3(&s));
        push("Xi_u1", xi, o.xi_u1(&s));
        push("u_d_bar", udb, o.u_d_bar(&s));
        push("Xi_u2_bar", c.xi_u2_bar(&pt, s.r, udb), o.xi_u2_bar(&s));
        match rate {
            Ok((rate, diag)) => {
                push("R_u", rate.target, o.r_u_target(&s));
                push("Omega_u", rate.omega, o.omega_u(&s));
                push("Xi_u1_bar", diag.xi_u1_bar, c.params().tuning.c_u * o.xi_u1(&s));
            }
            Err(_) => push("R_u", f64::NAN, o.r_u_target(&s)),
        }
    }
    out
}

/// Observer right-hand side, `ϖ` and `ũ`. The library's observer integral is
/// a quadrature; the oracle uses its closed form.
pub fn observer(c: &Controller) -> Vec<Comparison> {
    let mut out = Vec::new();
    for s in samples(c.params().tuning.a_theta) {
        let pt = c.point_terms(s.x1);
        let o = oracle(c, &pt);
        let state = ControllerState { xhat: s.xhat.to_vec(), zeta: 0.0, r: s.r, r_u: s.r_u, theta_hat: s.th };
        let varpi = c.compute_varpi(&state, s.x1).unwrap();
        let want = o.varpi(&s);
        for k in 0..3 {
            out.push(Comparison::new("varpi", varpi[k], want[k], s.xhat[k].abs() + 1.0));
        }
        let ut = c.compute_u_tilde(s.r, s.x1, &varpi);
        out.push(Comparison::new("u_tilde", ut, o.u_tilde(s.r, &want), s.r.powi(4) * pt.k_norm));
        let got = c.compute_observer_dot(&state, s.x1, s.r_dot, ut).unwrap();
        for (k, (v, scale)) in o.observer(&s, s.r_dot, ut).into_iter().enumerate() {
            out.push(Comparison::new("observer", got[k], v, scale));
        }
    }
    out
}
