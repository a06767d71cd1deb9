//! Quadrature: adaptive Gauss-Kronrod for the observer integrals and composite
//! rules over sampled trajectories.

use crate::error::{Error, Result};

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K15_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for (i, &x) in GK_NODES.iter().take(7).enumerate() {
        let s = f(c - h * x) + f(c + h * x);
        kronrod += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]` (either order).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut stack = vec![(lo, hi, tol, 0u32)];
    let mut total = 0.0;
    while let Some((x0, x1, tol_here, depth)) = stack.pop() {
        let (val, err) = gk15(&f, x0, x1);
        if !val.is_finite() {
            return Err(Error::NumericFailure { term: "quadrature" });
        }
        if err <= tol_here.max(1e-15 * val.abs()) {
            total += val;
        } else if depth >= 48 {
            return Err(Error::NumericFailure { term: "quadrature" });
        } else {
            let mid = 0.5 * (x0 + x1);
            stack.push((x0, mid, 0.5 * tol_here, depth + 1));
            stack.push((mid, x1, 0.5 * tol_here, depth + 1));
        }
    }
    Ok(sign * total)
}

/// Integral of samples `ys` on the uniform grid `x0, x0 + h, ...` using composite
/// Simpson; an odd number of intervals closes with Simpson's 3/8 rule.
pub fn simpson_uniform(ys: &[f64], h: f64) -> f64 {
    let intervals = ys.len().saturating_sub(1);
    match intervals {
        0 => 0.0,
        1 => 0.5 * h * (ys[0] + ys[1]),
        2 => h / 3.0 * (ys[0] + 4.0 * ys[1] + ys[2]),
        3 => 3.0 * h / 8.0 * (ys[0] + 3.0 * ys[1] + 3.0 * ys[2] + ys[3]),
        _ => {
            let (simpson_end, tail) = if intervals % 2 == 0 {
                (intervals, 0.0)
            } else {
                let k = intervals - 3;
                (k, simpson_uniform(&ys[k..], h))
            };
            let mut acc = ys[0] + ys[simpson_end];
            for (i, y) in ys.iter().enumerate().take(simpson_end).skip(1) {
                acc += if i % 2 == 1 { 4.0 * y } else { 2.0 * y };
            }
            acc * h / 3.0 + tail
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_polynomial_and_transcendental() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 0.0).abs() < 1e-12);
        let v = integrate(f64::exp, 0.0, 1.0, 1e-13).unwrap();
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-12);
        let v = integrate(|x| 1.0 / (1.0 + x * x), 3.0, -1.0, 1e-13).unwrap();
        assert!((v - (-(3.0f64.atan() + 1.0f64.atan()))).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x| x, 1.5, 1.5, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn simpson_exact_for_cubics_any_parity() {
        for n in 1..12 {
            let h = 0.1;
            let ys: Vec<f64> = (0..=n).map(|k| (k as f64 * h).powi(3)).collect();
            let exact = (n as f64 * h).powi(4) / 4.0;
            let got = simpson_uniform(&ys, h);
            if n >= 2 {
                assert!((got - exact).abs() < 1e-13, "n={n} {got} {exact}");
            }
        }
    }
}
