//! Small numerical utilities shared across modules.

use crate::error::{DgmError, Result};

/// Standard normal CDF, double-precision rational approximation
/// (Hart-style polynomial in the body, continued fraction in the far tail).
/// Absolute error below 1e-15 across the real line.
pub fn norm_cdf(x: f64) -> f64 {
    let z = x.abs();
    let cum = if z > 37.0 {
        0.0
    } else {
        let e = (-z * z / 2.0).exp();
        if z < 7.07106781186547 {
            let num_coeffs = [
                3.52624965998911e-02,
                0.700383064443688,
                6.37396220353165,
                33.912866078383,
                112.079291497871,
                221.213596169931,
                220.206867912376,
            ];
            let den_coeffs = [
                8.83883476483184e-02,
                1.75566716318264,
                16.064177579207,
                86.7807322029461,
                296.564248779674,
                637.333633378831,
                793.826512519948,
                440.413735824752,
            ];
            let horner = |cs: &[f64]| cs.iter().fold(0.0f64, |acc, &c| acc * z + c);
            horner(&num_coeffs) * e / horner(&den_coeffs)
        } else {
            let b = z + 0.65;
            let b = z + 4.0 / b;
            let b = z + 3.0 / b;
            let b = z + 2.0 / b;
            let b = z + 1.0 / b;
            e / (b * 2.506628274631)
        }
    };
    if x > 0.0 {
        1.0 - cum
    } else {
        cum
    }
}

/// Standard normal pdf.
pub fn norm_pdf(x: f64) -> f64 {
    (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (sign, lo, hi) = if a < b { (1.0, a, b) } else { (-1.0, b, a) };
    let m = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(m), f(hi));
    let whole = simpson(fa, fm, fb, hi - lo);
    sign * adaptive_step(&f, lo, hi, fa, fm, fb, whole, tol, 50)
}

/// Piecewise-linear interpolant on a sorted node grid; constant outside.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(DgmError::InvalidArgument(
                "piecewise-linear interpolant needs >= 2 matched nodes".to_string(),
            ));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DgmError::InvalidArgument(
                "interpolation nodes must be strictly increasing".to_string(),
            ));
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= *self.xs.last().unwrap() {
            return *self.ys.last().unwrap();
        }
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] * (1.0 - w) + self.ys[i + 1] * w
    }
}

/// Mean and (population) variance of a weighted sample; weights must sum to 1.
pub fn weighted_moments(xs: &[f64], ws: &[f64]) -> (f64, f64) {
    let mean: f64 = xs.iter().zip(ws).map(|(x, w)| x * w).sum();
    let var: f64 = xs
        .iter()
        .zip(ws)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_cdf_reference_values() {
        // Abramowitz & Stegun / machine-checked reference points.
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.0) - 0.841344746068543).abs() < 1e-12);
        assert!((norm_cdf(-1.0) - 0.158655253931457).abs() < 1e-12);
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((norm_cdf(-3.0) - 1.349898031630095e-3).abs() < 1e-15);
        assert!((norm_cdf(8.0) - 1.0).abs() < 1e-15);
        assert!(norm_cdf(-40.0) == 0.0);
    }

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let got = adaptive_simpson(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!((got - 8.0).abs() < 1e-10);
        let got = adaptive_simpson(|x| x.exp(), 0.0, 1.0, 1e-12);
        assert!((got - (1f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_reversed_and_empty_ranges() {
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-10), 0.0);
        let fwd = adaptive_simpson(|x| x * x, 0.0, 1.0, 1e-12);
        let rev = adaptive_simpson(|x| x * x, 1.0, 0.0, 1e-12);
        assert!((fwd + rev).abs() < 1e-12);
    }

    #[test]
    fn piecewise_linear_interpolates_and_clamps() {
        let p = PiecewiseLinear::new(vec![0.0, 1.0, 2.0], vec![0.0, 10.0, 0.0]).unwrap();
        assert_eq!(p.eval(0.5), 5.0);
        assert_eq!(p.eval(1.5), 5.0);
        assert_eq!(p.eval(-3.0), 0.0);
        assert_eq!(p.eval(9.0), 0.0);
        assert_eq!(p.eval(1.0), 10.0);
    }
}
