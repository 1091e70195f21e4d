//! Density evolution of a mean-reverting diffusion with a Gaussian start,
//! solved in exponential form.
//!
//! The density is represented as `p(t,x) = exp(-u(t,x)) / c(t)` with `c(t)`
//! the normalizer, which keeps the fit positive and unit-mass by
//! construction. The unknown `u` then satisfies
//!
//! ```text
//! u_t + kappa(x - theta)·u_x − sigma²/2·(u_xx − u_x²) = kappa + I_t
//! I_t = ∫ u_t e^{-u} dx / ∫ e^{-u} dx
//! ```
//!
//! and the integral term is approximated by self-normalized importance
//! weights on a uniform grid.

use crate::algebra::Algebra;
use crate::error::Result;

/// Mean-reversion rate and level, diffusion volatility, variance of the
/// Gaussian start, horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoeffs {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub start_var: f64,
    pub maturity: f64,
}

impl OuCoeffs {
    /// Mean of the state at elapsed time `t` (start mean is zero).
    pub fn mean_at(&self, t: f64) -> f64 {
        self.theta * (1.0 - (-self.kappa * t).exp())
    }

    /// Variance of the state at elapsed time `t`; the `kappa → 0` limit is
    /// `start_var + sigma²·t`.
    pub fn var_at(&self, t: f64) -> f64 {
        if self.kappa == 0.0 {
            return self.start_var + self.sigma * self.sigma * t;
        }
        let decay = (-2.0 * self.kappa * t).exp();
        self.start_var * decay + self.sigma * self.sigma * (1.0 - decay) / (2.0 * self.kappa)
    }
}

/// Transformed-equation residual:
/// `u_t + kappa(x−theta)u_x − sigma²/2(u_xx − u_x²) − kappa − I_t`.
pub fn fp_transformed_residual<A: Algebra>(
    alg: &mut A,
    x: f64,
    u_t: A::V,
    u_x: A::V,
    u_xx: A::V,
    integral_term: A::V,
    c: &OuCoeffs,
) -> Result<A::V> {
    let drift = alg.scale(c.kappa * (x - c.theta), u_x)?;
    let ux2 = alg.square(u_x)?;
    let curvature = alg.sub(u_xx, ux2)?;
    let diffusion = alg.scale(-0.5 * c.sigma * c.sigma, curvature)?;
    let lhs = alg.add(u_t, drift)?;
    let lhs = alg.add(lhs, diffusion)?;
    let kappa = alg.konst(c.kappa)?;
    let lhs = alg.sub(lhs, kappa)?;
    alg.sub(lhs, integral_term)
}

/// Initial condition for the transformed unknown, gauge-fixed to zero at the
/// start mean: `u(0,x) = x² / (2·start_var)`.
pub fn initial_transform(x: f64, c: &OuCoeffs) -> f64 {
    x * x / (2.0 * c.start_var)
}

/// Exact transformed solution for the pure-diffusion case (kappa = 0), used
/// as the closed-form anchor for the operator residual.
pub fn transform_oracle_pure_diffusion(t: f64, x: f64, c: &OuCoeffs) -> f64 {
    let s = c.start_var + c.sigma * c.sigma * t;
    x * x / (2.0 * s) + 0.5 * s.ln()
}

/// Gaussian density of the state at elapsed time `t` (conjugate Gaussian
/// start propagates in closed form).
pub fn density_oracle(t: f64, x: f64, c: &OuCoeffs) -> f64 {
    let mean = c.mean_at(t);
    let var = c.var_at(t);
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::RealAlgebra;
    use crate::util::adaptive_simpson;

    fn coeffs() -> OuCoeffs {
        OuCoeffs {
            kappa: 0.0,
            theta: 0.5,
            sigma: 2.0,
            start_var: 0.25,
            maturity: 1.0,
        }
    }

    #[test]
    fn pure_diffusion_variance_grows_linearly() {
        let c = coeffs();
        assert_eq!(c.var_at(0.0), 0.25);
        assert_eq!(c.var_at(1.0), 4.25);
        assert_eq!(c.mean_at(0.7), 0.0);
    }

    #[test]
    fn mean_reverting_moments() {
        let c = OuCoeffs {
            kappa: 1.5,
            theta: 0.5,
            sigma: 2.0,
            start_var: 0.25,
            maturity: 1.0,
        };
        // Long-run limits: mean -> theta, var -> sigma^2 / (2 kappa).
        assert!((c.mean_at(30.0) - 0.5).abs() < 1e-12);
        assert!((c.var_at(30.0) - 4.0 / 3.0).abs() < 1e-10);
        assert_eq!(c.var_at(0.0), 0.25);
    }

    #[test]
    fn density_is_initial_gaussian_at_t0_and_normalized() {
        let c = coeffs();
        let at0 = density_oracle(0.0, 0.3, &c);
        let expect = (-(0.3f64 * 0.3) / 0.5).exp() / (2.0 * std::f64::consts::PI * 0.25).sqrt();
        assert!((at0 - expect).abs() < 1e-15);
        for t in [0.25, 1.0] {
            let mass = adaptive_simpson(|x| density_oracle(t, x, &c), -30.0, 30.0, 1e-9);
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass} at t={t}");
            assert!(density_oracle(t, 1.7, &c) > 0.0);
        }
    }

    #[test]
    fn transform_oracle_zeroes_the_residual_analytically() {
        // With kappa = 0 the exact u has u_t = sigma²/2·(u_xx − u_x²) + I_t
        // where I_t = 0, so the residual with exact derivatives vanishes.
        let c = coeffs();
        let mut alg = RealAlgebra;
        for (t, x) in [(0.1, 0.4), (0.5, -1.2), (0.9, 2.5)] {
            let s = c.start_var + c.sigma * c.sigma * t;
            let u_t = -x * x * c.sigma * c.sigma / (2.0 * s * s) + c.sigma * c.sigma / (2.0 * s);
            let u_x = x / s;
            let u_xx = 1.0 / s;
            let r =
                fp_transformed_residual(&mut alg, x, u_t, u_x, u_xx, 0.0, &c).unwrap();
            assert!(r.abs() < 1e-14, "residual {r} at ({t}, {x})");
        }
    }

    #[test]
    fn constant_transform_residual_is_minus_kappa() {
        let c = OuCoeffs {
            kappa: 0.8,
            ..coeffs()
        };
        let mut alg = RealAlgebra;
        let r = fp_transformed_residual(&mut alg, 1.0, 0.0, 0.0, 0.0, 0.0, &c).unwrap();
        assert!((r + 0.8).abs() < 1e-15);
    }

    #[test]
    fn initial_transform_matches_log_density_up_to_constant() {
        let c = coeffs();
        // -ln p(0,x) = x²/(2v) + ln sqrt(2 pi v); the transform drops the
        // x-independent constant.
        for x in [-2.0, 0.0, 0.7, 3.0] {
            let diff = -(density_oracle(0.0, x, &c).ln()) - initial_transform(x, &c);
            let constant = (2.0 * std::f64::consts::PI * c.start_var).sqrt().ln();
            assert!((diff - constant).abs() < 1e-12);
        }
    }
}
