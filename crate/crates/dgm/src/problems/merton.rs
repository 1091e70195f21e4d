//! Optimal investment with exponential utility: quasi-linear value-function
//! equation and its closed-form solution.
//!
//! The primal dynamic-programming equation has the second derivative in a
//! denominator, which is numerically hostile; multiplying it out gives the
//! quasi-linear form used here,
//!
//! ```text
//! H_xx·(H_t + r·x·H_x) − lambda²/2·H_x² = 0,   lambda = (mu − r)/sigma,
//! ```
//!
//! which the closed-form value function satisfies identically.

use crate::algebra::Algebra;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonCoeffs {
    pub rate: f64,
    pub drift: f64,
    pub sigma: f64,
    pub risk_aversion: f64,
}

impl MertonCoeffs {
    /// Market price of risk.
    pub fn lambda(&self) -> f64 {
        (self.drift - self.rate) / self.sigma
    }
}

/// Investment horizon used by the benchmark configuration.
pub const MERTON_HORIZON: f64 = 1.0;

/// Quasi-linear residual `H_xx·(H_t + r·x·H_x) − lambda²/2·H_x²`.
pub fn merton_residual<A: Algebra>(
    alg: &mut A,
    x: f64,
    h_t: A::V,
    h_x: A::V,
    h_xx: A::V,
    c: &MertonCoeffs,
) -> Result<A::V> {
    let lambda = c.lambda();
    let drift = alg.scale(c.rate * x, h_x)?;
    let inner = alg.add(h_t, drift)?;
    let first = alg.mul(h_xx, inner)?;
    let hx2 = alg.square(h_x)?;
    let second = alg.scale(0.5 * lambda * lambda, hx2)?;
    alg.sub(first, second)
}

/// Terminal utility `-exp(-gamma·x)`.
pub fn terminal_value(x: f64, c: &MertonCoeffs) -> f64 {
    -(-c.risk_aversion * x).exp()
}

/// Closed-form value function
/// `H(t,x) = -exp(-x·gamma·e^{r(T-t)} − lambda²/2·(T−t))`.
pub fn value_oracle(t: f64, x: f64, c: &MertonCoeffs) -> f64 {
    let tau = MERTON_HORIZON - t;
    let lambda = c.lambda();
    -(-x * c.risk_aversion * (c.rate * tau).exp() - 0.5 * lambda * lambda * tau).exp()
}

/// Closed-form optimal risky allocation `pi*(t) = lambda/(gamma·sigma)·e^{-r(T−t)}`.
pub fn control_oracle(t: f64, c: &MertonCoeffs) -> f64 {
    let tau = MERTON_HORIZON - t;
    c.lambda() / (c.risk_aversion * c.sigma) * (-c.rate * tau).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::RealAlgebra;

    fn coeffs() -> MertonCoeffs {
        MertonCoeffs {
            rate: 0.05,
            drift: 0.2,
            sigma: 0.25,
            risk_aversion: 1.0,
        }
    }

    #[test]
    fn zero_function_is_a_trivial_root() {
        let mut alg = RealAlgebra;
        let r = merton_residual(&mut alg, 0.7, 0.0, 0.0, 0.0, &coeffs()).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn oracle_satisfies_the_residual_with_exact_derivatives() {
        let c = coeffs();
        let lambda = c.lambda();
        let mut alg = RealAlgebra;
        for (t, x) in [(0.0, 0.3), (0.4, 0.9), (0.85, 1.4)] {
            let tau = MERTON_HORIZON - t;
            let a = c.risk_aversion * (c.rate * tau).exp();
            let h = value_oracle(t, x, &c);
            let h_t = h * (x * c.rate * a + 0.5 * lambda * lambda);
            let h_x = -a * h;
            let h_xx = a * a * h;
            let r = merton_residual(&mut alg, x, h_t, h_x, h_xx, &c).unwrap();
            assert!(r.abs() < 1e-12, "residual {r} at ({t}, {x})");
        }
    }

    #[test]
    fn sign_symmetry_structure() {
        // Every term of the quasi-linear form has even total degree in
        // (H_t, H_x, H_xx), so a joint sign flip leaves the residual
        // unchanged; flipping the time derivative alone does not.
        let c = coeffs();
        let mut alg = RealAlgebra;
        let (h_t, h_x, h_xx) = (0.2, -0.7, 0.4);
        let plus = merton_residual(&mut alg, 1.0, h_t, h_x, h_xx, &c).unwrap();
        let joint = merton_residual(&mut alg, 1.0, -h_t, -h_x, -h_xx, &c).unwrap();
        assert!((plus - joint).abs() < 1e-12);
        let time_only = merton_residual(&mut alg, 1.0, -h_t, h_x, h_xx, &c).unwrap();
        assert!((plus - time_only).abs() > 1e-3);
    }

    #[test]
    fn closed_form_anchors() {
        let c = coeffs();
        // At maturity the value is the terminal utility.
        assert!((value_oracle(MERTON_HORIZON, 0.8, &c) - terminal_value(0.8, &c)).abs() < 1e-15);
        // lambda = (0.2 - 0.05)/0.25 = 0.6; pi*(T) = lambda/(gamma sigma) = 2.4.
        assert!((c.lambda() - 0.6).abs() < 1e-15);
        assert!((control_oracle(MERTON_HORIZON, &c) - 2.4).abs() < 1e-12);
        // Value is negative everywhere.
        for (t, x) in [(0.0, -1.0), (0.5, 0.0), (1.0, 3.0)] {
            assert!(value_oracle(t, x, &c) < 0.0);
        }
    }
}
