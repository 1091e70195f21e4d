//! Optimal liquidation with permanent and temporary price impact: reduced
//! inventory-value equation and its closed-form solution.
//!
//! After the cash and price states are separated off, the remaining unknown
//! h(t, q) satisfies
//!
//! ```text
//! h_t − phi·q² + (b·q + h_q)² / (4k) = 0,   h(T, q) = −alpha·q²,
//! ```
//!
//! whose exact solution is quadratic in inventory, `h(t,q) = (chi(t) − b/2)·q²`,
//! with `chi` solving the Riccati equation `chi' = phi − chi²/k`,
//! `chi(T) = −(alpha − b/2)`.

use crate::algebra::Algebra;
use crate::error::{DgmError, Result};

/// Temporary impact k, permanent impact b, running inventory penalty phi,
/// terminal inventory penalty alpha, horizon T.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecCoeffs {
    pub temp_impact: f64,
    pub perm_impact: f64,
    pub running_penalty: f64,
    pub terminal_penalty: f64,
    pub maturity: f64,
}

impl ExecCoeffs {
    /// Riccati rate `gamma = sqrt(phi / k)`.
    pub fn gamma(&self) -> f64 {
        (self.running_penalty / self.temp_impact).sqrt()
    }

    /// Reciprocal of the usual boundary ratio, finite for all admissible
    /// coefficients (the direct ratio diverges when
    /// `alpha − b/2 = sqrt(k·phi)`).
    fn xi(&self) -> Result<f64> {
        let edge = self.terminal_penalty - 0.5 * self.perm_impact;
        let root = (self.temp_impact * self.running_penalty).sqrt();
        let denom = edge + root;
        if denom <= 0.0 {
            return Err(DgmError::InvalidArgument(
                "liquidation coefficients need alpha - b/2 + sqrt(k*phi) > 0".to_string(),
            ));
        }
        Ok((edge - root) / denom)
    }

    /// Riccati solution `chi(t)` with `chi(T) = −(alpha − b/2)`.
    pub fn chi(&self, t: f64) -> f64 {
        let xi = self.xi().expect("validated coefficients");
        let root = (self.temp_impact * self.running_penalty).sqrt();
        let e = (2.0 * self.gamma() * (self.maturity - t)).exp();
        root * (xi + e) / (xi - e)
    }
}

/// Residual `h_t − phi·q² + (b·q + h_q)²/(4k)`.
pub fn execution_residual<A: Algebra>(
    alg: &mut A,
    q: f64,
    h_t: A::V,
    h_q: A::V,
    c: &ExecCoeffs,
) -> Result<A::V> {
    let bq = alg.konst(c.perm_impact * q)?;
    let pressure = alg.add(bq, h_q)?;
    let squared = alg.square(pressure)?;
    let impact = alg.scale(1.0 / (4.0 * c.temp_impact), squared)?;
    let running = alg.konst(c.running_penalty * q * q)?;
    let s = alg.sub(h_t, running)?;
    alg.add(s, impact)
}

/// Exact inventory value `h(t,q) = (chi(t) − b/2)·q²`; at `t = T` this is
/// `−alpha·q²`.
pub fn value_oracle(t: f64, q: f64, c: &ExecCoeffs) -> f64 {
    (c.chi(t) - 0.5 * c.perm_impact) * q * q
}

/// Exact liquidation rate `nu*(t,q) = −chi(t)/k·q` (positive while selling).
pub fn control_oracle(t: f64, q: f64, c: &ExecCoeffs) -> f64 {
    -c.chi(t) / c.temp_impact * q
}
