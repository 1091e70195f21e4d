//! Interbank borrowing/lending game: N coupled value-function equations
//! with a closed-form solution.
//!
//! Player i's value function satisfies, after the optimal feedback controls
//! are substituted for every player,
//!
//! ```text
//! V^i_t + Σ_j [(a+q)(x̄ − x_j) − V^j_j]·V^i_j
//!       + sigma²/2 Σ_{j,k} (rho² + δ_jk(1 − rho²))·V^i_{jk}
//!       + (eps − q²)/2·(x̄ − x_i)² + (V^i_i)²/2 = 0,
//! V^i(T, x) = c/2·(x̄ − x_i)²,
//! ```
//!
//! where `x̄` is the cross-player mean and subscripts denote partial
//! derivatives. The drift carries `a+q` and the source `eps − q²`: these are
//! exactly the coefficients under which the quadratic ansatz solves the
//! system with `eta` obeying the Riccati equation
//! `eta' = (1 − 1/N²)·eta² + 2(a+q)·eta − (eps − q²)`, `eta(T) = c` — the
//! same Riccati encoded in the discriminant `R` below.

use crate::algebra::Algebra;
use crate::error::{DgmError, Result};
use crate::util::adaptive_simpson;

/// Mean-reversion `a`, action coupling `q`, running deviation penalty `eps`,
/// terminal weight `c`, common-noise correlation `rho`, volatility, horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemicCoeffs {
    pub players: usize,
    pub reversion: f64,
    pub incentive: f64,
    pub deviation_penalty: f64,
    pub terminal_weight: f64,
    pub correlation: f64,
    pub sigma: f64,
    pub maturity: f64,
}

impl SystemicCoeffs {
    fn mass(&self) -> f64 {
        1.0 - 1.0 / (self.players as f64 * self.players as f64)
    }

    /// Discriminant `R = (a+q)² + (1 − 1/N²)(eps − q²)`.
    pub fn discriminant(&self) -> f64 {
        let aq = self.reversion + self.incentive;
        aq * aq + self.mass() * (self.deviation_penalty - self.incentive * self.incentive)
    }

    /// Riccati roots `delta± = −(a+q) ± sqrt(R)`.
    pub fn delta_pm(&self) -> Result<(f64, f64)> {
        let r = self.discriminant();
        if r <= 0.0 {
            return Err(DgmError::InvalidArgument(format!(
                "coefficient discriminant {r} must be positive"
            )));
        }
        let aq = self.reversion + self.incentive;
        Ok((-aq + r.sqrt(), -aq - r.sqrt()))
    }

    /// Closed-form Riccati solution with `eta(T) = c`.
    pub fn eta(&self, t: f64) -> f64 {
        let (dp, dm) = self.delta_pm().expect("validated coefficients");
        let c = self.terminal_weight;
        let src = self.deviation_penalty - self.incentive * self.incentive;
        let e = ((dp - dm) * (self.maturity - t)).exp();
        let num = -src * (e - 1.0) - c * (dp * e - dm);
        let den = (dm * e - dp) - c * self.mass() * (e - 1.0);
        num / den
    }

    /// Time derivative of `eta` from its Riccati equation.
    pub fn eta_dot(&self, t: f64) -> f64 {
        let eta = self.eta(t);
        let aq = self.reversion + self.incentive;
        self.mass() * eta * eta + 2.0 * aq * eta
            - (self.deviation_penalty - self.incentive * self.incentive)
    }

    /// Common-noise offset `mu(t) = sigma²/2·(1−rho²)(1−1/N)·∫_t^T eta ds`,
    /// by adaptive quadrature to 1e-10.
    pub fn mu(&self, t: f64) -> f64 {
        let n = self.players as f64;
        let factor =
            0.5 * self.sigma * self.sigma * (1.0 - self.correlation * self.correlation)
                * (1.0 - 1.0 / n);
        factor * adaptive_simpson(|s| self.eta(s), t, self.maturity, 1e-10)
    }
}

/// Exact derivatives of one player's value function at a point.
pub struct PlayerDerivs<V> {
    pub time: V,
    /// Gradient over all N state coordinates.
    pub grad: Vec<V>,
    /// Full Hessian, row-major N x N.
    pub hess: Vec<V>,
}

/// Residual of player `i`'s equation; `all` must supply every player's
/// derivative bundle, since the equations couple through `V^j_j`.
pub fn systemic_residual<A: Algebra>(
    alg: &mut A,
    player: usize,
    x: &[f64],
    all: &[PlayerDerivs<A::V>],
    c: &SystemicCoeffs,
) -> Result<A::V> {
    let n = c.players;
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(all.len(), n);
    let x_bar: f64 = x.iter().sum::<f64>() / n as f64;
    let aq = c.reversion + c.incentive;
    let me = &all[player];

    let mut acc = me.time;

    // Drift: sum_j [(a+q)(x̄ − x_j) − V^j_j]·V^i_j
    for j in 0..n {
        let coupled = all[j].grad[j];
        let lead = alg.konst(aq * (x_bar - x[j]))?;
        let drift_j = alg.sub(lead, coupled)?;
        let term = alg.mul(drift_j, me.grad[j])?;
        acc = alg.add(acc, term)?;
    }

    // Diffusion: sigma²/2 · sum_{jk} (rho² + δ_jk(1−rho²))·V^i_{jk}
    let rho2 = c.correlation * c.correlation;
    for j in 0..n {
        for k in 0..n {
            let weight = 0.5 * c.sigma * c.sigma * (rho2 + if j == k { 1.0 - rho2 } else { 0.0 });
            let term = alg.scale(weight, me.hess[j * n + k])?;
            acc = alg.add(acc, term)?;
        }
    }

    // Source: (eps − q²)/2 · (x̄ − x_i)²
    let dev = x_bar - x[player];
    let src = alg.konst(
        0.5 * (c.deviation_penalty - c.incentive * c.incentive) * dev * dev,
    )?;
    acc = alg.add(acc, src)?;

    // Own-control term: (V^i_i)²/2
    let own = alg.square(me.grad[player])?;
    let own = alg.scale(0.5, own)?;
    alg.add(acc, own)
}

pub fn terminal_value(player: usize, x: &[f64], c: &SystemicCoeffs) -> f64 {
    let x_bar: f64 = x.iter().sum::<f64>() / x.len() as f64;
    let dev = x_bar - x[player];
    0.5 * c.terminal_weight * dev * dev
}

/// Closed-form value `V^i(t,x) = eta(t)/2·(x̄ − x_i)² + mu(t)`.
pub fn value_oracle(player: usize, t: f64, x: &[f64], c: &SystemicCoeffs) -> f64 {
    let x_bar: f64 = x.iter().sum::<f64>() / x.len() as f64;
    let dev = x_bar - x[player];
    0.5 * c.eta(t) * dev * dev + c.mu(t)
}

/// Closed-form borrowing/lending rate
/// `alpha^i*(t,x) = (q + (1 − 1/N)·eta(t))·(x̄ − x_i)`.
pub fn control_oracle(player: usize, t: f64, x: &[f64], c: &SystemicCoeffs) -> f64 {
    let n = c.players as f64;
    let x_bar: f64 = x.iter().sum::<f64>() / n;
    (c.incentive + (1.0 - 1.0 / n) * c.eta(t)) * (x_bar - x[player])
}

/// Exact derivative bundle of the closed-form value, for consistency tests
/// and order checks.
pub fn oracle_derivs(player: usize, t: f64, x: &[f64], c: &SystemicCoeffs) -> PlayerDerivs<f64> {
    let n = c.players;
    let nf = n as f64;
    let x_bar: f64 = x.iter().sum::<f64>() / nf;
    let dev = x_bar - x[player];
    let eta = c.eta(t);
    // mu'(t) = -sigma²/2 (1-rho²)(1-1/N) eta(t)
    let mu_dot = -0.5
        * c.sigma
        * c.sigma
        * (1.0 - c.correlation * c.correlation)
        * (1.0 - 1.0 / nf)
        * eta;
    let time = 0.5 * c.eta_dot(t) * dev * dev + mu_dot;
    let grad: Vec<f64> = (0..n)
        .map(|j| {
            let ind = if j == player { 1.0 } else { 0.0 };
            eta * dev * (1.0 / nf - ind)
        })
        .collect();
    let mut hess = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let ij = if j == player { 1.0 } else { 0.0 };
            let ik = if k == player { 1.0 } else { 0.0 };
            hess[j * n + k] = eta * (1.0 / nf - ij) * (1.0 / nf - ik);
        }
    }
    PlayerDerivs { time, grad, hess }
}
