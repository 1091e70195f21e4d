//! European and American option pricing under geometric Brownian motion:
//! residual functional, payoffs and the closed-form European price.

use crate::algebra::Algebra;
use crate::error::Result;
use crate::util::norm_cdf;

/// Market coefficients: riskless rate and volatility per year, strike,
/// maturity, reference spot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsCoeffs {
    pub rate: f64,
    pub sigma: f64,
    pub strike: f64,
    pub maturity: f64,
    pub spot: f64,
}

pub fn call_payoff(x: f64, strike: f64) -> f64 {
    (x - strike).max(0.0)
}

pub fn put_payoff(x: f64, strike: f64) -> f64 {
    (strike - x).max(0.0)
}

/// Pricing-operator residual at a point with price level `x`:
/// `f_t + r·x·f_x + sigma²x²/2·f_xx − r·f`. Zero iff `f` locally prices
/// the claim.
pub fn bs_residual<A: Algebra>(
    alg: &mut A,
    x: f64,
    f: A::V,
    f_t: A::V,
    f_x: A::V,
    f_xx: A::V,
    c: &BsCoeffs,
) -> Result<A::V> {
    let drift = alg.scale(c.rate * x, f_x)?;
    let diffusion = alg.scale(0.5 * c.sigma * c.sigma * x * x, f_xx)?;
    let discount = alg.scale(c.rate, f)?;
    let s = alg.add(f_t, drift)?;
    let s = alg.add(s, diffusion)?;
    alg.sub(s, discount)
}

fn d_plus_minus(t: f64, x: f64, c: &BsCoeffs) -> (f64, f64) {
    let tau = c.maturity - t;
    let vol = c.sigma * tau.sqrt();
    let d_plus = ((x / c.strike).ln() + (c.rate + 0.5 * c.sigma * c.sigma) * tau) / vol;
    (d_plus, d_plus - vol)
}

/// Closed-form call price; limits at `t = T` and `x = 0` return the payoff.
pub fn bs_call_price(t: f64, x: f64, c: &BsCoeffs) -> f64 {
    let tau = c.maturity - t;
    if x <= 0.0 {
        return 0.0;
    }
    if tau <= 0.0 || c.sigma * tau.sqrt() < 1e-14 {
        return call_payoff(x, c.strike);
    }
    let (dp, dm) = d_plus_minus(t, x, c);
    x * norm_cdf(dp) - c.strike * (-c.rate * tau).exp() * norm_cdf(dm)
}

/// European put via put-call parity.
pub fn bs_put_price(t: f64, x: f64, c: &BsCoeffs) -> f64 {
    let tau = (c.maturity - t).max(0.0);
    bs_call_price(t, x, c) - x + c.strike * (-c.rate * tau).exp()
}
