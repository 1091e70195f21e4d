//! Implicit finite-difference pricing grid with optional early-exercise
//! projection.
//!
//! The terminal-value equation is marched in remaining time τ = T − t with
//! a fully implicit step (unconditionally stable, tridiagonal solve per
//! step). For American-style claims each step is followed by the
//! projection `u := max(u, payoff)`, which keeps the value above the
//! obstacle at every node.

use super::{thomas, Grid1D};
use crate::error::{DgmError, Result};
use crate::problems::black_scholes::{call_payoff, put_payoff, BsCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payoff {
    Call,
    Put,
}

impl Payoff {
    pub fn value(&self, x: f64, strike: f64) -> f64 {
        match self {
            Payoff::Call => call_payoff(x, strike),
            Payoff::Put => put_payoff(x, strike),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "call" => Ok(Payoff::Call),
            "put" => Ok(Payoff::Put),
            other => Err(DgmError::Config(format!("unknown payoff `{other}`"))),
        }
    }
}

/// Grid resolution and price-range truncation.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub nt: usize,
    pub nx: usize,
    pub x_max: f64,
}

/// Solves the pricing equation on `[0,T] × [0, x_max]`; rows are calendar
/// times ascending from 0 to T.
pub fn bs_grid_solver(
    c: &BsCoeffs,
    spec: &GridSpec,
    payoff: Payoff,
    american: bool,
) -> Result<Grid1D> {
    if spec.nt < 1 || spec.nx < 3 || !(spec.x_max > c.strike) {
        return Err(DgmError::InvalidArgument(
            "pricing grid needs nt >= 1, nx >= 3 and x_max above the strike".to_string(),
        ));
    }
    let dx = spec.x_max / spec.nx as f64;
    let dt = c.maturity / spec.nt as f64;
    let x_nodes: Vec<f64> = (0..=spec.nx).map(|j| j as f64 * dx).collect();
    let t_nodes: Vec<f64> = (0..=spec.nt).map(|i| i as f64 * dt).collect();
    let intrinsic: Vec<f64> = x_nodes.iter().map(|&x| payoff.value(x, c.strike)).collect();

    // Implicit step matrix over interior nodes 1..nx-1.
    let n_inner = spec.nx - 1;
    let mut lower = vec![0.0; n_inner];
    let mut diag = vec![0.0; n_inner];
    let mut upper = vec![0.0; n_inner];
    for (k, j) in (1..spec.nx).enumerate() {
        let x = x_nodes[j];
        let diff = 0.5 * c.sigma * c.sigma * x * x / (dx * dx);
        let conv = 0.5 * c.rate * x / dx;
        lower[k] = -dt * (diff - conv);
        diag[k] = 1.0 + dt * (2.0 * diff + c.rate);
        upper[k] = -dt * (diff + conv);
    }

    // March in remaining time; row index nt is maturity.
    let mut values = vec![vec![0.0; spec.nx + 1]; spec.nt + 1];
    values[spec.nt] = intrinsic.clone();
    let mut current = intrinsic.clone();
    for step in 1..=spec.nt {
        let tau = step as f64 * dt;
        let (bc_low, bc_high) = boundary_values(c, payoff, american, tau, spec.x_max);
        let mut rhs: Vec<f64> = current[1..spec.nx].to_vec();
        rhs[0] -= lower[0] * bc_low;
        rhs[n_inner - 1] -= upper[n_inner - 1] * bc_high;
        let inner = thomas(&lower, &diag, &upper, &rhs);
        current[0] = bc_low;
        current[spec.nx] = bc_high;
        current[1..spec.nx].copy_from_slice(&inner);
        if american {
            for (v, &p) in current.iter_mut().zip(&intrinsic) {
                if *v < p {
                    *v = p;
                }
            }
        }
        values[spec.nt - step] = current.clone();
    }
    Ok(Grid1D {
        t_nodes,
        x_nodes,
        values,
    })
}

fn boundary_values(
    c: &BsCoeffs,
    payoff: Payoff,
    american: bool,
    tau: f64,
    x_max: f64,
) -> (f64, f64) {
    match payoff {
        Payoff::Call => {
            let high = x_max - c.strike * (-c.rate * tau).exp();
            (0.0, high)
        }
        Payoff::Put => {
            let low = if american {
                c.strike
            } else {
                c.strike * (-c.rate * tau).exp()
            };
            (low, 0.0)
        }
    }
}
