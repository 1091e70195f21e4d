//! Monte-Carlo solution of linear terminal-value equations through their
//! stochastic representation, plus exact path simulation of the
//! mean-reverting process.

use crate::error::{DgmError, Result};
use crate::problems::black_scholes::BsCoeffs;
use crate::problems::fokker_planck::OuCoeffs;
use crate::sampling::worker_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Path count, time discretization, seed and variance-reduction switch.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 || self.steps == 0 {
            return Err(DgmError::InvalidArgument(
                "path and step counts must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A terminal-value problem in stochastic form: the unknown at `(t0, x0)`
/// equals the expectation of the discounted terminal reward over the
/// diffusion `dX = drift·dt + vol·dW`.
pub struct FeynmanKacProblem<'a> {
    pub drift: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub vol: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub discount: &'a (dyn Fn(f64, f64) -> f64 + Sync),
    pub terminal: &'a (dyn Fn(f64) -> f64 + Sync),
    pub t0: f64,
    pub x0: f64,
    pub maturity: f64,
}

const WORKERS: u64 = 8;

/// Estimates the expectation and its standard error with Euler-Maruyama
/// paths. Paths are split over a fixed number of deterministic RNG streams,
/// so the estimate does not depend on thread scheduling.
pub fn feynman_kac_mc(p: &FeynmanKacProblem, mc: &McConfig) -> Result<(f64, f64)> {
    mc.validate()?;
    let dt = (p.maturity - p.t0) / mc.steps as f64;
    if !(dt > 0.0) {
        return Err(DgmError::InvalidArgument(
            "maturity must exceed the start time".to_string(),
        ));
    }
    let per_worker = mc.paths.div_ceil(WORKERS as usize);
    let partials: Vec<(f64, f64, usize)> = (0..WORKERS)
        .into_par_iter()
        .map(|w| {
            let mut rng = worker_rng(mc.seed, w);
            let todo = per_worker.min(mc.paths.saturating_sub(w as usize * per_worker));
            let mut sum = 0.0f64;
            let mut sum_sq = 0.0f64;
            let mut count = 0usize;
            let mut run_path = |flip: f64, zs: Option<&[f64]>, store: Option<&mut Vec<f64>>| {
                let mut x = p.x0;
                let mut t = p.t0;
                let mut disc = 0.0;
                let mut stored = store;
                for k in 0..mc.steps {
                    let z: f64 = match zs {
                        Some(buf) => buf[k],
                        None => rng.sample(StandardNormal),
                    };
                    if let Some(buf) = stored.as_deref_mut() {
                        buf.push(z);
                    }
                    disc += (p.discount)(t, x) * dt;
                    x += (p.drift)(t, x) * dt + (p.vol)(t, x) * flip * z * dt.sqrt();
                    t += dt;
                }
                (-disc).exp() * (p.terminal)(x)
            };
            if mc.antithetic {
                let mut zbuf: Vec<f64> = Vec::with_capacity(mc.steps);
                let pairs = todo / 2;
                for _ in 0..pairs {
                    zbuf.clear();
                    let v1 = run_path(1.0, None, Some(&mut zbuf));
                    let v2 = run_path(-1.0, Some(&zbuf), None);
                    let v = 0.5 * (v1 + v2);
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            } else {
                for _ in 0..todo {
                    let v = run_path(1.0, None, None);
                    sum += v;
                    sum_sq += v * v;
                    count += 1;
                }
            }
            (sum, sum_sq, count)
        })
        .collect();
    let (mut sum, mut sum_sq, mut n) = (0.0, 0.0, 0usize);
    for (s, s2, c) in partials {
        sum += s;
        sum_sq += s2;
        n += c;
    }
    if n == 0 {
        return Err(DgmError::InvalidArgument("no complete paths".to_string()));
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let se = if n > 1 {
        (var / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

/// Discounted expected call payoff via exact log-price dynamics (constant
/// coefficients make the Euler step exact in log space), so the estimator
/// is unbiased for the closed-form price.
pub fn bs_call_mc(c: &BsCoeffs, mc: &McConfig) -> Result<(f64, f64)> {
    let drift = c.rate - 0.5 * c.sigma * c.sigma;
    let sigma = c.sigma;
    let rate = c.rate;
    let strike = c.strike;
    let problem = FeynmanKacProblem {
        drift: &move |_t, _y| drift,
        vol: &move |_t, _y| sigma,
        discount: &move |_t, _y| rate,
        terminal: &move |y: f64| (y.exp() - strike).max(0.0),
        t0: 0.0,
        x0: c.spot.ln(),
        maturity: c.maturity,
    };
    feynman_kac_mc(&problem, mc)
}

/// Simulates the mean-reverting process with exact Gaussian transitions and
/// a Gaussian start, returning the sampled values at each requested time.
pub fn ou_simulate(c: &OuCoeffs, n_paths: usize, t_points: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut times: Vec<f64> = t_points.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let step = |x: f64, dt: f64, z: f64| -> f64 {
        if c.kappa == 0.0 {
            x + c.sigma * dt.sqrt() * z
        } else {
            let decay = (-c.kappa * dt).exp();
            let var = c.sigma * c.sigma * (1.0 - decay * decay) / (2.0 * c.kappa);
            c.theta + (x - c.theta) * decay + var.sqrt() * z
        }
    };
    let per_worker = n_paths.div_ceil(WORKERS as usize);
    let chunks: Vec<Vec<Vec<f64>>> = (0..WORKERS)
        .into_par_iter()
        .map(|w| {
            let mut rng = worker_rng(seed, w);
            let todo = per_worker.min(n_paths.saturating_sub(w as usize * per_worker));
            let mut local: Vec<Vec<f64>> = vec![Vec::with_capacity(todo); times.len()];
            for _ in 0..todo {
                let z0: f64 = rng.sample(StandardNormal);
                let mut x = c.start_var.sqrt() * z0;
                let mut t = 0.0;
                for (k, &tk) in times.iter().enumerate() {
                    let dt = tk - t;
                    if dt > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        x = step(x, dt, z);
                        t = tk;
                    }
                    local[k].push(x);
                }
            }
            local
        })
        .collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); times.len()];
    for local in chunks {
        for (k, vals) in local.into_iter().enumerate() {
            out[k].extend(vals);
        }
    }
    out
}

/// Sample mean and unbiased variance.
pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
