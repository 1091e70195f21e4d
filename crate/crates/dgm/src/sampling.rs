//! Random point generation over space-time domains.
//!
//! Three sampling strategies cover every case study: uniform on the
//! (optionally oversampled) box, lognormal in space for price-like
//! coordinates, and uniform auxiliary grids for integral terms. Oversampling
//! stretches each spatial range beyond the region of interest so the fitted
//! function sees points past the right edge; the lower bound stays fixed
//! since every case study has a natural lower bound at zero.

use crate::error::{DgmError, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Space-time box with per-dimension oversampling factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub t0: f64,
    pub t1: f64,
    /// Evaluation ranges `[lo_i, hi_i]` per spatial dimension.
    pub ranges: Vec<(f64, f64)>,
    /// Multiplicative stretch of each upper bound, `>= 1`.
    pub oversample: Vec<f64>,
}

impl DomainBox {
    pub fn new(t0: f64, t1: f64, ranges: Vec<(f64, f64)>, oversample: Vec<f64>) -> Result<Self> {
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(DgmError::InvalidArgument(format!(
                "time range [{t0}, {t1}] must be finite and increasing"
            )));
        }
        if ranges.len() != oversample.len() {
            return Err(DgmError::Dimension(
                "one oversample factor required per spatial dimension".to_string(),
            ));
        }
        for &(lo, hi) in &ranges {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(DgmError::InvalidArgument(format!(
                    "spatial range [{lo}, {hi}] must be finite and increasing"
                )));
            }
        }
        for &f in &oversample {
            if !(f.is_finite() && f >= 1.0) {
                return Err(DgmError::InvalidArgument(format!(
                    "oversample factor {f} must be finite and >= 1"
                )));
            }
        }
        Ok(DomainBox {
            t0,
            t1,
            ranges,
            oversample,
        })
    }

    /// Box with no oversampling.
    pub fn plain(t0: f64, t1: f64, ranges: Vec<(f64, f64)>) -> Result<Self> {
        let n = ranges.len();
        Self::new(t0, t1, ranges, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.ranges.len()
    }

    /// Upper bound of dimension `i` after the oversampling stretch.
    pub fn stretched_hi(&self, i: usize) -> f64 {
        let (lo, hi) = self.ranges[i];
        lo + self.oversample[i] * (hi - lo)
    }

    /// Width of the (stretched) sampling range of dimension `i`.
    pub fn stretched_width(&self, i: usize) -> f64 {
        self.stretched_hi(i) - self.ranges[i].0
    }

    pub fn t_width(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Whether a point lies inside the stretched sampling region.
    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        if x.len() != self.dim() || t < self.t0 || t > self.t1 {
            return false;
        }
        x.iter().enumerate().all(|(i, &xi)| {
            let (lo, _) = self.ranges[i];
            xi >= lo && xi <= self.stretched_hi(i)
        })
    }
}

/// One sampled space-time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Uniform auxiliary grid `{t_j} x {x_k}` for integral terms (1-D space).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxGrid {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
}

/// A training batch: interior points, terminal (or initial) spatial points,
/// optional boundary points and an optional integral grid.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub interior: Vec<Point>,
    pub terminal: Vec<Vec<f64>>,
    pub boundary: Vec<Point>,
    pub aux_grid: Option<AuxGrid>,
}

/// How interior points are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerScheme {
    /// i.i.d. uniform on the stretched box.
    Uniform,
    /// Uniform in time; geometric-Brownian terminal value in space
    /// (1-D space only).
    Lognormal { s0: f64, mu: f64, sigma: f64 },
}

/// i.i.d. uniform draws from `[t0,t1] x` the stretched spatial box.
pub fn sample_interior_uniform(bx: &DomainBox, n: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(bx.t0..=bx.t1);
            let x = (0..bx.dim())
                .map(|i| rng.random_range(bx.ranges[i].0..=bx.stretched_hi(i)))
                .collect();
            Point { t, x }
        })
        .collect()
}

/// Uniform in time, lognormal in space: `x = s0·exp((mu − sigma²/2)t + sigma·sqrt(t)·Z)`.
pub fn sample_lognormal(
    bx: &DomainBox,
    gbm: (f64, f64, f64),
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Point>> {
    let (s0, mu, sigma) = gbm;
    if !(s0 > 0.0) || !(sigma >= 0.0) {
        return Err(DgmError::InvalidArgument(
            "lognormal sampling needs s0 > 0 and sigma >= 0".to_string(),
        ));
    }
    if bx.dim() != 1 {
        return Err(DgmError::Dimension(
            "lognormal sampling is one-dimensional in space".to_string(),
        ));
    }
    Ok((0..n)
        .map(|_| {
            let t = rng.random_range(bx.t0..=bx.t1);
            let z: f64 = rng.sample(StandardNormal);
            let x = s0 * ((mu - 0.5 * sigma * sigma) * t + sigma * t.sqrt() * z).exp();
            Point { t, x: vec![x] }
        })
        .collect())
}

/// Uniform spatial draws for the terminal/initial condition (time is fixed
/// by the problem, so no t coordinate is emitted).
pub fn sample_terminal(bx: &DomainBox, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..bx.dim())
                .map(|i| rng.random_range(bx.ranges[i].0..=bx.stretched_hi(i)))
                .collect()
        })
        .collect()
}

/// Uniform draws on the spatial boundary: a face is picked uniformly among
/// the `2·d` faces, the remaining coordinates are uniform, t is uniform.
pub fn sample_boundary(bx: &DomainBox, n: usize, rng: &mut impl Rng) -> Vec<Point> {
    let d = bx.dim();
    (0..n)
        .map(|_| {
            let t = rng.random_range(bx.t0..=bx.t1);
            let face = rng.random_range(0..2 * d);
            let (dim, upper) = (face / 2, face % 2 == 1);
            let x = (0..d)
                .map(|i| {
                    if i == dim {
                        if upper {
                            bx.stretched_hi(i)
                        } else {
                            bx.ranges[i].0
                        }
                    } else {
                        rng.random_range(bx.ranges[i].0..=bx.stretched_hi(i))
                    }
                })
                .collect();
            Point { t, x }
        })
        .collect()
}

/// Uniform `n_t x n_x` auxiliary grid over time and the first spatial range.
pub fn aux_grid(bx: &DomainBox, n_t: usize, n_x: usize) -> Result<AuxGrid> {
    if n_t < 1 || n_x < 2 {
        return Err(DgmError::InvalidArgument(
            "auxiliary grid needs n_t >= 1 and n_x >= 2".to_string(),
        ));
    }
    let t_nodes = (0..n_t)
        .map(|j| bx.t0 + (j as f64 + 0.5) / n_t as f64 * bx.t_width())
        .collect();
    let (lo, _) = bx.ranges[0];
    let hi = bx.stretched_hi(0);
    let x_nodes = (0..n_x)
        .map(|k| lo + k as f64 / (n_x - 1) as f64 * (hi - lo))
        .collect();
    Ok(AuxGrid { t_nodes, x_nodes })
}

/// Self-normalized weights proportional to `exp(-u_k)`.
///
/// The largest exponent is subtracted before exponentiation and the
/// normalizer is accumulated with compensated summation, so the weights are
/// positive and sum to one up to round-off.
pub fn importance_weights(u_values: &[f64]) -> Result<Vec<f64>> {
    if u_values.is_empty() {
        return Err(DgmError::EmptyBatch("importance weights over empty set"));
    }
    if u_values.iter().any(|v| !v.is_finite()) {
        return Err(DgmError::NonFinite {
            context: "importance weights input".to_string(),
        });
    }
    let u_min = u_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = u_values.iter().map(|&u| (-(u - u_min)).exp()).collect();
    // Kahan sum of the normalizer.
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in &w {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    for v in &mut w {
        *v /= sum;
    }
    Ok(w)
}

/// Deterministic per-worker RNG stream derived from a master seed.
pub fn worker_rng(master_seed: u64, worker: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(worker);
    rng
}
