//! Forward-in-time and backward-in-time central-space schemes for the 1-D
//! heat equation with zero boundary values.
//!
//! The forward scheme is conditionally stable (`alpha²·dt/dx² ≤ 1/2`); the
//! backward scheme is unconditionally stable and solves one tridiagonal
//! system per step.

use super::{thomas, Grid1D};

/// Rod of length `length` with diffusivity `alpha²`, integrated to `t_end`
/// on an `(nt+1) × (nx+1)` grid.
#[derive(Debug, Clone, Copy)]
pub struct HeatSpec {
    pub alpha: f64,
    pub length: f64,
    pub t_end: f64,
    pub nx: usize,
    pub nt: usize,
}

impl HeatSpec {
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }

    /// Stability ratio `alpha²·dt/dx²` of the forward scheme.
    pub fn ratio(&self) -> f64 {
        self.alpha * self.alpha * self.dt() / (self.dx() * self.dx())
    }

    fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let t = (0..=self.nt).map(|i| i as f64 * self.dt()).collect();
        let x = (0..=self.nx).map(|j| j as f64 * self.dx()).collect();
        (t, x)
    }
}

/// Forward-difference scheme (explicit in time, central in space).
pub fn ftcs_heat(spec: &HeatSpec, initial: impl Fn(f64) -> f64) -> Grid1D {
    let (t_nodes, x_nodes) = spec.nodes();
    let r = spec.ratio();
    let mut values = Vec::with_capacity(spec.nt + 1);
    let mut row: Vec<f64> = x_nodes.iter().map(|&x| initial(x)).collect();
    row[0] = 0.0;
    row[spec.nx] = 0.0;
    values.push(row.clone());
    for _ in 0..spec.nt {
        let mut next = vec![0.0; spec.nx + 1];
        for j in 1..spec.nx {
            next[j] = row[j] + r * (row[j - 1] - 2.0 * row[j] + row[j + 1]);
        }
        values.push(next.clone());
        row = next;
    }
    Grid1D {
        t_nodes,
        x_nodes,
        values,
    }
}

/// Backward-difference scheme (implicit in time, central in space); each
/// step solves a tridiagonal system.
pub fn btcs_heat(spec: &HeatSpec, initial: impl Fn(f64) -> f64) -> Grid1D {
    let (t_nodes, x_nodes) = spec.nodes();
    let r = spec.ratio();
    let n_inner = spec.nx - 1;
    let lower = vec![-r; n_inner];
    let diag = vec![1.0 + 2.0 * r; n_inner];
    let upper = vec![-r; n_inner];
    let mut values = Vec::with_capacity(spec.nt + 1);
    let mut row: Vec<f64> = x_nodes.iter().map(|&x| initial(x)).collect();
    row[0] = 0.0;
    row[spec.nx] = 0.0;
    values.push(row.clone());
    for _ in 0..spec.nt {
        let rhs: Vec<f64> = row[1..spec.nx].to_vec();
        let inner = thomas(&lower, &diag, &upper, &rhs);
        let mut next = vec![0.0; spec.nx + 1];
        next[1..spec.nx].copy_from_slice(&inner);
        values.push(next.clone());
        row = next;
    }
    Grid1D {
        t_nodes,
        x_nodes,
        values,
    }
}

/// Whether the solution magnitude grew by more than 10x over the run,
/// which a stable scheme for the decaying heat equation can never do.
pub fn instability_detected(grid: &Grid1D) -> bool {
    let initial = grid.values[0]
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if initial == 0.0 {
        return grid.max_abs() > 0.0;
    }
    grid.max_abs() > 10.0 * initial
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine_mode(length: f64) -> impl Fn(f64) -> f64 {
        move |x: f64| (PI * x / length).sin()
    }

    /// Separation-of-variables solution for the single sine mode.
    fn exact(alpha: f64, length: f64, t: f64, x: f64) -> f64 {
        (-alpha * alpha * PI * PI * t / (length * length)).exp() * (PI * x / length).sin()
    }

    #[test]
    fn zero_initial_data_stays_zero() {
        let spec = HeatSpec {
            alpha: 1.0,
            length: 1.0,
            t_end: 0.1,
            nx: 20,
            nt: 200,
        };
        let g = ftcs_heat(&spec, |_| 0.0);
        assert_eq!(g.max_abs(), 0.0);
        let g = btcs_heat(&spec, |_| 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn stable_forward_scheme_tracks_the_decay_rate() {
        let spec = HeatSpec {
            alpha: 1.0,
            length: 1.0,
            t_end: 0.5,
            nx: 40,
            nt: 4000, // ratio 0.2
        };
        assert!(spec.ratio() <= 0.5);
        let g = ftcs_heat(&spec, sine_mode(1.0));
        let mid = spec.nx / 2;
        for (i, &t) in g.t_nodes.iter().enumerate() {
            let want = exact(1.0, 1.0, t, g.x_nodes[mid]);
            assert!(
                (g.values[i][mid] - want).abs() < 0.01 * want.max(1e-3),
                "t={t}: {} vs {want}",
                g.values[i][mid]
            );
        }
    }

    #[test]
    fn backward_scheme_error_below_one_percent_at_200x200() {
        let spec = HeatSpec {
            alpha: 1.0,
            length: 1.0,
            t_end: 1.0,
            nx: 200,
            nt: 200,
        };
        let g = btcs_heat(&spec, sine_mode(1.0));
        let mut worst = 0.0f64;
        for (i, &t) in g.t_nodes.iter().enumerate() {
            for (j, &x) in g.x_nodes.iter().enumerate() {
                worst = worst.max((g.values[i][j] - exact(1.0, 1.0, t, x)).abs());
            }
        }
        // 1% of the unit initial amplitude.
        assert!(worst < 0.01, "max abs error {worst}");
    }

    #[test]
    fn backward_scheme_first_order_in_time_second_in_space() {
        let err = |nx: usize, nt: usize| -> f64 {
            let spec = HeatSpec {
                alpha: 1.0,
                length: 1.0,
                t_end: 0.25,
                nx,
                nt,
            };
            let g = btcs_heat(&spec, sine_mode(1.0));
            let mut worst = 0.0f64;
            for (i, &t) in g.t_nodes.iter().enumerate() {
                for (j, &x) in g.x_nodes.iter().enumerate() {
                    worst = worst.max((g.values[i][j] - exact(1.0, 1.0, t, x)).abs());
                }
            }
            worst
        };
        // Time refinement at fine fixed dx: error halves.
        let e1 = err(400, 50);
        let e2 = err(400, 100);
        let rate_t = (e1 / e2).log2();
        assert!((rate_t - 1.0).abs() < 0.25, "time order {rate_t}");
        // Space refinement at fine fixed dt: error quarters.
        let e1 = err(8, 20000);
        let e2 = err(16, 20000);
        let rate_x = (e1 / e2).log2();
        assert!((rate_x - 2.0).abs() < 0.3, "space order {rate_x}");
    }

    #[test]
    fn forward_scheme_instability_fires_exactly_above_half() {
        for (ratio, should_fire) in [(0.4, false), (0.49, false), (0.51, true), (0.6, true)] {
            let nx = 50usize;
            let dx = 1.0 / nx as f64;
            let dt = ratio * dx * dx;
            let nt = (1.0 / dt).ceil() as usize;
            let spec = HeatSpec {
                alpha: 1.0,
                length: 1.0,
                t_end: nt as f64 * dt,
                nx,
                nt,
            };
            assert!((spec.ratio() - ratio).abs() < 1e-12);
            let g = ftcs_heat(&spec, sine_mode(1.0));
            assert_eq!(
                instability_detected(&g),
                should_fire,
                "ratio {ratio}: max |u| = {}",
                g.max_abs()
            );
        }
    }
}
