//! Classical numerical solvers used as independent oracles: explicit and
//! implicit Euler steps, forward/backward grid schemes for the heat
//! equation, an implicit option-pricing grid with early-exercise
//! projection, Feynman-Kac Monte Carlo, mean-reverting path simulation and
//! a fine-grid coupled solver for the mean-field pair.

pub mod bs_grid;
pub mod euler;
pub mod heat;
pub mod mfg_grid;
pub mod monte_carlo;

pub use bs_grid::{bs_grid_solver, GridSpec, Payoff};
pub use euler::{euler_explicit, euler_implicit};
pub use heat::{btcs_heat, ftcs_heat, instability_detected, HeatSpec};
pub use mfg_grid::{mfg_grid_solver, MfgGridSolution, MfgGridSpec};
pub use monte_carlo::{bs_call_mc, feynman_kac_mc, ou_simulate, FeynmanKacProblem, McConfig};

/// Uniform space-time grid of values `values[i][j] ≈ u(t_i, x_j)`.
#[derive(Debug, Clone)]
pub struct Grid1D {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Grid1D {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Bilinear interpolation inside the grid; clamps outside.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        let locate = |nodes: &[f64], v: f64| -> (usize, f64) {
            if v <= nodes[0] {
                return (0, 0.0);
            }
            if v >= *nodes.last().unwrap() {
                return (nodes.len() - 2, 1.0);
            }
            let mut i = match nodes.binary_search_by(|n| n.partial_cmp(&v).unwrap()) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            if i >= nodes.len() - 1 {
                i = nodes.len() - 2;
            }
            let w = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
            (i, w)
        };
        let (i, wt) = locate(&self.t_nodes, t);
        let (j, wx) = locate(&self.x_nodes, x);
        let v00 = self.values[i][j];
        let v01 = self.values[i][j + 1];
        let v10 = self.values[i + 1][j];
        let v11 = self.values[i + 1][j + 1];
        v00 * (1.0 - wt) * (1.0 - wx)
            + v01 * (1.0 - wt) * wx
            + v10 * wt * (1.0 - wx)
            + v11 * wt * wx
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }
}

/// Solves a tridiagonal system in place (Thomas algorithm, O(n)).
/// `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c_star = vec![0.0; n];
    let mut d_star = vec![0.0; n];
    c_star[0] = upper[0] / diag[0];
    d_star[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c_star[i - 1];
        c_star[i] = upper[i] / m;
        d_star[i] = (rhs[i] - lower[i] * d_star[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d_star[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d_star[i] - c_star[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_a_known_system() {
        // [2 1 0; 1 2 1; 0 1 2] x = [4; 8; 8] -> x = [1, 2, 3]
        let x = thomas(&[0.0, 1.0, 1.0], &[2.0, 2.0, 2.0], &[1.0, 1.0, 0.0], &[4.0, 8.0, 8.0]);
        for (got, want) in x.iter().zip(&[1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_interpolation_is_exact_on_bilinear_data() {
        let g = Grid1D {
            t_nodes: vec![0.0, 1.0],
            x_nodes: vec![0.0, 2.0],
            values: vec![vec![0.0, 2.0], vec![3.0, 5.0]],
        };
        assert!((g.interpolate(0.5, 1.0) - 2.5).abs() < 1e-12);
        assert!((g.interpolate(0.0, 2.0) - 2.0).abs() < 1e-12);
        // clamped outside
        assert!((g.interpolate(-1.0, 3.0) - 2.0).abs() < 1e-12);
    }
}
