//! Fine-grid fixed-point solver for the coupled optimality / density-flow
//! pair, used as the reference solution where no closed form exists.
//!
//! Each outer iteration alternates a backward sweep of the inventory-value
//! equation given the current net-flow path, a forward sweep of the density
//! with a conservative upwind flux (zero boundary flux, so discrete mass is
//! conserved to round-off), and a quadrature update of the flow; the loop
//! stops once the flow path changes by less than the tolerance in sup norm.

use crate::error::{DgmError, Result};
use crate::problems::mfg::MfgCoeffs;

#[derive(Debug, Clone, Copy)]
pub struct MfgGridSpec {
    pub nq: usize,
    pub nt: usize,
    /// Upper inventory bound of the grid (lower bound is 0).
    pub q_max: f64,
    /// Sup-norm tolerance on the flow-path update.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for MfgGridSpec {
    fn default() -> Self {
        MfgGridSpec {
            nq: 200,
            nt: 800,
            q_max: 10.0,
            tol: 1e-6,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MfgGridSolution {
    pub t_nodes: Vec<f64>,
    pub q_nodes: Vec<f64>,
    /// Inventory value field `h[i][j] ≈ h(t_i, q_j)`.
    pub h: Vec<Vec<f64>>,
    /// Density field `m[i][j] ≈ m(t_i, q_j)`.
    pub m: Vec<Vec<f64>>,
    /// Net trading flow per time node.
    pub flow: Vec<f64>,
    /// Mean inventory per time node.
    pub mean_inventory: Vec<f64>,
    /// Total discrete mass per time node.
    pub mass: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm flow change per outer iteration.
    pub flow_changes: Vec<f64>,
}

impl MfgGridSolution {
    pub fn h_at(&self, t: f64, q: f64) -> f64 {
        bilinear(&self.t_nodes, &self.q_nodes, &self.h, t, q)
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        linear(&self.t_nodes, &self.mean_inventory, t)
    }

    pub fn flow_at(&self, t: f64) -> f64 {
        linear(&self.t_nodes, &self.flow, t)
    }
}

fn linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= *xs.last().unwrap() {
        return *ys.last().unwrap();
    }
    let i = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] * (1.0 - w) + ys[i + 1] * w
}

fn bilinear(ts: &[f64], qs: &[f64], field: &[Vec<f64>], t: f64, q: f64) -> f64 {
    let row = |i: usize| linear(qs, &field[i], q);
    if t <= ts[0] {
        return row(0);
    }
    if t >= *ts.last().unwrap() {
        return row(ts.len() - 1);
    }
    let i = match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return row(i),
        Err(i) => i - 1,
    };
    let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
    row(i) * (1.0 - w) + row(i + 1) * w
}

/// Spatial derivative with second-order one-sided stencils at the edges.
fn d_dq(values: &[f64], j: usize, dq: f64) -> f64 {
    let n = values.len();
    if j == 0 {
        (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dq)
    } else if j == n - 1 {
        (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dq)
    } else {
        (values[j + 1] - values[j - 1]) / (2.0 * dq)
    }
}

pub fn mfg_grid_solver(c: &MfgCoeffs, spec: &MfgGridSpec) -> Result<MfgGridSolution> {
    if spec.nq < 8 || spec.nt < 8 {
        return Err(DgmError::InvalidArgument(
            "grid needs at least 8 nodes per axis".to_string(),
        ));
    }
    let nq = spec.nq;
    let nt = spec.nt;
    let dq = spec.q_max / nq as f64;
    let dt = c.maturity / nt as f64;
    let q_nodes: Vec<f64> = (0..=nq).map(|j| j as f64 * dq).collect();
    let t_nodes: Vec<f64> = (0..=nt).map(|i| i as f64 * dt).collect();

    // Initial density: Gaussian at the grid nodes, normalized so the
    // discrete mass is exactly one.
    let mut m0: Vec<f64> = q_nodes
        .iter()
        .map(|&q| {
            let d = q - c.init_mean;
            (-d * d / (2.0 * c.init_var)).exp()
        })
        .collect();
    let total: f64 = m0.iter().sum::<f64>() * dq;
    for v in &mut m0 {
        *v /= total;
    }

    let mut flow = vec![0.0f64; nt + 1];
    let mut h = vec![vec![0.0; nq + 1]; nt + 1];
    let mut m = vec![vec![0.0; nq + 1]; nt + 1];
    let mut flow_changes: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for outer in 0..spec.max_iterations {
        iterations = outer + 1;

        // Backward sweep of the value equation
        //   h_t = phi q² − h_q²/(4k) − kappa·mu(t)·q,  h(T,q) = −alpha q².
        for (j, &q) in q_nodes.iter().enumerate() {
            h[nt][j] = -c.terminal_penalty * q * q;
        }
        for i in (0..nt).rev() {
            // Heun step from t_{i+1} down to t_i.
            let rhs = |row: &[f64], mu: f64, out: &mut Vec<f64>| {
                out.clear();
                for (j, &q) in q_nodes.iter().enumerate() {
                    let hq = d_dq(row, j, dq);
                    out.push(
                        c.running_penalty * q * q - hq * hq / (4.0 * c.temp_impact)
                            - c.perm_impact * mu * q,
                    );
                }
            };
            let mut k1 = Vec::with_capacity(nq + 1);
            let mut k2 = Vec::with_capacity(nq + 1);
            let row_next = h[i + 1].clone();
            rhs(&row_next, flow[i + 1], &mut k1);
            let predictor: Vec<f64> = row_next
                .iter()
                .zip(&k1)
                .map(|(v, k)| v - dt * k)
                .collect();
            rhs(&predictor, flow[i], &mut k2);
            for j in 0..=nq {
                h[i][j] = row_next[j] - 0.5 * dt * (k1[j] + k2[j]);
            }
        }

        // Forward sweep of the density: conservative upwind with zero
        // boundary fluxes.
        m[0].copy_from_slice(&m0);
        for i in 0..nt {
            let vel: Vec<f64> = (0..=nq)
                .map(|j| d_dq(&h[i], j, dq) / (2.0 * c.temp_impact))
                .collect();
            let mut flux = vec![0.0f64; nq + 2]; // faces j-1/2, zero at both ends
            for j in 1..=nq {
                let v_face = 0.5 * (vel[j - 1] + vel[j]);
                flux[j] = if v_face >= 0.0 {
                    v_face * m[i][j - 1]
                } else {
                    v_face * m[i][j]
                };
            }
            for j in 0..=nq {
                m[i + 1][j] = m[i][j] - dt / dq * (flux[j + 1] - flux[j]);
            }
        }

        // Flow update by quadrature, with damping.
        let mut delta = 0.0f64;
        let mut new_flow = vec![0.0f64; nt + 1];
        for i in 0..=nt {
            let mut acc = 0.0;
            for j in 0..=nq {
                let hq = d_dq(&h[i], j, dq);
                acc += hq / (2.0 * c.temp_impact) * m[i][j] * dq;
            }
            new_flow[i] = acc;
            delta = delta.max((acc - flow[i]).abs());
        }
        flow_changes.push(delta);
        for i in 0..=nt {
            flow[i] = 0.5 * flow[i] + 0.5 * new_flow[i];
        }
        if delta < spec.tol {
            break;
        }
    }

    let mass: Vec<f64> = m.iter().map(|row| row.iter().sum::<f64>() * dq).collect();
    let mean_inventory: Vec<f64> = m
        .iter()
        .map(|row| {
            row.iter()
                .zip(&q_nodes)
                .map(|(&mi, &q)| mi * q)
                .sum::<f64>()
                * dq
        })
        .collect();

    Ok(MfgGridSolution {
        t_nodes,
        q_nodes,
        h,
        m,
        flow,
        mean_inventory,
        mass,
        iterations,
        flow_changes,
    })
}
