//! Explicit and implicit Euler steps for initial-value problems.

use crate::error::{DgmError, Result};

/// Forward steps `y_{i+1} = y_i + f(t_i, y_i)·h` up to `t_end`.
pub fn euler_explicit(
    f: impl Fn(f64, f64) -> f64,
    y0: f64,
    t_end: f64,
    h: f64,
) -> Vec<(f64, f64)> {
    let n = (t_end / h).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let (mut t, mut y) = (0.0, y0);
    out.push((t, y));
    for _ in 0..n {
        y += f(t, y) * h;
        t += h;
        out.push((t, y));
    }
    out
}

/// Backward steps `y_{i+1} = y_i + f(t_{i+1}, y_{i+1})·h`, each solved by
/// Newton iteration on `g(y) = y − y_i − h·f(t_{i+1}, y)`.
pub fn euler_implicit(
    f: impl Fn(f64, f64) -> f64,
    dfdy: impl Fn(f64, f64) -> f64,
    y0: f64,
    t_end: f64,
    h: f64,
    newton_tol: f64,
) -> Result<Vec<(f64, f64)>> {
    let n = (t_end / h).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let (mut t, mut y) = (0.0, y0);
    out.push((t, y));
    for _ in 0..n {
        let t_next = t + h;
        let mut z = y; // warm start from the previous value
        let mut converged = false;
        for _ in 0..50 {
            let g = z - y - h * f(t_next, z);
            if g.abs() < newton_tol {
                converged = true;
                break;
            }
            let dg = 1.0 - h * dfdy(t_next, z);
            if dg == 0.0 || !dg.is_finite() {
                break;
            }
            z -= g / dg;
            if !z.is_finite() {
                break;
            }
        }
        // Accept on final residual too: the loop checks before the last
        // correction lands.
        if !converged {
            let g = z - y - h * f(t_next, z);
            converged = z.is_finite() && g.abs() < newton_tol;
        }
        if !converged {
            return Err(DgmError::Numerical(format!(
                "newton iteration did not converge within 50 steps at t = {t_next}"
            )));
        }
        y = z;
        t = t_next;
        out.push((t, y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let traj = euler_explicit(|_, _| 0.0, 2.5, 1.0, 0.1);
        assert!(traj.iter().all(|&(_, y)| y == 2.5));
    }

    #[test]
    fn unit_source_integrates_exactly() {
        let traj = euler_explicit(|_, _| 1.0, 0.0, 1.0, 0.05);
        for &(t, y) in &traj {
            assert!((y - t).abs() < 1e-12);
        }
    }

    #[test]
    fn explicit_instability_witness() {
        // y' = λy with |1 + hλ| > 1 grows without bound.
        let lambda = -30.0;
        let h = 0.1; // 1 + hλ = -2
        let traj = euler_explicit(|_, y| lambda * y, 1.0, 2.0, h);
        let last = traj.last().unwrap().1.abs();
        assert!(last > 1e5, "expected blow-up, got {last}");
        // Stable step for contrast.
        let traj = euler_explicit(|_, y| lambda * y, 1.0, 2.0, 0.01);
        assert!(traj.last().unwrap().1.abs() < 1.0);
    }

    #[test]
    fn implicit_is_stable_for_stiff_decay() {
        for lambda in [-100.0, -1e6] {
            let traj =
                euler_implicit(|_, y| lambda * y, |_, _| lambda, 1.0, 1.0, 0.1, 1e-12).unwrap();
            let mut prev = 1.0f64;
            for &(_, y) in &traj[1..] {
                assert!(y.abs() <= prev.abs() && y > 0.0, "monotone decay violated");
                prev = y;
            }
            assert!(traj.last().unwrap().1 < 1e-6);
        }
    }

    #[test]
    fn linear_problem_converges_in_one_newton_step() {
        // For linear f the Newton residual is linear in z: one correction
        // lands exactly, so the trajectory matches the closed-form implicit
        // recursion y_{n+1} = y_n / (1 - hλ).
        let lambda = -2.0;
        let h = 0.05;
        let traj = euler_implicit(|_, y| lambda * y, |_, _| lambda, 1.0, 0.5, h, 1e-14).unwrap();
        let mut expect = 1.0;
        for &(_, y) in &traj[1..] {
            expect /= 1.0 - h * lambda;
            assert!((y - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_failure_is_reported() {
        // y = y0 + h(y² + 1) with y0 = 0, h = 1 has no real root.
        let err = euler_implicit(|_, y| y * y + 1.0, |_, y| 2.0 * y, 0.0, 1.0, 1.0, 1e-12);
        assert!(err.is_err());
    }
}
