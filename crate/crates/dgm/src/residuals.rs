//! Differential operators applied to the fitted networks and assembly of the
//! full training loss for one batch.
//!
//! Spatial and temporal derivatives of a network are formed from central
//! finite differences of forward evaluations; every shifted evaluation is a
//! tape node, so parameter gradients flow through the stencils. Second
//! derivatives are never taken on the tape. At the edges of the time
//! interval a one-sided second-order stencil replaces the central one.
//!
//! Loss terms: `l1` mean squared interior operator residual, `l2` mean
//! squared boundary mismatch, `l3` mean squared terminal/initial mismatch,
//! `l4` mean squared obstacle violation, `integral` mean squared residual of
//! a coupled density-flow equation (the mean-field pair). The total is
//! their weighted sum.

use crate::autodiff::{Role, Tape, VarHandle};
use crate::error::{DgmError, Result};
use crate::network::{dgm_forward, DgmParams, DgmShape, ParamHandles};
use crate::problems::{
    black_scholes, execution, fokker_planck, fit_target, merton, mfg, systemic, CondSide,
    HessNeed, ProblemKind, ProblemSpec,
};
use crate::sampling::{importance_weights, Batch, DomainBox, Point};
use crate::util::PiecewiseLinear;
use rayon::prelude::*;

/// Finite-difference configuration. `h_unit` is the step per unit of
/// coordinate range; the resolved step along each coordinate is
/// `h_unit × (stretched range)`.
#[derive(Debug, Clone, Copy)]
pub struct DerivConfig {
    pub h_unit: f64,
    pub symmetrize: bool,
}

impl Default for DerivConfig {
    fn default() -> Self {
        DerivConfig {
            h_unit: 1e-3,
            symmetrize: true,
        }
    }
}

impl DerivConfig {
    pub fn new(h_unit: f64) -> Result<Self> {
        if !(h_unit > 0.0 && h_unit <= 1e-2) {
            return Err(DgmError::InvalidArgument(format!(
                "fd step per unit range must be in (0, 1e-2], got {h_unit}"
            )));
        }
        Ok(DerivConfig {
            h_unit,
            symmetrize: true,
        })
    }

    /// Resolved steps for a domain.
    pub fn steps(&self, bx: &DomainBox) -> Steps {
        Steps {
            t: self.h_unit * bx.t_width(),
            x: (0..bx.dim()).map(|i| self.h_unit * bx.stretched_width(i)).collect(),
        }
    }
}

/// Resolved per-coordinate finite-difference steps.
#[derive(Debug, Clone)]
pub struct Steps {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Per-term loss values for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub l1_operator: f64,
    pub l2_boundary: f64,
    pub l3_terminal: f64,
    pub l4_penalty: f64,
    pub integral_terms: f64,
    pub total: f64,
}

/// Term weights for the total loss; all default to 1.
#[derive(Debug, Clone, Copy)]
pub struct TermWeights {
    pub operator: f64,
    pub boundary: f64,
    pub condition: f64,
    pub penalty: f64,
    pub integral: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        TermWeights {
            operator: 1.0,
            boundary: 1.0,
            condition: 1.0,
            penalty: 1.0,
            integral: 1.0,
        }
    }
}

/// Mutable cross-equation state for coupled problems: the frozen net
/// trading flow of the mean-field pair, recomputed at resampling events.
#[derive(Debug, Clone, Default)]
pub struct CouplingState {
    pub net_flow: Option<PiecewiseLinear>,
}

impl CouplingState {
    fn flow_at(&self, t: f64) -> f64 {
        self.net_flow.as_ref().map_or(0.0, |f| f.eval(t))
    }
}

/// Loss values plus (optionally) the gradient of the weighted total with
/// respect to every network's flat parameter vector.
#[derive(Debug)]
pub struct BatchEval {
    pub report: LossReport,
    pub grads: Vec<Vec<f64>>,
}

/// Evaluation options: whether to run the reverse sweeps, and whether to
/// keep all chunk work on the calling thread. Chunk boundaries and the
/// reduction order are identical either way, so both modes produce
/// bit-for-bit the same numbers.
#[derive(Debug, Clone, Copy)]
pub struct EvalOpts {
    pub with_grads: bool,
    pub sequential: bool,
}

impl EvalOpts {
    pub fn grads() -> Self {
        EvalOpts { with_grads: true, sequential: false }
    }

    pub fn values_only() -> Self {
        EvalOpts { with_grads: false, sequential: false }
    }
}

fn chunked<T: Sync, O: Send>(
    items: &[T],
    chunk: usize,
    sequential: bool,
    f: impl Fn(&[T]) -> Result<O> + Sync + Send,
) -> Result<Vec<O>> {
    if sequential {
        items.chunks(chunk).map(&f).collect()
    } else {
        items.par_chunks(chunk).map(&f).collect()
    }
}

// ---------------------------------------------------------------------------
// Plain-f64 finite differences (oracle checks, control surfaces)
// ---------------------------------------------------------------------------

/// Central-difference gradient of `f` at `p` with per-coordinate steps.
pub fn fd_gradient<F>(f: &mut F, p: &[f64], steps: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut shifted = p.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let h = steps[i];
        shifted[i] = p[i] + h;
        let up = f(&shifted)?;
        shifted[i] = p[i] - h;
        let down = f(&shifted)?;
        shifted[i] = p[i];
        let d = (up - down) / (2.0 * h);
        if !d.is_finite() {
            return Err(DgmError::NonFinite {
                context: format!("fd gradient coordinate {i}"),
            });
        }
        out.push(d);
    }
    Ok(out)
}

/// Second-order central Hessian of `f` at `p`; the diagonal uses the
/// three-point stencil, off-diagonals the four-point cross stencil, and the
/// result is mirrored so it is symmetric bit-for-bit.
pub fn fd_hessian<F>(f: &mut F, p: &[f64], steps: &[f64], symmetrize: bool) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = p.len();
    let center = f(p)?;
    let mut h = vec![vec![0.0; n]; n];
    let mut shifted = p.to_vec();
    for i in 0..n {
        let hi = steps[i];
        shifted[i] = p[i] + hi;
        let up = f(&shifted)?;
        shifted[i] = p[i] - hi;
        let down = f(&shifted)?;
        shifted[i] = p[i];
        let v = (up - 2.0 * center + down) / (hi * hi);
        if !v.is_finite() {
            return Err(DgmError::NonFinite {
                context: format!("fd hessian diagonal {i}"),
            });
        }
        h[i][i] = v;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (hi, hj) = (steps[i], steps[j]);
            let mut eval_at = |si: f64, sj: f64| -> Result<f64> {
                shifted[i] = p[i] + si;
                shifted[j] = p[j] + sj;
                let v = f(&shifted);
                shifted[i] = p[i];
                shifted[j] = p[j];
                v
            };
            let pp = eval_at(hi, hj)?;
            let pm = eval_at(hi, -hj)?;
            let mp = eval_at(-hi, hj)?;
            let mm = eval_at(-hi, -hj)?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            if !v.is_finite() {
                return Err(DgmError::NonFinite {
                    context: format!("fd hessian cross ({i},{j})"),
                });
            }
            h[i][j] = v;
            if symmetrize {
                h[j][i] = v;
            } else {
                h[j][i] = v;
            }
        }
    }
    Ok(h)
}

/// Second-order time derivative stencil on a plain function, matching the
/// on-tape policy: central inside the interval, one-sided at the edges.
pub fn fd_time_derivative<F>(f: &mut F, t: f64, h: f64, t_range: (f64, f64)) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (t0, t1) = t_range;
    let v = if t + h > t1 {
        (3.0 * f(t)? - 4.0 * f(t - h)? + f(t - 2.0 * h)?) / (2.0 * h)
    } else if t - h < t0 {
        (-3.0 * f(t)? + 4.0 * f(t + h)? - f(t + 2.0 * h)?) / (2.0 * h)
    } else {
        (f(t + h)? - f(t - h)?) / (2.0 * h)
    };
    if !v.is_finite() {
        return Err(DgmError::NonFinite {
            context: "fd time derivative".to_string(),
        });
    }
    Ok(v)
}

/// Importance-sampled expectation of the time derivative per time node:
/// `I_j = Σ_k ∂_t u(t_j, x_k)·w_k` with self-normalized weights `∝ e^{-u}`.
pub fn integral_term<F>(
    u: &mut F,
    t_grid: &[f64],
    x_grid: &[f64],
    h_t: f64,
    t_range: (f64, f64),
) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if t_grid.is_empty() || x_grid.is_empty() {
        return Err(DgmError::EmptyBatch("integral term grid"));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for &tj in t_grid {
        let u_vals: Vec<f64> = x_grid.iter().map(|&x| u(tj, x)).collect::<Result<_>>()?;
        let w = importance_weights(&u_vals)?;
        let mut acc = 0.0;
        for (k, &xk) in x_grid.iter().enumerate() {
            let du = fd_time_derivative(&mut |t| u(t, xk), tj, h_t, t_range)?;
            acc += du * w[k];
        }
        out.push(acc);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// On-tape stencils
// ---------------------------------------------------------------------------

struct TapeNet<'a> {
    shape: &'a DgmShape,
    ph: ParamHandles,
}

fn register_nets<'a>(tape: &mut Tape, nets: &'a [DgmParams]) -> Result<Vec<TapeNet<'a>>> {
    nets.iter()
        .map(|p| {
            Ok(TapeNet {
                shape: &p.shape,
                ph: p.register(tape)?,
            })
        })
        .collect()
}

fn net_eval(tape: &mut Tape, net: &TapeNet, t: f64, x: &[f64]) -> Result<VarHandle> {
    let mut inputs = Vec::with_capacity(1 + x.len());
    inputs.push(tape.var(t, Role::Input)?);
    for &xi in x {
        inputs.push(tape.var(xi, Role::Input)?);
    }
    let out = dgm_forward(tape, net.shape, &net.ph, &inputs)?;
    Ok(out[0])
}

struct Stencil {
    f: VarHandle,
    f_t: Option<VarHandle>,
    grad: Vec<VarHandle>,
    hess_diag: Vec<VarHandle>,
    /// Row-major full Hessian, only populated for `HessNeed::Full`.
    hess_full: Vec<VarHandle>,
}

/// Time derivative handle: central inside the interval, one-sided
/// second-order at the edges.
fn time_derivative(
    tape: &mut Tape,
    net: &TapeNet,
    t: f64,
    x: &[f64],
    h: f64,
    t_range: (f64, f64),
) -> Result<VarHandle> {
    let (t0, t1) = t_range;
    if t + h > t1 {
        let f0 = net_eval(tape, net, t, x)?;
        let f1 = net_eval(tape, net, t - h, x)?;
        let f2 = net_eval(tape, net, t - 2.0 * h, x)?;
        let a = tape.lincomb(3.0 / (2.0 * h), f0, -4.0 / (2.0 * h), f1)?;
        tape.add_scaled(a, 1.0 / (2.0 * h), f2)
    } else if t - h < t0 {
        let f0 = net_eval(tape, net, t, x)?;
        let f1 = net_eval(tape, net, t + h, x)?;
        let f2 = net_eval(tape, net, t + 2.0 * h, x)?;
        let a = tape.lincomb(-3.0 / (2.0 * h), f0, 4.0 / (2.0 * h), f1)?;
        tape.add_scaled(a, -1.0 / (2.0 * h), f2)
    } else {
        let up = net_eval(tape, net, t + h, x)?;
        let down = net_eval(tape, net, t - h, x)?;
        let d = tape.sub(up, down)?;
        tape.scale(1.0 / (2.0 * h), d)
    }
}

impl Tape {
    fn add_scaled(&mut self, a: VarHandle, c: f64, b: VarHandle) -> Result<VarHandle> {
        let cb = self.scale(c, b)?;
        Tape::add(self, a, cb)
    }
}

fn build_stencil(
    tape: &mut Tape,
    net: &TapeNet,
    point: &Point,
    steps: &Steps,
    t_range: (f64, f64),
    time: bool,
    grad: bool,
    hess: HessNeed,
) -> Result<Stencil> {
    let (t, x) = (point.t, point.x.as_slice());
    let f = net_eval(tape, net, t, x)?;
    let f_t = if time {
        Some(time_derivative(tape, net, t, x, steps.t, t_range)?)
    } else {
        None
    };

    let d = x.len();
    let mut grad_h = Vec::new();
    let mut diag_h = Vec::new();
    let mut full_h = Vec::new();
    if grad || hess != HessNeed::None {
        let mut shifted = x.to_vec();
        let mut ups = Vec::with_capacity(d);
        let mut downs = Vec::with_capacity(d);
        for i in 0..d {
            let h = steps.x[i];
            shifted[i] = x[i] + h;
            ups.push(net_eval(tape, net, t, &shifted)?);
            shifted[i] = x[i] - h;
            downs.push(net_eval(tape, net, t, &shifted)?);
            shifted[i] = x[i];
        }
        for i in 0..d {
            let h = steps.x[i];
            let diff = tape.sub(ups[i], downs[i])?;
            grad_h.push(tape.scale(1.0 / (2.0 * h), diff)?);
        }
        if hess != HessNeed::None {
            for i in 0..d {
                let h = steps.x[i];
                let sum = tape.add(ups[i], downs[i])?;
                let two_f = tape.scale(2.0, f)?;
                let num = tape.sub(sum, two_f)?;
                diag_h.push(tape.scale(1.0 / (h * h), num)?);
            }
        }
        if hess == HessNeed::Full {
            full_h = vec![f; d * d];
            let mut sh = x.to_vec();
            for i in 0..d {
                full_h[i * d + i] = diag_h[i];
                for j in (i + 1)..d {
                    let (hi, hj) = (steps.x[i], steps.x[j]);
                    let mut corner = |si: f64, sj: f64, tape: &mut Tape| -> Result<VarHandle> {
                        sh[i] = x[i] + si;
                        sh[j] = x[j] + sj;
                        let v = net_eval(tape, net, t, &sh);
                        sh[i] = x[i];
                        sh[j] = x[j];
                        v
                    };
                    let pp = corner(hi, hj, tape)?;
                    let pm = corner(hi, -hj, tape)?;
                    let mp = corner(-hi, hj, tape)?;
                    let mm = corner(-hi, -hj, tape)?;
                    let a = tape.sub(pp, pm)?;
                    let b = tape.sub(mm, mp)?;
                    let num = tape.add(a, b)?;
                    let v = tape.scale(1.0 / (4.0 * hi * hj), num)?;
                    // Mirrored entry: exactly the same node on both sides.
                    full_h[i * d + j] = v;
                    full_h[j * d + i] = v;
                }
            }
        }
    }
    Ok(Stencil {
        f,
        f_t,
        grad: grad_h,
        hess_diag: diag_h,
        hess_full: full_h,
    })
}

// ---------------------------------------------------------------------------
// Batch loss
// ---------------------------------------------------------------------------

struct Scratch {
    tape: Tape,
    adjoint: Vec<f64>,
}

thread_local! {
    // One tape and one adjoint buffer per worker thread: point tapes run to
    // hundreds of thousands of nodes, and reallocating them per point would
    // dominate the sweep itself.
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch {
        tape: Tape::new(),
        adjoint: Vec::new(),
    });
}

#[derive(Default, Clone)]
struct Accum {
    l1: f64,
    l2: f64,
    l3: f64,
    l4: f64,
    integral: f64,
    grads: Vec<Vec<f64>>,
}

impl Accum {
    fn new(nets: &[DgmParams], with_grads: bool) -> Self {
        Accum {
            grads: if with_grads {
                nets.iter().map(|n| vec![0.0; n.param_count()]).collect()
            } else {
                Vec::new()
            },
            ..Default::default()
        }
    }

    fn merge(&mut self, other: &Accum) {
        self.l1 += other.l1;
        self.l2 += other.l2;
        self.l3 += other.l3;
        self.l4 += other.l4;
        self.integral += other.integral;
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += b;
            }
        }
    }

    fn absorb(
        &mut self,
        tape: &Tape,
        objective: VarHandle,
        nets: &[TapeNet],
        scale: f64,
        adjoint: &mut Vec<f64>,
        with_grads: bool,
    ) {
        if !with_grads {
            return;
        }
        tape.backward_into(objective, adjoint);
        for (acc, net) in self.grads.iter_mut().zip(nets) {
            for (slot, h) in acc.iter_mut().zip(net.ph.flat()) {
                *slot += scale * adjoint[h.index()];
            }
        }
    }
}

/// Which networks take part in interior (pointwise) residuals.
fn interior_nets(problem: &ProblemSpec) -> Vec<usize> {
    match problem.kind {
        ProblemKind::MeanFieldGame(_) => vec![0],
        _ => (0..problem.n_unknowns).collect(),
    }
}

/// Builds the interior residual handles of every equation at one point.
fn pointwise_residuals(
    tape: &mut Tape,
    problem: &ProblemSpec,
    nets: &[TapeNet],
    stencils: &[Stencil],
    point: &Point,
    coupling: &CouplingState,
) -> Result<Vec<VarHandle>> {
    match &problem.kind {
        ProblemKind::FunctionFit => {
            let target = tape.constant(fit_target(point.t, point.x[0]))?;
            Ok(vec![tape.sub(stencils[0].f, target)?])
        }
        ProblemKind::EuropeanCall(c) | ProblemKind::AmericanPut(c) => {
            let s = &stencils[0];
            Ok(vec![black_scholes::bs_residual(
                tape,
                point.x[0],
                s.f,
                s.f_t.unwrap(),
                s.grad[0],
                s.hess_diag[0],
                c,
            )?])
        }
        ProblemKind::Merton(c) => {
            let s = &stencils[0];
            Ok(vec![merton::merton_residual(
                tape,
                point.x[0],
                s.f_t.unwrap(),
                s.grad[0],
                s.hess_diag[0],
                c,
            )?])
        }
        ProblemKind::Execution(c) => {
            let s = &stencils[0];
            Ok(vec![execution::execution_residual(
                tape,
                point.x[0],
                s.f_t.unwrap(),
                s.grad[0],
                c,
            )?])
        }
        ProblemKind::SystemicRisk(c) => {
            let bundles: Vec<systemic::PlayerDerivs<VarHandle>> = stencils
                .iter()
                .map(|s| systemic::PlayerDerivs {
                    time: s.f_t.unwrap(),
                    grad: s.grad.clone(),
                    hess: s.hess_full.clone(),
                })
                .collect();
            (0..nets.len())
                .map(|i| systemic::systemic_residual(tape, i, &point.x, &bundles, c))
                .collect()
        }
        ProblemKind::MeanFieldGame(c) => {
            let s = &stencils[0];
            Ok(vec![mfg::mfg_hjb_residual(
                tape,
                point.x[0],
                s.f_t.unwrap(),
                s.grad[0],
                coupling.flow_at(point.t),
                c,
            )?])
        }
        ProblemKind::FokkerPlanckOu(_) => Err(DgmError::InvalidArgument(
            "density problems use the integral-grid path, not pointwise residuals".to_string(),
        )),
    }
}

/// On-tape self-normalized weights `∝ e^{-u_k}`. The largest exponent is
/// subtracted as a constant; the shift cancels exactly in the ratio, so
/// gradients are unaffected.
fn tape_importance_weights(tape: &mut Tape, u_vals: &[VarHandle]) -> Result<Vec<VarHandle>> {
    let u_min = u_vals
        .iter()
        .map(|h| tape.value(*h))
        .fold(f64::INFINITY, f64::min);
    let shift = tape.constant(u_min)?;
    let mut exps = Vec::with_capacity(u_vals.len());
    for &u in u_vals {
        let s = tape.sub(u, shift)?;
        let n = tape.neg(s)?;
        exps.push(tape.exp(n)?);
    }
    let mut sum = exps[0];
    for &e in &exps[1..] {
        sum = tape.add(sum, e)?;
    }
    exps.iter().map(|&e| tape.div(e, sum)).collect()
}

/// One integral-grid row: residuals of the density equation at every x node
/// of time `t_j`, sharing the row's importance-sampled integral term.
fn row_residuals(
    tape: &mut Tape,
    problem: &ProblemSpec,
    nets: &[TapeNet],
    t_j: f64,
    x_nodes: &[f64],
    steps: &Steps,
) -> Result<Vec<VarHandle>> {
    let t_range = (problem.domain.t0, problem.domain.t1);
    let u_net = match problem.kind {
        ProblemKind::FokkerPlanckOu(_) => &nets[0],
        ProblemKind::MeanFieldGame(_) => &nets[1],
        _ => {
            return Err(DgmError::InvalidArgument(
                "integral rows only apply to density problems".to_string(),
            ))
        }
    };

    let mut u_center = Vec::with_capacity(x_nodes.len());
    let mut u_time = Vec::with_capacity(x_nodes.len());
    for &xk in x_nodes {
        u_center.push(net_eval(tape, u_net, t_j, &[xk])?);
        u_time.push(time_derivative(tape, u_net, t_j, &[xk], steps.t, t_range)?);
    }
    let weights = tape_importance_weights(tape, &u_center)?;
    let mut integral = tape.mul(u_time[0], weights[0])?;
    for k in 1..x_nodes.len() {
        let term = tape.mul(u_time[k], weights[k])?;
        integral = tape.add(integral, term)?;
    }

    let h = steps.x[0];
    let mut out = Vec::with_capacity(x_nodes.len());
    for (k, &xk) in x_nodes.iter().enumerate() {
        let up = net_eval(tape, u_net, t_j, &[xk + h])?;
        let down = net_eval(tape, u_net, t_j, &[xk - h])?;
        let diff = tape.sub(up, down)?;
        let u_x = tape.scale(1.0 / (2.0 * h), diff)?;
        let r = match &problem.kind {
            ProblemKind::FokkerPlanckOu(c) => {
                let sum = tape.add(up, down)?;
                let two_f = tape.scale(2.0, u_center[k])?;
                let num = tape.sub(sum, two_f)?;
                let u_xx = tape.scale(1.0 / (h * h), num)?;
                fokker_planck::fp_transformed_residual(
                    tape, xk, u_time[k], u_x, u_xx, integral, c,
                )?
            }
            ProblemKind::MeanFieldGame(c) => {
                let h_net = &nets[0];
                let h_c = net_eval(tape, h_net, t_j, &[xk])?;
                let h_up = net_eval(tape, h_net, t_j, &[xk + h])?;
                let h_down = net_eval(tape, h_net, t_j, &[xk - h])?;
                let hd = tape.sub(h_up, h_down)?;
                let h_q = tape.scale(1.0 / (2.0 * h), hd)?;
                let hs = tape.add(h_up, h_down)?;
                let two_h = tape.scale(2.0, h_c)?;
                let hn = tape.sub(hs, two_h)?;
                let h_qq = tape.scale(1.0 / (h * h), hn)?;
                mfg::mfg_fp_residual(tape, u_time[k], u_x, h_q, h_qq, integral, c)?
            }
            _ => unreachable!(),
        };
        out.push(r);
    }
    Ok(out)
}

fn point_context(err: DgmError, t: f64, x: &[f64]) -> DgmError {
    match err {
        DgmError::NonFinite { context } => DgmError::Numerical(format!(
            "non-finite {context} at point (t={t}, x={x:?})"
        )),
        DgmError::Domain { op, detail } => DgmError::Numerical(format!(
            "`{op}` failed at point (t={t}, x={x:?}): {detail}"
        )),
        other => other,
    }
}

/// Assembles the weighted loss of one batch and, when `with_grads` is set,
/// the gradient of the total with respect to every network's parameters.
///
/// Work is fanned out over fixed-size chunks and reduced in chunk order, so
/// results are bit-for-bit reproducible regardless of thread scheduling.
pub fn total_loss(
    problem: &ProblemSpec,
    nets: &[DgmParams],
    batch: &Batch,
    cfg: &DerivConfig,
    weights: &TermWeights,
    coupling: &CouplingState,
    opts: EvalOpts,
) -> Result<BatchEval> {
    let with_grads = opts.with_grads;
    if nets.len() != problem.n_unknowns {
        return Err(DgmError::Dimension(format!(
            "problem `{}` needs {} network(s), got {}",
            problem.id(),
            problem.n_unknowns,
            nets.len()
        )));
    }
    let needs_interior = !matches!(problem.kind, ProblemKind::FokkerPlanckOu(_));
    if needs_interior && batch.interior.is_empty() {
        return Err(DgmError::EmptyBatch("interior points"));
    }
    if problem.has_integral && batch.aux_grid.is_none() {
        return Err(DgmError::EmptyBatch("integral grid"));
    }
    let any_condition = (0..problem.n_unknowns).any(|i| problem.condition_side(i).is_some());
    if any_condition && batch.terminal.is_empty() {
        return Err(DgmError::EmptyBatch("terminal/initial points"));
    }

    let steps = cfg.steps(&problem.domain);
    let t_range = (problem.domain.t0, problem.domain.t1);
    let active = interior_nets(problem);
    let mut total_acc = Accum::new(nets, with_grads);

    // Interior pointwise residuals (+ obstacle penalty on the same tapes).
    if needs_interior {
        let n_int = batch.interior.len() as f64;
        let chunk_results: Vec<Accum> =
            chunked(&batch.interior, 2, opts.sequential, |chunk| -> Result<Accum> {
                SCRATCH.with(|scratch| {
                let mut scratch = scratch.borrow_mut();
                let Scratch { tape, adjoint } = &mut *scratch;
                let mut acc = Accum::new(nets, with_grads);
                for point in chunk {
                    tape.clear();
                    let nets_on_tape = register_nets(tape, nets)?;
                    let mut stencils: Vec<Stencil> = Vec::with_capacity(active.len());
                    for &i in &active {
                        let need = problem.needs(i);
                        stencils.push(
                            build_stencil(
                                tape,
                                &nets_on_tape[i],
                                point,
                                &steps,
                                t_range,
                                need.time,
                                need.grad,
                                need.hess,
                            )
                            .map_err(|e| point_context(e, point.t, &point.x))?,
                        );
                    }
                    let residuals = pointwise_residuals(
                        tape,
                        problem,
                        &nets_on_tape,
                        &stencils,
                        point,
                        coupling,
                    )
                    .map_err(|e| point_context(e, point.t, &point.x))?;

                    let mut sq_sum: Option<VarHandle> = None;
                    for r in residuals {
                        let sq = tape.square(r)?;
                        acc.l1 += tape.value(sq) / n_int;
                        sq_sum = Some(match sq_sum {
                            None => sq,
                            Some(s) => tape.add(s, sq)?,
                        });
                    }
                    let mut objective = tape.scale(weights.operator, sq_sum.unwrap())?;

                    if let Some(payoff) = problem.penalty_payoff(&point.x) {
                        let target = tape.constant(payoff)?;
                        let gap = tape.sub(target, stencils[0].f)?;
                        let viol = tape.max0(gap)?;
                        let pen = tape.square(viol)?;
                        acc.l4 += tape.value(pen) / n_int;
                        objective = tape.add_scaled(objective, weights.penalty, pen)?;
                    }
                    acc.absorb(tape, objective, &nets_on_tape, 1.0 / n_int, adjoint, with_grads);
                }
                Ok(acc)
                })
            })?;
        for c in &chunk_results {
            total_acc.merge(c);
        }
    }

    // Integral-grid rows.
    if let Some(grid) = batch.aux_grid.as_ref().filter(|_| problem.has_integral) {
        let n_total = (grid.t_nodes.len() * grid.x_nodes.len()) as f64;
        let is_mfg = matches!(problem.kind, ProblemKind::MeanFieldGame(_));
        let w_term = if is_mfg {
            weights.integral
        } else {
            weights.operator
        };
        let chunk_results: Vec<Accum> =
            chunked(&grid.t_nodes, 1, opts.sequential, |ts| -> Result<Accum> {
                SCRATCH.with(|scratch| {
                let mut scratch = scratch.borrow_mut();
                let Scratch { tape, adjoint } = &mut *scratch;
                let mut acc = Accum::new(nets, with_grads);
                for &t_j in ts {
                    tape.clear();
                    let nets_on_tape = register_nets(tape, nets)?;
                    let residuals = row_residuals(
                        tape,
                        problem,
                        &nets_on_tape,
                        t_j,
                        &grid.x_nodes,
                        &steps,
                    )
                    .map_err(|e| point_context(e, t_j, &grid.x_nodes))?;
                    let mut sq_sum: Option<VarHandle> = None;
                    for r in residuals {
                        let sq = tape.square(r)?;
                        let v = tape.value(sq) / n_total;
                        if is_mfg {
                            acc.integral += v;
                        } else {
                            acc.l1 += v;
                        }
                        sq_sum = Some(match sq_sum {
                            None => sq,
                            Some(s) => tape.add(s, sq)?,
                        });
                    }
                    let objective = tape.scale(w_term, sq_sum.unwrap())?;
                    acc.absorb(tape, objective, &nets_on_tape, 1.0 / n_total, adjoint, with_grads);
                }
                Ok(acc)
                })
            })?;
        for c in &chunk_results {
            total_acc.merge(c);
        }
    }

    // Terminal / initial conditions, per unknown.
    if !batch.terminal.is_empty() {
        let n_term = batch.terminal.len() as f64;
        for unknown in 0..problem.n_unknowns {
            let Some(side) = problem.condition_side(unknown) else {
                continue;
            };
            let t_cond = match side {
                CondSide::Start => problem.domain.t0,
                CondSide::End => problem.domain.t1,
            };
            let chunk_results: Vec<Accum> =
                chunked(&batch.terminal, 8, opts.sequential, |chunk| -> Result<Accum> {
                    SCRATCH.with(|scratch| {
                    let mut scratch = scratch.borrow_mut();
                    let Scratch { tape, adjoint } = &mut *scratch;
                    let mut acc = Accum::new(nets, with_grads);
                    for xs in chunk {
                        tape.clear();
                        let nets_on_tape = register_nets(tape, nets)?;
                        let f = net_eval(tape, &nets_on_tape[unknown], t_cond, xs)
                            .map_err(|e| point_context(e, t_cond, xs))?;
                        let target = tape.constant(problem.condition_value(unknown, xs))?;
                        let diff = tape.sub(f, target)?;
                        let sq = tape.square(diff)?;
                        acc.l3 += tape.value(sq) / n_term;
                        let objective = tape.scale(weights.condition, sq)?;
                        acc.absorb(tape, objective, &nets_on_tape, 1.0 / n_term, adjoint, with_grads);
                    }
                    Ok(acc)
                    })
                })?;
            for c in &chunk_results {
                total_acc.merge(c);
            }
        }
    }

    // Boundary mismatch (only the regression problem declares one; the
    // pricing problems rely on oversampling instead).
    if !batch.boundary.is_empty() {
        if let ProblemKind::FunctionFit = problem.kind {
            let n_b = batch.boundary.len() as f64;
            let chunk_results: Vec<Accum> =
                chunked(&batch.boundary, 8, opts.sequential, |chunk| -> Result<Accum> {
                    SCRATCH.with(|scratch| {
                    let mut scratch = scratch.borrow_mut();
                    let Scratch { tape, adjoint } = &mut *scratch;
                    let mut acc = Accum::new(nets, with_grads);
                    for p in chunk {
                        tape.clear();
                        let nets_on_tape = register_nets(tape, nets)?;
                        let f = net_eval(tape, &nets_on_tape[0], p.t, &p.x)?;
                        let target = tape.constant(fit_target(p.t, p.x[0]))?;
                        let diff = tape.sub(f, target)?;
                        let sq = tape.square(diff)?;
                        acc.l2 += tape.value(sq) / n_b;
                        let objective = tape.scale(weights.boundary, sq)?;
                        acc.absorb(tape, objective, &nets_on_tape, 1.0 / n_b, adjoint, with_grads);
                    }
                    Ok(acc)
                    })
                })?;
            for c in &chunk_results {
                total_acc.merge(c);
            }
        }
    }

    let report = LossReport {
        l1_operator: total_acc.l1,
        l2_boundary: total_acc.l2,
        l3_terminal: total_acc.l3,
        l4_penalty: total_acc.l4,
        integral_terms: total_acc.integral,
        total: weights.operator * total_acc.l1
            + weights.boundary * total_acc.l2
            + weights.condition * total_acc.l3
            + weights.penalty * total_acc.l4
            + weights.integral * total_acc.integral,
    };
    if !report.total.is_finite() {
        return Err(DgmError::Numerical(format!(
            "non-finite batch loss: {report:?}"
        )));
    }
    Ok(BatchEval {
        report,
        grads: total_acc.grads,
    })
}

// ---------------------------------------------------------------------------
// Network evaluation helpers
// ---------------------------------------------------------------------------

/// Reusable-tape forward evaluator for value surfaces.
pub struct Evaluator {
    tape: Tape,
}

impl Default for Evaluator {
    fn default() -> Self {
        Self::new()
    }
}

impl Evaluator {
    pub fn new() -> Self {
        Evaluator { tape: Tape::new() }
    }

    /// Forward value of one network at a space-time point.
    pub fn value(&mut self, net: &DgmParams, t: f64, x: &[f64]) -> Result<f64> {
        self.tape.clear();
        let ph = net.register(&mut self.tape)?;
        let tn = TapeNet {
            shape: &net.shape,
            ph,
        };
        let out = net_eval(&mut self.tape, &tn, t, x)?;
        Ok(self.tape.value(out))
    }

    /// Central-difference spatial gradient of the network value.
    pub fn spatial_gradient(
        &mut self,
        net: &DgmParams,
        t: f64,
        x: &[f64],
        steps: &[f64],
    ) -> Result<Vec<f64>> {
        let mut f = |p: &[f64]| self.value(net, t, p);
        fd_gradient(&mut f, x, steps)
    }

    /// Pure second derivatives of the network value along each coordinate.
    pub fn second_derivative_diag(
        &mut self,
        net: &DgmParams,
        t: f64,
        x: &[f64],
        steps: &[f64],
    ) -> Result<Vec<f64>> {
        let center = self.value(net, t, x)?;
        let mut shifted = x.to_vec();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let h = steps[i];
            shifted[i] = x[i] + h;
            let up = self.value(net, t, &shifted)?;
            shifted[i] = x[i] - h;
            let down = self.value(net, t, &shifted)?;
            shifted[i] = x[i];
            out.push((up - 2.0 * center + down) / (h * h));
        }
        Ok(out)
    }
}

/// Recomputes the frozen net trading flow of the mean-field pair from the
/// current networks: `mu(t_j) = Σ_k h_q(t_j,q_k)/(2k)·w_k` with density
/// weights from the transformed unknown.
pub fn compute_net_flow(
    problem: &ProblemSpec,
    nets: &[DgmParams],
    cfg: &DerivConfig,
    n_t: usize,
    n_q: usize,
) -> Result<PiecewiseLinear> {
    let ProblemKind::MeanFieldGame(c) = &problem.kind else {
        return Err(DgmError::InvalidArgument(
            "net flow is defined for the mean-field pair only".to_string(),
        ));
    };
    let bx = &problem.domain;
    let steps = cfg.steps(bx);
    let mut ev = Evaluator::new();
    let t_nodes: Vec<f64> = (0..n_t)
        .map(|j| bx.t0 + j as f64 / (n_t - 1) as f64 * bx.t_width())
        .collect();
    let (lo, _) = bx.ranges[0];
    let hi = bx.stretched_hi(0);
    let q_nodes: Vec<f64> = (0..n_q)
        .map(|k| lo + k as f64 / (n_q - 1) as f64 * (hi - lo))
        .collect();
    let mut flow = Vec::with_capacity(n_t);
    for &t in &t_nodes {
        let u_vals: Vec<f64> = q_nodes
            .iter()
            .map(|&q| ev.value(&nets[1], t, &[q]))
            .collect::<Result<_>>()?;
        let w = importance_weights(&u_vals)?;
        let h = steps.x[0];
        let h_q: Vec<f64> = q_nodes
            .iter()
            .map(|&q| {
                let up = ev.value(&nets[0], t, &[q + h])?;
                let down = ev.value(&nets[0], t, &[q - h])?;
                Ok((up - down) / (2.0 * h))
            })
            .collect::<Result<_>>()?;
        flow.push(mfg::net_flow(&h_q, &w, c));
    }
    PiecewiseLinear::new(t_nodes, flow)
}

// ---------------------------------------------------------------------------
// Oracle residual statistics (order-of-accuracy checks)
// ---------------------------------------------------------------------------

/// Mean absolute operator residual of the problem's closed-form solution
/// under the finite-difference stencils, over the given interior points.
///
/// This exercises the same residual functionals as training but with the
/// oracle in place of the network, so truncation error is the only source
/// of residual: the value must shrink as O(h_unit²).
pub fn oracle_mean_abs_residual(
    problem: &ProblemSpec,
    points: &[Point],
    h_unit: f64,
) -> Result<f64> {
    use crate::algebra::RealAlgebra;
    let cfg = DerivConfig::new(h_unit)?;
    let steps = cfg.steps(&problem.domain);
    let t_range = (problem.domain.t0, problem.domain.t1);
    let mut alg = RealAlgebra;
    let mut sum = 0.0f64;
    let mut count = 0usize;

    match &problem.kind {
        ProblemKind::EuropeanCall(c) => {
            for p in points {
                let x = p.x[0];
                let f = black_scholes::bs_call_price(p.t, x, c);
                let f_t = fd_time_derivative(
                    &mut |t| Ok(black_scholes::bs_call_price(t, x, c)),
                    p.t,
                    steps.t,
                    t_range,
                )?;
                let mut fx = |xs: &[f64]| Ok(black_scholes::bs_call_price(p.t, xs[0], c));
                let g = fd_gradient(&mut fx, &[x], &steps.x)?;
                let h = fd_hessian(&mut fx, &[x], &steps.x, true)?;
                let r = black_scholes::bs_residual(&mut alg, x, f, f_t, g[0], h[0][0], c)?;
                sum += r.abs();
                count += 1;
            }
        }
        ProblemKind::Merton(c) => {
            for p in points {
                let x = p.x[0];
                let f_t = fd_time_derivative(
                    &mut |t| Ok(merton::value_oracle(t, x, c)),
                    p.t,
                    steps.t,
                    t_range,
                )?;
                let mut fx = |xs: &[f64]| Ok(merton::value_oracle(p.t, xs[0], c));
                let g = fd_gradient(&mut fx, &[x], &steps.x)?;
                let h = fd_hessian(&mut fx, &[x], &steps.x, true)?;
                let r = merton::merton_residual(&mut alg, x, f_t, g[0], h[0][0], c)?;
                sum += r.abs();
                count += 1;
            }
        }
        ProblemKind::Execution(c) => {
            for p in points {
                let q = p.x[0];
                let f_t = fd_time_derivative(
                    &mut |t| Ok(execution::value_oracle(t, q, c)),
                    p.t,
                    steps.t,
                    t_range,
                )?;
                let mut fx = |xs: &[f64]| Ok(execution::value_oracle(p.t, xs[0], c));
                let g = fd_gradient(&mut fx, &[q], &steps.x)?;
                let r = execution::execution_residual(&mut alg, q, f_t, g[0], c)?;
                sum += r.abs();
                count += 1;
            }
        }
        ProblemKind::SystemicRisk(c) => {
            for p in points {
                let bundles: Vec<systemic::PlayerDerivs<f64>> = (0..c.players)
                    .map(|i| -> Result<systemic::PlayerDerivs<f64>> {
                        let f_t = fd_time_derivative(
                            &mut |t| Ok(systemic::value_oracle(i, t, &p.x, c)),
                            p.t,
                            steps.t,
                            t_range,
                        )?;
                        let mut fx = |xs: &[f64]| Ok(systemic::value_oracle(i, p.t, xs, c));
                        let g = fd_gradient(&mut fx, &p.x, &steps.x)?;
                        let h = fd_hessian(&mut fx, &p.x, &steps.x, true)?;
                        let n = c.players;
                        let mut hess = vec![0.0; n * n];
                        for j in 0..n {
                            for k in 0..n {
                                hess[j * n + k] = h[j][k];
                            }
                        }
                        Ok(systemic::PlayerDerivs {
                            time: f_t,
                            grad: g,
                            hess,
                        })
                    })
                    .collect::<Result<_>>()?;
                for i in 0..c.players {
                    let r = systemic::systemic_residual(&mut alg, i, &p.x, &bundles, c)?;
                    sum += r.abs();
                    count += 1;
                }
            }
        }
        ProblemKind::FokkerPlanckOu(c) => {
            if c.kappa != 0.0 {
                return Err(DgmError::InvalidArgument(
                    "closed-form transform is available for the pure-diffusion case only"
                        .to_string(),
                ));
            }
            // Dense quadrature grid for the self-normalized integral term;
            // its discretization error must sit far below the FD truncation
            // floor at the smallest step, hence the fixed fine resolution.
            let (lo, _) = problem.domain.ranges[0];
            let hi = problem.domain.stretched_hi(0);
            let n_quad = 4001;
            let x_grid: Vec<f64> = (0..n_quad)
                .map(|k| lo + k as f64 / (n_quad - 1) as f64 * (hi - lo))
                .collect();
            let mut u = |t: f64, x: f64| Ok(fokker_planck::transform_oracle_pure_diffusion(t, x, c));
            for p in points {
                let x = p.x[0];
                let i_t = integral_term(&mut u, &[p.t], &x_grid, steps.t, t_range)?[0];
                let f_t = fd_time_derivative(
                    &mut |t| u(t, x),
                    p.t,
                    steps.t,
                    t_range,
                )?;
                let mut fx = |xs: &[f64]| u(p.t, xs[0]);
                let g = fd_gradient(&mut fx, &[x], &steps.x)?;
                let h = fd_hessian(&mut fx, &[x], &steps.x, true)?;
                let r = fokker_planck::fp_transformed_residual(
                    &mut alg, x, f_t, g[0], h[0][0], i_t, c,
                )?;
                sum += r.abs();
                count += 1;
            }
        }
        _ => {
            return Err(DgmError::InvalidArgument(format!(
                "problem `{}` has no closed-form solution to check",
                problem.id()
            )))
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, DgmShape};
    use crate::problems::standard;
    use crate::sampling;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fd_gradient_exact_on_quadratics() {
        let mut f = |p: &[f64]| Ok(p[0] * p[0]);
        let g = fd_gradient(&mut f, &[3.0], &[0.3]).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-10);
        let mut c = |_: &[f64]| Ok(7.0);
        let g = fd_gradient(&mut c, &[1.0, 2.0], &[0.1, 0.1]).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn fd_gradient_truncation_is_second_order() {
        // d/dx exp at 0: error ≈ h²/6.
        let h = 1e-3;
        let mut f = |p: &[f64]| Ok(p[0].exp());
        let g = fd_gradient(&mut f, &[0.0], &[h]).unwrap();
        let err = (g[0] - 1.0).abs();
        let expect = h * h / 6.0;
        assert!(
            (err - expect).abs() < 0.05 * expect,
            "err {err} vs h²/6 {expect}"
        );
    }

    #[test]
    fn fd_hessian_exact_cases_and_symmetry() {
        let mut f = |p: &[f64]| Ok(p[0] * p[1]);
        let h = fd_hessian(&mut f, &[1.0, 2.0], &[0.1, 0.1], true).unwrap();
        assert!((h[0][1] - 1.0).abs() < 1e-10);
        assert!(h[0][0].abs() < 1e-9 && h[1][1].abs() < 1e-9);

        let mut f2 = |p: &[f64]| Ok(p[0] * p[0]);
        let h2 = fd_hessian(&mut f2, &[3.0], &[0.05], true).unwrap();
        assert!((h2[0][0] - 2.0).abs() < 1e-9);

        // Bit-exact symmetry on a generic smooth function.
        let mut f3 = |p: &[f64]| Ok((p[0] * p[1] * p[1]).sin() + p[0].exp() * p[1]);
        let h3 = fd_hessian(&mut f3, &[0.4, 0.7], &[1e-3, 1e-3], true).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(h3[i][j].to_bits(), h3[j][i].to_bits());
            }
        }
    }

    #[test]
    fn integral_term_hand_cases() {
        // u constant in t -> 0.
        let mut u = |_t: f64, x: f64| Ok(x * x);
        let t_grid = [0.3, 0.6];
        let x_grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let i_t = integral_term(&mut u, &t_grid, &x_grid, 1e-3, (0.0, 1.0)).unwrap();
        assert!(i_t.iter().all(|v| v.abs() < 1e-10));

        // u = t -> derivative 1, weights sum to 1.
        let mut u2 = |t: f64, _x: f64| Ok(t);
        let i_t = integral_term(&mut u2, &t_grid, &x_grid, 1e-3, (0.0, 1.0)).unwrap();
        assert!(i_t.iter().all(|v| (v - 1.0).abs() < 1e-9));

        // u = t·x on x-grid {0,1} at t=0: equal weights (u(0,·)=0),
        // time derivative is x, so the expectation is 1/2.
        let mut u3 = |t: f64, x: f64| Ok(t * x);
        let i_t = integral_term(&mut u3, &[0.0], &[0.0, 1.0], 1e-3, (0.0, 1.0)).unwrap();
        assert!((i_t[0] - 0.5).abs() < 1e-9, "{}", i_t[0]);
    }

    fn tiny_net(shape: DgmShape, seed: u64) -> DgmParams {
        DgmParams::xavier(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn empty_interior_batch_is_an_error() {
        let problem = standard::european_call(1.3);
        let net = tiny_net(
            DgmShape::new(2, 1, 4, 1, Activation::Tanh).unwrap(),
            1,
        );
        let batch = Batch {
            terminal: vec![vec![50.0]],
            ..Default::default()
        };
        let err = total_loss(
            &problem,
            &[net],
            &batch,
            &DerivConfig::default(),
            &TermWeights::default(),
            &CouplingState::default(),
            EvalOpts::values_only(),
        )
        .unwrap_err();
        assert!(matches!(err, DgmError::EmptyBatch(_)));
    }

    #[test]
    fn zero_weights_zero_the_total() {
        let problem = standard::european_call(1.3);
        let net = tiny_net(DgmShape::new(2, 1, 4, 1, Activation::Tanh).unwrap(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = Batch {
            interior: sampling::sample_interior_uniform(&problem.domain, 8, &mut rng),
            terminal: sampling::sample_terminal(&problem.domain, 4, &mut rng),
            ..Default::default()
        };
        let weights = TermWeights {
            operator: 0.0,
            boundary: 0.0,
            condition: 0.0,
            penalty: 0.0,
            integral: 0.0,
        };
        let out = total_loss(
            &problem,
            &[net],
            &batch,
            &DerivConfig::default(),
            &weights,
            &CouplingState::default(),
            EvalOpts::values_only(),
        )
        .unwrap();
        assert_eq!(out.report.total, 0.0);
        assert!(out.report.l1_operator > 0.0);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        // The full assembled loss (operator + condition + penalty) must
        // differentiate correctly through every stencil.
        let problem = standard::american_put(1.0);
        let shape = DgmShape::new(2, 1, 3, 1, Activation::Tanh).unwrap();
        let net = tiny_net(shape, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = Batch {
            interior: sampling::sample_interior_uniform(&problem.domain, 3, &mut rng),
            terminal: sampling::sample_terminal(&problem.domain, 2, &mut rng),
            ..Default::default()
        };
        let cfg = DerivConfig::default();
        let weights = TermWeights::default();
        let eval = total_loss(
            &problem,
            std::slice::from_ref(&net),
            &batch,
            &cfg,
            &weights,
            &CouplingState::default(),
            EvalOpts::grads(),
        )
        .unwrap();

        let flat = net.flatten();
        let fd_step = 1e-6;
        let mut worst = 0.0f64;
        for k in (0..flat.len()).step_by(7) {
            let probe = |v: f64| -> f64 {
                let mut p = flat.clone();
                p[k] = v;
                let mut n2 = net.clone();
                n2.unflatten(&p).unwrap();
                total_loss(
                    &problem,
                    &[n2],
                    &batch,
                    &cfg,
                    &weights,
                    &CouplingState::default(),
                    EvalOpts::values_only(),
                )
                .unwrap()
                .report
                .total
            };
            let fd = (probe(flat[k] + fd_step) - probe(flat[k] - fd_step)) / (2.0 * fd_step);
            let err = (fd - eval.grads[0][k]).abs() / eval.grads[0][k].abs().max(1.0);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn integral_row_gradients_match_finite_differences() {
        let problem = standard::fokker_planck();
        let shape = DgmShape::new(2, 1, 3, 1, Activation::Tanh).unwrap();
        let net = tiny_net(shape, 9);
        let batch = Batch {
            terminal: vec![vec![0.5], vec![-1.0]],
            aux_grid: Some(sampling::aux_grid(&problem.domain, 2, 5).unwrap()),
            ..Default::default()
        };
        let cfg = DerivConfig::default();
        let weights = TermWeights::default();
        let eval = total_loss(
            &problem,
            std::slice::from_ref(&net),
            &batch,
            &cfg,
            &weights,
            &CouplingState::default(),
            EvalOpts::grads(),
        )
        .unwrap();
        let flat = net.flatten();
        let fd_step = 1e-6;
        let mut worst = 0.0f64;
        for k in (0..flat.len()).step_by(5) {
            let probe = |v: f64| -> f64 {
                let mut p = flat.clone();
                p[k] = v;
                let mut n2 = net.clone();
                n2.unflatten(&p).unwrap();
                total_loss(
                    &problem,
                    &[n2],
                    &batch,
                    &cfg,
                    &weights,
                    &CouplingState::default(),
                    EvalOpts::values_only(),
                )
                .unwrap()
                .report
                .total
            };
            let fd = (probe(flat[k] + fd_step) - probe(flat[k] - fd_step)) / (2.0 * fd_step);
            let err = (fd - eval.grads[0][k]).abs() / eval.grads[0][k].abs().max(1.0);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn oracle_pushed_through_residual_is_small() {
        let problem = standard::european_call(1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Stay away from the maturity kink where high derivatives blow up.
        let pts: Vec<Point> = sampling::sample_interior_uniform(&problem.domain, 200, &mut rng)
            .into_iter()
            .map(|mut p| {
                p.t *= 0.9;
                p.x[0] = 20.0 + 0.6 * p.x[0];
                p
            })
            .collect();
        let r = oracle_mean_abs_residual(&problem, &pts, 1e-3).unwrap();
        assert!(r < 1e-4, "mean abs residual {r}");
    }

    #[test]
    fn zero_network_solves_the_heat_like_zero_case() {
        // The zero network has zero residual for the homogeneous pricing
        // equation, so l1 must vanish.
        let problem = standard::european_call(1.0);
        let net = DgmParams::zeros(DgmShape::new(2, 1, 4, 1, Activation::Tanh).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = Batch {
            interior: sampling::sample_interior_uniform(&problem.domain, 16, &mut rng),
            terminal: sampling::sample_terminal(&problem.domain, 8, &mut rng),
            ..Default::default()
        };
        let out = total_loss(
            &problem,
            &[net],
            &batch,
            &DerivConfig::default(),
            &TermWeights::default(),
            &CouplingState::default(),
            EvalOpts::values_only(),
        )
        .unwrap();
        assert!(out.report.l1_operator < 1e-20);
        assert!(out.report.l3_terminal > 0.0); // payoff is not zero
    }

    #[test]
    fn penalty_is_monotone_in_the_fitted_value() {
        // Raising the constant output of the network may only lower the
        // obstacle penalty.
        let problem = standard::american_put(1.0);
        let shape = DgmShape::new(2, 1, 2, 0, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = Batch {
            interior: sampling::sample_interior_uniform(&problem.domain, 32, &mut rng),
            terminal: sampling::sample_terminal(&problem.domain, 4, &mut rng),
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        for bias in [0.0, 10.0, 30.0, 60.0] {
            let mut net = DgmParams::zeros(shape);
            let n = net.tensors.len();
            net.tensors[n - 1].data[0] = bias;
            let out = total_loss(
                &problem,
                &[net],
                &batch,
                &DerivConfig::default(),
                &TermWeights::default(),
                &CouplingState::default(),
                EvalOpts::values_only(),
            )
            .unwrap();
            assert!(out.report.l4_penalty <= last + 1e-12);
            last = out.report.l4_penalty;
        }
        // Constant 60 dominates the payoff everywhere: zero penalty.
        assert_eq!(last, 0.0);
    }

    #[test]
    fn tape_and_plain_integral_terms_agree() {
        // The on-tape row construction and the plain integral_term oracle
        // must produce the same value for the same network.
        let problem = standard::fokker_planck();
        let net = tiny_net(DgmShape::new(2, 1, 4, 1, Activation::Tanh).unwrap(), 13);
        let cfg = DerivConfig::default();
        let steps = cfg.steps(&problem.domain);
        let grid = sampling::aux_grid(&problem.domain, 1, 9).unwrap();

        let mut tape = Tape::new();
        let nets = [net.clone()];
        let on_tape = register_nets(&mut tape, &nets).unwrap();
        let t_j = grid.t_nodes[0];
        let mut u_c = Vec::new();
        let mut u_t = Vec::new();
        for &xk in &grid.x_nodes {
            u_c.push(net_eval(&mut tape, &on_tape[0], t_j, &[xk]).unwrap());
            u_t.push(
                time_derivative(
                    &mut tape,
                    &on_tape[0],
                    t_j,
                    &[xk],
                    steps.t,
                    (0.0, 1.0),
                )
                .unwrap(),
            );
        }
        let w = tape_importance_weights(&mut tape, &u_c).unwrap();
        let mut i_node = tape.mul(u_t[0], w[0]).unwrap();
        for k in 1..grid.x_nodes.len() {
            let term = tape.mul(u_t[k], w[k]).unwrap();
            i_node = tape.add(i_node, term).unwrap();
        }
        let tape_val = tape.value(i_node);

        let mut ev = Evaluator::new();
        let mut u = |t: f64, x: f64| ev.value(&net, t, &[x]);
        let plain = integral_term(&mut u, &[t_j], &grid.x_nodes, steps.t, (0.0, 1.0)).unwrap()[0];
        assert!(
            (tape_val - plain).abs() < 1e-12,
            "tape {tape_val} vs plain {plain}"
        );
    }

    #[test]
    fn fd_network_gradient_matches_input_mode_autodiff() {
        // Treating inputs as parameters gives the tape's exact input
        // gradient; the FD spatial gradient must agree to ~1e-4 relative.
        let net = tiny_net(DgmShape::new(2, 1, 6, 2, Activation::Tanh).unwrap(), 17);
        let (t, x) = (0.37, 0.61);
        let mut tape = Tape::new();
        let ph = net.register(&mut tape).unwrap();
        let ti = tape.var(t, Role::Parameter).unwrap();
        let xi = tape.var(x, Role::Parameter).unwrap();
        let out = dgm_forward(&mut tape, &net.shape, &ph, &[ti, xi]).unwrap();
        let g = tape.backward(out[0]);
        let exact = g.wrt(xi);

        let mut ev = Evaluator::new();
        let fd = ev
            .spatial_gradient(&net, t, &[x], &[1e-4])
            .unwrap()[0];
        let rel = (fd - exact).abs() / exact.abs().max(1e-9);
        assert!(rel < 1e-4, "fd {fd} vs exact {exact} (rel {rel})");
    }
}
