//! Scalar reverse-mode automatic differentiation on an append-only tape.
//!
//! Every recorded operation stores its operand indices, forward value and
//! local partial derivatives, so a single reverse sweep yields the exact
//! gradient of any recorded scalar with respect to every variable on the
//! tape in O(tape length).
//!
//! The tape is deliberately scalar: network widths in this crate are small
//! and scalar nodes keep every opcode testable in isolation. Batch
//! parallelism comes from evaluating independent tapes per sample point.
//! Second derivatives in space are never taken on the tape; they are formed
//! from finite-difference combinations of forward evaluations, which are
//! themselves tape nodes so parameter gradients flow through the stencils.

use crate::error::{DgmError, Result};

/// What a tape variable represents. Only `Parameter` nodes are reported by
/// gradient accessors that enumerate trainable values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Input,
    Constant,
}

/// Index of a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarHandle {
    idx: u32,
    role: Role,
}

impl VarHandle {
    #[inline]
    pub fn index(&self) -> usize {
        self.idx as usize
    }

    #[inline]
    pub fn role(&self) -> Role {
        self.role
    }
}

/// Recordable operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    Square,
    Sqrt,
    /// x ↦ max(x, 0); the subgradient at 0 is defined as 0.
    Max0,
    /// Integer power with a fixed exponent.
    PowInt(i32),
}

impl Opcode {
    pub fn arity(&self) -> usize {
        match self {
            Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div => 2,
            _ => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Div => "div",
            Opcode::Neg => "neg",
            Opcode::Exp => "exp",
            Opcode::Ln => "ln",
            Opcode::Tanh => "tanh",
            Opcode::Sigmoid => "sigmoid",
            Opcode::Square => "square",
            Opcode::Sqrt => "sqrt",
            Opcode::Max0 => "max0",
            Opcode::PowInt(_) => "pow-int",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    pa: f64,
    pb: f64,
    val: f64,
}

/// Append-only computation tape.
///
/// Operand indices always precede the node's own index, so the node list is
/// topologically ordered by construction and `backward` is a single reverse
/// loop. Construction and the reverse sweep are single-threaded; tapes for
/// distinct sample points are independent and may run on separate workers.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
        }
    }

    /// Drops all nodes but keeps the allocation, so a worker can reuse one
    /// tape across many sample points.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a recorded node.
    #[inline]
    pub fn value(&self, h: VarHandle) -> f64 {
        self.nodes[h.index()].val
    }

    /// Records a leaf variable. `value` must be finite.
    pub fn var(&mut self, value: f64, role: Role) -> Result<VarHandle> {
        if !value.is_finite() {
            return Err(DgmError::NonFinite {
                context: "tape variable".to_string(),
            });
        }
        let idx = self.nodes.len() as u32;
        self.nodes.push(Node {
            a: 0,
            b: 0,
            pa: 0.0,
            pb: 0.0,
            val: value,
        });
        Ok(VarHandle { idx, role })
    }

    /// Records a constant leaf.
    #[inline]
    pub fn constant(&mut self, value: f64) -> Result<VarHandle> {
        self.var(value, Role::Constant)
    }

    #[inline]
    fn push(&mut self, op: Opcode, a: u32, b: u32, pa: f64, pb: f64, val: f64) -> Result<VarHandle> {
        if !val.is_finite() {
            return Err(DgmError::Domain {
                op: op.name(),
                detail: format!("produced non-finite value {val}"),
            });
        }
        let idx = self.nodes.len() as u32;
        debug_assert!(a < idx || self.nodes.is_empty());
        self.nodes.push(Node { a, b, pa, pb, val });
        Ok(VarHandle {
            idx,
            role: Role::Constant,
        })
    }

    #[inline]
    pub fn add(&mut self, x: VarHandle, y: VarHandle) -> Result<VarHandle> {
        let v = self.nodes[x.index()].val + self.nodes[y.index()].val;
        self.push(Opcode::Add, x.idx, y.idx, 1.0, 1.0, v)
    }

    #[inline]
    pub fn sub(&mut self, x: VarHandle, y: VarHandle) -> Result<VarHandle> {
        let v = self.nodes[x.index()].val - self.nodes[y.index()].val;
        self.push(Opcode::Sub, x.idx, y.idx, 1.0, -1.0, v)
    }

    #[inline]
    pub fn mul(&mut self, x: VarHandle, y: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        let yv = self.nodes[y.index()].val;
        self.push(Opcode::Mul, x.idx, y.idx, yv, xv, xv * yv)
    }

    pub fn div(&mut self, x: VarHandle, y: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        let yv = self.nodes[y.index()].val;
        if yv == 0.0 {
            return Err(DgmError::Domain {
                op: "div",
                detail: "denominator is zero".to_string(),
            });
        }
        self.push(Opcode::Div, x.idx, y.idx, 1.0 / yv, -xv / (yv * yv), xv / yv)
    }

    #[inline]
    pub fn neg(&mut self, x: VarHandle) -> Result<VarHandle> {
        let v = -self.nodes[x.index()].val;
        self.push(Opcode::Neg, x.idx, 0, -1.0, 0.0, v)
    }

    pub fn exp(&mut self, x: VarHandle) -> Result<VarHandle> {
        let v = self.nodes[x.index()].val.exp();
        self.push(Opcode::Exp, x.idx, 0, v, 0.0, v)
    }

    pub fn ln(&mut self, x: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        if xv <= 0.0 {
            return Err(DgmError::Domain {
                op: "ln",
                detail: format!("operand {xv} is not positive"),
            });
        }
        self.push(Opcode::Ln, x.idx, 0, 1.0 / xv, 0.0, xv.ln())
    }

    pub fn tanh(&mut self, x: VarHandle) -> Result<VarHandle> {
        let v = self.nodes[x.index()].val.tanh();
        self.push(Opcode::Tanh, x.idx, 0, 1.0 - v * v, 0.0, v)
    }

    /// Logistic function, computed in a form that never overflows.
    pub fn sigmoid(&mut self, x: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        let v = sigmoid_stable(xv);
        self.push(Opcode::Sigmoid, x.idx, 0, v * (1.0 - v), 0.0, v)
    }

    #[inline]
    pub fn square(&mut self, x: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        self.push(Opcode::Square, x.idx, 0, 2.0 * xv, 0.0, xv * xv)
    }

    pub fn sqrt(&mut self, x: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        if xv <= 0.0 {
            return Err(DgmError::Domain {
                op: "sqrt",
                detail: format!("operand {xv} is not positive"),
            });
        }
        let v = xv.sqrt();
        self.push(Opcode::Sqrt, x.idx, 0, 0.5 / v, 0.0, v)
    }

    /// max(x, 0) with subgradient 0 at the kink.
    #[inline]
    pub fn max0(&mut self, x: VarHandle) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        let (v, p) = if xv > 0.0 { (xv, 1.0) } else { (0.0, 0.0) };
        self.push(Opcode::Max0, x.idx, 0, p, 0.0, v)
    }

    pub fn powi(&mut self, x: VarHandle, n: i32) -> Result<VarHandle> {
        let xv = self.nodes[x.index()].val;
        if n < 0 && xv == 0.0 {
            return Err(DgmError::Domain {
                op: "pow-int",
                detail: "zero base with negative exponent".to_string(),
            });
        }
        let v = xv.powi(n);
        let p = f64::from(n) * xv.powi(n - 1);
        self.push(Opcode::PowInt(n), x.idx, 0, p, 0.0, v)
    }

    /// Generic dispatch used by callers that carry opcodes as data.
    pub fn apply(&mut self, op: Opcode, args: &[VarHandle]) -> Result<VarHandle> {
        if args.len() != op.arity() {
            return Err(DgmError::Domain {
                op: op.name(),
                detail: format!("expected {} operand(s), got {}", op.arity(), args.len()),
            });
        }
        match op {
            Opcode::Add => self.add(args[0], args[1]),
            Opcode::Sub => self.sub(args[0], args[1]),
            Opcode::Mul => self.mul(args[0], args[1]),
            Opcode::Div => self.div(args[0], args[1]),
            Opcode::Neg => self.neg(args[0]),
            Opcode::Exp => self.exp(args[0]),
            Opcode::Ln => self.ln(args[0]),
            Opcode::Tanh => self.tanh(args[0]),
            Opcode::Sigmoid => self.sigmoid(args[0]),
            Opcode::Square => self.square(args[0]),
            Opcode::Sqrt => self.sqrt(args[0]),
            Opcode::Max0 => self.max0(args[0]),
            Opcode::PowInt(n) => self.powi(args[0], n),
        }
    }

    /// Linear combination a*x + b*y with constant coefficients.
    pub fn lincomb(&mut self, a: f64, x: VarHandle, b: f64, y: VarHandle) -> Result<VarHandle> {
        let ca = self.constant(a)?;
        let cb = self.constant(b)?;
        let ax = self.mul(ca, x)?;
        let by = self.mul(cb, y)?;
        self.add(ax, by)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, a: f64, x: VarHandle) -> Result<VarHandle> {
        let c = self.constant(a)?;
        self.mul(c, x)
    }

    /// Single reverse sweep from `output`; cost O(tape length).
    ///
    /// The sweep visits nodes in strictly decreasing index order, so results
    /// are bit-for-bit reproducible for identical build sequences.
    pub fn backward(&self, output: VarHandle) -> Gradients {
        let mut adj = Vec::new();
        self.backward_into(output, &mut adj);
        Gradients { adj }
    }

    /// `backward` into a caller-owned buffer, so hot loops can reuse one
    /// allocation across many sweeps.
    pub fn backward_into(&self, output: VarHandle, adj: &mut Vec<f64>) {
        let n = self.nodes.len();
        adj.clear();
        adj.resize(n, 0.0);
        adj[output.index()] = 1.0;
        for i in (0..n).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = &self.nodes[i];
            // Leaves have zero partials, so this is a no-op for them except
            // for the self-referencing index; guard on pa/pb instead.
            if node.pa != 0.0 {
                adj[node.a as usize] += a * node.pa;
            }
            if node.pb != 0.0 {
                adj[node.b as usize] += a * node.pb;
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adjoints of one reverse sweep: the derivative of the swept output with
/// respect to every node on the tape.
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// ∂output/∂v for the node behind `h`.
    #[inline]
    pub fn wrt(&self, h: VarHandle) -> f64 {
        self.adj[h.index()]
    }

    /// Gradient with respect to a slice of (typically parameter) handles,
    /// in the order given.
    pub fn wrt_all(&self, handles: &[VarHandle]) -> Vec<f64> {
        handles.iter().map(|h| self.adj[h.index()]).collect()
    }

    /// Accumulates `scale * grad` into `acc` for the given handles.
    pub fn accumulate(&self, handles: &[VarHandle], scale: f64, acc: &mut [f64]) {
        assert_eq!(handles.len(), acc.len(), "gradient accumulator length");
        for (slot, h) in acc.iter_mut().zip(handles) {
            *slot += scale * self.adj[h.index()];
        }
    }
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `builder` must deterministically construct the same scalar function of
/// its inputs on any fresh tape. Returns the worst relative error over all
/// coordinates, with denominator max(|analytic|, 1).
pub fn grad_check<F>(builder: F, point: &[f64], fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[VarHandle]) -> Result<VarHandle>,
{
    if !(fd_step > 0.0) {
        return Err(DgmError::InvalidArgument(
            "grad_check requires fd_step > 0".to_string(),
        ));
    }
    let eval = |coords: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<VarHandle> = coords
            .iter()
            .map(|&c| tape.var(c, Role::Parameter))
            .collect::<Result<_>>()?;
        let out = builder(&mut tape, &vars)?;
        Ok(tape.value(out))
    };

    // Analytic gradient from one reverse sweep.
    let mut tape = Tape::new();
    let vars: Vec<VarHandle> = point
        .iter()
        .map(|&c| tape.var(c, Role::Parameter))
        .collect::<Result<_>>()?;
    let out = builder(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let mut worst = 0.0f64;
    let mut shifted = point.to_vec();
    for i in 0..point.len() {
        shifted[i] = point[i] + fd_step;
        let up = eval(&shifted)?;
        shifted[i] = point[i] - fd_step;
        let down = eval(&shifted)?;
        shifted[i] = point[i];
        let fd = (up - down) / (2.0 * fd_step);
        let analytic = grads.wrt(vars[i]);
        let err = (analytic - fd).abs() / analytic.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape_with(vals: &[f64]) -> (Tape, Vec<VarHandle>) {
        let mut t = Tape::new();
        let hs = vals
            .iter()
            .map(|&v| t.var(v, Role::Parameter).unwrap())
            .collect();
        (t, hs)
    }

    #[test]
    fn var_stores_identity() {
        let mut t = Tape::new();
        let a = t.var(0.0, Role::Parameter).unwrap();
        let b = t.var(1.5, Role::Input).unwrap();
        assert_eq!(t.value(a), 0.0);
        assert_eq!(t.value(b), 1.5);
        assert_eq!(a.role(), Role::Parameter);
    }

    #[test]
    fn var_rejects_non_finite() {
        let mut t = Tape::new();
        assert!(t.var(f64::NAN, Role::Input).is_err());
        assert!(t.var(f64::INFINITY, Role::Constant).is_err());
    }

    #[test]
    fn mul_product_rule_partials() {
        let (mut t, hs) = tape_with(&[3.0, 4.0]);
        let p = t.mul(hs[0], hs[1]).unwrap();
        assert_eq!(t.value(p), 12.0);
        let g = t.backward(p);
        assert_eq!(g.wrt(hs[0]), 4.0);
        assert_eq!(g.wrt(hs[1]), 3.0);
    }

    #[test]
    fn tanh_at_zero_has_unit_slope() {
        let (mut t, hs) = tape_with(&[0.0]);
        let y = t.tanh(hs[0]).unwrap();
        assert_eq!(t.value(y), 0.0);
        let g = t.backward(y);
        assert_eq!(g.wrt(hs[0]), 1.0);
    }

    #[test]
    fn div_by_zero_is_a_build_error() {
        let (mut t, hs) = tape_with(&[1.0, 0.0]);
        let err = t.div(hs[0], hs[1]).unwrap_err();
        assert!(err.to_string().contains("div"));
    }

    #[test]
    fn ln_of_nonpositive_is_a_build_error() {
        let (mut t, hs) = tape_with(&[-2.0]);
        let err = t.ln(hs[0]).unwrap_err();
        assert!(err.to_string().contains("ln"));
    }

    #[test]
    fn exp_overflow_reports_opcode() {
        let (mut t, hs) = tape_with(&[800.0]);
        let err = t.exp(hs[0]).unwrap_err();
        assert!(err.to_string().contains("exp"));
    }

    #[test]
    fn square_gradient() {
        let (mut t, hs) = tape_with(&[3.0]);
        let y = t.square(hs[0]).unwrap();
        let g = t.backward(y);
        assert_eq!(g.wrt(hs[0]), 6.0);
    }

    #[test]
    fn sigmoid_bias_gradient_at_zero() {
        // d/db sigmoid(w*x + b) at w=0, b=0 is sigma'(0) = 1/4 for any x.
        let (mut t, hs) = tape_with(&[0.0, 0.0]);
        let x = t.constant(7.3).unwrap();
        let wx = t.mul(hs[0], x).unwrap();
        let z = t.add(wx, hs[1]).unwrap();
        let y = t.sigmoid(z).unwrap();
        let g = t.backward(y);
        assert!((g.wrt(hs[1]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn max0_subgradient_at_kink_is_zero() {
        let (mut t, hs) = tape_with(&[0.0]);
        let y = t.max0(hs[0]).unwrap();
        assert_eq!(t.value(y), 0.0);
        let g = t.backward(y);
        assert_eq!(g.wrt(hs[0]), 0.0);
    }

    #[test]
    fn apply_rejects_wrong_arity() {
        let (mut t, hs) = tape_with(&[1.0]);
        assert!(t.apply(Opcode::Add, &[hs[0]]).is_err());
    }

    #[test]
    fn chain_rule_matches_hand_written_derivatives() {
        // Every opcode against its textbook derivative at random points.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x: f64 = rng.random_range(0.2..2.0);
            let y: f64 = rng.random_range(0.2..2.0);
            let cases: Vec<(Opcode, f64, f64)> = vec![
                (Opcode::Add, 1.0, 1.0),
                (Opcode::Sub, 1.0, -1.0),
                (Opcode::Mul, y, x),
                (Opcode::Div, 1.0 / y, -x / (y * y)),
                (Opcode::Neg, -1.0, 0.0),
                (Opcode::Exp, x.exp(), 0.0),
                (Opcode::Ln, 1.0 / x, 0.0),
                (Opcode::Tanh, 1.0 - x.tanh() * x.tanh(), 0.0),
                (
                    Opcode::Sigmoid,
                    sigmoid_stable(x) * (1.0 - sigmoid_stable(x)),
                    0.0,
                ),
                (Opcode::Square, 2.0 * x, 0.0),
                (Opcode::Sqrt, 0.5 / x.sqrt(), 0.0),
                (Opcode::Max0, if x > 0.0 { 1.0 } else { 0.0 }, 0.0),
                (Opcode::PowInt(3), 3.0 * x * x, 0.0),
            ];
            for (op, dx, dy) in cases {
                let (mut t, hs) = tape_with(&[x, y]);
                let args: Vec<VarHandle> = hs[..op.arity()].to_vec();
                let out = t.apply(op, &args).unwrap();
                let g = t.backward(out);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1e-3);
                assert!(
                    rel(dx, g.wrt(hs[0])) < 1e-12,
                    "{}: d/dx mismatch {} vs {}",
                    op.name(),
                    dx,
                    g.wrt(hs[0])
                );
                if op.arity() == 2 {
                    assert!(rel(dy, g.wrt(hs[1])) < 1e-12, "{}: d/dy mismatch", op.name());
                }
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_output() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g), computed on one tape.
        let (mut t, hs) = tape_with(&[0.7, -1.2, 0.4]);
        let f = {
            let s = t.mul(hs[0], hs[1]).unwrap();
            t.tanh(s).unwrap()
        };
        let g = {
            let s = t.add(hs[1], hs[2]).unwrap();
            let e = t.square(s).unwrap();
            t.exp(e).unwrap()
        };
        let (a, b) = (2.5, -0.75);
        let combo = t.lincomb(a, f, b, g).unwrap();
        let gc = t.backward(combo);
        let gf = t.backward(f);
        let gg = t.backward(g);
        for h in &hs {
            let lhs = gc.wrt(*h);
            let rhs = a * gf.wrt(*h) + b * gg.wrt(*h);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_composite() {
        // Three-layer random composite: trig-free mix of the opcode set.
        let builder = |t: &mut Tape, v: &[VarHandle]| -> Result<VarHandle> {
            let s1 = t.mul(v[0], v[1])?;
            let s2 = t.add(s1, v[2])?;
            let a1 = t.tanh(s2)?;
            let s3 = t.mul(v[1], v[2])?;
            let a2 = t.sigmoid(s3)?;
            let m = t.mul(a1, a2)?;
            let sq = t.square(v[0])?;
            let one = t.constant(1.0)?;
            let denom = t.add(sq, one)?;
            let d = t.div(m, denom)?;
            let e = t.exp(d)?;
            t.add(e, a1)
        };
        let err = grad_check(builder, &[0.3, -0.8, 1.1], 1e-5).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn grad_check_exact_on_quadratic_form() {
        // Central differences are exact on quadratics up to round-off.
        let builder = |t: &mut Tape, v: &[VarHandle]| -> Result<VarHandle> {
            let q0 = t.square(v[0])?;
            let q1 = t.square(v[1])?;
            let cross = t.mul(v[0], v[1])?;
            let s = t.add(q0, q1)?;
            t.add(s, cross)
        };
        let err = grad_check(builder, &[1.3, -2.1], 1e-4).unwrap();
        assert!(err < 1e-9, "relative error {err}");
    }

    #[test]
    fn grad_check_rejects_zero_step() {
        let builder = |t: &mut Tape, v: &[VarHandle]| t.square(v[0]);
        assert!(grad_check(builder, &[1.0], 0.0).is_err());
    }

    #[test]
    fn identical_build_sequences_give_identical_gradients() {
        let build = || {
            let (mut t, hs) = tape_with(&[0.9, 1.7]);
            let m = t.mul(hs[0], hs[1]).unwrap();
            let e = t.exp(m).unwrap();
            let s = t.tanh(e).unwrap();
            let g = t.backward(s);
            (g.wrt(hs[0]), g.wrt(hs[1]))
        };
        let (a1, b1) = build();
        let (a2, b2) = build();
        assert_eq!(a1.to_bits(), a2.to_bits());
        assert_eq!(b1.to_bits(), b2.to_bits());
    }

    #[test]
    fn x_times_x_gradient() {
        let (mut t, hs) = tape_with(&[3.0]);
        let y = t.mul(hs[0], hs[0]).unwrap();
        let g = t.backward(y);
        assert_eq!(g.wrt(hs[0]), 6.0);
    }

    #[test]
    fn random_large_tapes_match_finite_differences() {
        // Randomly generated composites up to ~10^4 nodes.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for round in 0..5 {
            let n_vars = 6;
            let n_ops = 2000 + round * 2000;
            let ops: Vec<u8> = (0..n_ops).map(|_| rng.random_range(0..7u8)).collect();
            let picks: Vec<(usize, usize)> = (0..n_ops)
                .map(|i| {
                    let live = n_vars + i;
                    (rng.random_range(0..live), rng.random_range(0..live))
                })
                .collect();
            let ops = std::sync::Arc::new(ops);
            let picks = std::sync::Arc::new(picks);
            let builder = {
                let ops = ops.clone();
                let picks = picks.clone();
                move |t: &mut Tape, v: &[VarHandle]| -> Result<VarHandle> {
                    let mut live: Vec<VarHandle> = v.to_vec();
                    for (k, op) in ops.iter().enumerate() {
                        let (i, j) = picks[k];
                        let (a, b) = (live[i], live[j]);
                        // Keep magnitudes bounded: squash periodically.
                        let out = match op {
                            0 => t.add(a, b)?,
                            1 => t.sub(a, b)?,
                            2 => {
                                let m = t.mul(a, b)?;
                                t.tanh(m)?
                            }
                            3 => t.tanh(a)?,
                            4 => t.sigmoid(a)?,
                            5 => {
                                let s = t.square(a)?;
                                t.tanh(s)?
                            }
                            _ => {
                                let s = t.sigmoid(b)?;
                                let one = t.constant(1.0)?;
                                let d = t.add(s, one)?;
                                t.div(a, d)?
                            }
                        };
                        live.push(out);
                    }
                    // Sum the last few so most of the tape is reachable.
                    let mut acc = live[live.len() - 1];
                    for h in live.iter().rev().take(50) {
                        let sq = t.tanh(*h)?;
                        acc = t.add(acc, sq)?;
                    }
                    Ok(acc)
                }
            };
            let point: Vec<f64> = (0..n_vars).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = grad_check(&builder, &point, 1e-5).unwrap();
            assert!(err < 1e-6, "round {round}: relative error {err}");
        }
    }
}
