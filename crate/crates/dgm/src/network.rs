//! Gated network architecture and a plain MLP baseline, built on the
//! autodiff tape.
//!
//! The gated layer follows the LSTM/highway pattern: four gate
//! transformations Z, G, R, H per layer, each fed both the previous hidden
//! state and the original space-time input, combined through element-wise
//! products:
//!
//! ```text
//! S¹     = σ(w¹·x̃ + b¹)
//! Zℓ     = σ(uzℓ·x̃ + wzℓ·Sℓ + bzℓ)
//! Gℓ     = σ(ugℓ·x̃ + wgℓ·Sℓ + bgℓ)
//! Rℓ     = σ(urℓ·x̃ + wrℓ·Sℓ + brℓ)
//! Hℓ     = σ(uhℓ·x̃ + whℓ·(Sℓ ⊙ Rℓ) + bhℓ)
//! Sℓ⁺¹   = (1 − Gℓ) ⊙ Hℓ + Zℓ ⊙ Sℓ
//! f(t,x) = w·S^{L+1} + b            (linear output)
//! ```
//!
//! where x̃ is the concatenation (t, x), re-fed to every layer. Each layer
//! carries 8 weight matrices and 4 bias vectors.

use crate::autodiff::{Role, Tape, VarHandle};
use crate::error::{DgmError, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(DgmError::Config(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply(&self, tape: &mut Tape, x: VarHandle) -> Result<VarHandle> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// A named dense array with explicit shape; vectors use `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Tensor {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Dimensions of the gated network. `d_in` counts time plus every spatial
/// coordinate; `layers` may be zero (the degenerate direct `w·S¹ + b` map).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DgmShape {
    pub d_in: usize,
    pub d_out: usize,
    pub width: usize,
    pub layers: usize,
    pub activation: Activation,
}

impl DgmShape {
    pub fn new(d_in: usize, d_out: usize, width: usize, layers: usize, activation: Activation) -> Result<Self> {
        if d_in == 0 || d_out == 0 || width == 0 {
            return Err(DgmError::Dimension(
                "network dimensions must be at least 1".to_string(),
            ));
        }
        Ok(DgmShape {
            d_in,
            d_out,
            width,
            layers,
            activation,
        })
    }

    /// Total number of scalar parameters:
    /// `d_in·w + w + L·(4·w·d_in + 4·w² + 4·w) + d_out·w + d_out`.
    pub fn param_count(&self) -> usize {
        let (w, d, l, o) = (self.width, self.d_in, self.layers, self.d_out);
        d * w + w + l * (4 * w * d + 4 * w * w + 4 * w) + o * w + o
    }
}

/// Full parameter set of the gated network, stored as an ordered list of
/// named tensors. The order is the canonical flat layout used by the
/// optimizer and the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct DgmParams {
    pub shape: DgmShape,
    pub tensors: Vec<Tensor>,
}

fn xavier_fill(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in &mut t.data {
        *v = rng.random_range(-bound..=bound);
    }
}

impl DgmParams {
    /// Tensor skeleton with all entries zero, in canonical order.
    pub fn zeros(shape: DgmShape) -> Self {
        let (w, d, o) = (shape.width, shape.d_in, shape.d_out);
        let mut tensors = Vec::with_capacity(2 + 12 * shape.layers + 2);
        tensors.push(Tensor::zeros("w1", w, d));
        tensors.push(Tensor::zeros("b1", w, 1));
        for l in 0..shape.layers {
            for gate in ["z", "g", "r", "h"] {
                tensors.push(Tensor::zeros(format!("u_{gate}{l}"), w, d));
                tensors.push(Tensor::zeros(format!("w_{gate}{l}"), w, w));
                tensors.push(Tensor::zeros(format!("b_{gate}{l}"), w, 1));
            }
        }
        tensors.push(Tensor::zeros("w_out", o, w));
        tensors.push(Tensor::zeros("b_out", o, 1));
        DgmParams { shape, tensors }
    }

    /// Weights drawn uniform on ±√(6/(fan_in+fan_out)), biases zero.
    pub fn xavier(shape: DgmShape, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(shape);
        let (w, d, o) = (shape.width, shape.d_in, shape.d_out);
        for t in &mut p.tensors {
            if t.cols == 1 {
                continue; // bias vectors stay zero
            }
            let (fan_in, fan_out) = if t.name == "w_out" {
                (w, o)
            } else if t.cols == d {
                (d, w)
            } else {
                (w, w)
            };
            xavier_fill(t, fan_in, fan_out, rng);
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// All parameters in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Overwrites every tensor from a canonical-order flat slice.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(DgmError::Dimension(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Registers every parameter as a `Parameter`-role tape variable, in
    /// canonical order, and returns the handle set used by the forward pass.
    pub fn register(&self, tape: &mut Tape) -> Result<ParamHandles> {
        let mut flat = Vec::with_capacity(self.param_count());
        let mut spans = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let start = flat.len();
            for &v in &t.data {
                flat.push(tape.var(v, Role::Parameter)?);
            }
            spans.push((start, t.rows, t.cols));
        }
        Ok(ParamHandles { flat, spans })
    }
}

/// Tape handles for one registered parameter set.
pub struct ParamHandles {
    flat: Vec<VarHandle>,
    spans: Vec<(usize, usize, usize)>,
}

impl ParamHandles {
    /// Assembles handles from an externally built flat list plus tensor
    /// spans `(offset, rows, cols)` in canonical order. Used when a caller
    /// registers the variables itself (gradient checks, resumed tapes).
    pub fn from_raw(flat: Vec<VarHandle>, spans: Vec<(usize, usize, usize)>) -> Self {
        ParamHandles { flat, spans }
    }

    pub fn flat(&self) -> &[VarHandle] {
        &self.flat
    }

    fn tensor(&self, k: usize) -> &[VarHandle] {
        let (start, rows, cols) = self.spans[k];
        &self.flat[start..start + rows * cols]
    }

    fn shape_of(&self, k: usize) -> (usize, usize) {
        let (_, rows, cols) = self.spans[k];
        (rows, cols)
    }
}

/// w·v + b for every row of a weight matrix, with an optional second
/// matrix-vector term. Row-major weights.
fn affine_rows(
    tape: &mut Tape,
    w: &[VarHandle],
    v: &[VarHandle],
    w2: Option<(&[VarHandle], &[VarHandle])>,
    b: &[VarHandle],
    out: &mut Vec<VarHandle>,
) -> Result<()> {
    let rows = b.len();
    let cols = v.len();
    out.clear();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = tape.mul(row[0], v[0])?;
        for c in 1..cols {
            let m = tape.mul(row[c], v[c])?;
            acc = tape.add(acc, m)?;
        }
        if let Some((w2m, v2)) = w2 {
            let cols2 = v2.len();
            let row2 = &w2m[r * cols2..(r + 1) * cols2];
            for c in 0..cols2 {
                let m = tape.mul(row2[c], v2[c])?;
                acc = tape.add(acc, m)?;
            }
        }
        acc = tape.add(acc, b[r])?;
        out.push(acc);
    }
    Ok(())
}

/// Forward pass of the gated network at one space-time point.
///
/// `inputs` is the concatenation (t, x) already on the tape; its length must
/// equal `shape.d_in`. Returns the `d_out` output handles.
pub fn dgm_forward(
    tape: &mut Tape,
    shape: &DgmShape,
    params: &ParamHandles,
    inputs: &[VarHandle],
) -> Result<Vec<VarHandle>> {
    if inputs.len() != shape.d_in {
        return Err(DgmError::Dimension(format!(
            "forward input has {} coordinates, network expects {}",
            inputs.len(),
            shape.d_in
        )));
    }
    let w = shape.width;
    let act = shape.activation;

    // S¹ = σ(w¹·x̃ + b¹)
    let mut s: Vec<VarHandle> = Vec::with_capacity(w);
    let mut pre: Vec<VarHandle> = Vec::with_capacity(w);
    affine_rows(tape, params.tensor(0), inputs, None, params.tensor(1), &mut pre)?;
    for &p in &pre {
        s.push(act.apply(tape, p)?);
    }

    let one = tape.constant(1.0)?;
    let mut gate_z: Vec<VarHandle> = Vec::with_capacity(w);
    let mut gate_g: Vec<VarHandle> = Vec::with_capacity(w);
    let mut gate_r: Vec<VarHandle> = Vec::with_capacity(w);
    let mut gate_h: Vec<VarHandle> = Vec::with_capacity(w);
    let mut sr: Vec<VarHandle> = Vec::with_capacity(w);

    for l in 0..shape.layers {
        let base = 2 + 12 * l;
        // Z, G, R gates all read (x̃, Sℓ).
        for (gate, out) in [(0, &mut gate_z), (3, &mut gate_g), (6, &mut gate_r)] {
            affine_rows(
                tape,
                params.tensor(base + gate),
                inputs,
                Some((params.tensor(base + gate + 1), &s)),
                params.tensor(base + gate + 2),
                out,
            )?;
            for p in out.iter_mut() {
                *p = act.apply(tape, *p)?;
            }
        }
        // H reads (x̃, Sℓ ⊙ Rℓ).
        sr.clear();
        for i in 0..w {
            sr.push(tape.mul(s[i], gate_r[i])?);
        }
        affine_rows(
            tape,
            params.tensor(base + 9),
            inputs,
            Some((params.tensor(base + 10), &sr)),
            params.tensor(base + 11),
            &mut gate_h,
        )?;
        for p in gate_h.iter_mut() {
            *p = act.apply(tape, *p)?;
        }
        // Sℓ⁺¹ = (1 − Gℓ) ⊙ Hℓ + Zℓ ⊙ Sℓ
        for i in 0..w {
            let one_minus_g = tape.sub(one, gate_g[i])?;
            let gh = tape.mul(one_minus_g, gate_h[i])?;
            let zs = tape.mul(gate_z[i], s[i])?;
            s[i] = tape.add(gh, zs)?;
        }
    }

    // Linear output f = w·S^{L+1} + b.
    let k_out = 2 + 12 * shape.layers;
    let mut out = Vec::with_capacity(shape.d_out);
    affine_rows(
        tape,
        params.tensor(k_out),
        &s,
        None,
        params.tensor(k_out + 1),
        &mut out,
    )?;
    Ok(out)
}

/// Plain feedforward network baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Layer sizes from input to output, e.g. `[2, 20, 20, 1]`.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub tensors: Vec<Tensor>,
}

impl MlpParams {
    pub fn zeros(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(DgmError::Dimension(
                "MLP needs at least input and output sizes, all nonzero".to_string(),
            ));
        }
        let mut tensors = Vec::new();
        for l in 0..sizes.len() - 1 {
            tensors.push(Tensor::zeros(format!("w{l}"), sizes[l + 1], sizes[l]));
            tensors.push(Tensor::zeros(format!("b{l}"), sizes[l + 1], 1));
        }
        Ok(MlpParams {
            sizes,
            activation,
            tensors,
        })
    }

    pub fn xavier(sizes: Vec<usize>, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(sizes, activation)?;
        for t in &mut p.tensors {
            if t.cols == 1 {
                continue;
            }
            xavier_fill(t, t.cols, t.rows, rng);
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn register(&self, tape: &mut Tape) -> Result<ParamHandles> {
        let mut flat = Vec::with_capacity(self.param_count());
        let mut spans = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let start = flat.len();
            for &v in &t.data {
                flat.push(tape.var(v, Role::Parameter)?);
            }
            spans.push((start, t.rows, t.cols));
        }
        Ok(ParamHandles { flat, spans })
    }
}

/// Forward pass of the MLP: hidden layers use the activation, the output
/// layer is linear.
pub fn mlp_forward(
    tape: &mut Tape,
    mlp: &MlpParams,
    params: &ParamHandles,
    inputs: &[VarHandle],
) -> Result<Vec<VarHandle>> {
    if inputs.len() != mlp.sizes[0] {
        return Err(DgmError::Dimension(format!(
            "forward input has {} coordinates, network expects {}",
            inputs.len(),
            mlp.sizes[0]
        )));
    }
    let n_layers = mlp.sizes.len() - 1;
    let mut current = inputs.to_vec();
    let mut next = Vec::new();
    for l in 0..n_layers {
        let (rows, _) = params.shape_of(2 * l);
        next.clear();
        next.reserve(rows);
        affine_rows(
            tape,
            params.tensor(2 * l),
            &current,
            None,
            params.tensor(2 * l + 1),
            &mut next,
        )?;
        if l + 1 < n_layers {
            for p in next.iter_mut() {
                *p = mlp.activation.apply(tape, *p)?;
            }
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Role};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forward_value(p: &DgmParams, t: f64, x: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let ph = p.register(&mut tape).unwrap();
        let mut inputs = vec![tape.var(t, Role::Input).unwrap()];
        for &xi in x {
            inputs.push(tape.var(xi, Role::Input).unwrap());
        }
        let out = dgm_forward(&mut tape, &p.shape, &ph, &inputs).unwrap();
        tape.value(out[0])
    }

    #[test]
    fn parameter_count_formula_matches_enumeration() {
        for (d_in, d_out, width, layers) in [(2, 1, 50, 3), (3, 2, 8, 1), (2, 1, 4, 0), (5, 5, 7, 4)] {
            let shape = DgmShape::new(d_in, d_out, width, layers, Activation::Tanh).unwrap();
            let p = DgmParams::zeros(shape);
            assert_eq!(p.param_count(), shape.param_count());
            assert_eq!(p.flatten().len(), shape.param_count());
        }
    }

    #[test]
    fn zero_parameters_give_zero_output_with_tanh() {
        let shape = DgmShape::new(2, 1, 6, 2, Activation::Tanh).unwrap();
        let p = DgmParams::zeros(shape);
        for (t, x) in [(0.0, 0.0), (0.5, 3.0), (1.0, -2.0)] {
            assert_eq!(forward_value(&p, t, &[x]), 0.0);
        }
    }

    #[test]
    fn zero_layers_reduces_to_one_hidden_layer_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = DgmShape::new(2, 1, 5, 0, Activation::Tanh).unwrap();
        let dgm = DgmParams::xavier(shape, &mut rng);
        let mut mlp = MlpParams::zeros(vec![2, 5, 1], Activation::Tanh).unwrap();
        mlp.tensors[0] = dgm.tensors[0].clone(); // w1
        mlp.tensors[1] = dgm.tensors[1].clone(); // b1
        mlp.tensors[2] = dgm.tensors[2].clone(); // w_out
        mlp.tensors[3] = dgm.tensors[3].clone(); // b_out

        let mut tape = Tape::new();
        let ph = mlp.register(&mut tape).unwrap();
        let inputs = vec![
            tape.var(0.3, Role::Input).unwrap(),
            tape.var(-0.9, Role::Input).unwrap(),
        ];
        let out = mlp_forward(&mut tape, &mlp, &ph, &inputs).unwrap();
        let mlp_val = tape.value(out[0]);
        let dgm_val = forward_value(&dgm, 0.3, &[-0.9]);
        assert!((mlp_val - dgm_val).abs() < 1e-14);
    }

    /// Straightforward dense-matrix evaluation of the layer equations,
    /// kept independent of the tape implementation on purpose.
    fn reference_eval(p: &DgmParams, input: &[f64]) -> Vec<f64> {
        let w = p.shape.width;
        let act = |v: f64| match p.shape.activation {
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        };
        let matvec = |t: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..t.rows)
                .map(|r| (0..t.cols).map(|c| t.at(r, c) * v[c]).sum())
                .collect()
        };
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };

        let mut s: Vec<f64> = add(&matvec(&p.tensors[0], input), &p.tensors[1].data)
            .into_iter()
            .map(act)
            .collect();
        for l in 0..p.shape.layers {
            let base = 2 + 12 * l;
            let gate = |ui: usize, state: &[f64]| -> Vec<f64> {
                let ux = matvec(&p.tensors[ui], input);
                let ws = matvec(&p.tensors[ui + 1], state);
                add(&add(&ux, &ws), &p.tensors[ui + 2].data)
                    .into_iter()
                    .map(act)
                    .collect()
            };
            let z = gate(base, &s);
            let g = gate(base + 3, &s);
            let r = gate(base + 6, &s);
            let sr: Vec<f64> = s.iter().zip(&r).map(|(a, b)| a * b).collect();
            let h = gate(base + 9, &sr);
            s = (0..w)
                .map(|i| (1.0 - g[i]) * h[i] + z[i] * s[i])
                .collect();
        }
        let k = 2 + 12 * p.shape.layers;
        add(&matvec(&p.tensors[k], &s), &p.tensors[k + 1].data)
    }

    #[test]
    fn tape_forward_matches_independent_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let shape = DgmShape::new(2, 1, 8, 2, Activation::Tanh).unwrap();
        let p = DgmParams::xavier(shape, &mut rng);
        let expect = reference_eval(&p, &[0.5, 0.5])[0];
        let got = forward_value(&p, 0.5, &[0.5]);
        assert!(
            (expect - got).abs() <= 1e-13 * expect.abs().max(1.0),
            "tape {got} vs dense {expect}"
        );
        // And at a few more points, including a sigmoid network.
        let shape2 = DgmShape::new(3, 2, 5, 3, Activation::Sigmoid).unwrap();
        let p2 = DgmParams::xavier(shape2, &mut rng);
        let mut tape = Tape::new();
        let ph = p2.register(&mut tape).unwrap();
        let inputs = vec![
            tape.var(0.1, Role::Input).unwrap(),
            tape.var(-0.4, Role::Input).unwrap(),
            tape.var(0.8, Role::Input).unwrap(),
        ];
        let out = dgm_forward(&mut tape, &shape2, &ph, &inputs).unwrap();
        let expect2 = reference_eval(&p2, &[0.1, -0.4, 0.8]);
        for (o, e) in out.iter().zip(&expect2) {
            assert!((tape.value(*o) - e).abs() <= 1e-13 * e.abs().max(1.0));
        }
    }

    #[test]
    fn saturated_copy_gates_reduce_to_skip_connection() {
        // With Z ≈ 1 and G ≈ 1 (large positive biases, zero gate weights),
        // S^{L+1} == S¹ and the network equals its zero-layer reduction.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = DgmShape::new(2, 1, 6, 3, Activation::Sigmoid).unwrap();
        let mut p = DgmParams::xavier(shape, &mut rng);
        for l in 0..shape.layers {
            let base = 2 + 12 * l;
            for k in base..base + 12 {
                for v in &mut p.tensors[k].data {
                    *v = 0.0;
                }
            }
            p.tensors[base + 2].data.fill(40.0); // b_z -> Z ≈ 1
            p.tensors[base + 5].data.fill(40.0); // b_g -> 1 - G ≈ 0
        }
        let mut reduced = DgmParams::zeros(DgmShape::new(2, 1, 6, 0, Activation::Sigmoid).unwrap());
        reduced.tensors[0] = p.tensors[0].clone();
        reduced.tensors[1] = p.tensors[1].clone();
        reduced.tensors[2] = p.tensors[2 + 12 * shape.layers].clone();
        reduced.tensors[3] = p.tensors[3 + 12 * shape.layers].clone();
        for (t, x) in [(0.2, 0.7), (0.9, -0.3), (0.0, 0.0)] {
            let full = forward_value(&p, t, &[x]);
            let skip = forward_value(&reduced, t, &[x]);
            assert!((full - skip).abs() < 1e-12, "{full} vs {skip}");
        }
    }

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = DgmShape::new(1, 1, 1, 1, Activation::Tanh).unwrap();
        let p = DgmParams::xavier(shape, &mut rng);
        let bound = 3.0f64.sqrt();
        for t in &p.tensors {
            if t.cols == 1 {
                assert!(t.data.iter().all(|&v| v == 0.0), "bias {} not zero", t.name);
            } else if t.rows == 1 && t.cols == 1 {
                assert!(t.data[0].abs() <= bound);
            }
        }
        // width=1, d_in=1: every 1x1 weight obeys |w| <= sqrt(6/2).
        for t in &p.tensors {
            if t.cols != 1 && t.rows * t.cols == 1 {
                assert!(t.data[0].abs() <= bound, "{} = {}", t.name, t.data[0]);
            }
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let shape = DgmShape::new(2, 1, 7, 2, Activation::Tanh).unwrap();
        let a = DgmParams::xavier(shape, &mut ChaCha8Rng::seed_from_u64(99));
        let b = DgmParams::xavier(shape, &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    #[test]
    fn forward_is_continuous_in_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let shape = DgmShape::new(2, 1, 10, 2, Activation::Tanh).unwrap();
        let p = DgmParams::xavier(shape, &mut rng);
        let base = forward_value(&p, 0.4, &[0.6]);
        let d1 = (forward_value(&p, 0.4, &[0.6 + 1e-3]) - base).abs();
        let d2 = (forward_value(&p, 0.4, &[0.6 + 5e-4]) - base).abs();
        // Halving the perturbation roughly halves the change.
        assert!(d2 <= 0.75 * d1 + 1e-12, "d1={d1}, d2={d2}");
    }

    #[test]
    fn dgm_gradients_match_finite_differences() {
        let shape = DgmShape::new(2, 1, 4, 1, Activation::Tanh).unwrap();
        let template = DgmParams::xavier(shape, &mut ChaCha8Rng::seed_from_u64(31));
        let flat = template.flatten();
        let shape_copy = shape;
        let builder = move |tape: &mut Tape, vars: &[crate::autodiff::VarHandle]| {
            let mut p = DgmParams::zeros(shape_copy);
            // Values are irrelevant here; the handles carry the point.
            let mut spans = Vec::new();
            let mut off = 0usize;
            for t in &p.tensors {
                spans.push((off, t.rows, t.cols));
                off += t.data.len();
            }
            p.unflatten(&vars.iter().map(|h| tape.value(*h)).collect::<Vec<_>>())
                .unwrap();
            let ph = ParamHandles {
                flat: vars.to_vec(),
                spans,
            };
            let inputs = vec![tape.var(0.3, Role::Input)?, tape.var(0.7, Role::Input)?];
            let out = dgm_forward(tape, &shape_copy, &ph, &inputs)?;
            Ok(out[0])
        };
        let err = grad_check(builder, &flat, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn mlp_zero_weights_output_final_bias() {
        let mut mlp = MlpParams::zeros(vec![2, 4, 1], Activation::Tanh).unwrap();
        mlp.tensors[3].data[0] = -2.5;
        let mut tape = Tape::new();
        let ph = mlp.register(&mut tape).unwrap();
        let inputs = vec![
            tape.var(5.0, Role::Input).unwrap(),
            tape.var(-3.0, Role::Input).unwrap(),
        ];
        let out = mlp_forward(&mut tape, &mlp, &ph, &inputs).unwrap();
        assert_eq!(tape.value(out[0]), -2.5);
    }

    #[test]
    fn single_linear_layer_is_exactly_affine() {
        let mut mlp = MlpParams::zeros(vec![2, 1], Activation::Tanh).unwrap();
        mlp.tensors[0].data = vec![2.0, -3.0];
        mlp.tensors[1].data = vec![0.5];
        let mut tape = Tape::new();
        let ph = mlp.register(&mut tape).unwrap();
        let inputs = vec![
            tape.var(1.5, Role::Input).unwrap(),
            tape.var(0.25, Role::Input).unwrap(),
        ];
        let out = mlp_forward(&mut tape, &mlp, &ph, &inputs).unwrap();
        assert_eq!(tape.value(out[0]), 2.0 * 1.5 - 3.0 * 0.25 + 0.5);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mlp = MlpParams::xavier(vec![2, 5, 1], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let flat: Vec<f64> = mlp
            .tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect();
        let sizes = mlp.sizes.clone();
        let builder = move |tape: &mut Tape, vars: &[crate::autodiff::VarHandle]| {
            let proto = MlpParams::zeros(sizes.clone(), Activation::Tanh)?;
            let mut spans = Vec::new();
            let mut off = 0usize;
            for t in &proto.tensors {
                spans.push((off, t.rows, t.cols));
                off += t.data.len();
            }
            let ph = ParamHandles {
                flat: vars.to_vec(),
                spans,
            };
            let inputs = vec![tape.var(-0.2, Role::Input)?, tape.var(0.9, Role::Input)?];
            let out = mlp_forward(tape, &proto, &ph, &inputs)?;
            Ok(out[0])
        };
        let err = grad_check(builder, &flat, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }
}
