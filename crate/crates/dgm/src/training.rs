//! Optimization loop: adaptive-moment descent steps, learning-rate
//! schedule, periodic resampling, convergence monitoring and parameter
//! checkpointing.

use crate::error::{DgmError, Result};
use crate::network::{Activation, DgmParams, DgmShape, Tensor};
use crate::problems::{ProblemKind, ProblemSpec};
use crate::residuals::{
    compute_net_flow, total_loss, CouplingState, DerivConfig, EvalOpts, LossReport, TermWeights,
};
use crate::sampling::{
    sample_interior_uniform, sample_lognormal, sample_terminal, sample_boundary, AuxGrid, Batch,
    SamplerScheme,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::time::Instant;

/// First/second-moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected adaptive-moment descent step, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DgmError::Dimension(format!(
            "adam step shapes disagree: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

/// Piecewise-constant learning-rate schedule: each entry applies from its
/// iteration onward.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule(Vec<(u64, f64)>);

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule(vec![(0, rate)])
    }

    pub fn piecewise(mut stops: Vec<(u64, f64)>) -> Result<Self> {
        if stops.is_empty() {
            return Err(DgmError::Config("empty learning-rate schedule".to_string()));
        }
        stops.sort_by_key(|&(i, _)| i);
        if stops[0].0 != 0 {
            return Err(DgmError::Config(
                "learning-rate schedule must start at iteration 0".to_string(),
            ));
        }
        if stops.iter().any(|&(_, r)| !(r > 0.0) || !r.is_finite()) {
            return Err(DgmError::Config("learning rates must be positive".to_string()));
        }
        Ok(LrSchedule(stops))
    }

    pub fn rate_at(&self, iteration: u64) -> f64 {
        let mut rate = self.0[0].1;
        for &(start, r) in &self.0 {
            if iteration >= start {
                rate = r;
            } else {
                break;
            }
        }
        rate
    }

    pub fn stops(&self) -> &[(u64, f64)] {
        &self.0
    }
}

/// Training-loop configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: u64,
    pub interior_batch: usize,
    pub terminal_batch: usize,
    pub boundary_batch: usize,
    /// Integral-grid resolution (time nodes × space nodes) for the density
    /// problems.
    pub grid_t: usize,
    pub grid_x: usize,
    /// Fresh points are drawn every this many iterations.
    pub resample_every: u64,
    pub seed: u64,
    pub schedule: LrSchedule,
    /// Stop when the parameter change of one step falls below this L2 norm.
    pub convergence_tol: f64,
    pub weights: TermWeights,
    pub sampler: SamplerScheme,
    /// Keep all per-batch work on the calling thread.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            interior_batch: 1000,
            terminal_batch: 100,
            boundary_batch: 0,
            grid_t: 16,
            grid_x: 24,
            resample_every: 10,
            seed: 0,
            schedule: LrSchedule::constant(1e-3),
            convergence_tol: 1e-8,
            weights: TermWeights::default(),
            sampler: SamplerScheme::Uniform,
            deterministic: false,
        }
    }
}

/// Per-iteration loss record. `l4` carries the obstacle penalty plus, for
/// the coupled mean-field pair, the density-equation loss. `wall_ms` is
/// zeroed in deterministic mode so emitted histories are byte-stable.
#[derive(Debug, Clone, Copy)]
pub struct HistoryRow {
    pub iteration: u64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub history: Vec<HistoryRow>,
    pub iterations_run: u64,
    pub converged: bool,
    /// Set when the loop stopped on a non-finite loss; the parameters keep
    /// their last good values.
    pub aborted: Option<String>,
    /// Final optimizer state per network, for exact resumption.
    pub adam: Vec<AdamState>,
}

/// Draws one training batch for the problem.
pub fn make_batch(problem: &ProblemSpec, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let bx = &problem.domain;
    let interior = if matches!(problem.kind, ProblemKind::FokkerPlanckOu(_)) {
        Vec::new()
    } else {
        match cfg.sampler {
            SamplerScheme::Uniform => sample_interior_uniform(bx, cfg.interior_batch, rng),
            SamplerScheme::Lognormal { s0, mu, sigma } => {
                sample_lognormal(bx, (s0, mu, sigma), cfg.interior_batch, rng)?
            }
        }
    };
    let any_condition = (0..problem.n_unknowns).any(|i| problem.condition_side(i).is_some());
    let terminal = if any_condition {
        sample_terminal(bx, cfg.terminal_batch, rng)
    } else {
        Vec::new()
    };
    let boundary = if cfg.boundary_batch > 0 {
        sample_boundary(bx, cfg.boundary_batch, rng)
    } else {
        Vec::new()
    };
    let aux_grid = if problem.has_integral {
        // Stratified draws: one uniform point per equal-width cell. The
        // marginals stay uniform while the self-normalized quadrature never
        // starves a region of nodes.
        let stratified = |lo: f64, hi: f64, n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let w = (hi - lo) / n as f64;
            (0..n)
                .map(|k| lo + (k as f64 + rng.random_range(0.0..1.0)) * w)
                .collect()
        };
        let t_nodes = stratified(bx.t0, bx.t1, cfg.grid_t, rng);
        let (lo, _) = bx.ranges[0];
        let hi = bx.stretched_hi(0);
        let x_nodes = stratified(lo, hi, cfg.grid_x, rng);
        Some(AuxGrid { t_nodes, x_nodes })
    } else {
        None
    };
    Ok(Batch {
        interior,
        terminal,
        boundary,
        aux_grid,
    })
}

/// Runs the descent loop: sample (with periodic resampling), assemble the
/// loss, sweep gradients, step each network's parameters, record per-term
/// losses; stops at the iteration cap or once the parameter change is below
/// the convergence tolerance.
pub fn train(
    problem: &ProblemSpec,
    nets: &mut [DgmParams],
    cfg: &TrainConfig,
    dcfg: &DerivConfig,
) -> Result<TrainOutput> {
    use rand::SeedableRng;
    if cfg.resample_every == 0 {
        return Err(DgmError::Config("resample period must be >= 1".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam: Vec<AdamState> = nets.iter().map(|n| AdamState::new(n.param_count())).collect();
    let mut flats: Vec<Vec<f64>> = nets.iter().map(|n| n.flatten()).collect();
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    let mut coupling = CouplingState::default();
    let mut batch = Batch::default();
    let mut converged = false;
    let mut aborted = None;
    let mut iterations_run = 0;

    let opts = EvalOpts {
        with_grads: true,
        sequential: cfg.deterministic,
    };

    for iter in 0..cfg.iterations {
        let started = Instant::now();
        if iter % cfg.resample_every == 0 {
            batch = make_batch(problem, cfg, &mut rng)?;
            if matches!(problem.kind, ProblemKind::MeanFieldGame(_)) {
                coupling.net_flow = Some(compute_net_flow(problem, nets, dcfg, 17, 41)?);
            }
        }

        let eval = match total_loss(problem, nets, &batch, dcfg, &cfg.weights, &coupling, opts) {
            Ok(e) => e,
            Err(err) => {
                aborted = Some(format!("iteration {iter}: {err}"));
                break;
            }
        };
        let report = eval.report;
        if !report.total.is_finite() {
            aborted = Some(format!("iteration {iter}: non-finite loss {report:?}"));
            break;
        }

        let lr = cfg.schedule.rate_at(iter);
        let mut delta_sq = 0.0f64;
        for (k, net) in nets.iter_mut().enumerate() {
            let before: Vec<f64> = flats[k].clone();
            adam_step(&mut flats[k], &eval.grads[k], &mut adam[k], lr)?;
            for (a, b) in flats[k].iter().zip(&before) {
                let d = a - b;
                delta_sq += d * d;
            }
            net.unflatten(&flats[k])?;
        }
        iterations_run = iter + 1;

        let wall_ms = if cfg.deterministic {
            0.0
        } else {
            started.elapsed().as_secs_f64() * 1e3
        };
        history.push(HistoryRow {
            iteration: iter,
            l1: report.l1_operator,
            l2: report.l2_boundary,
            l3: report.l3_terminal,
            l4: report.l4_penalty + report.integral_terms,
            total: report.total,
            wall_ms,
        });

        if delta_sq.sqrt() < cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(TrainOutput {
        history,
        iterations_run,
        converged,
        aborted,
        adam,
    })
}

/// Values-only loss of one batch (monitoring, tests).
pub fn loss_snapshot(
    problem: &ProblemSpec,
    nets: &[DgmParams],
    cfg: &TrainConfig,
    dcfg: &DerivConfig,
    seed: u64,
) -> Result<LossReport> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = make_batch(problem, cfg, &mut rng)?;
    let mut coupling = CouplingState::default();
    if matches!(problem.kind, ProblemKind::MeanFieldGame(_)) {
        coupling.net_flow = Some(compute_net_flow(problem, nets, dcfg, 17, 41)?);
    }
    Ok(total_loss(
        problem,
        nets,
        &batch,
        dcfg,
        &cfg.weights,
        &coupling,
        EvalOpts::values_only(),
    )?
    .report)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"DGMCKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume or evaluate a run: problem identity and
/// coefficients, every network's tensors, and the optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub problem_id: String,
    pub coefficients: Vec<(String, f64)>,
    pub nets: Vec<DgmParams>,
    pub adam: Vec<AdamState>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(DgmError::Checkpoint(format!("implausible string length {n}")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| DgmError::Checkpoint(format!("invalid utf-8: {e}")))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > 1 << 28 {
        return Err(DgmError::Checkpoint(format!("implausible array length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn activation_tag(a: Activation) -> u32 {
    match a {
        Activation::Tanh => 0,
        Activation::Sigmoid => 1,
    }
}

fn activation_from_tag(t: u32) -> Result<Activation> {
    match t {
        0 => Ok(Activation::Tanh),
        1 => Ok(Activation::Sigmoid),
        other => Err(DgmError::Checkpoint(format!("unknown activation tag {other}"))),
    }
}

/// Serializes a checkpoint; the layout is versioned and little-endian
/// throughout, so save → load → save reproduces identical bytes.
pub fn checkpoint_save(ckpt: &Checkpoint, path: &std::path::Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    let w = &mut buf;
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    write_str(w, &ckpt.problem_id)?;
    write_u32(w, ckpt.coefficients.len() as u32)?;
    for (name, v) in &ckpt.coefficients {
        write_str(w, name)?;
        write_f64(w, *v)?;
    }
    write_u32(w, ckpt.nets.len() as u32)?;
    for net in &ckpt.nets {
        write_u32(w, net.shape.d_in as u32)?;
        write_u32(w, net.shape.d_out as u32)?;
        write_u32(w, net.shape.width as u32)?;
        write_u32(w, net.shape.layers as u32)?;
        write_u32(w, activation_tag(net.shape.activation))?;
        write_u32(w, net.tensors.len() as u32)?;
        for t in &net.tensors {
            write_str(w, &t.name)?;
            write_u32(w, t.rows as u32)?;
            write_u32(w, t.cols as u32)?;
            write_f64s(w, &t.data)?;
        }
    }
    write_u32(w, ckpt.adam.len() as u32)?;
    for a in &ckpt.adam {
        write_u64(w, a.step)?;
        write_f64(w, a.beta1)?;
        write_f64(w, a.beta2)?;
        write_f64(w, a.epsilon)?;
        write_f64s(w, &a.m)?;
        write_f64s(w, &a.v)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn checkpoint_load(path: &std::path::Path) -> Result<Checkpoint> {
    let data = std::fs::read(path)?;
    let r = &mut data.as_slice();
    let magic = read_exact::<8>(r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DgmError::Checkpoint("not a checkpoint file (bad magic)".to_string()));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(DgmError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let problem_id = read_str(r)?;
    let n_coeffs = read_u32(r)?;
    let mut coefficients = Vec::with_capacity(n_coeffs as usize);
    for _ in 0..n_coeffs {
        let name = read_str(r)?;
        let v = read_f64(r)?;
        coefficients.push((name, v));
    }
    let n_nets = read_u32(r)?;
    let mut nets = Vec::with_capacity(n_nets as usize);
    for _ in 0..n_nets {
        let d_in = read_u32(r)? as usize;
        let d_out = read_u32(r)? as usize;
        let width = read_u32(r)? as usize;
        let layers = read_u32(r)? as usize;
        let activation = activation_from_tag(read_u32(r)?)?;
        let shape = DgmShape::new(d_in, d_out, width, layers, activation)
            .map_err(|e| DgmError::Checkpoint(format!("bad shape header: {e}")))?;
        let expected = DgmParams::zeros(shape);
        let n_tensors = read_u32(r)? as usize;
        if n_tensors != expected.tensors.len() {
            return Err(DgmError::Checkpoint(format!(
                "network declares {n_tensors} tensors, shape implies {}",
                expected.tensors.len()
            )));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for skeleton in &expected.tensors {
            let name = read_str(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let data = read_f64s(r)?;
            if name != skeleton.name
                || rows != skeleton.rows
                || cols != skeleton.cols
                || data.len() != rows * cols
            {
                return Err(DgmError::Checkpoint(format!(
                    "tensor `{name}` has shape {rows}x{cols} ({} values), expected `{}` {}x{}",
                    data.len(),
                    skeleton.name,
                    skeleton.rows,
                    skeleton.cols
                )));
            }
            tensors.push(Tensor {
                name,
                rows,
                cols,
                data,
            });
        }
        nets.push(DgmParams { shape, tensors });
    }
    let n_adam = read_u32(r)? as usize;
    let mut adam = Vec::with_capacity(n_adam);
    for k in 0..n_adam {
        let step = read_u64(r)?;
        let beta1 = read_f64(r)?;
        let beta2 = read_f64(r)?;
        let epsilon = read_f64(r)?;
        let m = read_f64s(r)?;
        let v = read_f64s(r)?;
        if k < nets.len() && (m.len() != nets[k].param_count() || v.len() != nets[k].param_count()) {
            return Err(DgmError::Checkpoint(format!(
                "optimizer state {k} has {} entries, network has {}",
                m.len(),
                nets[k].param_count()
            )));
        }
        adam.push(AdamState {
            m,
            v,
            step,
            beta1,
            beta2,
            epsilon,
        });
    }
    if !r.is_empty() {
        return Err(DgmError::Checkpoint(format!(
            "{} trailing bytes after checkpoint payload",
            r.len()
        )));
    }
    Ok(Checkpoint {
        problem_id,
        coefficients,
        nets,
        adam,
    })
}
