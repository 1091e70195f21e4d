//! Command implementations behind the experiment-runner binary: train,
//! evaluate, compare and baseline, all driven by one config file.

use crate::baselines::{
    bs_call_mc, bs_grid_solver, mfg_grid_solver, ou_simulate, GridSpec, McConfig, MfgGridSpec,
    Payoff,
};
use crate::config::{linspace, load_config, EvalGrid, ExperimentConfig};
use crate::error::{DgmError, Result};
use crate::network::DgmParams;
use crate::problems::{ProblemKind, ProblemSpec};
use crate::report::{
    read_surface_csv, write_history_csv, write_summary_json, write_surface_csv, ErrorReport,
    Summary, SurfaceRow,
};
use crate::residuals::Evaluator;
use crate::training::{checkpoint_load, checkpoint_save, train, Checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Flags shared by every verb.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

/// Fresh networks for an experiment, seeded from its config.
pub fn init_networks(cfg: &ExperimentConfig) -> Vec<DgmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cfg.shapes
        .iter()
        .map(|&shape| DgmParams::xavier(shape, &mut rng))
        .collect()
}

fn load_with_overrides(config_path: &Path, ov: &CliOverrides) -> Result<ExperimentConfig> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = out.clone();
    }
    cfg.train.deterministic |= ov.deterministic;
    Ok(cfg)
}

/// Trains the configured problem and writes `checkpoint.ckpt` plus
/// `history.csv` into the output directory. A run aborted by a non-finite
/// loss still writes its last good state, then surfaces the diagnostic.
pub fn cmd_train(config_path: &Path, ov: &CliOverrides) -> Result<()> {
    let cfg = load_with_overrides(config_path, ov)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut nets = init_networks(&cfg);
    let out = train(&cfg.problem, &mut nets, &cfg.train, &cfg.deriv)?;
    let ckpt = Checkpoint {
        problem_id: cfg.problem.id().to_string(),
        coefficients: cfg.problem.coefficients(),
        nets,
        adam: out.adam.clone(),
    };
    checkpoint_save(&ckpt, &cfg.out_dir.join("checkpoint.ckpt"))?;
    write_history_csv(&cfg.out_dir.join("history.csv"), &out.history)?;
    if let Some(diag) = out.aborted {
        return Err(DgmError::Numerical(format!(
            "training aborted ({diag}); last good checkpoint retained in {}",
            cfg.out_dir.display()
        )));
    }
    println!(
        "trained {} for {} iteration(s){}; wrote {}",
        cfg.problem.id(),
        out.iterations_run,
        if out.converged { " (converged)" } else { "" },
        cfg.out_dir.display()
    );
    Ok(())
}

fn grid_points(problem: &ProblemSpec, eval: &EvalGrid) -> Vec<(f64, Vec<f64>)> {
    let t_nodes = eval.t_nodes();
    let dim = problem.domain.dim();
    let axes: Vec<Vec<f64>> = (0..dim).map(|d| eval.x_nodes(d)).collect();
    let mut points = Vec::new();
    for &t in &t_nodes {
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<f64> = (0..dim).map(|d| axes[d][idx[d]]).collect();
            points.push((t, x));
            let mut d = dim;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < axes[d].len() {
                    break;
                }
                idx[d] = 0;
                if d == 0 {
                    break;
                }
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    points
}

fn checkpoint_nets(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<DgmParams>> {
    let ckpt = checkpoint_load(path)?;
    if ckpt.problem_id != cfg.problem.id() {
        return Err(DgmError::Config(format!(
            "checkpoint holds `{}`, config describes `{}`",
            ckpt.problem_id,
            cfg.problem.id()
        )));
    }
    if ckpt.nets.len() != cfg.problem.n_unknowns {
        return Err(DgmError::Checkpoint(format!(
            "checkpoint has {} network(s), problem needs {}",
            ckpt.nets.len(),
            cfg.problem.n_unknowns
        )));
    }
    Ok(ckpt.nets)
}

/// Evaluates a trained checkpoint on the configured grid and writes
/// `surface.csv` with per-unknown values, the control surface where the
/// problem defines one, and an extrapolation flag for points outside the
/// trained (stretched) region.
pub fn cmd_evaluate(config_path: &Path, checkpoint: &Path, ov: &CliOverrides) -> Result<()> {
    let cfg = load_with_overrides(config_path, ov)?;
    let nets = checkpoint_nets(&cfg, checkpoint)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let steps = cfg.deriv.steps(&cfg.problem.domain);
    let mut ev = Evaluator::new();
    let has_control = cfg.problem.has_control_map();
    let needs_curvature = matches!(cfg.problem.kind, ProblemKind::Merton(_));
    let mut rows = Vec::new();
    for (t, x) in grid_points(&cfg.problem, &cfg.eval) {
        let values: Vec<f64> = nets
            .iter()
            .map(|n| ev.value(n, t, &x))
            .collect::<Result<_>>()?;
        let control = if has_control {
            let grad = ev.spatial_gradient(&nets[0], t, &x, &steps.x)?;
            let hess_diag = if needs_curvature {
                ev.second_derivative_diag(&nets[0], t, &x, &steps.x)?
            } else {
                vec![0.0; x.len()]
            };
            cfg.problem.control_from_value(t, &x, &grad, &hess_diag)
        } else {
            None
        };
        let extrapolated = Some(!cfg.problem.domain.contains(t, &x));
        rows.push(SurfaceRow {
            t,
            x,
            values,
            control,
            extrapolated,
        });
    }
    let path = cfg.out_dir.join("surface.csv");
    write_surface_csv(&path, &rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Where comparison values come from.
#[derive(Debug, Clone)]
pub enum Source {
    /// Evaluate a trained checkpoint.
    Checkpoint(PathBuf),
    /// Read a previously emitted surface file.
    SurfaceCsv(PathBuf),
    /// The problem's closed-form solution.
    Oracle,
}

fn source_values(
    cfg: &ExperimentConfig,
    source: &Source,
    points: &[(f64, Vec<f64>)],
) -> Result<(Vec<f64>, u64)> {
    match source {
        Source::Checkpoint(path) => {
            let nets = checkpoint_nets(cfg, path)?;
            let iterations = checkpoint_load(path)?
                .adam
                .first()
                .map(|a| a.step)
                .unwrap_or(0);
            let mut ev = Evaluator::new();
            let vals = points
                .iter()
                .map(|(t, x)| ev.value(&nets[0], *t, x))
                .collect::<Result<_>>()?;
            Ok((vals, iterations))
        }
        Source::SurfaceCsv(path) => {
            let rows = read_surface_csv(path)?;
            if rows.len() != points.len() {
                return Err(DgmError::Dimension(format!(
                    "surface file has {} rows, evaluation grid has {} points",
                    rows.len(),
                    points.len()
                )));
            }
            let mut vals = Vec::with_capacity(rows.len());
            for ((t, x), (ft, fx, fv)) in points.iter().zip(&rows) {
                let same = (t - ft).abs() < 1e-9
                    && x.len() == fx.len()
                    && x.iter().zip(fx).all(|(a, b)| (a - b).abs() < 1e-9);
                if !same {
                    return Err(DgmError::Dimension(
                        "surface file grid does not match the evaluation grid".to_string(),
                    ));
                }
                vals.push(*fv);
            }
            Ok((vals, 0))
        }
        Source::Oracle => {
            let vals = points
                .iter()
                .map(|(t, x)| {
                    cfg.problem.oracle_value(0, *t, x).ok_or_else(|| {
                        DgmError::Config(format!(
                            "problem `{}` has no closed form; compare against a baseline surface",
                            cfg.problem.id()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            Ok((vals, 0))
        }
    }
}

/// Compares a candidate surface against a reference and writes
/// `errors.csv`, `errors_by_slice.csv` and `summary.json`.
pub fn cmd_compare(
    config_path: &Path,
    candidate: &Source,
    reference: &Source,
    ov: &CliOverrides,
) -> Result<()> {
    let started = Instant::now();
    let cfg = load_with_overrides(config_path, ov)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let points = grid_points(&cfg.problem, &cfg.eval);
    let (cand, iterations) = source_values(&cfg, candidate, &points)?;
    let (reference_vals, _) = source_values(&cfg, reference, &points)?;
    let merged: Vec<(f64, Vec<f64>, f64, f64)> = points
        .into_iter()
        .zip(cand.iter().zip(&reference_vals))
        .map(|((t, x), (c, r))| (t, x, *c, *r))
        .collect();
    let report = ErrorReport::build(&merged)?;
    report.write_csv(&cfg.out_dir.join("errors.csv"))?;
    report.write_slices_csv(&cfg.out_dir.join("errors_by_slice.csv"))?;
    let wall_ms = if cfg.train.deterministic {
        0.0
    } else {
        started.elapsed().as_secs_f64() * 1e3
    };
    let summary = Summary {
        problem: cfg.problem.id().to_string(),
        seed: cfg.seed,
        iterations,
        mae: report.mae,
        rmse: report.rmse,
        max_err: report.max_err,
        wall_ms,
    };
    write_summary_json(&cfg.out_dir.join("summary.json"), &summary)?;
    println!(
        "compared {}: mae {:.6}, rmse {:.6}, max {:.6}",
        cfg.problem.id(),
        report.mae,
        report.rmse,
        report.max_err
    );
    Ok(())
}

/// Runs a classical solver and writes its surface on the evaluation grid.
pub fn cmd_baseline(config_path: &Path, scheme: &str, ov: &CliOverrides) -> Result<()> {
    let cfg = load_with_overrides(config_path, ov)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("surface.csv");
    match scheme {
        "bs_grid" => {
            let (coeffs, payoff, american) = match &cfg.problem.kind {
                ProblemKind::EuropeanCall(c) => (*c, Payoff::Call, false),
                ProblemKind::AmericanPut(c) => (*c, Payoff::Put, true),
                _ => {
                    return Err(DgmError::Config(
                        "bs_grid applies to the option problems".to_string(),
                    ))
                }
            };
            let x_max = cfg
                .baseline
                .x_max
                .unwrap_or_else(|| (3.0 * coeffs.strike).max(1.5 * cfg.problem.domain.stretched_hi(0)));
            let spec = GridSpec {
                nt: cfg.baseline.nt,
                nx: cfg.baseline.nx,
                x_max,
            };
            let grid = bs_grid_solver(&coeffs, &spec, payoff, american)?;
            let rows: Vec<SurfaceRow> = grid_points(&cfg.problem, &cfg.eval)
                .into_iter()
                .map(|(t, x)| SurfaceRow {
                    t,
                    values: vec![grid.interpolate(t, x[0])],
                    x,
                    control: None,
                    extrapolated: None,
                })
                .collect();
            write_surface_csv(&path, &rows)?;
        }
        "mc_call" => {
            let ProblemKind::EuropeanCall(c) = &cfg.problem.kind else {
                return Err(DgmError::Config(
                    "mc_call applies to the European call".to_string(),
                ));
            };
            let mc = McConfig {
                paths: cfg.baseline.paths,
                steps: cfg.baseline.steps,
                seed: cfg.seed,
                antithetic: cfg.baseline.antithetic,
            };
            let (estimate, se) = bs_call_mc(c, &mc)?;
            let rows = vec![SurfaceRow {
                t: 0.0,
                x: vec![c.spot],
                values: vec![estimate, se],
                control: None,
                extrapolated: None,
            }];
            write_surface_csv(&path, &rows)?;
        }
        "ou_density" => {
            let ProblemKind::FokkerPlanckOu(c) = &cfg.problem.kind else {
                return Err(DgmError::Config(
                    "ou_density applies to the density problem".to_string(),
                ));
            };
            let t_nodes = cfg.eval.t_nodes();
            let x_nodes = cfg.eval.x_nodes(0);
            if x_nodes.len() < 2 {
                return Err(DgmError::Config("density histogram needs >= 2 bins".to_string()));
            }
            let dx = x_nodes[1] - x_nodes[0];
            let samples = ou_simulate(c, cfg.baseline.paths, &t_nodes, cfg.seed);
            let mut rows = Vec::new();
            for (k, &t) in t_nodes.iter().enumerate() {
                let mut counts = vec![0usize; x_nodes.len()];
                for &v in &samples[k] {
                    let bin = ((v - x_nodes[0]) / dx + 0.5).floor();
                    if bin >= 0.0 && (bin as usize) < counts.len() {
                        counts[bin as usize] += 1;
                    }
                }
                for (j, &x) in x_nodes.iter().enumerate() {
                    rows.push(SurfaceRow {
                        t,
                        x: vec![x],
                        values: vec![counts[j] as f64 / (samples[k].len() as f64 * dx)],
                        control: None,
                        extrapolated: None,
                    });
                }
            }
            write_surface_csv(&path, &rows)?;
        }
        "mfg_grid" => {
            let ProblemKind::MeanFieldGame(c) = &cfg.problem.kind else {
                return Err(DgmError::Config(
                    "mfg_grid applies to the mean-field problem".to_string(),
                ));
            };
            let spec = MfgGridSpec {
                nq: cfg.baseline.nx.max(16),
                nt: cfg.baseline.nt.max(16),
                q_max: cfg.problem.domain.stretched_hi(0),
                ..Default::default()
            };
            let sol = mfg_grid_solver(c, &spec)?;
            let rows: Vec<SurfaceRow> = grid_points(&cfg.problem, &cfg.eval)
                .into_iter()
                .map(|(t, x)| SurfaceRow {
                    t,
                    values: vec![sol.h_at(t, x[0])],
                    x,
                    control: None,
                    extrapolated: None,
                })
                .collect();
            write_surface_csv(&path, &rows)?;
            let mut extra = String::from("t,mean_inventory,net_flow,mass\n");
            for (i, &t) in sol.t_nodes.iter().enumerate() {
                extra.push_str(&format!(
                    "{t},{},{},{}\n",
                    sol.mean_inventory[i], sol.flow[i], sol.mass[i]
                ));
            }
            std::fs::write(cfg.out_dir.join("mean_path.csv"), extra)?;
        }
        other => {
            return Err(DgmError::Config(format!(
                "unknown baseline scheme `{other}` (known: bs_grid, mc_call, ou_density, mfg_grid)"
            )))
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Process exit code for an error, per the external contract: configuration
/// problems exit 2, numerical failures exit 3.
pub fn exit_code(err: &DgmError) -> i32 {
    match err {
        DgmError::Config(_) | DgmError::InvalidArgument(_) | DgmError::Io(_) => 2,
        DgmError::Checkpoint(_) | DgmError::Dimension(_) | DgmError::EmptyBatch(_) => 2,
        DgmError::NonFinite { .. } | DgmError::Domain { .. } | DgmError::Numerical(_) => 3,
    }
}

/// Convenience used by tests: grid of linearly spaced values.
pub fn eval_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo, hi, n)
}
