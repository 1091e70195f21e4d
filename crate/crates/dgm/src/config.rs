//! Experiment configuration: a small self-describing text format with
//! nested key-value sections.
//!
//! ```text
//! # top-level keys
//! problem = european_call        # required
//! seed = 42
//! out_dir = runs/call
//!
//! [coefficients]                 # per-problem overrides, by name
//! rate = 0.05
//!
//! [domain]
//! oversample = 1.3               # upper-bound stretch, every dimension
//! lo = 0.0                       # first spatial dimension
//! hi = 100.0
//!
//! [network]
//! layers = 3
//! width = 50
//! activation = tanh              # tanh | sigmoid
//!
//! [sampler]
//! scheme = uniform               # uniform | lognormal
//! interior = 1000
//! terminal = 100
//! boundary = 0
//! grid_t = 16                    # integral-grid resolution
//! grid_x = 24
//!
//! [train]
//! iterations = 20000
//! resample_every = 10
//! lr_schedule = 0:1e-3,10000:5e-4
//! convergence_tol = 1e-8
//! w_operator = 1
//! w_boundary = 1
//! w_condition = 1
//! w_penalty = 1
//! w_integral = 1
//!
//! [derivatives]
//! h_unit = 1e-3
//!
//! [evaluation]
//! t_points = 50
//! x_points = 50
//! t_lo = 0.0                     # default: problem time range
//! t_hi = 1.0
//! x_lo = 0.0                     # default: unstretched spatial range
//! x_hi = 100.0
//!
//! [baseline]
//! nt = 400
//! nx = 400
//! x_max = 300.0
//! paths = 1000000
//! steps = 16
//! antithetic = true
//! ```
//!
//! Unknown sections or keys are errors.

use crate::error::{DgmError, Result};
use crate::network::{Activation, DgmShape};
use crate::problems::{standard, ProblemKind, ProblemSpec};
use crate::residuals::{DerivConfig, TermWeights};
use crate::sampling::{DomainBox, SamplerScheme};
use crate::training::{LrSchedule, TrainConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Default)]
struct Section {
    entries: Vec<(String, String)>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    sections.insert(String::new(), Section::default());
    let mut current = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| DgmError::Config(format!("line {}: unterminated section", lineno + 1)))?
                .trim()
                .to_string();
            if name.is_empty() {
                return Err(DgmError::Config(format!("line {}: empty section name", lineno + 1)));
            }
            sections.entry(name.clone()).or_default();
            current = name;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(DgmError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        sections
            .get_mut(&current)
            .unwrap()
            .entries
            .push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(sections)
}

fn parse_f64(s: &str, key: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| DgmError::Config(format!("key `{key}`: `{s}` is not a number")))
}

fn parse_usize(s: &str, key: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| DgmError::Config(format!("key `{key}`: `{s}` is not a count")))
}

fn parse_u64(s: &str, key: &str) -> Result<u64> {
    s.parse::<u64>()
        .map_err(|_| DgmError::Config(format!("key `{key}`: `{s}` is not an integer")))
}

fn parse_bool(s: &str, key: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(DgmError::Config(format!("key `{key}`: `{other}` is not a boolean"))),
    }
}

/// Evaluation grid specification.
#[derive(Debug, Clone)]
pub struct EvalGrid {
    pub t_points: usize,
    pub x_points: usize,
    pub t_range: (f64, f64),
    pub x_ranges: Vec<(f64, f64)>,
}

impl EvalGrid {
    pub fn t_nodes(&self) -> Vec<f64> {
        linspace(self.t_range.0, self.t_range.1, self.t_points)
    }

    pub fn x_nodes(&self, dim: usize) -> Vec<f64> {
        linspace(self.x_ranges[dim].0, self.x_ranges[dim].1, self.x_points)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + i as f64 / (n - 1) as f64 * (hi - lo))
        .collect()
}

/// Baseline-solver settings.
#[derive(Debug, Clone, Copy)]
pub struct BaselineConfig {
    pub nt: usize,
    pub nx: usize,
    pub x_max: Option<f64>,
    pub paths: usize,
    pub steps: usize,
    pub antithetic: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            nt: 400,
            nx: 400,
            x_max: None,
            paths: 1_000_000,
            steps: 16,
            antithetic: true,
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub shapes: Vec<DgmShape>,
    pub train: TrainConfig,
    pub deriv: DerivConfig,
    pub eval: EvalGrid,
    pub baseline: BaselineConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

fn override_coefficient(kind: &mut ProblemKind, key: &str, value: f64) -> Result<()> {
    let unknown = || DgmError::Config(format!("unknown coefficient `{key}` for this problem"));
    match kind {
        ProblemKind::FunctionFit => Err(unknown()),
        ProblemKind::EuropeanCall(c) | ProblemKind::AmericanPut(c) => {
            match key {
                "rate" => c.rate = value,
                "sigma" => c.sigma = value,
                "strike" => c.strike = value,
                "maturity" => c.maturity = value,
                "spot" => c.spot = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
        ProblemKind::FokkerPlanckOu(c) => {
            match key {
                "kappa" => c.kappa = value,
                "theta" => c.theta = value,
                "sigma" => c.sigma = value,
                "start_var" => c.start_var = value,
                "maturity" => c.maturity = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
        ProblemKind::Merton(c) => {
            match key {
                "rate" => c.rate = value,
                "drift" => c.drift = value,
                "sigma" => c.sigma = value,
                "risk_aversion" => c.risk_aversion = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
        ProblemKind::Execution(c) => {
            match key {
                "temp_impact" => c.temp_impact = value,
                "perm_impact" => c.perm_impact = value,
                "running_penalty" => c.running_penalty = value,
                "terminal_penalty" => c.terminal_penalty = value,
                "maturity" => c.maturity = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
        ProblemKind::SystemicRisk(c) => {
            match key {
                "players" => c.players = value as usize,
                "reversion" => c.reversion = value,
                "incentive" => c.incentive = value,
                "deviation_penalty" => c.deviation_penalty = value,
                "terminal_weight" => c.terminal_weight = value,
                "correlation" => c.correlation = value,
                "sigma" => c.sigma = value,
                "maturity" => c.maturity = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
        ProblemKind::MeanFieldGame(c) => {
            match key {
                "perm_impact" => c.perm_impact = value,
                "temp_impact" => c.temp_impact = value,
                "running_penalty" => c.running_penalty = value,
                "terminal_penalty" => c.terminal_penalty = value,
                "maturity" => c.maturity = value,
                "init_mean" => c.init_mean = value,
                "init_var" => c.init_var = value,
                _ => return Err(unknown()),
            }
            Ok(())
        }
    }
}

fn kind_maturity(kind: &ProblemKind) -> f64 {
    match kind {
        ProblemKind::FunctionFit => 1.0,
        ProblemKind::EuropeanCall(c) | ProblemKind::AmericanPut(c) => c.maturity,
        ProblemKind::FokkerPlanckOu(c) => c.maturity,
        ProblemKind::Merton(_) => crate::problems::merton::MERTON_HORIZON,
        ProblemKind::Execution(c) => c.maturity,
        ProblemKind::SystemicRisk(c) => c.maturity,
        ProblemKind::MeanFieldGame(c) => c.maturity,
    }
}

const KNOWN_SECTIONS: &[&str] = &[
    "",
    "coefficients",
    "domain",
    "network",
    "sampler",
    "train",
    "derivatives",
    "evaluation",
    "baseline",
];

fn check_keys(section: &str, sec: &Section, known: &[&str]) -> Result<()> {
    for (k, _) in &sec.entries {
        if !known.contains(&k.as_str()) {
            return Err(DgmError::Config(format!(
                "unknown key `{k}` in section [{section}] (known: {})",
                known.join(", ")
            )));
        }
    }
    Ok(())
}

/// Parses and validates a config file; unknown sections and keys fail fast.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        DgmError::Config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let sections = parse_sections(text)?;
    for name in sections.keys() {
        if !KNOWN_SECTIONS.contains(&name.as_str()) {
            return Err(DgmError::Config(format!("unknown section [{name}]")));
        }
    }
    let empty = Section::default();
    let top = sections.get("").unwrap_or(&empty);
    check_keys("<top level>", top, &["problem", "seed", "out_dir"])?;
    let problem_id = top
        .get("problem")
        .ok_or_else(|| DgmError::Config("missing required key `problem`".to_string()))?;
    let seed = match top.get("seed") {
        Some(s) => parse_u64(s, "seed")?,
        None => 0,
    };
    let out_dir = PathBuf::from(top.get("out_dir").unwrap_or("out"));

    // Problem with coefficient and domain overrides.
    let base = standard::by_id(problem_id)?;
    let mut kind = base.kind.clone();
    if let Some(sec) = sections.get("coefficients") {
        for (k, v) in &sec.entries {
            override_coefficient(&mut kind, k, parse_f64(v, k)?)?;
        }
    }
    let mut t1 = kind_maturity(&kind);
    if !(t1 > 0.0) {
        return Err(DgmError::Config(format!("maturity must be positive, got {t1}")));
    }
    let (mut lo, mut hi) = base.domain.ranges[0];
    let mut oversample = base.domain.oversample[0];
    if let Some(sec) = sections.get("domain") {
        check_keys("domain", sec, &["oversample", "lo", "hi", "t_hi"])?;
        if let Some(v) = sec.get("oversample") {
            oversample = parse_f64(v, "oversample")?;
        }
        if let Some(v) = sec.get("lo") {
            lo = parse_f64(v, "lo")?;
        }
        if let Some(v) = sec.get("hi") {
            hi = parse_f64(v, "hi")?;
        }
        if let Some(v) = sec.get("t_hi") {
            t1 = parse_f64(v, "t_hi")?;
        }
    }
    let dims = match &kind {
        ProblemKind::SystemicRisk(c) => c.players,
        _ => 1,
    };
    let domain = DomainBox::new(0.0, t1, vec![(lo, hi); dims], vec![oversample; dims])?;
    let problem = ProblemSpec::new(kind, domain)?;

    // Network shapes, one per unknown.
    let mut layers = 3usize;
    let mut width = 50usize;
    let mut activation = Activation::Tanh;
    if let Some(sec) = sections.get("network") {
        check_keys("network", sec, &["layers", "width", "activation"])?;
        if let Some(v) = sec.get("layers") {
            layers = parse_usize(v, "layers")?;
        }
        if let Some(v) = sec.get("width") {
            width = parse_usize(v, "width")?;
        }
        if let Some(v) = sec.get("activation") {
            activation = Activation::parse(v)?;
        }
    }
    let d_in = 1 + problem.domain.dim();
    let shapes = vec![DgmShape::new(d_in, 1, width, layers, activation)?; problem.n_unknowns];

    // Sampler and training loop.
    let mut train = TrainConfig {
        seed,
        ..Default::default()
    };
    if let Some(sec) = sections.get("sampler") {
        check_keys(
            "sampler",
            sec,
            &["scheme", "interior", "terminal", "boundary", "grid_t", "grid_x"],
        )?;
        if let Some(v) = sec.get("interior") {
            train.interior_batch = parse_usize(v, "interior")?;
        }
        if let Some(v) = sec.get("terminal") {
            train.terminal_batch = parse_usize(v, "terminal")?;
        }
        if let Some(v) = sec.get("boundary") {
            train.boundary_batch = parse_usize(v, "boundary")?;
        }
        if let Some(v) = sec.get("grid_t") {
            train.grid_t = parse_usize(v, "grid_t")?;
        }
        if let Some(v) = sec.get("grid_x") {
            train.grid_x = parse_usize(v, "grid_x")?;
        }
        if let Some(v) = sec.get("scheme") {
            train.sampler = match v {
                "uniform" => SamplerScheme::Uniform,
                "lognormal" => match &problem.kind {
                    ProblemKind::EuropeanCall(c) | ProblemKind::AmericanPut(c) => {
                        SamplerScheme::Lognormal {
                            s0: c.spot,
                            mu: c.rate,
                            sigma: c.sigma,
                        }
                    }
                    _ => {
                        return Err(DgmError::Config(
                            "lognormal sampling applies to the option problems".to_string(),
                        ))
                    }
                },
                other => {
                    return Err(DgmError::Config(format!("unknown sampler scheme `{other}`")))
                }
            };
        }
    }
    if let Some(sec) = sections.get("train") {
        check_keys(
            "train",
            sec,
            &[
                "iterations",
                "resample_every",
                "lr_schedule",
                "convergence_tol",
                "w_operator",
                "w_boundary",
                "w_condition",
                "w_penalty",
                "w_integral",
            ],
        )?;
        if let Some(v) = sec.get("iterations") {
            train.iterations = parse_u64(v, "iterations")?;
        }
        if let Some(v) = sec.get("resample_every") {
            train.resample_every = parse_u64(v, "resample_every")?;
            if train.resample_every == 0 {
                return Err(DgmError::Config("resample_every must be >= 1".to_string()));
            }
        }
        if let Some(v) = sec.get("lr_schedule") {
            let stops: Vec<(u64, f64)> = v
                .split(',')
                .map(|part| -> Result<(u64, f64)> {
                    let (i, r) = part.split_once(':').ok_or_else(|| {
                        DgmError::Config(format!("lr_schedule entry `{part}` is not `iter:rate`"))
                    })?;
                    Ok((parse_u64(i.trim(), "lr_schedule")?, parse_f64(r.trim(), "lr_schedule")?))
                })
                .collect::<Result<_>>()?;
            train.schedule = LrSchedule::piecewise(stops)?;
        }
        if let Some(v) = sec.get("convergence_tol") {
            train.convergence_tol = parse_f64(v, "convergence_tol")?;
        }
        let mut w = TermWeights::default();
        if let Some(v) = sec.get("w_operator") {
            w.operator = parse_f64(v, "w_operator")?;
        }
        if let Some(v) = sec.get("w_boundary") {
            w.boundary = parse_f64(v, "w_boundary")?;
        }
        if let Some(v) = sec.get("w_condition") {
            w.condition = parse_f64(v, "w_condition")?;
        }
        if let Some(v) = sec.get("w_penalty") {
            w.penalty = parse_f64(v, "w_penalty")?;
        }
        if let Some(v) = sec.get("w_integral") {
            w.integral = parse_f64(v, "w_integral")?;
        }
        train.weights = w;
    }

    let mut deriv = DerivConfig::default();
    if let Some(sec) = sections.get("derivatives") {
        check_keys("derivatives", sec, &["h_unit"])?;
        if let Some(v) = sec.get("h_unit") {
            deriv = DerivConfig::new(parse_f64(v, "h_unit")?)?;
        }
    }

    let mut eval = EvalGrid {
        t_points: 50,
        x_points: 50,
        t_range: (problem.domain.t0, problem.domain.t1),
        x_ranges: problem.domain.ranges.clone(),
    };
    if let Some(sec) = sections.get("evaluation") {
        check_keys(
            "evaluation",
            sec,
            &["t_points", "x_points", "t_lo", "t_hi", "x_lo", "x_hi"],
        )?;
        if let Some(v) = sec.get("t_points") {
            eval.t_points = parse_usize(v, "t_points")?;
        }
        if let Some(v) = sec.get("x_points") {
            eval.x_points = parse_usize(v, "x_points")?;
        }
        if let Some(v) = sec.get("t_lo") {
            eval.t_range.0 = parse_f64(v, "t_lo")?;
        }
        if let Some(v) = sec.get("t_hi") {
            eval.t_range.1 = parse_f64(v, "t_hi")?;
        }
        if let Some(v) = sec.get("x_lo") {
            for r in &mut eval.x_ranges {
                r.0 = parse_f64(v, "x_lo")?;
            }
        }
        if let Some(v) = sec.get("x_hi") {
            for r in &mut eval.x_ranges {
                r.1 = parse_f64(v, "x_hi")?;
            }
        }
    }
    if eval.t_points == 0 || eval.x_points == 0 {
        return Err(DgmError::Config("evaluation grid needs at least one point per axis".to_string()));
    }

    let mut baseline = BaselineConfig::default();
    if let Some(sec) = sections.get("baseline") {
        check_keys(
            "baseline",
            sec,
            &["nt", "nx", "x_max", "paths", "steps", "antithetic"],
        )?;
        if let Some(v) = sec.get("nt") {
            baseline.nt = parse_usize(v, "nt")?;
        }
        if let Some(v) = sec.get("nx") {
            baseline.nx = parse_usize(v, "nx")?;
        }
        if let Some(v) = sec.get("x_max") {
            baseline.x_max = Some(parse_f64(v, "x_max")?);
        }
        if let Some(v) = sec.get("paths") {
            baseline.paths = parse_usize(v, "paths")?;
        }
        if let Some(v) = sec.get("steps") {
            baseline.steps = parse_usize(v, "steps")?;
        }
        if let Some(v) = sec.get("antithetic") {
            baseline.antithetic = parse_bool(v, "antithetic")?;
        }
    }

    Ok(ExperimentConfig {
        problem,
        shapes,
        train,
        deriv,
        eval,
        baseline,
        out_dir,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
problem = european_call
seed = 7
out_dir = runs/demo

[coefficients]
rate = 0.04

[domain]
oversample = 1.3

[network]
layers = 2
width = 12

[sampler]
scheme = uniform
interior = 32
terminal = 16

[train]
iterations = 100
lr_schedule = 0:1e-3,50:5e-4

[derivatives]
h_unit = 0.001

[evaluation]
t_points = 5
x_points = 7
"#;

    #[test]
    fn parses_a_complete_config() {
        let cfg = parse_config(GOOD).unwrap();
        assert_eq!(cfg.problem.id(), "european_call");
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.shapes[0].width, 12);
        assert_eq!(cfg.train.iterations, 100);
        assert_eq!(cfg.train.schedule.rate_at(60), 5e-4);
        assert_eq!(cfg.eval.t_points, 5);
        match &cfg.problem.kind {
            ProblemKind::EuropeanCall(c) => assert_eq!(c.rate, 0.04),
            _ => panic!("wrong kind"),
        }
        assert_eq!(cfg.problem.domain.stretched_hi(0), 130.0);
    }

    #[test]
    fn unknown_keys_and_sections_fail_fast() {
        let bad = format!("{GOOD}\n[turbo]\nx = 1\n");
        assert!(parse_config(&bad).is_err());
        let bad = format!("{GOOD}\nwhatever = 3\n");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("whatever"), "{err}");
        let bad = GOOD.replace("rate = 0.04", "carrot = 12");
        let err = parse_config(&bad).unwrap_err().to_string();
        assert!(err.contains("carrot"), "{err}");
    }

    #[test]
    fn missing_problem_is_an_error() {
        assert!(parse_config("seed = 1").is_err());
    }

    #[test]
    fn systemic_players_override_rebuilds_the_domain() {
        let cfg = parse_config(
            "problem = systemic_risk\n[coefficients]\nplayers = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.problem.n_unknowns, 5);
        assert_eq!(cfg.problem.domain.dim(), 5);
        assert_eq!(cfg.shapes.len(), 5);
        assert_eq!(cfg.shapes[0].d_in, 6);
    }

    #[test]
    fn defaults_cover_every_section() {
        let cfg = parse_config("problem = mean_field_game\n").unwrap();
        assert_eq!(cfg.problem.n_unknowns, 2);
        assert_eq!(cfg.train.interior_batch, 1000);
        assert_eq!(cfg.train.terminal_batch, 100);
        assert_eq!(cfg.train.resample_every, 10);
        assert_eq!(cfg.baseline.nt, 400);
    }
}
