//! Case-study definitions: domain boxes, coefficient records, residual
//! functionals, terminal/initial conditions, penalties and closed-form
//! oracles.
//!
//! Each residual functional is written once against [`Algebra`], so the same
//! arithmetic runs on plain `f64` (oracle order checks, reporting) and on
//! the autodiff tape (training).

pub mod black_scholes;
pub mod execution;
pub mod fokker_planck;
pub mod merton;
pub mod mfg;
pub mod systemic;

pub use black_scholes::BsCoeffs;
pub use execution::ExecCoeffs;
pub use fokker_planck::OuCoeffs;
pub use merton::MertonCoeffs;
pub use mfg::MfgCoeffs;
pub use systemic::SystemicCoeffs;

use crate::error::{DgmError, Result};
use crate::sampling::DomainBox;

/// Which end of the time interval carries the known condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondSide {
    /// Condition at `t = t0` (initial-value problems).
    Start,
    /// Condition at `t = t1` (terminal-value problems).
    End,
}

/// Second-derivative requirements of a residual functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessNeed {
    None,
    Diag,
    Full,
}

/// Stencil requirements of one unknown's residual.
#[derive(Debug, Clone, Copy)]
pub struct DerivNeeds {
    pub time: bool,
    pub grad: bool,
    pub hess: HessNeed,
}

/// The closed set of case studies.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    /// Degenerate regression problem: residual is `f − target`, no
    /// derivatives. Used as an optimizer sanity case.
    FunctionFit,
    EuropeanCall(BsCoeffs),
    AmericanPut(BsCoeffs),
    FokkerPlanckOu(OuCoeffs),
    Merton(MertonCoeffs),
    Execution(ExecCoeffs),
    SystemicRisk(SystemicCoeffs),
    MeanFieldGame(MfgCoeffs),
}

/// Smooth target for the function-fit sanity problem.
pub fn fit_target(t: f64, x: f64) -> f64 {
    (-t).exp() * x * x
}

/// One case study: domain, coefficients, residual wiring and oracles.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub domain: DomainBox,
    /// Number of unknown functions (networks): N for the player system,
    /// 2 for the coupled mean-field pair, 1 otherwise.
    pub n_unknowns: usize,
    pub has_penalty: bool,
    /// Whether the operator loss runs over an auxiliary grid with a
    /// self-normalized integral term.
    pub has_integral: bool,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, domain: DomainBox) -> Result<Self> {
        let n_unknowns = match &kind {
            ProblemKind::SystemicRisk(c) => {
                if domain.dim() != c.players {
                    return Err(DgmError::Dimension(format!(
                        "player system with {} players needs a {}-dimensional box",
                        c.players, c.players
                    )));
                }
                c.players
            }
            ProblemKind::MeanFieldGame(_) => 2,
            _ => {
                if domain.dim() != 1 {
                    return Err(DgmError::Dimension(
                        "this problem is one-dimensional in space".to_string(),
                    ));
                }
                1
            }
        };
        let has_penalty = matches!(kind, ProblemKind::AmericanPut(_));
        let has_integral = matches!(
            kind,
            ProblemKind::FokkerPlanckOu(_) | ProblemKind::MeanFieldGame(_)
        );
        Ok(ProblemSpec {
            kind,
            domain,
            n_unknowns,
            has_penalty,
            has_integral,
        })
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            ProblemKind::FunctionFit => "function_fit",
            ProblemKind::EuropeanCall(_) => "european_call",
            ProblemKind::AmericanPut(_) => "american_put",
            ProblemKind::FokkerPlanckOu(_) => "fokker_planck_ou",
            ProblemKind::Merton(_) => "merton",
            ProblemKind::Execution(_) => "execution",
            ProblemKind::SystemicRisk(_) => "systemic_risk",
            ProblemKind::MeanFieldGame(_) => "mean_field_game",
        }
    }

    /// Stencil requirements of unknown `i`.
    pub fn needs(&self, unknown: usize) -> DerivNeeds {
        match &self.kind {
            ProblemKind::FunctionFit => DerivNeeds {
                time: false,
                grad: false,
                hess: HessNeed::None,
            },
            ProblemKind::EuropeanCall(_)
            | ProblemKind::AmericanPut(_)
            | ProblemKind::Merton(_)
            | ProblemKind::FokkerPlanckOu(_) => DerivNeeds {
                time: true,
                grad: true,
                hess: HessNeed::Diag,
            },
            ProblemKind::Execution(_) => DerivNeeds {
                time: true,
                grad: true,
                hess: HessNeed::None,
            },
            ProblemKind::SystemicRisk(_) => DerivNeeds {
                time: true,
                grad: true,
                hess: HessNeed::Full,
            },
            // Unknown 0 is the control-value function h (needs h_q and h_qq
            // for the density-flow coupling); unknown 1 is the transformed
            // density u (needs u_t, u_q).
            ProblemKind::MeanFieldGame(_) => {
                if unknown == 0 {
                    DerivNeeds {
                        time: true,
                        grad: true,
                        hess: HessNeed::Diag,
                    }
                } else {
                    DerivNeeds {
                        time: true,
                        grad: true,
                        hess: HessNeed::None,
                    }
                }
            }
        }
    }

    /// Which side of the time interval carries unknown `i`'s condition.
    pub fn condition_side(&self, unknown: usize) -> Option<CondSide> {
        match &self.kind {
            ProblemKind::FunctionFit => None,
            ProblemKind::FokkerPlanckOu(_) => Some(CondSide::Start),
            ProblemKind::MeanFieldGame(_) => {
                if unknown == 0 {
                    Some(CondSide::End)
                } else {
                    Some(CondSide::Start)
                }
            }
            _ => Some(CondSide::End),
        }
    }

    /// Condition value for unknown `i` at spatial point `x`.
    pub fn condition_value(&self, unknown: usize, x: &[f64]) -> f64 {
        match &self.kind {
            ProblemKind::FunctionFit => 0.0,
            ProblemKind::EuropeanCall(c) => black_scholes::call_payoff(x[0], c.strike),
            ProblemKind::AmericanPut(c) => black_scholes::put_payoff(x[0], c.strike),
            ProblemKind::FokkerPlanckOu(c) => fokker_planck::initial_transform(x[0], c),
            ProblemKind::Merton(c) => merton::terminal_value(x[0], c),
            ProblemKind::Execution(c) => -c.terminal_penalty * x[0] * x[0],
            ProblemKind::SystemicRisk(c) => systemic::terminal_value(unknown, x, c),
            ProblemKind::MeanFieldGame(c) => {
                if unknown == 0 {
                    -c.terminal_penalty * x[0] * x[0]
                } else {
                    mfg::initial_transform(x[0], c)
                }
            }
        }
    }

    /// Obstacle payoff for the penalty term, when the problem has one.
    pub fn penalty_payoff(&self, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ProblemKind::AmericanPut(c) => Some(black_scholes::put_payoff(x[0], c.strike)),
            _ => None,
        }
    }

    /// Closed-form value of unknown `i`, when one exists.
    pub fn oracle_value(&self, unknown: usize, t: f64, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ProblemKind::FunctionFit => Some(fit_target(t, x[0])),
            ProblemKind::EuropeanCall(c) => Some(black_scholes::bs_call_price(t, x[0], c)),
            ProblemKind::AmericanPut(_) => None, // grid solver is the oracle
            ProblemKind::FokkerPlanckOu(c) => Some(fokker_planck::density_oracle(t, x[0], c)),
            ProblemKind::Merton(c) => Some(merton::value_oracle(t, x[0], c)),
            ProblemKind::Execution(c) => Some(execution::value_oracle(t, x[0], c)),
            ProblemKind::SystemicRisk(c) => Some(systemic::value_oracle(unknown, t, x, c)),
            ProblemKind::MeanFieldGame(_) => None, // grid solver is the oracle
        }
    }

    /// Closed-form optimal control, for the problems that expose one.
    pub fn oracle_control(&self, unknown: usize, t: f64, x: &[f64]) -> Option<f64> {
        match &self.kind {
            ProblemKind::Merton(c) => Some(merton::control_oracle(t, c)),
            ProblemKind::Execution(c) => Some(execution::control_oracle(t, x[0], c)),
            ProblemKind::SystemicRisk(c) => Some(systemic::control_oracle(unknown, t, x, c)),
            _ => None,
        }
    }

    /// Whether evaluation should emit a control surface for this problem.
    pub fn has_control_map(&self) -> bool {
        matches!(
            self.kind,
            ProblemKind::Merton(_) | ProblemKind::Execution(_) | ProblemKind::MeanFieldGame(_)
        )
    }

    /// Map from the fitted value function's spatial derivatives to the
    /// control surface emitted by evaluation, where defined. `hess_diag`
    /// carries the pure second derivatives (needed for the investment
    /// fraction, whose feedback form divides by the value curvature).
    pub fn control_from_value(
        &self,
        _t: f64,
        x: &[f64],
        grad: &[f64],
        hess_diag: &[f64],
    ) -> Option<f64> {
        match &self.kind {
            // risky-asset allocation; ill-conditioned where the fitted
            // curvature vanishes, which the comparison reports surface
            ProblemKind::Merton(c) => {
                let curvature = hess_diag[0];
                if curvature == 0.0 {
                    return Some(f64::NAN);
                }
                Some(-(c.drift - c.rate) * grad[0] / (c.sigma * c.sigma * curvature))
            }
            // trading rate from the inventory derivative of the value
            ProblemKind::Execution(c) => {
                Some(-(c.perm_impact * x[0] + grad[0]) / (2.0 * c.temp_impact))
            }
            ProblemKind::MeanFieldGame(c) => Some(grad[0] / (2.0 * c.temp_impact)),
            _ => None,
        }
    }

    /// Coefficient record as named reals (checkpoint / config vocabulary).
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let pair = |n: &str, v: f64| (n.to_string(), v);
        match &self.kind {
            ProblemKind::FunctionFit => vec![],
            ProblemKind::EuropeanCall(c) | ProblemKind::AmericanPut(c) => vec![
                pair("rate", c.rate),
                pair("sigma", c.sigma),
                pair("strike", c.strike),
                pair("maturity", c.maturity),
                pair("spot", c.spot),
            ],
            ProblemKind::FokkerPlanckOu(c) => vec![
                pair("kappa", c.kappa),
                pair("theta", c.theta),
                pair("sigma", c.sigma),
                pair("start_var", c.start_var),
                pair("maturity", c.maturity),
            ],
            ProblemKind::Merton(c) => vec![
                pair("rate", c.rate),
                pair("drift", c.drift),
                pair("sigma", c.sigma),
                pair("risk_aversion", c.risk_aversion),
            ],
            ProblemKind::Execution(c) => vec![
                pair("temp_impact", c.temp_impact),
                pair("perm_impact", c.perm_impact),
                pair("running_penalty", c.running_penalty),
                pair("terminal_penalty", c.terminal_penalty),
                pair("maturity", c.maturity),
            ],
            ProblemKind::SystemicRisk(c) => vec![
                pair("players", c.players as f64),
                pair("reversion", c.reversion),
                pair("incentive", c.incentive),
                pair("deviation_penalty", c.deviation_penalty),
                pair("terminal_weight", c.terminal_weight),
                pair("correlation", c.correlation),
                pair("sigma", c.sigma),
                pair("maturity", c.maturity),
            ],
            ProblemKind::MeanFieldGame(c) => vec![
                pair("perm_impact", c.perm_impact),
                pair("temp_impact", c.temp_impact),
                pair("running_penalty", c.running_penalty),
                pair("terminal_penalty", c.terminal_penalty),
                pair("maturity", c.maturity),
                pair("init_mean", c.init_mean),
                pair("init_var", c.init_var),
            ],
        }
    }
}

/// Benchmark problem constructors with the standard coefficient sets.
pub mod standard {
    use super::*;

    pub fn function_fit() -> ProblemSpec {
        let bx = DomainBox::plain(0.0, 1.0, vec![(0.0, 1.0)]).unwrap();
        ProblemSpec::new(ProblemKind::FunctionFit, bx).unwrap()
    }

    /// European call, r=5%, sigma=25%, K=50, T=1; training stretches the
    /// price range to [0, 130] by default.
    pub fn european_call(oversample: f64) -> ProblemSpec {
        let c = BsCoeffs {
            rate: 0.05,
            sigma: 0.25,
            strike: 50.0,
            maturity: 1.0,
            spot: 50.0,
        };
        let bx = DomainBox::new(0.0, 1.0, vec![(0.0, 100.0)], vec![oversample]).unwrap();
        ProblemSpec::new(ProblemKind::EuropeanCall(c), bx).unwrap()
    }

    pub fn american_put(oversample: f64) -> ProblemSpec {
        let c = BsCoeffs {
            rate: 0.05,
            sigma: 0.25,
            strike: 50.0,
            maturity: 1.0,
            spot: 50.0,
        };
        let bx = DomainBox::new(0.0, 1.0, vec![(0.0, 100.0)], vec![oversample]).unwrap();
        ProblemSpec::new(ProblemKind::AmericanPut(c), bx).unwrap()
    }

    /// Pure-diffusion density evolution: kappa=0, theta=0.5, sigma=2,
    /// Gaussian start with variance 0.25.
    pub fn fokker_planck() -> ProblemSpec {
        let c = OuCoeffs {
            kappa: 0.0,
            theta: 0.5,
            sigma: 2.0,
            start_var: 0.25,
            maturity: 1.0,
        };
        let bx = DomainBox::plain(0.0, 1.0, vec![(-7.0, 7.0)]).unwrap();
        ProblemSpec::new(ProblemKind::FokkerPlanckOu(c), bx).unwrap()
    }

    /// Optimal investment with exponential utility: r=5%, mu=20%,
    /// sigma=25%, gamma=1 on [0,1]^2 with 50% wealth oversampling.
    pub fn merton() -> ProblemSpec {
        let c = MertonCoeffs {
            rate: 0.05,
            drift: 0.2,
            sigma: 0.25,
            risk_aversion: 1.0,
        };
        let bx = DomainBox::new(0.0, 1.0, vec![(0.0, 1.0)], vec![1.5]).unwrap();
        ProblemSpec::new(ProblemKind::Merton(c), bx).unwrap()
    }

    /// Optimal liquidation: k=0.01, b=0.001, phi=0.1, alpha=0.1, T=1,
    /// inventory in [0,5] with 50% oversampling.
    pub fn execution() -> ProblemSpec {
        let c = ExecCoeffs {
            temp_impact: 0.01,
            perm_impact: 0.001,
            running_penalty: 0.1,
            terminal_penalty: 0.1,
            maturity: 1.0,
        };
        let bx = DomainBox::new(0.0, 1.0, vec![(0.0, 5.0)], vec![1.5]).unwrap();
        ProblemSpec::new(ProblemKind::Execution(c), bx).unwrap()
    }

    /// Interbank borrowing/lending game: a=1, q=1, eps=10, c=1, rho=0.5,
    /// sigma=0.1 on [0,10]^N.
    pub fn systemic_risk(players: usize) -> ProblemSpec {
        let c = SystemicCoeffs {
            players,
            reversion: 1.0,
            incentive: 1.0,
            deviation_penalty: 10.0,
            terminal_weight: 1.0,
            correlation: 0.5,
            sigma: 0.1,
            maturity: 1.0,
        };
        let bx = DomainBox::plain(0.0, 1.0, vec![(0.0, 10.0); players]).unwrap();
        ProblemSpec::new(ProblemKind::SystemicRisk(c), bx).unwrap()
    }

    /// Liquidation within a crowd, identical preferences: kappa=k=phi=alpha=1,
    /// T=1, initial inventory density N(5, 0.25), q in [0,10].
    pub fn mean_field_game() -> ProblemSpec {
        let c = MfgCoeffs {
            perm_impact: 1.0,
            temp_impact: 1.0,
            running_penalty: 1.0,
            terminal_penalty: 1.0,
            maturity: 1.0,
            init_mean: 5.0,
            init_var: 0.25,
        };
        let bx = DomainBox::plain(0.0, 1.0, vec![(0.0, 10.0)]).unwrap();
        ProblemSpec::new(ProblemKind::MeanFieldGame(c), bx).unwrap()
    }

    /// Lookup by id string (config vocabulary).
    pub fn by_id(id: &str) -> Result<ProblemSpec> {
        match id {
            "function_fit" => Ok(function_fit()),
            "european_call" => Ok(european_call(1.3)),
            "american_put" => Ok(american_put(1.3)),
            "fokker_planck_ou" => Ok(fokker_planck()),
            "merton" => Ok(merton()),
            "execution" => Ok(execution()),
            "systemic_risk" => Ok(systemic_risk(2)),
            "mean_field_game" => Ok(mean_field_game()),
            other => Err(DgmError::Config(format!("unknown problem id `{other}`"))),
        }
    }
}
