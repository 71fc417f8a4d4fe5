//! Parameter schedules and the bisection-interval margins.

use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluid::Instance;

/// `⌈x⌉` that ignores floating-point noise just above an integer, so that
/// `(10⁶)^{1/6}` evaluates to 10 and not 11.
pub fn robust_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// `N = ⌈(β / ε²) ln(1/ε)⌉` useful samples per queue per bisection round.
pub fn sample_count(epsilon: f64, beta: f64) -> u64 {
    robust_ceil(beta * (1.0 / epsilon).ln() / (epsilon * epsilon)).max(1.0) as u64
}

/// `M = ⌈log₂(1/ε)⌉` bisection rounds.
pub fn bisection_rounds(epsilon: f64) -> u32 {
    robust_ceil((1.0 / epsilon).log2()).max(0.0) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Parameters fixed once from the horizon `T`.
    FixedHorizon,
    /// Parameters re-evaluated at the current slot `t` at the start of every
    /// outer iteration.
    Anytime,
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::FixedHorizon => "fixed_horizon",
            ScheduleMode::Anytime => "anytime",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_horizon" => Ok(Self::FixedHorizon),
            "anytime" => Ok(Self::Anytime),
            _ => Err(Error::Config(format!("unknown schedule mode {s:?}"))),
        }
    }
}

/// Sign of the exponent on the perturbation size `α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaForm {
    /// `α = c · t^{−γ/2}`.
    Decaying,
    /// `α = c · t^{+γ/2}`.
    Growing,
}

impl fmt::Display for AlphaForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaForm::Decaying => "decaying",
            AlphaForm::Growing => "growing",
        })
    }
}

impl FromStr for AlphaForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decaying" => Ok(Self::Decaying),
            "growing" => Ok(Self::Growing),
            _ => Err(Error::Config(format!("unknown alpha form {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schedule {
    pub gamma: f64,
    pub mode: ScheduleMode,
    pub mult_eta: f64,
    pub mult_delta: f64,
    pub mult_alpha: f64,
    pub mult_epsilon: f64,
    /// Fixed β; `None` follows the rule `1/γ − 1` (or 5 above γ = 1/6).
    pub beta: Option<f64>,
    /// When set, both margins equal `mult · max{δ, η, ε}`.
    pub e_override_mult: Option<f64>,
    pub alpha_form: AlphaForm,
    pub a_min: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            gamma: 1.0 / 6.0,
            mode: ScheduleMode::FixedHorizon,
            mult_eta: 1.0,
            mult_delta: 1.0,
            mult_alpha: 1.0,
            mult_epsilon: 1.0,
            beta: None,
            e_override_mult: None,
            alpha_form: AlphaForm::Decaying,
            a_min: 0.01,
        }
    }
}

/// Parameters in force for one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleParams {
    /// The time index the parameters were evaluated at.
    pub at: u64,
    pub q_th: u32,
    pub epsilon: f64,
    pub eta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub n: u64,
    pub m: u32,
}

struct Exponents {
    epsilon: f64,
    step: f64,
    alpha: f64,
    beta: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma = {} must lie in (0, 1]", self.gamma)));
        }
        for (name, v) in [
            ("eta multiplier", self.mult_eta),
            ("delta multiplier", self.mult_delta),
            ("alpha multiplier", self.mult_alpha),
            ("epsilon multiplier", self.mult_epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return Err(Error::Config(format!("beta = {b} must be positive")));
            }
        }
        if let Some(e) = self.e_override_mult {
            if !(e > 0.0) {
                return Err(Error::Config(format!("margin multiplier = {e} must be positive")));
            }
        }
        if !(self.a_min > 0.0 && self.a_min < 1.0) {
            return Err(Error::Config(format!("a_min = {} must lie in (0, 1)", self.a_min)));
        }
        Ok(())
    }

    fn exponents(&self) -> Exponents {
        if self.gamma <= 1.0 / 6.0 + 1e-12 {
            Exponents {
                epsilon: -2.0 * self.gamma,
                step: -self.gamma,
                alpha: -self.gamma / 2.0,
                beta: 1.0 / self.gamma - 1.0,
            }
        } else {
            Exponents {
                epsilon: -1.0 / 3.0,
                step: -1.0 / 6.0,
                alpha: -1.0 / 12.0,
                beta: 5.0,
            }
        }
    }

    /// Smallest time index at which `ε(t) < 1/e`.
    pub fn anytime_floor(&self) -> u64 {
        let ex = self.exponents();
        // mult · t^{ex} < 1/e  ⇔  t > (e · mult)^{−1/ex}
        let bound = (E * self.mult_epsilon).powf(-1.0 / ex.epsilon);
        (bound.floor() as u64 + 1).max(1)
    }

    fn evaluate(&self, at: u64) -> ScheduleParams {
        let ex = self.exponents();
        let t = at as f64;
        let epsilon = self.mult_epsilon * t.powf(ex.epsilon);
        let alpha_exp = match self.alpha_form {
            AlphaForm::Decaying => ex.alpha,
            AlphaForm::Growing => -ex.alpha,
        };
        let beta = self.beta.unwrap_or(ex.beta);
        ScheduleParams {
            at,
            q_th: robust_ceil(t.powf(self.gamma)).max(1.0) as u32,
            epsilon,
            eta: self.mult_eta * t.powf(ex.step),
            delta: self.mult_delta * t.powf(ex.step),
            alpha: self.mult_alpha * t.powf(alpha_exp),
            beta,
            n: sample_count(epsilon, beta),
            m: bisection_rounds(epsilon),
        }
    }

    /// Parameters at time index `t` (the horizon `T` in fixed-horizon
    /// mode). In anytime mode `t` is raised to [`Schedule::anytime_floor`]
    /// and `ε ≥ δ` is tolerated, since it holds only for large `t` under
    /// the usual multipliers; in fixed-horizon mode it is an error.
    pub fn params(&self, t: u64) -> Result<ScheduleParams> {
        self.validate()?;
        let at = match self.mode {
            ScheduleMode::FixedHorizon => t.max(1),
            ScheduleMode::Anytime => t.max(self.anytime_floor()),
        };
        let p = self.evaluate(at);
        if !(p.epsilon > 0.0 && p.epsilon < 1.0 / E) {
            return Err(Error::Config(format!(
                "epsilon = {} at t = {at} is outside (0, 1/e)",
                p.epsilon
            )));
        }
        if self.mode == ScheduleMode::FixedHorizon && p.epsilon >= p.delta {
            return Err(Error::Config(format!(
                "epsilon = {} is not below delta = {} at T = {at}",
                p.epsilon, p.delta
            )));
        }
        Ok(p)
    }

    /// The perturbation size in force at slot `t` of a run with horizon
    /// `horizon`, without the validity checks of [`Schedule::params`].
    pub fn alpha_at(&self, t: u64, horizon: u64) -> f64 {
        let at = match self.mode {
            ScheduleMode::FixedHorizon => horizon.max(1),
            ScheduleMode::Anytime => t.max(self.anytime_floor()),
        };
        self.evaluate(at).alpha
    }

    pub fn margins(&self, instance: &Instance, p: &ScheduleParams) -> (Vec<f64>, Vec<f64>) {
        compute_margins(instance, p.eta, p.epsilon, p.delta, self.e_override_mult)
    }
}

/// Per-queue half-widths of the bisection intervals for outer iterations
/// after the first.
///
/// Without an override this evaluates
/// `e_c,i = (2ηε|E|^{3/2} L_i / δ)·B + 2ε L_i (1 + L⁻_i range_i) + η|E|^{3/2} L_i·D + 2δ|E|^{1/2} L_i`
/// with `B = Σ_i' L_i'(1 + L⁻_i' range_i') + Σ_j' L_j'(1 + L⁻_j' range_j')`
/// and `D = Σ_i' |E_c,i'|(L_i' + p_max,i') + Σ_j' |E_s,j'|(L_j' + p_max,j')`,
/// and the mirrored expression for servers. With `override_mult` every
/// margin is `override_mult · max{δ, η, ε}`.
pub fn compute_margins(
    instance: &Instance,
    eta: f64,
    epsilon: f64,
    delta: f64,
    override_mult: Option<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let topo = &instance.topology;
    if let Some(mult) = override_mult {
        let e = mult * delta.max(eta).max(epsilon);
        return (vec![e; topo.customers()], vec![e; topo.servers()]);
    }
    let edges = topo.edge_count() as f64;
    let range_term = |c: &crate::curves::CurveRef| {
        c.lipschitz_fwd() * (1.0 + c.lipschitz_inv() * (c.p_max() - c.p_min()))
    };
    let b: f64 = instance
        .demand
        .iter()
        .chain(&instance.supply)
        .map(range_term)
        .sum();
    let d: f64 = instance
        .demand
        .iter()
        .enumerate()
        .map(|(i, c)| topo.customer_edges(i).len() as f64 * (c.lipschitz_fwd() + c.p_max()))
        .chain(
            instance
                .supply
                .iter()
                .enumerate()
                .map(|(j, c)| topo.server_edges(j).len() as f64 * (c.lipschitz_fwd() + c.p_max())),
        )
        .sum();
    let margin = |c: &crate::curves::CurveRef| {
        let l = c.lipschitz_fwd();
        let first = if delta > 0.0 {
            2.0 * eta * epsilon * edges.powf(1.5) * l / delta * b
        } else {
            0.0
        };
        first + 2.0 * epsilon * range_term(c) + eta * edges.powf(1.5) * l * d + 2.0 * delta * edges.sqrt() * l
    };
    (
        instance.demand.iter().map(margin).collect(),
        instance.supply.iter().map(margin).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(gamma: f64) -> Schedule {
        Schedule {
            gamma,
            ..Schedule::default()
        }
    }

    #[test]
    fn fixed_horizon_example() {
        let p = unit(1.0 / 6.0).params(1_000_000).unwrap();
        assert_eq!(p.q_th, 10);
        assert!((p.epsilon - 0.01).abs() < 1e-12);
        assert!((p.eta - 0.1).abs() < 1e-12 && (p.delta - 0.1).abs() < 1e-12);
        assert!((p.alpha - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!((p.beta - 5.0).abs() < 1e-9);
    }

    #[test]
    fn sample_and_round_counts() {
        assert_eq!(sample_count(0.1, 1.0), 231);
        assert_eq!(bisection_rounds(0.1), 4);
        assert_eq!(bisection_rounds(0.5), 1);
        assert_eq!(bisection_rounds(0.01), 7);
    }

    #[test]
    fn upper_branch_uses_fixed_exponents() {
        let p = unit(0.5).params(1_000_000).unwrap();
        assert_eq!(p.q_th, 1000);
        assert!((p.epsilon - 0.01).abs() < 1e-12);
        assert!((p.delta - 0.1).abs() < 1e-12);
        assert!((p.alpha - 10f64.powf(-0.5)).abs() < 1e-12);
        assert_eq!(p.beta, 5.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        // ε = δ when both multipliers are 1 and T^{−2γ} = T^{−γ} at T = 1.
        assert!(unit(1.0 / 6.0).params(1).is_err());
        // ε ≥ δ because δ is scaled down.
        let s = Schedule {
            mult_delta: 0.01,
            ..unit(1.0 / 6.0)
        };
        assert!(s.params(1_000_000).is_err());
        assert!(unit(0.0).params(100).is_err());
        assert!(unit(1.5).params(100).is_err());
    }

    #[test]
    fn anytime_mode_floors_small_t() {
        let s = Schedule {
            mode: ScheduleMode::Anytime,
            mult_eta: 0.2,
            mult_delta: 0.2,
            mult_alpha: 0.2,
            beta: Some(1.0),
            ..unit(1.0 / 6.0)
        };
        let floor = s.anytime_floor();
        assert_eq!(floor, 21);
        let p = s.params(1).unwrap();
        assert_eq!(p.at, 21);
        assert!(p.epsilon < 1.0 / E);
        let p = s.params(100_000).unwrap();
        assert_eq!(p.at, 100_000);
        assert!((p.alpha - 0.2 * 1e5f64.powf(-1.0 / 12.0)).abs() < 1e-12);
        let growing = Schedule {
            alpha_form: AlphaForm::Growing,
            ..s
        };
        let g = growing.params(100_000).unwrap();
        assert!((g.alpha - 0.2 * 1e5f64.powf(1.0 / 12.0)).abs() < 1e-12);
    }

    #[test]
    fn margins() {
        let inst = Instance::single_link();
        let (c, s) = compute_margins(&inst, 0.0, 0.0, 0.0, None);
        assert_eq!((c[0], s[0]), (0.0, 0.0));
        // 0.32 + 0.08 + 1.6 + 0.4 term by term.
        let (c, s) = compute_margins(&inst, 0.1, 0.01, 0.1, None);
        assert!((c[0] - 2.4).abs() < 1e-12, "{}", c[0]);
        assert!((s[0] - 2.4).abs() < 1e-12);
        let (c, s) = compute_margins(&inst, 0.1, 0.01, 0.1, Some(6.0));
        assert!((c[0] - 0.6).abs() < 1e-12 && (s[0] - 0.6).abs() < 1e-12);
    }
}
