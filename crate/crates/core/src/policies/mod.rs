//! Pricing controllers. The per-slot decision rules live here; the
//! bisection search, the outer learning loop and the baselines that drive
//! a [`Simulator`](crate::queueing::Simulator) live in the submodules.

mod baselines;
mod bisection;
mod learning;
mod schedule;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::curves::CurveRef;
use crate::error::{Error, Result};
use crate::fluid::{FluidSolution, Instance};
use crate::queueing::{QueueState, RngStreams};

pub use baselines::{estimate_then_optimize, fit_curve, run_genie, EtoReport};
pub use bisection::{run_bisection, BisectionOutcome, SampleSource, SimSource, SlotSamples};
pub use learning::{gradient_estimate, run_learning_policy, sample_unit_direction, LearningReport, OuterRecord};
pub use schedule::{
    bisection_rounds, compute_margins, robust_ceil, sample_count, AlphaForm, Schedule, ScheduleMode, ScheduleParams,
};

/// Prices posted in one slot and whether each was the unperturbed midpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PricingDecision {
    pub prices_c: Vec<f64>,
    pub prices_s: Vec<f64>,
    pub useful_c: Vec<bool>,
    pub useful_s: Vec<bool>,
}

impl PricingDecision {
    pub fn new(customers: usize, servers: usize) -> Self {
        Self {
            prices_c: vec![0.0; customers],
            prices_s: vec![0.0; servers],
            useful_c: vec![false; customers],
            useful_s: vec![false; servers],
        }
    }

    fn reset(&mut self, customers: usize, servers: usize) {
        self.prices_c.resize(customers, 0.0);
        self.prices_s.resize(servers, 0.0);
        self.useful_c.resize(customers, false);
        self.useful_s.resize(servers, false);
    }

    /// The same prices everywhere, all flagged useful.
    pub fn fixed(prices_c: Vec<f64>, prices_s: Vec<f64>) -> Self {
        let (i, j) = (prices_c.len(), prices_s.len());
        Self {
            prices_c,
            prices_s,
            useful_c: vec![true; i],
            useful_s: vec![true; j],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Customer,
    Server,
}

/// The four controllers the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum PolicyKind {
    /// Probabilistic two-price policy inside the learning loop.
    Prob2p,
    /// The learning loop with plain threshold rejection and no perturbation.
    Threshold,
    /// Two-price policy around the known fluid optimum.
    Genie2p,
    /// Explore a price grid, fit curves, then post static prices.
    Eto,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [Self::Prob2p, Self::Threshold, Self::Genie2p, Self::Eto];

    pub fn name(self) -> &'static str {
        match self {
            Self::Prob2p => "prob2p",
            Self::Threshold => "threshold",
            Self::Genie2p => "genie2p",
            Self::Eto => "eto",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}; expected prob2p, threshold, genie2p or eto")))
    }
}

/// How a learning run gates prices on queue length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Reject at the threshold, perturb by α with probability 1/2 below it.
    TwoPrice,
    /// Reject at the threshold, midpoint below it.
    Threshold,
}

/// A closed price interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    /// `[center − half, center + half]` clipped to the curve's price range.
    pub fn around(curve: &CurveRef, center: f64, half: f64) -> Self {
        Self {
            lo: curve.clamp_price(center - half),
            hi: curve.clamp_price(center + half),
        }
    }

    pub fn full(curve: &CurveRef) -> Self {
        Self {
            lo: curve.p_min(),
            hi: curve.p_max(),
        }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// One bisection step. On the customer side an estimate above the target
/// keeps the upper half (a higher price cuts demand); on the server side it
/// keeps the lower half. Ties take the else-branch.
pub fn bisection_update(interval: Interval, est_rate: f64, target_rate: f64, side: Side) -> Interval {
    let mid = interval.mid();
    let too_many = est_rate > target_rate;
    match (side, too_many) {
        (Side::Customer, true) | (Side::Server, false) => Interval::new(mid, interval.hi),
        (Side::Customer, false) | (Side::Server, true) => Interval::new(interval.lo, mid),
    }
}

fn check_lengths(instance: &Instance, mid_c: &[f64], mid_s: &[f64]) {
    assert_eq!(mid_c.len(), instance.topology.customers(), "one midpoint per customer queue");
    assert_eq!(mid_s.len(), instance.topology.servers(), "one midpoint per server queue");
}

/// Probabilistic two-price rule. A queue at or above `q_th` posts its
/// rejecting price; a nonempty queue below it flips its own fair coin and on
/// heads posts the midpoint moved by `α` in the rate-reducing direction
/// (clamped to the price range); otherwise, and always at an empty queue,
/// the midpoint is posted and the slot counts as a useful sample.
#[allow(clippy::too_many_arguments)]
pub fn prob_two_price_decide(
    instance: &Instance,
    queues: &QueueState,
    mid_c: &[f64],
    mid_s: &[f64],
    alpha: f64,
    q_th: u32,
    streams: &mut RngStreams,
    out: &mut PricingDecision,
) {
    check_lengths(instance, mid_c, mid_s);
    out.reset(mid_c.len(), mid_s.len());
    for (i, curve) in instance.demand.iter().enumerate() {
        let q = queues.q_c[i];
        let (price, useful) = if q >= q_th {
            (curve.rejecting_price(), false)
        } else if q > 0 && streams.customer_coin(i) {
            ((mid_c[i] + alpha).min(curve.p_max()), false)
        } else {
            (mid_c[i], true)
        };
        out.prices_c[i] = price;
        out.useful_c[i] = useful;
    }
    for (j, curve) in instance.supply.iter().enumerate() {
        let q = queues.q_s[j];
        let (price, useful) = if q >= q_th {
            (curve.rejecting_price(), false)
        } else if q > 0 && streams.server_coin(j) {
            ((mid_s[j] - alpha).max(curve.p_min()), false)
        } else {
            (mid_s[j], true)
        };
        out.prices_s[j] = price;
        out.useful_s[j] = useful;
    }
}

/// Threshold rule: rejecting price at or above `q_th`, midpoint otherwise.
pub fn threshold_policy_decide(
    instance: &Instance,
    queues: &QueueState,
    mid_c: &[f64],
    mid_s: &[f64],
    q_th: u32,
    out: &mut PricingDecision,
) {
    check_lengths(instance, mid_c, mid_s);
    out.reset(mid_c.len(), mid_s.len());
    for (i, curve) in instance.demand.iter().enumerate() {
        let reject = queues.q_c[i] >= q_th;
        out.prices_c[i] = if reject { curve.rejecting_price() } else { mid_c[i] };
        out.useful_c[i] = !reject;
    }
    for (j, curve) in instance.supply.iter().enumerate() {
        let reject = queues.q_s[j] >= q_th;
        out.prices_s[j] = if reject { curve.rejecting_price() } else { mid_s[j] };
        out.useful_s[j] = !reject;
    }
}

/// Two-price rule around the known optimum: an empty queue gets the price of
/// its optimal rate, a nonempty one the price of that rate lowered by
/// `alpha_bar` (floored at zero). Both sides slow their own arrivals when
/// backed up. Only the unperturbed price is flagged useful.
pub fn two_price_genie_decide(
    instance: &Instance,
    queues: &QueueState,
    fluid: &FluidSolution,
    alpha_bar: f64,
    out: &mut PricingDecision,
) -> Result<()> {
    let topo = &instance.topology;
    out.reset(topo.customers(), topo.servers());
    for (i, curve) in instance.demand.iter().enumerate() {
        let backed_up = queues.q_c[i] > 0;
        let rate = if backed_up {
            (fluid.lambda_star[i] - alpha_bar).max(0.0)
        } else {
            fluid.lambda_star[i]
        };
        out.prices_c[i] = curve.price_of_rate(rate.min(1.0))?;
        out.useful_c[i] = !backed_up;
    }
    for (j, curve) in instance.supply.iter().enumerate() {
        let backed_up = queues.q_s[j] > 0;
        let rate = if backed_up {
            (fluid.mu_star[j] - alpha_bar).max(0.0)
        } else {
            fluid.mu_star[j]
        };
        out.prices_s[j] = curve.price_of_rate(rate.min(1.0))?;
        out.useful_s[j] = !backed_up;
    }
    Ok(())
}
