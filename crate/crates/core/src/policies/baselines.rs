//! Baselines that know the curves (genie) or try to learn them up front
//! (estimate-then-optimize).

use std::sync::Arc;

use serde::Serialize;

use super::{two_price_genie_decide, PricingDecision, Schedule};
use crate::curves::{CurveKind, CurveRef, PiecewiseLinearCurve};
use crate::error::{Error, Result};
use crate::fluid::{solve_fluid, FluidSolution, Instance};
use crate::queueing::Simulator;

/// Play the genie two-price policy until the horizon, with the
/// perturbation equal to the schedule's `α` at each slot.
pub fn run_genie(sim: &mut Simulator<'_>, fluid: &FluidSolution, schedule: &Schedule) -> Result<()> {
    let instance = sim.instance();
    let horizon = sim.horizon();
    let mut decision = PricingDecision::default();
    while !sim.finished() {
        let alpha = schedule.alpha_at(sim.now(), horizon);
        two_price_genie_decide(instance, sim.queues(), fluid, alpha, &mut decision)?;
        sim.step(&decision)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EtoReport {
    pub zeta: f64,
    /// Number of grid prices per queue.
    pub grid_size: usize,
    pub slots_per_price: u64,
    /// Slots actually spent exploring.
    pub exploration_slots: u64,
    /// Longest single queue seen during exploration.
    pub exploration_max_queue: u32,
    /// Static prices of the exploitation phase, if it was reached.
    pub prices_c: Option<Vec<f64>>,
    pub prices_s: Option<Vec<f64>>,
    /// Optimal value of the fluid program on the fitted curves.
    pub estimated_f_star: Option<f64>,
}

/// Pool-adjacent-violators fit of a nondecreasing sequence.
fn isotonic_increasing(values: &[f64]) -> Vec<(f64, usize)> {
    // (block mean, block length)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m1, n1) = blocks[blocks.len() - 1];
            let (m0, n0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let n = n0 + n1;
            *blocks.last_mut().unwrap() = ((m0 * n0 as f64 + m1 * n1 as f64) / n as f64, n);
        }
    }
    blocks
}

/// Fit a monotone piecewise-linear curve to sample mean rates observed at
/// ascending grid prices. The rates are made monotone by isotonic
/// regression; each pooled block contributes one knot at its mean price, and
/// the price range endpoints anchor rates 0 and 1.
pub fn fit_curve(kind: CurveKind, prices: &[f64], rates: &[f64], p_min: f64, p_max: f64) -> Result<PiecewiseLinearCurve> {
    if prices.len() != rates.len() {
        return Err(Error::Dimension {
            expected: prices.len(),
            got: rates.len(),
        });
    }
    // Work with rates that increase along the price grid.
    let oriented: Vec<f64> = match kind {
        CurveKind::Demand => rates.iter().rev().copied().collect(),
        CurveKind::Supply => rates.to_vec(),
    };
    let grid: Vec<f64> = match kind {
        CurveKind::Demand => prices.iter().rev().copied().collect(),
        CurveKind::Supply => prices.to_vec(),
    };
    let mut knots = Vec::new();
    let mut at = 0;
    for (mean, len) in isotonic_increasing(&oriented) {
        let price = grid[at..at + len].iter().sum::<f64>() / len as f64;
        at += len;
        knots.push((mean, price));
    }
    let (first, last) = match kind {
        CurveKind::Demand => ((0.0, p_max), (1.0, p_min)),
        CurveKind::Supply => ((0.0, p_min), (1.0, p_max)),
    };
    // For demand the blocks run from high price to low, so ascending rate.
    let mut out = vec![first];
    for (r, p) in knots {
        let (pr, pp) = *out.last().unwrap();
        let monotone = match kind {
            CurveKind::Demand => p < pp && p > p_min,
            CurveKind::Supply => p > pp && p < p_max,
        };
        if r > pr && r < 1.0 && monotone {
            out.push((r, p));
        }
    }
    out.push(last);
    PiecewiseLinearCurve::new(kind, &out)
}

fn grid_prices(curve: &CurveRef, k: usize) -> Vec<f64> {
    let (lo, hi) = (curve.p_min(), curve.p_max());
    (0..k).map(|g| lo + (g as f64 + 0.5) * (hi - lo) / k as f64).collect()
}

/// Estimate-then-optimize: post each of `⌈1/ζ⌉` evenly spaced prices (cell
/// midpoints) on every queue for `⌈1/ζ²⌉` slots each, with no queue
/// control; fit monotone curves to the observed arrival frequencies; solve
/// the fluid program on the fitted curves and post its prices until the
/// horizon.
pub fn estimate_then_optimize(sim: &mut Simulator<'_>, zeta: f64, a_min: f64) -> Result<EtoReport> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::Config(format!("zeta = {zeta} must lie in (0, 1]")));
    }
    let instance = sim.instance();
    let topo = &instance.topology;
    let grid_size = super::robust_ceil(1.0 / zeta) as usize;
    let slots_per_price = super::robust_ceil(1.0 / (zeta * zeta)) as u64;
    let grid_c: Vec<Vec<f64>> = instance.demand.iter().map(|c| grid_prices(c, grid_size)).collect();
    let grid_s: Vec<Vec<f64>> = instance.supply.iter().map(|c| grid_prices(c, grid_size)).collect();
    let mut hits_c = vec![vec![0u64; grid_size]; topo.customers()];
    let mut hits_s = vec![vec![0u64; grid_size]; topo.servers()];

    let mut report = EtoReport {
        zeta,
        grid_size,
        slots_per_price,
        exploration_slots: 0,
        exploration_max_queue: 0,
        prices_c: None,
        prices_s: None,
        estimated_f_star: None,
    };
    for g in 0..grid_size {
        let decision = PricingDecision::fixed(
            grid_c.iter().map(|p| p[g]).collect(),
            grid_s.iter().map(|p| p[g]).collect(),
        );
        for _ in 0..slots_per_price {
            let Some(o) = sim.step(&decision)? else {
                return Ok(report);
            };
            for (i, &a) in o.arrivals.customers.iter().enumerate() {
                hits_c[i][g] += a as u64;
            }
            for (j, &a) in o.arrivals.servers.iter().enumerate() {
                hits_s[j][g] += a as u64;
            }
            report.exploration_slots += 1;
            report.exploration_max_queue = report.exploration_max_queue.max(sim.queues().longest());
        }
    }

    let fit = |kind, grids: &[Vec<f64>], hits: &[Vec<u64>], curves: &[CurveRef]| {
        grids
            .iter()
            .zip(hits)
            .zip(curves)
            .map(|((p, h), c)| {
                let rates: Vec<f64> = h.iter().map(|&n| n as f64 / slots_per_price as f64).collect();
                fit_curve(kind, p, &rates, c.p_min(), c.p_max()).map(|f| Arc::new(f) as CurveRef)
            })
            .collect::<Result<Vec<_>>>()
    };
    let demand = fit(CurveKind::Demand, &grid_c, &hits_c, &instance.demand)?;
    let supply = fit(CurveKind::Supply, &grid_s, &hits_s, &instance.supply)?;
    let estimate = Instance::new(topo.clone(), demand, supply)?;
    // The fitted curves have kinks, so the solver may stop short of its KKT
    // tolerance; its best iterate is still a usable plan.
    let (lambda, mu, f_hat) = match solve_fluid(&estimate, a_min) {
        Ok(s) => (s.lambda_star, s.mu_star, s.f_star),
        Err(Error::Numerical { best, .. }) => {
            let x: Vec<f64> = best.into_iter().map(|v| v.max(0.0)).collect();
            let (l, m) = topo.induced_rates(&crate::fluid::MatchRates(x))?;
            let l: Vec<f64> = l.into_iter().map(|r| r.clamp(0.0, 1.0)).collect();
            let m: Vec<f64> = m.into_iter().map(|r| r.clamp(0.0, 1.0)).collect();
            let f = estimate.profit_at_rates(&l, &m)?;
            (l, m, f)
        }
        Err(e) => return Err(e),
    };
    let prices_c = estimate
        .demand
        .iter()
        .zip(&lambda)
        .map(|(c, &l)| c.price_of_rate(l.min(1.0)))
        .collect::<Result<Vec<_>>>()?;
    let prices_s = estimate
        .supply
        .iter()
        .zip(&mu)
        .map(|(c, &m)| c.price_of_rate(m.min(1.0)))
        .collect::<Result<Vec<_>>>()?;
    let decision = PricingDecision::fixed(prices_c.clone(), prices_s.clone());
    while sim.step(&decision)?.is_some() {}
    report.prices_c = Some(prices_c);
    report.prices_s = Some(prices_s);
    report.estimated_f_star = Some(f_hat);
    Ok(report)
}
