//! The outer zeroth-order projected gradient ascent loop.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::bisection::{run_bisection, SimSource};
use super::{Gate, Interval, Schedule, ScheduleMode, ScheduleParams};
use crate::error::{Error, Result};
use crate::fluid::{Instance, MatchRates, ShrunkRegion};
use crate::queueing::Simulator;

/// A uniformly random unit vector: normalized i.i.d. standard normals.
pub fn sample_unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 1, "direction needs at least one coordinate");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Two-point estimate `(|E| / 2δ) (f⁺ − f⁻) u`.
pub fn gradient_estimate(profit_plus: f64, profit_minus: f64, u: &[f64], delta: f64, edge_count: usize) -> Vec<f64> {
    assert!(delta > 0.0, "exploration radius must be positive");
    let scale = edge_count as f64 / (2.0 * delta) * (profit_plus - profit_minus);
    u.iter().map(|&c| scale * c).collect()
}

/// One completed outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OuterRecord {
    pub k: u64,
    /// First slot of the iteration.
    pub t_start: u64,
    /// Slots consumed by the two bisection phases.
    pub slots: u64,
    /// The iterate the gradient was estimated at.
    pub x: Vec<f64>,
    pub direction: Vec<f64>,
    pub profit_plus: f64,
    pub profit_minus: f64,
    pub gradient: Vec<f64>,
    pub params: ScheduleParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningReport {
    pub iterations: Vec<OuterRecord>,
    /// The iterate after the last completed update.
    pub final_x: MatchRates,
    /// Set when `a_min` had to be lowered for the shrunk region to exist.
    pub a_min_adjusted: Option<f64>,
    pub warnings: Vec<String>,
}

struct Phase {
    x: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl Phase {
    fn new(instance: &Instance, x: Vec<f64>) -> Result<Self> {
        let (l, m) = instance.topology.induced_rates(&MatchRates(x.clone()))?;
        let clip = |v: Vec<f64>| v.into_iter().map(|r| r.clamp(0.0, 1.0)).collect();
        Ok(Self {
            x,
            lambda: clip(l),
            mu: clip(m),
        })
    }

    fn profit(&self, prices_c: &[f64], prices_s: &[f64]) -> f64 {
        let rev: f64 = self.lambda.iter().zip(prices_c).map(|(l, p)| l * p).sum();
        let cost: f64 = self.mu.iter().zip(prices_s).map(|(m, p)| m * p).sum();
        rev - cost
    }
}

fn intervals(instance: &Instance, centers_c: &[f64], centers_s: &[f64], e_c: &[f64], e_s: &[f64]) -> (Vec<Interval>, Vec<Interval>) {
    let c = instance
        .demand
        .iter()
        .zip(centers_c)
        .zip(e_c)
        .map(|((curve, &p), &e)| Interval::around(curve, p, e))
        .collect();
    let s = instance
        .supply
        .iter()
        .zip(centers_s)
        .zip(e_s)
        .map(|((curve, &p), &e)| Interval::around(curve, p, e))
        .collect();
    (c, s)
}

/// Run the learning policy until the simulator's horizon. Each outer
/// iteration draws a direction, runs a bisection phase at `x + δu` and one
/// at `x − δu`, forms the two-point gradient from the resulting profits and
/// takes a projected ascent step onto the shrunk region.
///
/// The first iterate is the shrunk region's center, and the first
/// iteration's price intervals are centred on the true prices of its rates.
/// Later intervals are centred on the previous iteration's final prices of
/// the same phase.
pub fn run_learning_policy(sim: &mut Simulator<'_>, schedule: &Schedule, gate: Gate) -> Result<LearningReport> {
    let instance = sim.instance();
    let topo = &instance.topology;
    let dim = topo.edge_count();
    let horizon = sim.horizon();
    let mut warnings = Vec::new();

    let param_time = |now: u64| match schedule.mode {
        ScheduleMode::FixedHorizon => horizon,
        ScheduleMode::Anytime => now,
    };
    let mut params = schedule.params(param_time(sim.now()))?;
    let (mut region, a_min_adjusted) = ShrunkRegion::with_auto_shrink(topo, schedule.a_min, params.delta)?;
    if let Some(a) = a_min_adjusted {
        warnings.push(format!("a_min lowered from {} to {a}", schedule.a_min));
    }
    let mut x = region.center().to_vec();

    let start = Phase::new(instance, x.clone())?;
    let genie_c = instance
        .demand
        .iter()
        .zip(&start.lambda)
        .map(|(c, &l)| c.price_of_rate(l))
        .collect::<Result<Vec<_>>>()?;
    let genie_s = instance
        .supply
        .iter()
        .zip(&start.mu)
        .map(|(c, &m)| c.price_of_rate(m))
        .collect::<Result<Vec<_>>>()?;
    // Final prices of the previous iteration, per phase.
    let mut last: [(Vec<f64>, Vec<f64>); 2] = [(genie_c.clone(), genie_s.clone()), (genie_c, genie_s)];

    let mut iterations = Vec::new();
    let mut warned_eps = false;
    for k in 1u64.. {
        if sim.finished() {
            break;
        }
        if schedule.mode == ScheduleMode::Anytime && k > 1 {
            let next = schedule.params(sim.now())?;
            if next.delta != params.delta {
                region = ShrunkRegion::new(topo, region.a_min(), next.delta)?;
                if !region.contains(topo, &MatchRates(x.clone())) {
                    x = region.project(topo, &MatchRates(x))?.x.0;
                }
            }
            params = next;
        }
        if params.epsilon >= params.delta && !warned_eps {
            warnings.push(format!(
                "epsilon = {} is not below delta = {} at t = {}",
                params.epsilon, params.delta, params.at
            ));
            warned_eps = true;
        }
        let (e_c, e_s) = schedule.margins(instance, &params);
        let u = sample_unit_direction(dim, sim.streams().direction());
        let t_start = sim.now();

        let mut profits = [0.0; 2];
        let mut slots = 0;
        let mut complete = true;
        for (phase_idx, sign) in [1.0, -1.0].into_iter().enumerate() {
            let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + sign * params.delta * b).collect();
            let phase = Phase::new(instance, xp)?;
            let (init_c, init_s) = intervals(instance, &last[phase_idx].0, &last[phase_idx].1, &e_c, &e_s);
            let mut source = SimSource::new(sim, gate, params.alpha, params.q_th);
            let out = run_bisection(&mut source, &phase.lambda, &phase.mu, &init_c, &init_s, params.n, params.m)?;
            slots += out.slots;
            if !out.complete {
                complete = false;
                break;
            }
            profits[phase_idx] = phase.profit(&out.prices_c, &out.prices_s);
            debug_assert_eq!(phase.x.len(), dim);
            last[phase_idx] = (out.prices_c, out.prices_s);
        }
        if !complete {
            break;
        }
        let g = gradient_estimate(profits[0], profits[1], &u, params.delta, dim);
        let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + params.eta * b).collect();
        let next_x = region.project(topo, &MatchRates(step))?.x.0;
        if next_x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                routine: "projected ascent step",
                residual: f64::NAN,
                iterations: k as usize,
                best: x,
            });
        }
        iterations.push(OuterRecord {
            k,
            t_start,
            slots,
            x: std::mem::replace(&mut x, next_x),
            direction: u,
            profit_plus: profits[0],
            profit_minus: profits[1],
            gradient: g,
            params: params.clone(),
        });
    }

    Ok(LearningReport {
        iterations,
        final_x: MatchRates(x),
        a_min_adjusted,
        warnings,
    })
}
