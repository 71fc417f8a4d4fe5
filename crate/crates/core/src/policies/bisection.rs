use serde::Serialize;

use super::{bisection_update, prob_two_price_decide, threshold_policy_decide, Gate, Interval, PricingDecision, Side};
use crate::error::Result;
use crate::queueing::Simulator;

/// What one slot of a bisection round produced for every queue.
#[derive(Clone, Debug, Default)]
pub struct SlotSamples {
    /// Observed arrival for each queue; 0 or 1 for a real simulation.
    pub obs_c: Vec<f64>,
    pub obs_s: Vec<f64>,
    /// Whether the observation was taken at the midpoint price.
    pub useful_c: Vec<bool>,
    pub useful_s: Vec<bool>,
}

/// Anything that can play a slot at the given midpoint prices.
pub trait SampleSource {
    /// Play one slot. Returns `false` without filling `out` once the
    /// horizon is exhausted.
    fn run_slot(&mut self, mid_c: &[f64], mid_s: &[f64], out: &mut SlotSamples) -> Result<bool>;
}

/// Plays bisection slots on a simulator under one of the queue gates.
pub struct SimSource<'s, 'a> {
    sim: &'s mut Simulator<'a>,
    gate: Gate,
    alpha: f64,
    q_th: u32,
    decision: PricingDecision,
}

impl<'s, 'a> SimSource<'s, 'a> {
    pub fn new(sim: &'s mut Simulator<'a>, gate: Gate, alpha: f64, q_th: u32) -> Self {
        Self {
            sim,
            gate,
            alpha,
            q_th,
            decision: PricingDecision::default(),
        }
    }
}

impl SampleSource for SimSource<'_, '_> {
    fn run_slot(&mut self, mid_c: &[f64], mid_s: &[f64], out: &mut SlotSamples) -> Result<bool> {
        if self.sim.finished() {
            return Ok(false);
        }
        let instance = self.sim.instance();
        let (queues, streams) = self.sim.queues_and_streams();
        match self.gate {
            Gate::TwoPrice => prob_two_price_decide(
                instance,
                queues,
                mid_c,
                mid_s,
                self.alpha,
                self.q_th,
                streams,
                &mut self.decision,
            ),
            Gate::Threshold => threshold_policy_decide(instance, queues, mid_c, mid_s, self.q_th, &mut self.decision),
        }
        let Some(o) = self.sim.step(&self.decision)? else {
            return Ok(false);
        };
        out.obs_c.clear();
        out.obs_c.extend(o.arrivals.customers.iter().map(|&a| a as u8 as f64));
        out.obs_s.clear();
        out.obs_s.extend(o.arrivals.servers.iter().map(|&a| a as u8 as f64));
        out.useful_c.clone_from(&o.useful_c);
        out.useful_s.clone_from(&o.useful_s);
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BisectionOutcome {
    /// Midpoints of the intervals after the last completed round.
    pub prices_c: Vec<f64>,
    pub prices_s: Vec<f64>,
    pub intervals_c: Vec<Interval>,
    pub intervals_s: Vec<Interval>,
    pub rounds_completed: u32,
    pub slots: u64,
    /// False when the horizon ended before all rounds finished.
    pub complete: bool,
    /// Queues whose final interval still touches an endpoint of the initial
    /// one: the target price may lie outside the initial interval.
    pub at_initial_edge_c: Vec<bool>,
    pub at_initial_edge_s: Vec<bool>,
}

fn accumulate(obs: &[f64], useful: &[bool], counts: &mut [u64], sums: &mut [f64], n: u64) {
    for (k, (&o, &u)) in obs.iter().zip(useful).enumerate() {
        if u && counts[k] < n {
            counts[k] += 1;
            sums[k] += o;
        }
    }
}

/// Run `m` bisection rounds towards the target rates. Each round posts the
/// interval midpoints until every queue has `n` useful samples, estimates
/// each rate from exactly the first `n`, and halves every interval.
pub fn run_bisection(
    source: &mut dyn SampleSource,
    targets_c: &[f64],
    targets_s: &[f64],
    init_c: &[Interval],
    init_s: &[Interval],
    n: u64,
    m: u32,
) -> Result<BisectionOutcome> {
    let (ni, nj) = (init_c.len(), init_s.len());
    let mut iv_c = init_c.to_vec();
    let mut iv_s = init_s.to_vec();
    let mut samples = SlotSamples::default();
    let mut slots = 0u64;
    let mut rounds_completed = 0;
    let mut complete = true;
    let mut mid_c: Vec<f64> = Vec::with_capacity(ni);
    let mut mid_s: Vec<f64> = Vec::with_capacity(nj);

    'rounds: for _ in 0..m {
        mid_c.clear();
        mid_c.extend(iv_c.iter().map(Interval::mid));
        mid_s.clear();
        mid_s.extend(iv_s.iter().map(Interval::mid));
        let mut cnt_c = vec![0u64; ni];
        let mut cnt_s = vec![0u64; nj];
        let mut sum_c = vec![0.0; ni];
        let mut sum_s = vec![0.0; nj];
        while cnt_c.iter().chain(&cnt_s).any(|&c| c < n) {
            if !source.run_slot(&mid_c, &mid_s, &mut samples)? {
                complete = false;
                break 'rounds;
            }
            slots += 1;
            accumulate(&samples.obs_c, &samples.useful_c, &mut cnt_c, &mut sum_c, n);
            accumulate(&samples.obs_s, &samples.useful_s, &mut cnt_s, &mut sum_s, n);
        }
        let denom = n.max(1) as f64;
        for (i, iv) in iv_c.iter_mut().enumerate() {
            *iv = bisection_update(*iv, sum_c[i] / denom, targets_c[i], Side::Customer);
        }
        for (j, iv) in iv_s.iter_mut().enumerate() {
            *iv = bisection_update(*iv, sum_s[j] / denom, targets_s[j], Side::Server);
        }
        rounds_completed += 1;
    }

    let touches = |fin: &[Interval], init: &[Interval]| {
        fin.iter()
            .zip(init)
            .map(|(f, i)| f.width() < i.width() && (f.lo == i.lo || f.hi == i.hi))
            .collect()
    };
    Ok(BisectionOutcome {
        prices_c: iv_c.iter().map(Interval::mid).collect(),
        prices_s: iv_s.iter().map(Interval::mid).collect(),
        at_initial_edge_c: touches(&iv_c, init_c),
        at_initial_edge_s: touches(&iv_s, init_s),
        intervals_c: iv_c,
        intervals_s: iv_s,
        rounds_completed,
        slots,
        complete,
    })
}
