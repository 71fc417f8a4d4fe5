//! Discrete-time two-sided queue dynamics: Bernoulli arrivals drawn from
//! per-queue random streams, longest-compatible-queue matching, and the
//! slot records every metric is computed from.

mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluid::{Instance, Topology};
use crate::policies::PricingDecision;

pub use trace::{conservation_check, ConservationViolation, CsvTraceWriter, RunTrace, SlotRecord, Tee};

/// Queue lengths at a slot boundary. `t` is the index of the next slot to
/// be played, starting at 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueueState {
    pub q_c: Vec<u32>,
    pub q_s: Vec<u32>,
    pub t: u64,
}

impl QueueState {
    pub fn empty(topology: &Topology) -> Self {
        Self {
            q_c: vec![0; topology.customers()],
            q_s: vec![0; topology.servers()],
            t: 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.q_c.iter().chain(&self.q_s).map(|&q| q as u64).sum()
    }

    pub fn longest(&self) -> u32 {
        self.q_c.iter().chain(&self.q_s).copied().max().unwrap_or(0)
    }
}

/// No compatible pair of queues is simultaneously nonempty.
pub fn structural_lemma_holds(topology: &Topology, state: &QueueState) -> bool {
    topology
        .edges()
        .iter()
        .all(|&(i, j)| state.q_c[i] == 0 || state.q_s[j] == 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamPurpose {
    CustomerArrival = 1,
    ServerArrival = 2,
    CustomerCoin = 3,
    ServerCoin = 4,
    Direction = 5,
    Policy = 6,
}

/// Independent ChaCha streams keyed by `(purpose, entity index)` under one
/// master seed.
#[derive(Clone, Debug)]
pub struct RngStreams {
    seed: u64,
    arrivals_c: Vec<ChaCha8Rng>,
    arrivals_s: Vec<ChaCha8Rng>,
    coins_c: Vec<ChaCha8Rng>,
    coins_s: Vec<ChaCha8Rng>,
    direction: ChaCha8Rng,
    policy: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64, customers: usize, servers: usize) -> Self {
        let many = |purpose, n: usize| (0..n as u64).map(|i| Self::substream(seed, purpose, i)).collect();
        Self {
            seed,
            arrivals_c: many(StreamPurpose::CustomerArrival, customers),
            arrivals_s: many(StreamPurpose::ServerArrival, servers),
            coins_c: many(StreamPurpose::CustomerCoin, customers),
            coins_s: many(StreamPurpose::ServerCoin, servers),
            direction: Self::substream(seed, StreamPurpose::Direction, 0),
            policy: Self::substream(seed, StreamPurpose::Policy, 0),
        }
    }

    pub fn for_topology(seed: u64, topology: &Topology) -> Self {
        Self::new(seed, topology.customers(), topology.servers())
    }

    pub fn substream(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((purpose as u64) << 32) | index);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fair coin for customer queue `i`.
    pub fn customer_coin(&mut self, i: usize) -> bool {
        self.coins_c[i].random::<bool>()
    }

    pub fn server_coin(&mut self, j: usize) -> bool {
        self.coins_s[j].random::<bool>()
    }

    pub fn direction(&mut self) -> &mut ChaCha8Rng {
        &mut self.direction
    }

    pub fn policy(&mut self) -> &mut ChaCha8Rng {
        &mut self.policy
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Arrivals {
    pub customers: Vec<bool>,
    pub servers: Vec<bool>,
}

fn check_rates(rates: &[f64]) -> Result<()> {
    for &r in rates {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Domain {
                what: "arrival rate",
                value: r,
                lo: 0.0,
                hi: 1.0,
            });
        }
    }
    Ok(())
}

/// One Bernoulli draw per queue from that queue's own stream. Every stream
/// advances exactly once per call, whatever the rate.
pub fn sample_arrivals(lambda: &[f64], mu: &[f64], streams: &mut RngStreams, out: &mut Arrivals) -> Result<()> {
    check_rates(lambda)?;
    check_rates(mu)?;
    out.customers.clear();
    out.customers.extend(
        lambda
            .iter()
            .zip(&mut streams.arrivals_c)
            .map(|(&r, rng)| rng.random::<f64>() < r),
    );
    out.servers.clear();
    out.servers.extend(
        mu.iter()
            .zip(&mut streams.arrivals_s)
            .map(|(&r, rng)| rng.random::<f64>() < r),
    );
    Ok(())
}

/// Longest nonempty queue among `candidates`, ties to the lowest index.
fn longest_partner(candidates: impl Iterator<Item = (usize, usize)>, queues: &[u32]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (e, k) in candidates {
        if queues[k] == 0 {
            continue;
        }
        best = match best {
            Some((_, b)) if queues[b] > queues[k] || (queues[b] == queues[k] && b < k) => best,
            _ => Some((e, k)),
        };
    }
    best
}

/// Apply one slot of arrivals: customers in ascending order, then servers.
/// Each arrival matches the longest compatible nonempty opposite queue or
/// joins its own. `matches[e]` receives the per-edge match count.
pub fn match_step(state: &mut QueueState, arrivals: &Arrivals, topology: &Topology, matches: &mut Vec<u8>) {
    matches.clear();
    matches.resize(topology.edge_count(), 0);
    let edges = topology.edges();
    for (i, _) in arrivals.customers.iter().enumerate().filter(|(_, &a)| a) {
        let partner = longest_partner(
            topology.customer_edges(i).iter().map(|&e| (e, edges[e].1)),
            &state.q_s,
        );
        match partner {
            Some((e, j)) => {
                state.q_s[j] -= 1;
                matches[e] += 1;
            }
            None => state.q_c[i] += 1,
        }
    }
    for (j, _) in arrivals.servers.iter().enumerate().filter(|(_, &a)| a) {
        let partner = longest_partner(
            topology.server_edges(j).iter().map(|&e| (e, edges[e].0)),
            &state.q_c,
        );
        match partner {
            Some((e, i)) => {
                state.q_c[i] -= 1;
                matches[e] += 1;
            }
            None => state.q_s[j] += 1,
        }
    }
    state.t += 1;
}

/// Everything that happened in one slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SlotOutcome {
    pub t: u64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub prices_c: Vec<f64>,
    pub prices_s: Vec<f64>,
    pub useful_c: Vec<bool>,
    pub useful_s: Vec<bool>,
    pub arrivals: Arrivals,
    pub matches: Vec<u8>,
}

impl SlotOutcome {
    /// `Σ λ_i p_c,i − Σ μ_j p_s,j`: the rate-based profit of the slot.
    pub fn expected_profit(&self) -> f64 {
        let rev: f64 = self.lambda.iter().zip(&self.prices_c).map(|(l, p)| l * p).sum();
        let cost: f64 = self.mu.iter().zip(&self.prices_s).map(|(m, p)| m * p).sum();
        rev - cost
    }

    /// Cash actually collected: arriving customers pay, arriving servers are paid.
    pub fn realized_profit(&self) -> f64 {
        let rev: f64 = self
            .arrivals
            .customers
            .iter()
            .zip(&self.prices_c)
            .filter(|(a, _)| **a)
            .map(|(_, p)| p)
            .sum();
        let cost: f64 = self
            .arrivals
            .servers
            .iter()
            .zip(&self.prices_s)
            .filter(|(a, _)| **a)
            .map(|(_, p)| p)
            .sum();
        rev - cost
    }
}

/// Receives every completed slot together with the end-of-slot queues.
pub trait SlotSink {
    fn record(&mut self, outcome: &SlotOutcome, queues: &QueueState) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl SlotSink for NullSink {
    fn record(&mut self, _: &SlotOutcome, _: &QueueState) -> Result<()> {
        Ok(())
    }
}

/// A single simulation run: the instance, the queues, the random streams
/// and the horizon. Pricing policies drive it one slot at a time.
pub struct Simulator<'a> {
    instance: &'a Instance,
    state: QueueState,
    streams: RngStreams,
    horizon: u64,
    sink: &'a mut dyn SlotSink,
    outcome: SlotOutcome,
}

impl<'a> Simulator<'a> {
    pub fn new(instance: &'a Instance, seed: u64, horizon: u64, sink: &'a mut dyn SlotSink) -> Self {
        Self {
            instance,
            state: QueueState::empty(&instance.topology),
            streams: RngStreams::for_topology(seed, &instance.topology),
            horizon,
            sink,
            outcome: SlotOutcome::default(),
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.instance
    }

    pub fn queues(&self) -> &QueueState {
        &self.state
    }

    pub fn streams(&mut self) -> &mut RngStreams {
        &mut self.streams
    }

    /// Queues and streams together, for policies that read one and draw from the other.
    pub fn queues_and_streams(&mut self) -> (&QueueState, &mut RngStreams) {
        (&self.state, &mut self.streams)
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Index of the next slot.
    pub fn now(&self) -> u64 {
        self.state.t
    }

    pub fn finished(&self) -> bool {
        self.state.t > self.horizon
    }

    /// Play one slot with the given prices. Returns `None` once the horizon
    /// has been reached.
    pub fn step(&mut self, decision: &PricingDecision) -> Result<Option<&SlotOutcome>> {
        if self.finished() {
            return Ok(None);
        }
        let inst = self.instance;
        let o = &mut self.outcome;
        o.t = self.state.t;
        o.lambda.clear();
        for (c, &p) in inst.demand.iter().zip(&decision.prices_c) {
            o.lambda.push(c.rate_of_price(p)?);
        }
        o.mu.clear();
        for (c, &p) in inst.supply.iter().zip(&decision.prices_s) {
            o.mu.push(c.rate_of_price(p)?);
        }
        o.prices_c.clone_from(&decision.prices_c);
        o.prices_s.clone_from(&decision.prices_s);
        o.useful_c.clone_from(&decision.useful_c);
        o.useful_s.clone_from(&decision.useful_s);
        sample_arrivals(&o.lambda, &o.mu, &mut self.streams, &mut o.arrivals)?;
        match_step(&mut self.state, &o.arrivals, &inst.topology, &mut o.matches);
        debug_assert!(structural_lemma_holds(&inst.topology, &self.state));
        self.sink.record(o, &self.state)?;
        Ok(Some(&self.outcome))
    }
}
