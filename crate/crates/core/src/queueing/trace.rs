use std::io::Write;

use serde::Serialize;

use super::{QueueState, SlotOutcome, SlotSink};
use crate::error::Result;
use crate::fluid::Topology;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotRecord {
    pub outcome: SlotOutcome,
    /// Queue lengths at the end of the slot.
    pub q_c: Vec<u32>,
    pub q_s: Vec<u32>,
}

/// The complete in-memory record of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunTrace {
    pub policy: String,
    pub seed: u64,
    pub gamma: f64,
    pub horizon: u64,
    pub slots: Vec<SlotRecord>,
}

impl RunTrace {
    pub fn new(policy: impl Into<String>, seed: u64, gamma: f64, horizon: u64) -> Self {
        Self {
            policy: policy.into(),
            seed,
            gamma,
            horizon,
            slots: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl SlotSink for RunTrace {
    fn record(&mut self, outcome: &SlotOutcome, queues: &QueueState) -> Result<()> {
        self.slots.push(SlotRecord {
            outcome: outcome.clone(),
            q_c: queues.q_c.clone(),
            q_s: queues.q_s.clone(),
        });
        Ok(())
    }
}

/// Forwards every slot to each inner sink in order.
pub struct Tee<'a>(pub Vec<&'a mut dyn SlotSink>);

impl SlotSink for Tee<'_> {
    fn record(&mut self, outcome: &SlotOutcome, queues: &QueueState) -> Result<()> {
        for s in self.0.iter_mut() {
            s.record(outcome, queues)?;
        }
        Ok(())
    }
}

/// Where a conservation check first failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConservationViolation {
    pub t: u64,
    pub customer_side: bool,
    pub queue: usize,
}

/// Replays `Q(t+1) = Q(t) + A(t) − Σ X(t)` from empty queues and compares
/// with the recorded lengths after every slot.
pub fn conservation_check(topology: &Topology, trace: &RunTrace) -> std::result::Result<(), ConservationViolation> {
    let mut q_c = vec![0i64; topology.customers()];
    let mut q_s = vec![0i64; topology.servers()];
    for rec in &trace.slots {
        let o = &rec.outcome;
        for (i, q) in q_c.iter_mut().enumerate() {
            *q += o.arrivals.customers[i] as i64;
        }
        for (j, q) in q_s.iter_mut().enumerate() {
            *q += o.arrivals.servers[j] as i64;
        }
        for (e, &(i, j)) in topology.edges().iter().enumerate() {
            q_c[i] -= o.matches[e] as i64;
            q_s[j] -= o.matches[e] as i64;
        }
        for (i, (&q, &r)) in q_c.iter().zip(&rec.q_c).enumerate() {
            if q != r as i64 {
                return Err(ConservationViolation {
                    t: o.t,
                    customer_side: true,
                    queue: i,
                });
            }
        }
        for (j, (&q, &r)) in q_s.iter().zip(&rec.q_s).enumerate() {
            if q != r as i64 {
                return Err(ConservationViolation {
                    t: o.t,
                    customer_side: false,
                    queue: j,
                });
            }
        }
    }
    Ok(())
}

/// Streams one CSV row per queue per slot:
/// `t,queue,side,price,rate,arrival,matches,q_len,useful`.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    topology: Topology,
    header_written: bool,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(out: W, topology: &Topology) -> Self {
        Self {
            out,
            topology: topology.clone(),
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> SlotSink for CsvTraceWriter<W> {
    fn record(&mut self, o: &SlotOutcome, queues: &QueueState) -> Result<()> {
        if !self.header_written {
            writeln!(self.out, "t,queue,side,price,rate,arrival,matches,q_len,useful")?;
            self.header_written = true;
        }
        for i in 0..self.topology.customers() {
            let m: u32 = self.topology.customer_edges(i).iter().map(|&e| o.matches[e] as u32).sum();
            writeln!(
                self.out,
                "{},{},customer,{},{},{},{},{},{}",
                o.t,
                i + 1,
                o.prices_c[i],
                o.lambda[i],
                o.arrivals.customers[i] as u8,
                m,
                queues.q_c[i],
                o.useful_c[i] as u8
            )?;
        }
        for j in 0..self.topology.servers() {
            let m: u32 = self.topology.server_edges(j).iter().map(|&e| o.matches[e] as u32).sum();
            writeln!(
                self.out,
                "{},{},server,{},{},{},{},{},{}",
                o.t,
                j + 1,
                o.prices_s[j],
                o.mu[j],
                o.arrivals.servers[j] as u8,
                m,
                queues.q_s[j],
                o.useful_s[j] as u8
            )?;
        }
        Ok(())
    }
}
