//! Brute-force and analytic validators. They are deliberately simple and
//! independent of the production code paths they check.

use petgraph::algo::ford_fulkerson;
use petgraph::graph::Graph;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluid::{Instance, Polytope, Topology};
use crate::policies::{prob_two_price_decide, PricingDecision, SampleSource, SlotSamples};
use crate::queueing::{QueueState, RngStreams};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridOracleResult {
    pub point: Vec<f64>,
    /// Squared Euclidean distance from the query to `point`.
    pub value: f64,
    pub step: f64,
}

/// Nearest feasible point of `polytope` to `x` on a grid of spacing `step`
/// anchored at the per-edge lower bounds. Exhaustive, so only for `|E| ≤ 2`.
pub fn grid_project(polytope: &Polytope, topology: &Topology, x: &[f64], step: f64) -> Result<GridOracleResult> {
    let dim = topology.edge_count();
    if dim > 2 {
        return Err(Error::Dimension { expected: 2, got: dim });
    }
    if x.len() != dim {
        return Err(Error::Dimension { expected: dim, got: x.len() });
    }
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::Config(format!("grid step {step} must lie in (0, 1e-3]")));
    }
    let top = polytope
        .customer_bounds()
        .iter()
        .chain(polytope.server_bounds())
        .map(|b| b.1)
        .fold(0.0, f64::max);
    let axis = |e: usize| {
        let lo = polytope.edge_lower()[e];
        let count = ((top - lo) / step).floor() as usize;
        (0..=count).map(move |k| lo + k as f64 * step)
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |p: Vec<f64>| {
        if polytope.violation(topology, &p) > 1e-12 {
            return;
        }
        let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
            best = Some((p, d));
        }
    };
    match dim {
        1 => axis(0).for_each(|a| consider(vec![a])),
        _ => {
            for a in axis(0) {
                for b in axis(1) {
                    consider(vec![a, b]);
                }
            }
        }
    }
    let (point, value) = best.ok_or_else(|| Error::Instance("no feasible grid point".into()))?;
    Ok(GridOracleResult { point, value, step })
}

/// Whether some `x ≥ 0` on the edges of `topology` has marginals `λ` and
/// `μ`, by a max-flow from a source through customers and servers to a sink.
pub fn transportation_feasible(topology: &Topology, lambda: &[f64], mu: &[f64]) -> Result<bool> {
    if lambda.len() != topology.customers() {
        return Err(Error::Dimension {
            expected: topology.customers(),
            got: lambda.len(),
        });
    }
    if mu.len() != topology.servers() {
        return Err(Error::Dimension {
            expected: topology.servers(),
            got: mu.len(),
        });
    }
    let total_c: f64 = lambda.iter().sum();
    let total_s: f64 = mu.iter().sum();
    if (total_c - total_s).abs() > 1e-9 {
        return Ok(false);
    }
    let mut g = Graph::<(), f64>::new();
    let source = g.add_node(());
    let sink = g.add_node(());
    let cust: Vec<_> = (0..topology.customers()).map(|_| g.add_node(())).collect();
    let serv: Vec<_> = (0..topology.servers()).map(|_| g.add_node(())).collect();
    for (i, &l) in lambda.iter().enumerate() {
        g.add_edge(source, cust[i], l.max(0.0));
    }
    for (j, &m) in mu.iter().enumerate() {
        g.add_edge(serv[j], sink, m.max(0.0));
    }
    for &(i, j) in topology.edges() {
        g.add_edge(cust[i], serv[j], total_c.max(0.0) + 1.0);
    }
    let (flow, _) = ford_fulkerson(&g, source, sink);
    Ok(flow >= total_c - 1e-9)
}

/// A sample source whose observation is the exact arrival rate at the
/// posted midpoint, with every slot useful. Removes sampling noise so the
/// contraction of bisection can be checked exactly.
pub struct DeterministicRateSource<'a> {
    instance: &'a Instance,
    remaining: Option<u64>,
    pub slots: u64,
}

impl<'a> DeterministicRateSource<'a> {
    pub fn new(instance: &'a Instance) -> Self {
        Self {
            instance,
            remaining: None,
            slots: 0,
        }
    }

    /// Stop after `slots` slots, as a finite horizon would.
    pub fn with_horizon(instance: &'a Instance, slots: u64) -> Self {
        Self {
            instance,
            remaining: Some(slots),
            slots: 0,
        }
    }
}

impl SampleSource for DeterministicRateSource<'_> {
    fn run_slot(&mut self, mid_c: &[f64], mid_s: &[f64], out: &mut SlotSamples) -> Result<bool> {
        if let Some(r) = self.remaining.as_mut() {
            if *r == 0 {
                return Ok(false);
            }
            *r -= 1;
        }
        self.slots += 1;
        out.obs_c.clear();
        for (c, &p) in self.instance.demand.iter().zip(mid_c) {
            out.obs_c.push(c.rate_of_price(p)?);
        }
        out.obs_s.clear();
        for (c, &p) in self.instance.supply.iter().zip(mid_s) {
            out.obs_s.push(c.rate_of_price(p)?);
        }
        out.useful_c.clear();
        out.useful_c.resize(mid_c.len(), true);
        out.useful_s.clear();
        out.useful_s.resize(mid_s.len(), true);
        Ok(true)
    }
}

/// Mean number of slots the probabilistic two-price rule needs to collect
/// `n` useful samples at a single-link customer queue pinned at length
/// `pinned_len`, over `trials` independent trials. A pinned length strictly
/// between 0 and the threshold gives a fair-coin gate with mean `2n`; an
/// empty queue is always useful and takes exactly `n`.
pub fn wald_count_check(n: u64, trials: u64, pinned_len: u32, seed: u64) -> f64 {
    let instance = Instance::single_link();
    let q_th = pinned_len + 1;
    let queues = QueueState {
        q_c: vec![pinned_len],
        q_s: vec![0],
        t: 1,
    };
    let mut streams = RngStreams::new(seed, 1, 1);
    let mut decision = PricingDecision::default();
    let mut total = 0u64;
    for _ in 0..trials {
        let mut useful = 0;
        while useful < n {
            prob_two_price_decide(&instance, &queues, &[1.5], &[0.5], 0.1, q_th, &mut streams, &mut decision);
            total += 1;
            useful += decision.useful_c[0] as u64;
        }
    }
    total as f64 / trials as f64
}

/// A uniformly random point of `polytope` by rejection from its bounding
/// box, or `None` after `max_tries` misses.
pub fn sample_feasible<R: Rng + ?Sized>(
    polytope: &Polytope,
    topology: &Topology,
    rng: &mut R,
    max_tries: usize,
) -> Option<Vec<f64>> {
    let top: Vec<f64> = topology
        .edges()
        .iter()
        .map(|&(i, j)| polytope.customer_bounds()[i].1.min(polytope.server_bounds()[j].1))
        .collect();
    for _ in 0..max_tries {
        let p: Vec<f64> = polytope
            .edge_lower()
            .iter()
            .zip(&top)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        if polytope.violation(topology, &p) <= 0.0 {
            return Some(p);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{MatchRates, ShrunkRegion};
    use crate::policies::{run_bisection, Interval};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_projection_trivial_cases() {
        let topo = Topology::single_link();
        let region = ShrunkRegion::new(&topo, 0.01, 0.1).unwrap();
        let inside = grid_project(region.polytope(), &topo, &[0.3], 1e-3).unwrap();
        assert!((inside.point[0] - 0.3).abs() <= 1e-3);
        let above = grid_project(region.polytope(), &topo, &[0.95], 1e-4).unwrap();
        let upper = region.polytope().customer_bounds()[0].1;
        assert!((above.point[0] - upper).abs() <= 1e-4 + 1e-9);
        let three = Topology::three_by_three();
        let p = Polytope::fluid(&three);
        assert!(grid_project(&p, &three, &[0.0; 7], 1e-3).is_err());
    }

    #[test]
    fn transportation_examples() {
        assert!(transportation_feasible(&Topology::single_link(), &[0.25], &[0.25]).unwrap());
        let t = Topology::three_by_three();
        assert!(transportation_feasible(&t, &[0.25; 3], &[0.25; 3]).unwrap());
        // Customer 3 reaches only servers 2 and 3.
        assert!(!transportation_feasible(&t, &[0.05, 0.05, 0.6], &[0.2, 0.25, 0.25]).unwrap());
    }

    #[test]
    fn deterministic_bisection_contracts() {
        let inst = Instance::single_link();
        let mut src = DeterministicRateSource::new(&inst);
        let full = Interval::new(0.0, 2.0);
        let out = run_bisection(&mut src, &[0.3], &[0.3], &[full], &[full], 5, 4).unwrap();
        assert_eq!(out.intervals_c[0].width(), 0.125);
        assert_eq!(out.intervals_s[0].width(), 0.125);
        assert!((out.prices_c[0] - 1.4).abs() <= 0.125);
        assert!((out.prices_s[0] - 0.6).abs() <= 0.125);
        assert_eq!(src.slots, 20);

        // Target price 1.9 lies above [0.5, 1.5]: bisection runs to the edge and says so.
        let narrow = Interval::new(0.5, 1.5);
        let out = run_bisection(&mut src, &[0.05], &[0.5], &[narrow], &[narrow], 1, 6).unwrap();
        assert!((out.intervals_c[0].hi - 1.5).abs() < 1e-15);
        assert!(out.at_initial_edge_c[0]);
        assert!(!out.at_initial_edge_s[0]);
    }

    #[test]
    fn wald_trivial_case() {
        assert_eq!(wald_count_check(50, 20, 0, 1), 50.0);
        let m = wald_count_check(1, 10_000, 3, 2);
        assert!((m - 2.0).abs() <= 0.2, "{m}");
    }

    #[test]
    fn sampler_returns_feasible_points() {
        let topo = Topology::three_by_three();
        let region = ShrunkRegion::new(&topo, 0.01, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = sample_feasible(region.polytope(), &topo, &mut rng, 100_000).unwrap();
            assert!(region.contains(&topo, &MatchRates(p)));
        }
    }
}
