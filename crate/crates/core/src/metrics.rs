//! Regret, queue statistics, the holding-cost objective and the statistics
//! used to compare policies across seeds.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluid::FluidSolution;
use crate::queueing::{QueueState, RunTrace, SlotOutcome, SlotSink};

/// Metrics at one checkpoint `t`, all cumulative over slots `1..=t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub t: u64,
    pub expected_profit: f64,
    pub realized_profit: f64,
    pub regret: f64,
    pub avg_qlen: f64,
    pub max_qlen: u32,
}

impl SummaryPoint {
    pub fn objective(&self, w: f64) -> f64 {
        combined_value(self.t, self.regret, self.avg_qlen, w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub gamma: f64,
    pub horizon: u64,
    pub points: Vec<SummaryPoint>,
}

impl RunSummary {
    pub fn last(&self) -> Option<&SummaryPoint> {
        self.points.last()
    }

    pub fn at(&self, t: u64) -> Option<&SummaryPoint> {
        self.points
            .binary_search_by_key(&t, |p| p.t)
            .ok()
            .map(|k| &self.points[k])
    }

    /// `(t, value)` pairs of one metric across the checkpoints.
    pub fn series(&self, metric: impl Fn(&SummaryPoint) -> f64) -> Vec<(u64, f64)> {
        self.points.iter().map(|p| (p.t, metric(p))).collect()
    }
}

/// Evenly spaced checkpoints: every `⌈horizon / count⌉` slots, plus the horizon.
pub fn checkpoint_times(horizon: u64, count: u64) -> Vec<u64> {
    if horizon == 0 {
        return Vec::new();
    }
    let stride = horizon.div_ceil(count.max(1));
    let mut ts: Vec<u64> = (1..).map(|k| k * stride).take_while(|&t| t < horizon).collect();
    ts.push(horizon);
    ts
}

/// Streaming aggregation of a run into [`SummaryPoint`]s at fixed checkpoints.
#[derive(Clone, Debug)]
pub struct MetricsAccumulator {
    f_star: f64,
    checkpoints: Vec<u64>,
    next: usize,
    expected: f64,
    realized: f64,
    queue_sum: f64,
    max_q: u32,
    points: Vec<SummaryPoint>,
}

impl MetricsAccumulator {
    pub fn new(f_star: f64, mut checkpoints: Vec<u64>) -> Self {
        checkpoints.sort_unstable();
        checkpoints.dedup();
        Self {
            f_star,
            checkpoints,
            next: 0,
            expected: 0.0,
            realized: 0.0,
            queue_sum: 0.0,
            max_q: 0,
            points: Vec::new(),
        }
    }

    /// The longest single queue seen so far.
    pub fn max_qlen(&self) -> u32 {
        self.max_q
    }

    pub fn finish(self, policy: impl Into<String>, seed: u64, gamma: f64, horizon: u64) -> RunSummary {
        RunSummary {
            policy: policy.into(),
            seed,
            gamma,
            horizon,
            points: self.points,
        }
    }
}

impl SlotSink for MetricsAccumulator {
    fn record(&mut self, o: &SlotOutcome, queues: &QueueState) -> Result<()> {
        self.expected += o.expected_profit();
        self.realized += o.realized_profit();
        self.queue_sum += queues.total() as f64;
        self.max_q = self.max_q.max(queues.longest());
        while self.next < self.checkpoints.len() && self.checkpoints[self.next] < o.t {
            self.next += 1;
        }
        if self.checkpoints.get(self.next) == Some(&o.t) {
            let t = o.t as f64;
            self.points.push(SummaryPoint {
                t: o.t,
                expected_profit: self.expected,
                realized_profit: self.realized,
                regret: t * self.f_star - self.expected,
                avg_qlen: self.queue_sum / t,
                max_qlen: self.max_q,
            });
            self.next += 1;
        }
        Ok(())
    }
}

/// Cumulative rate-based profit after each slot.
pub fn expected_profit(trace: &RunTrace) -> Vec<f64> {
    let mut acc = 0.0;
    trace
        .slots
        .iter()
        .map(|s| {
            acc += s.outcome.expected_profit();
            acc
        })
        .collect()
}

/// `R(t) = t f* − Σ_{s ≤ t} profit(s)` after each slot.
pub fn regret(trace: &RunTrace, fluid: &FluidSolution) -> Result<Vec<f64>> {
    if let Some(s) = trace.slots.first() {
        if s.outcome.lambda.len() != fluid.lambda_star.len() || s.outcome.mu.len() != fluid.mu_star.len() {
            return Err(Error::Instance(format!(
                "trace has {}x{} queues but the fluid solution has {}x{}",
                s.outcome.lambda.len(),
                s.outcome.mu.len(),
                fluid.lambda_star.len(),
                fluid.mu_star.len()
            )));
        }
    }
    Ok(expected_profit(trace)
        .into_iter()
        .enumerate()
        .map(|(k, p)| (k + 1) as f64 * fluid.f_star - p)
        .collect())
}

/// Running mean of the total queue length and running max of the longest
/// single queue, after each slot.
pub fn queue_metrics(trace: &RunTrace) -> (Vec<f64>, Vec<u32>) {
    let mut sum = 0.0;
    let mut max = 0;
    trace
        .slots
        .iter()
        .enumerate()
        .map(|(k, s)| {
            sum += s.q_c.iter().chain(&s.q_s).map(|&q| q as f64).sum::<f64>();
            max = s.q_c.iter().chain(&s.q_s).copied().fold(max, u32::max);
            (sum / (k + 1) as f64, max)
        })
        .unzip()
}

/// `R(t) + w t AvgQLen(t)` at one time index.
pub fn combined_value(t: u64, regret: f64, avg_qlen: f64, w: f64) -> f64 {
    regret + w * t as f64 * avg_qlen
}

/// Pointwise `R(t) + w t AvgQLen(t)` for series indexed from `t = 1`.
pub fn combined_objective(regret: &[f64], avg_qlen: &[f64], w: f64) -> Result<Vec<f64>> {
    if regret.len() != avg_qlen.len() {
        return Err(Error::Dimension {
            expected: regret.len(),
            got: avg_qlen.len(),
        });
    }
    Ok(regret
        .iter()
        .zip(avg_qlen)
        .enumerate()
        .map(|(k, (&r, &q))| combined_value(k as u64 + 1, r, q, w))
        .collect())
}

/// `100 (b − a) / b` with `b` the baseline; `None` where the baseline is zero.
pub fn improvement_pct(obj_a: f64, obj_b: f64) -> Option<f64> {
    (obj_b != 0.0).then(|| 100.0 * (obj_b - obj_a) / obj_b)
}

/// Pointwise [`improvement_pct`] of two aligned series.
pub fn improvement_series(obj_a: &[f64], obj_b: &[f64]) -> Result<Vec<Option<f64>>> {
    if obj_a.len() != obj_b.len() {
        return Err(Error::Dimension {
            expected: obj_b.len(),
            got: obj_a.len(),
        });
    }
    Ok(obj_a.iter().zip(obj_b).map(|(&a, &b)| improvement_pct(a, b)).collect())
}

/// Mean of `log₂ v / log₂ t` over the points with `t ∈ [t0, t1]`, `t > 1`
/// and `v > 0`. `None` if no point qualifies.
pub fn growth_exponent(points: &[(u64, f64)], t0: u64, t1: u64) -> Option<f64> {
    let ratios: Vec<f64> = points
        .iter()
        .filter(|&&(t, v)| t >= t0 && t <= t1 && t > 1 && v > 0.0)
        .map(|&(t, v)| v.log2() / (t as f64).log2())
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Least-squares line `y = slope · x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Insufficient(format!("a line needs two points, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Insufficient("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of `ln v` against `ln t` over the points with `t ∈ [t0, t1]` and `v > 0`.
pub fn loglog_slope(points: &[(u64, f64)], t0: u64, t1: u64) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|&&(t, v)| t >= t0 && t <= t1 && t > 0 && v > 0.0)
        .map(|&(t, v)| ((t as f64).ln(), v.ln()))
        .unzip();
    linear_fit(&xs, &ys).map(|(s, _)| s)
}

/// Line through `(γ, exponent)` pairs; needs at least three `γ` values.
pub fn tradeoff_fit(gammas: &[f64], exponents: &[f64]) -> Result<(f64, f64)> {
    if gammas.len() < 3 {
        return Err(Error::Insufficient(format!(
            "a tradeoff fit needs at least three gamma values, got {}",
            gammas.len()
        )));
    }
    linear_fit(gammas, exponents)
}

/// `(mean, 1.96 · sd / √n)` with the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::Insufficient(format!(
            "a confidence interval needs two values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{solve_fluid, Instance};
    use crate::policies::PricingDecision;
    use crate::queueing::{Arrivals, SlotRecord, Simulator, Tee};

    fn record(lambda: f64, mu: f64, q: (u32, u32)) -> SlotRecord {
        SlotRecord {
            outcome: SlotOutcome {
                t: 0,
                lambda: vec![lambda],
                mu: vec![mu],
                prices_c: vec![2.0 * (1.0 - lambda)],
                prices_s: vec![2.0 * mu],
                useful_c: vec![true],
                useful_s: vec![true],
                arrivals: Arrivals {
                    customers: vec![false],
                    servers: vec![false],
                },
                matches: vec![0],
            },
            q_c: vec![q.0],
            q_s: vec![q.1],
        }
    }

    fn trace(recs: Vec<SlotRecord>) -> RunTrace {
        let mut t = RunTrace::new("test", 0, 0.0, recs.len() as u64);
        t.slots = recs;
        t
    }

    #[test]
    fn profit_and_regret_examples() {
        let fluid = solve_fluid(&Instance::single_link(), 0.01).unwrap();
        let zero = trace(vec![record(0.0, 0.0, (0, 0)); 3]);
        assert_eq!(expected_profit(&zero), vec![0.0; 3]);

        let opt = trace(vec![record(0.25, 0.25, (0, 0)); 4]);
        assert!(expected_profit(&opt).iter().enumerate().all(|(k, p)| (p - 0.25 * (k + 1) as f64).abs() < 1e-12));
        assert!(regret(&opt, &fluid).unwrap().iter().all(|r| r.abs() < 1e-12));

        let slot = record(0.2, 0.25, (0, 0)).outcome.expected_profit();
        assert!((slot - 0.195).abs() < 1e-12);

        let low = trace(vec![record(0.2, 0.2, (0, 0)); 5]);
        for (k, r) in regret(&low, &fluid).unwrap().into_iter().enumerate() {
            assert!((r - 0.01 * (k + 1) as f64).abs() < 1e-12);
        }

        let mut recs = vec![record(0.25, 0.25, (0, 0)); 6];
        recs[2] = record(0.2, 0.2, (0, 0));
        let r = regret(&trace(recs), &fluid).unwrap();
        assert!(r[3..].iter().all(|v| (v - r[2]).abs() < 1e-12));

        let three = solve_fluid(&Instance::three_by_three(), 0.01).unwrap();
        assert!(regret(&opt, &three).is_err());
    }

    #[test]
    fn queue_metric_examples() {
        let (avg, max) = queue_metrics(&trace(vec![record(0.0, 0.0, (0, 0)); 3]));
        assert_eq!((avg[2], max[2]), (0.0, 0));
        let (avg, max) = queue_metrics(&trace(vec![
            record(0.0, 0.0, (0, 0)),
            record(0.0, 0.0, (2, 0)),
            record(0.0, 0.0, (0, 4)),
        ]));
        assert_eq!((avg[2], max[2]), (2.0, 4));
    }

    #[test]
    fn combined_and_improvement() {
        let r = vec![1.0, 2.0, 3.0];
        assert_eq!(combined_objective(&r, &[5.0, 5.0, 5.0], 0.0).unwrap(), r);
        assert!((combined_value(100, 10.0, 2.0, 0.01) - 12.0).abs() < 1e-12);
        assert_eq!(improvement_pct(100.0, 100.0), Some(0.0));
        assert!((improvement_pct(78.0, 100.0).unwrap() - 22.0).abs() < 1e-12);
        assert!(improvement_pct(120.0, 100.0).unwrap() < 0.0);
        assert_eq!(improvement_pct(1.0, 0.0), None);
    }

    #[test]
    fn fits_and_intervals() {
        let g = [1.0 / 12.0, 1.0 / 9.0, 1.0 / 6.0];
        let (s, i) = tradeoff_fit(&g, &g.map(|x| 1.0 - x)).unwrap();
        assert!((s + 1.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12);
        let (s, i) = tradeoff_fit(&g, &g.map(|x| x / 2.0)).unwrap();
        assert!((s - 0.5).abs() < 1e-12 && i.abs() < 1e-12);
        assert!(tradeoff_fit(&g[..2], &[0.0, 0.0]).is_err());

        assert_eq!(confidence_interval(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        let (m, h) = confidence_interval(&[0.0, 2.0]).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && (h - 1.96).abs() < 1e-12);
        assert!(confidence_interval(&[1.0]).is_err());

        let pts: Vec<(u64, f64)> = (1..=100).map(|k| (k * 100, ((k * 100) as f64).powf(0.7))).collect();
        assert!((growth_exponent(&pts, 1000, 10_000).unwrap() - 0.7).abs() < 1e-12);
        assert!((loglog_slope(&pts, 1000, 10_000).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(growth_exponent(&[(10, -1.0)], 1, 100), None);
    }

    #[test]
    fn accumulator_matches_trace_functions() {
        let inst = Instance::single_link();
        let fluid = solve_fluid(&inst, 0.01).unwrap();
        let horizon = 500;
        let mut tr = RunTrace::new("fixed", 1, 0.0, horizon);
        let mut acc = MetricsAccumulator::new(fluid.f_star, checkpoint_times(horizon, 7));
        {
            let mut tee = Tee(vec![&mut tr, &mut acc]);
            let mut sim = Simulator::new(&inst, 1, horizon, &mut tee);
            let d = PricingDecision::fixed(vec![1.4], vec![0.6]);
            while sim.step(&d).unwrap().is_some() {}
        }
        let summary = acc.finish("fixed", 1, 0.0, horizon);
        assert_eq!(summary.points.len(), 7);
        assert_eq!(summary.last().unwrap().t, horizon);
        let r = regret(&tr, &fluid).unwrap();
        let (avg, max) = queue_metrics(&tr);
        for p in &summary.points {
            let k = p.t as usize - 1;
            assert!((p.regret - r[k]).abs() < 1e-9);
            assert!((p.avg_qlen - avg[k]).abs() < 1e-12);
            assert_eq!(p.max_qlen, max[k]);
        }
        assert_eq!(checkpoint_times(10, 3), vec![4, 8, 10]);
        assert_eq!(checkpoint_times(9, 3), vec![3, 6, 9]);
    }
}
