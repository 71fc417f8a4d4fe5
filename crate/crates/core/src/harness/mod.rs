//! Seed sweeps, policy comparisons and tradeoff fits, with deterministic
//! CSV output.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::curves::CurveKind;
use crate::error::{Error, Result};
use crate::fluid::{
    a_min_conditions_hold, inner_radius, largest_valid_a_min, solve_fluid, FluidSolution, Instance, MatchRates,
    ShrunkRegion,
};
use crate::metrics::{
    checkpoint_times, confidence_interval, growth_exponent, improvement_pct, tradeoff_fit, MetricsAccumulator,
    RunSummary,
};
use crate::oracles::{grid_project, transportation_feasible};
use crate::policies::{
    estimate_then_optimize, run_genie, run_learning_policy, EtoReport, Gate, LearningReport, PolicyKind,
};
use crate::queueing::{CsvTraceWriter, SlotSink, Simulator, Tee};

pub use config::{parse_number, parse_seed_range, CurveSpec, ExperimentConfig};

/// Everything one `(policy, seed)` run produced.
#[derive(Clone, Debug, Serialize)]
pub struct RunOutcome {
    pub policy: PolicyKind,
    pub seed: u64,
    pub summary: RunSummary,
    /// Longest single queue over the whole run.
    pub max_qlen: u32,
    pub learning: Option<LearningReport>,
    pub eto: Option<EtoReport>,
    #[serde(skip)]
    pub trace_csv: Option<Vec<u8>>,
}

/// Default exploration resolution of estimate-then-optimize, `T^{-1/4}`.
pub fn default_zeta(horizon: u64) -> f64 {
    (horizon as f64).powf(-0.25)
}

/// Play one policy for one seed.
pub fn run_one(
    config: &ExperimentConfig,
    instance: &Instance,
    fluid: &FluidSolution,
    policy: PolicyKind,
    seed: u64,
) -> Result<RunOutcome> {
    let horizon = config.horizon;
    let mut acc = MetricsAccumulator::new(fluid.f_star, checkpoint_times(horizon, config.checkpoints));
    let mut writer = config.trace.then(|| CsvTraceWriter::new(Vec::new(), &instance.topology));
    let mut learning = None;
    let mut eto = None;
    {
        let mut sinks: Vec<&mut dyn SlotSink> = vec![&mut acc];
        if let Some(w) = writer.as_mut() {
            sinks.push(w);
        }
        let mut tee = Tee(sinks);
        let mut sim = Simulator::new(instance, seed, horizon, &mut tee);
        match policy {
            PolicyKind::Prob2p => learning = Some(run_learning_policy(&mut sim, &config.schedule, Gate::TwoPrice)?),
            PolicyKind::Threshold => {
                learning = Some(run_learning_policy(&mut sim, &config.schedule, Gate::Threshold)?)
            }
            PolicyKind::Genie2p => run_genie(&mut sim, fluid, &config.schedule)?,
            PolicyKind::Eto => {
                let zeta = config.eto_zeta.unwrap_or_else(|| default_zeta(horizon));
                eto = Some(estimate_then_optimize(&mut sim, zeta, config.schedule.a_min)?);
            }
        }
    }
    let max_qlen = acc.max_qlen();
    Ok(RunOutcome {
        policy,
        seed,
        summary: acc.finish(policy.name(), seed, config.schedule.gamma, horizon),
        max_qlen,
        learning,
        eto,
        trace_csv: writer.map(CsvTraceWriter::into_inner),
    })
}

/// Run every configured `(policy, seed)` pair in parallel. The result is
/// sorted by policy then seed, so it does not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let instance = config.validate()?;
    let fluid = solve_fluid(&instance, config.schedule.a_min)?;
    let jobs: Vec<(PolicyKind, u64)> = config
        .policies
        .iter()
        .flat_map(|&p| config.seed_list().into_iter().map(move |s| (p, s)))
        .collect();
    let mut runs = jobs
        .into_par_iter()
        .map(|(p, s)| run_one(config, &instance, &fluid, p, s))
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.policy, r.seed));
    Ok(runs)
}

fn weight_header(weights: &[f64]) -> String {
    weights.iter().map(|w| format!(",obj_{w}")).collect()
}

/// One row per run per checkpoint, sorted by policy, seed and `t`.
pub fn summary_csv(runs: &[RunOutcome], weights: &[f64]) -> String {
    let mut s = format!(
        "t,policy,seed,regret,avg_qlen,max_qlen,expected_profit,realized_profit{}\n",
        weight_header(weights)
    );
    for r in runs {
        for p in &r.summary.points {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                p.t, r.policy, r.seed, p.regret, p.avg_qlen, p.max_qlen, p.expected_profit, p.realized_profit
            );
            for &w in weights {
                let _ = write!(s, ",{}", p.objective(w));
            }
            s.push('\n');
        }
    }
    s
}

/// Improvement of each policy's combined objective over the threshold
/// baseline, paired by seed, with a 95% interval over seeds. One row per
/// policy, weight and checkpoint.
pub fn compare_csv(runs: &[RunOutcome], weights: &[f64]) -> String {
    let mut s = String::from("t,w,policy,baseline,improvement_pct,ci_half_width,seeds\n");
    let baseline = PolicyKind::Threshold;
    let base: Vec<&RunOutcome> = runs.iter().filter(|r| r.policy == baseline).collect();
    let mut policies: Vec<PolicyKind> = runs.iter().map(|r| r.policy).filter(|&p| p != baseline).collect();
    policies.dedup();
    for policy in policies {
        let pairs: Vec<(&RunOutcome, &RunOutcome)> = runs
            .iter()
            .filter(|r| r.policy == policy)
            .filter_map(|r| base.iter().find(|b| b.seed == r.seed).map(|b| (r, *b)))
            .collect();
        let Some((first, _)) = pairs.first() else {
            continue;
        };
        for &w in weights {
            for (k, point) in first.summary.points.iter().enumerate() {
                let vals: Vec<f64> = pairs
                    .iter()
                    .filter_map(|(a, b)| improvement_pct(a.summary.points[k].objective(w), b.summary.points[k].objective(w)))
                    .collect();
                let (mean, half) = match confidence_interval(&vals) {
                    Ok((m, h)) => (format!("{m}"), format!("{h}")),
                    Err(_) if vals.len() == 1 => (format!("{}", vals[0]), String::new()),
                    Err(_) => (String::new(), String::new()),
                };
                let _ = writeln!(s, "{},{w},{policy},{baseline},{mean},{half},{}", point.t, vals.len());
            }
        }
    }
    s
}

/// Seed-averaged value of a metric at each checkpoint.
pub fn mean_series(runs: &[&RunOutcome], metric: impl Fn(&crate::metrics::SummaryPoint) -> f64) -> Vec<(u64, f64)> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .summary
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let sum: f64 = runs.iter().map(|r| metric(&r.summary.points[k])).sum();
            (p.t, sum / runs.len() as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub gamma: f64,
    pub regret_exponent: f64,
    pub queue_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tradeoff {
    pub rows: Vec<TradeoffRow>,
    /// `(slope, intercept)` of exponent against `γ`.
    pub regret_fit: (f64, f64),
    pub queue_fit: (f64, f64),
}

impl Tradeoff {
    pub fn slope_ratio(&self) -> f64 {
        self.regret_fit.0 / self.queue_fit.0
    }
}

/// For each `γ`, run the probabilistic two-price policy over the configured
/// seeds, average the regret and `AvgQLen` series over seeds, and take the
/// mean of `log₂ v(t) / log₂ t` over `t ∈ [T/10, T]`. Then fit a line to
/// each exponent against `γ`.
pub fn run_tradeoff(config: &ExperimentConfig, gammas: &[f64]) -> Result<Tradeoff> {
    if gammas.len() < 3 {
        return Err(Error::Insufficient(format!(
            "a tradeoff needs at least three gamma values, got {}",
            gammas.len()
        )));
    }
    let configs: Vec<ExperimentConfig> = gammas
        .iter()
        .map(|&g| {
            let mut c = config.clone();
            c.schedule.gamma = g;
            c.policies = vec![PolicyKind::Prob2p];
            c.trace = false;
            c
        })
        .collect();
    let all: Vec<Vec<RunOutcome>> = configs.iter().map(run_experiment).collect::<Result<_>>()?;
    let (t0, t1) = (config.horizon / 10, config.horizon);
    let mut rows = Vec::new();
    for (&gamma, runs) in gammas.iter().zip(&all) {
        let refs: Vec<&RunOutcome> = runs.iter().collect();
        let exponent = |series: Vec<(u64, f64)>, what: &str| {
            growth_exponent(&series, t0, t1)
                .ok_or_else(|| Error::Insufficient(format!("{what} is never positive in [T/10, T] at gamma {gamma}")))
        };
        rows.push(TradeoffRow {
            gamma,
            regret_exponent: exponent(mean_series(&refs, |p| p.regret), "regret")?,
            queue_exponent: exponent(mean_series(&refs, |p| p.avg_qlen), "average queue length")?,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
    let regret_fit = tradeoff_fit(&xs, &rows.iter().map(|r| r.regret_exponent).collect::<Vec<_>>())?;
    let queue_fit = tradeoff_fit(&xs, &rows.iter().map(|r| r.queue_exponent).collect::<Vec<_>>())?;
    Ok(Tradeoff {
        rows,
        regret_fit,
        queue_fit,
    })
}

pub fn tradeoff_csv(t: &Tradeoff) -> String {
    let mut s = String::from("gamma,regret_exponent,queue_exponent\n");
    for r in &t.rows {
        let _ = writeln!(s, "{},{},{}", r.gamma, r.regret_exponent, r.queue_exponent);
    }
    s
}

pub fn tradeoff_fit_csv(t: &Tradeoff) -> String {
    format!(
        "metric,slope,intercept\nregret,{},{}\nqueue,{},{}\n",
        t.regret_fit.0, t.regret_fit.1, t.queue_fit.0, t.queue_fit.1
    )
}

fn write_file(dir: &Path, name: &str, body: &[u8]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

/// Write `summary.csv`, optionally `compare.csv`, and one trace file per
/// run that recorded one. Returns the paths written.
pub fn write_experiment(dir: &Path, runs: &[RunOutcome], weights: &[f64], compare: bool) -> Result<Vec<PathBuf>> {
    let mut out = vec![write_file(dir, "summary.csv", summary_csv(runs, weights).as_bytes())?];
    if compare {
        out.push(write_file(dir, "compare.csv", compare_csv(runs, weights).as_bytes())?);
    }
    for r in runs {
        if let Some(t) = &r.trace_csv {
            out.push(write_file(dir, &format!("trace_{}_{}.csv", r.policy, r.seed), t)?);
        }
    }
    Ok(out)
}

pub fn write_tradeoff(dir: &Path, t: &Tradeoff) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, "tradeoff.csv", tradeoff_csv(t).as_bytes())?,
        write_file(dir, "tradeoff_fit.csv", tradeoff_fit_csv(t).as_bytes())?,
    ])
}

/// The outcome of one validation check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Assumption checks and oracle cross-checks on a configuration. Soft
/// findings (an optimum on the boundary, a lowered `a_min`) are reported as
/// passing with a note; only hard failures fail.
pub fn validate_config(config: &ExperimentConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let instance = match config.instance() {
        Ok(i) => {
            checks.push(Check::new("instance", true, "topology and curves are consistent"));
            i
        }
        Err(e) => {
            checks.push(Check::new("instance", false, e.to_string()));
            return checks;
        }
    };
    let topo = &instance.topology;

    let rejecting = instance.demand.iter().chain(&instance.supply).all(|c| {
        c.rate_of_price(c.rejecting_price())
            .map(|r| r == 0.0)
            .unwrap_or(false)
    });
    checks.push(Check::new(
        "rejecting prices",
        rejecting,
        if rejecting {
            "the extreme prices stop arrivals on every curve"
        } else {
            "some curve keeps a positive rate at its extreme price, so the queue cap does not hold"
        },
    ));
    let monotone = instance.demand.iter().chain(&instance.supply).all(|c| {
        (0..100).all(|k| {
            let (a, b) = (k as f64 / 100.0, (k + 1) as f64 / 100.0);
            match (c.price_of_rate(a), c.price_of_rate(b)) {
                (Ok(pa), Ok(pb)) => match c.kind() {
                    CurveKind::Demand => pb < pa,
                    CurveKind::Supply => pb > pa,
                },
                _ => false,
            }
        })
    });
    checks.push(Check::new("curve monotonicity", monotone, "sampled on a 0.01 rate grid"));

    let a_min = config.schedule.a_min;
    let adjusted = largest_valid_a_min(topo, a_min);
    checks.push(Check::new(
        "a_min conditions",
        true,
        if a_min_conditions_hold(topo, a_min) {
            format!("a_min = {a_min} is valid")
        } else {
            format!("a_min = {a_min} is too large and will be lowered to {adjusted}")
        },
    ));
    match inner_radius(topo, adjusted) {
        Ok(r) => checks.push(Check::new("inner radius", r > 0.0, format!("r = {r}"))),
        Err(e) => checks.push(Check::new("inner radius", false, e.to_string())),
    }
    match config.validate() {
        Ok(_) => checks.push(Check::new("schedule", true, "parameter ranges and delta < r hold")),
        Err(e) => checks.push(Check::new("schedule", false, e.to_string())),
    }

    match solve_fluid(&instance, adjusted) {
        Ok(sol) => {
            checks.push(Check::new(
                "fluid solution",
                sol.kkt_residual <= 1e-8,
                format!("f* = {}, KKT residual {:.2e}", sol.f_star, sol.kkt_residual),
            ));
            checks.push(Check::new(
                "interior optimum",
                true,
                if sol.interior.is_interior() {
                    "the optimum is interior".to_string()
                } else {
                    format!(
                        "the optimum is on the boundary (min edge rate {}, rates in [{}, {}])",
                        sol.interior.min_edge_rate, sol.interior.min_rate, sol.interior.max_rate
                    )
                },
            ));
            match transportation_feasible(topo, &sol.lambda_star, &sol.mu_star) {
                Ok(ok) => checks.push(Check::new("transportation oracle", ok, "max-flow reproduces the optimal rates")),
                Err(e) => checks.push(Check::new("transportation oracle", false, e.to_string())),
            }
        }
        Err(e) => checks.push(Check::new("fluid solution", false, e.to_string())),
    }

    if topo.edge_count() <= 2 {
        let delta = inner_radius(topo, adjusted).map(|r| 0.5 * r).unwrap_or(0.0);
        let result = ShrunkRegion::new(topo, adjusted, delta).and_then(|region| {
            let far = vec![2.0; topo.edge_count()];
            let exact = region.project(topo, &MatchRates(far.clone()))?.x.0;
            let grid = grid_project(region.polytope(), topo, &far, 1e-3)?;
            Ok(exact
                .iter()
                .zip(&grid.point)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max))
        });
        match result {
            Ok(gap) => checks.push(Check::new(
                "projection oracle",
                gap <= 1e-3 + 1e-6,
                format!("projection and grid search differ by {gap:.2e}"),
            )),
            Err(e) => checks.push(Check::new("projection oracle", false, e.to_string())),
        }
    }
    checks
}
