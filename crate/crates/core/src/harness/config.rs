//! The experiment configuration file: a flat, sectioned `key = value`
//! format with repeatable `[edge]` and `[curve]` blocks.
//!
//! ```text
//! [experiment]
//! name = single_link
//! horizon = 100000
//! policies = prob2p, threshold, genie2p
//! seeds = 0..9
//! weights = 0.001, 0.01
//!
//! [schedule]
//! gamma = 1/6
//! mode = anytime
//!
//! [topology]
//! customers = 1
//! servers = 1
//!
//! [edge]
//! customer = 1
//! server = 1
//!
//! [curve]
//! side = customer
//! index = 1
//! kind = linear
//! intercept = 2
//! slope = 2
//! p_min = 0
//! p_max = 2
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::curves::{CurveKind, CurveRef, LinearCurve};
use crate::error::{Error, Result};
use crate::fluid::{inner_radius, largest_valid_a_min, Instance, Topology};
use crate::policies::{PolicyKind, Schedule, ScheduleMode, Side};

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSpec {
    pub side: Side,
    /// Zero-based customer or server index.
    pub index: usize,
    pub intercept: f64,
    pub slope: f64,
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub horizon: u64,
    pub policies: Vec<PolicyKind>,
    /// Inclusive seed range.
    pub seeds: (u64, u64),
    pub weights: Vec<f64>,
    /// Number of evenly spaced summary checkpoints per run.
    pub checkpoints: u64,
    /// Write a per-slot CSV trace for every run.
    pub trace: bool,
    /// Exploration grid resolution of estimate-then-optimize; `T^{-1/4}` when unset.
    pub eto_zeta: Option<f64>,
    pub schedule: Schedule,
    pub customers: usize,
    pub servers: usize,
    /// Zero-based `(customer, server)` pairs.
    pub edges: Vec<(usize, usize)>,
    pub curves: Vec<CurveSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            horizon: 100_000,
            policies: vec![PolicyKind::Prob2p],
            seeds: (0, 0),
            weights: vec![0.001, 0.01],
            checkpoints: 1000,
            trace: false,
            eto_zeta: None,
            schedule: Schedule::default(),
            customers: 1,
            servers: 1,
            edges: vec![(0, 0)],
            curves: vec![
                CurveSpec {
                    side: Side::Customer,
                    index: 0,
                    intercept: 2.0,
                    slope: 2.0,
                    p_min: 0.0,
                    p_max: 2.0,
                },
                CurveSpec {
                    side: Side::Server,
                    index: 0,
                    intercept: 0.0,
                    slope: 2.0,
                    p_min: 0.0,
                    p_max: 2.0,
                },
            ],
        }
    }
}

/// A float, or a fraction `a/b` of two floats.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Config(format!("expected a number, got {s:?}"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// An inclusive range `a..b`, or a single value.
pub fn parse_seed_range(s: &str) -> Result<(u64, u64)> {
    let bad = || Error::Config(format!("expected a seed range a..b, got {s:?}"));
    let (a, b) = match s.trim().split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(item).collect()
}

fn parse_int<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got {s:?}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {s:?}"))),
    }
}

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("[{}] block at line {} is missing {key}", self.name, self.line)))
    }

    fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key {k:?} in [{}] at line {}", self.name, self.line))),
            None => Ok(()),
        }
    }
}

fn sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            out.push(Section {
                name: name.trim().to_string(),
                line: n + 1,
                entries: BTreeMap::new(),
            });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let sec = out
            .last_mut()
            .ok_or_else(|| Error::Config(format!("line {}: key outside any section", n + 1)))?;
        if sec.entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {:?}", n + 1, k.trim())));
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parse without semantic validation; see [`ExperimentConfig::validate`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self {
            edges: Vec::new(),
            curves: Vec::new(),
            ..Self::default()
        };
        let mut seen = BTreeMap::new();
        for mut sec in sections(text)? {
            if matches!(sec.name.as_str(), "experiment" | "schedule" | "topology")
                && seen.insert(sec.name.clone(), sec.line).is_some()
            {
                return Err(Error::Config(format!("section [{}] appears twice", sec.name)));
            }
            match sec.name.as_str() {
                "experiment" => {
                    if let Some(v) = sec.take("name") {
                        cfg.name = v;
                    }
                    if let Some(v) = sec.take("horizon") {
                        cfg.horizon = parse_int("horizon", &v)?;
                    }
                    if let Some(v) = sec.take("policies") {
                        cfg.policies = parse_list(&v, |p| p.parse())?;
                    }
                    if let Some(v) = sec.take("seeds") {
                        cfg.seeds = parse_seed_range(&v)?;
                    }
                    if let Some(v) = sec.take("weights") {
                        cfg.weights = parse_list(&v, parse_number)?;
                    }
                    if let Some(v) = sec.take("checkpoints") {
                        cfg.checkpoints = parse_int("checkpoints", &v)?;
                    }
                    if let Some(v) = sec.take("trace") {
                        cfg.trace = parse_bool("trace", &v)?;
                    }
                    if let Some(v) = sec.take("eto_zeta") {
                        cfg.eto_zeta = Some(parse_number(&v)?);
                    }
                }
                "schedule" => {
                    let s = &mut cfg.schedule;
                    let mut num = |key: &str, slot: &mut f64| -> Result<()> {
                        if let Some(v) = sec.take(key) {
                            *slot = parse_number(&v)?;
                        }
                        Ok(())
                    };
                    num("gamma", &mut s.gamma)?;
                    num("eta_mult", &mut s.mult_eta)?;
                    num("delta_mult", &mut s.mult_delta)?;
                    num("alpha_mult", &mut s.mult_alpha)?;
                    num("epsilon_mult", &mut s.mult_epsilon)?;
                    num("a_min", &mut s.a_min)?;
                    if let Some(v) = sec.take("mode") {
                        s.mode = v.parse()?;
                    }
                    if let Some(v) = sec.take("alpha_form") {
                        s.alpha_form = v.parse()?;
                    }
                    if let Some(v) = sec.take("beta") {
                        s.beta = Some(parse_number(&v)?);
                    }
                    if let Some(v) = sec.take("e_override_mult") {
                        s.e_override_mult = Some(parse_number(&v)?);
                    }
                }
                "topology" => {
                    cfg.customers = parse_int("customers", &sec.require("customers")?)?;
                    cfg.servers = parse_int("servers", &sec.require("servers")?)?;
                }
                "edge" => {
                    let i: usize = parse_int("customer", &sec.require("customer")?)?;
                    let j: usize = parse_int("server", &sec.require("server")?)?;
                    if i == 0 || j == 0 {
                        return Err(Error::Config(format!("[edge] at line {}: indices start at 1", sec.line)));
                    }
                    cfg.edges.push((i - 1, j - 1));
                }
                "curve" => {
                    let side = match sec.require("side")?.as_str() {
                        "customer" => Side::Customer,
                        "server" => Side::Server,
                        other => return Err(Error::Config(format!("unknown curve side {other:?}"))),
                    };
                    let index: usize = parse_int("index", &sec.require("index")?)?;
                    if index == 0 {
                        return Err(Error::Config(format!("[curve] at line {}: indices start at 1", sec.line)));
                    }
                    let kind = sec.take("kind").unwrap_or_else(|| "linear".into());
                    if kind != "linear" {
                        return Err(Error::Config(format!("unsupported curve kind {kind:?}")));
                    }
                    cfg.curves.push(CurveSpec {
                        side,
                        index: index - 1,
                        intercept: parse_number(&sec.require("intercept")?)?,
                        slope: parse_number(&sec.require("slope")?)?,
                        p_min: parse_number(&sec.require("p_min")?)?,
                        p_max: parse_number(&sec.require("p_max")?)?,
                    });
                }
                other => return Err(Error::Config(format!("unknown section [{other}] at line {}", sec.line))),
            }
            sec.finish()?;
        }
        Ok(cfg)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|w| format!("{w}")).collect::<Vec<_>>().join(", ");
        let policies: Vec<&str> = self.policies.iter().map(|p| p.name()).collect();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "policies = {}", policies.join(", "));
        let _ = writeln!(s, "seeds = {}..{}", self.seeds.0, self.seeds.1);
        let _ = writeln!(s, "weights = {}", join(&self.weights));
        let _ = writeln!(s, "checkpoints = {}", self.checkpoints);
        let _ = writeln!(s, "trace = {}", self.trace);
        if let Some(z) = self.eto_zeta {
            let _ = writeln!(s, "eto_zeta = {z}");
        }
        let sc = &self.schedule;
        let _ = writeln!(s, "\n[schedule]");
        let _ = writeln!(s, "gamma = {}", sc.gamma);
        let _ = writeln!(s, "mode = {}", sc.mode);
        let _ = writeln!(s, "eta_mult = {}", sc.mult_eta);
        let _ = writeln!(s, "delta_mult = {}", sc.mult_delta);
        let _ = writeln!(s, "alpha_mult = {}", sc.mult_alpha);
        let _ = writeln!(s, "epsilon_mult = {}", sc.mult_epsilon);
        if let Some(b) = sc.beta {
            let _ = writeln!(s, "beta = {b}");
        }
        if let Some(e) = sc.e_override_mult {
            let _ = writeln!(s, "e_override_mult = {e}");
        }
        let _ = writeln!(s, "alpha_form = {}", sc.alpha_form);
        let _ = writeln!(s, "a_min = {}", sc.a_min);
        let _ = writeln!(s, "\n[topology]");
        let _ = writeln!(s, "customers = {}", self.customers);
        let _ = writeln!(s, "servers = {}", self.servers);
        for &(i, j) in &self.edges {
            let _ = writeln!(s, "\n[edge]\ncustomer = {}\nserver = {}", i + 1, j + 1);
        }
        for c in &self.curves {
            let side = match c.side {
                Side::Customer => "customer",
                Side::Server => "server",
            };
            let _ = writeln!(
                s,
                "\n[curve]\nside = {side}\nindex = {}\nkind = linear\nintercept = {}\nslope = {}\np_min = {}\np_max = {}",
                c.index + 1,
                c.intercept,
                c.slope,
                c.p_min,
                c.p_max
            );
        }
        s
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seeds.0..=self.seeds.1).collect()
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::new(self.customers, self.servers, self.edges.clone())
    }

    pub fn instance(&self) -> Result<Instance> {
        let topology = self.topology()?;
        let mut demand: Vec<Option<CurveRef>> = vec![None; self.customers];
        let mut supply: Vec<Option<CurveRef>> = vec![None; self.servers];
        for c in &self.curves {
            let (slots, kind, label) = match c.side {
                Side::Customer => (&mut demand, CurveKind::Demand, "customer"),
                Side::Server => (&mut supply, CurveKind::Supply, "server"),
            };
            let slot = slots
                .get_mut(c.index)
                .ok_or_else(|| Error::Config(format!("curve for {label} {} out of range", c.index + 1)))?;
            if slot.is_some() {
                return Err(Error::Config(format!("two curves for {label} {}", c.index + 1)));
            }
            *slot = Some(Arc::new(LinearCurve::with_bounds(kind, c.intercept, c.slope, c.p_min, c.p_max)?));
        }
        let collect = |v: Vec<Option<CurveRef>>, label: &str| {
            v.into_iter()
                .enumerate()
                .map(|(k, c)| c.ok_or_else(|| Error::Config(format!("no curve for {label} {}", k + 1))))
                .collect::<Result<Vec<_>>>()
        };
        Instance::new(topology, collect(demand, "customer")?, collect(supply, "server")?)
    }

    /// Check everything a run relies on: the instance, the policy list, the
    /// schedule's parameter ranges and the exploration radius against the
    /// inner radius of the shrunk region.
    pub fn validate(&self) -> Result<Instance> {
        let instance = self.instance()?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policies configured".into()));
        }
        if self.checkpoints == 0 {
            return Err(Error::Config("checkpoints must be positive".into()));
        }
        if let Some(z) = self.eto_zeta {
            if !(z > 0.0 && z <= 1.0) {
                return Err(Error::Config(format!("eto_zeta = {z} must lie in (0, 1]")));
            }
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        let params = match self.schedule.mode {
            ScheduleMode::FixedHorizon => self.schedule.params(self.horizon)?,
            // The largest δ of an anytime run is at its first iteration.
            ScheduleMode::Anytime => self.schedule.params(1)?,
        };
        let a_min = largest_valid_a_min(&instance.topology, self.schedule.a_min);
        let r = inner_radius(&instance.topology, a_min)?;
        if params.delta >= r {
            return Err(Error::Config(format!(
                "exploration radius delta = {} is not below the inner radius r = {r}",
                params.delta
            )));
        }
        Ok(instance)
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::AlphaForm;
    use proptest::prelude::*;

    const ALPHA_FORMS: [AlphaForm; 2] = [AlphaForm::Decaying, AlphaForm::Growing];

    const SINGLE: &str = "
[experiment]
name = single_link
horizon = 100000
policies = prob2p, threshold
seeds = 0..9
weights = 0.001, 0.01

[schedule]
gamma = 1/6   # optimal tradeoff
mode = anytime
eta_mult = 0.2
delta_mult = 0.2
alpha_mult = 0.2
beta = 1.0
e_override_mult = 6.0
a_min = 0.01

[topology]
customers = 1
servers = 1

[edge]
customer = 1
server = 1

[curve]
side = customer
index = 1
kind = linear
intercept = 2
slope = 2
p_min = 0
p_max = 2

[curve]
side = server
index = 1
intercept = 0
slope = 2
p_min = 0
p_max = 2
";

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::parse(SINGLE).unwrap();
        assert_eq!(c.seed_list().len(), 10);
        assert!((c.schedule.gamma - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(c.schedule.mode, ScheduleMode::Anytime);
        assert_eq!(c.policies, vec![PolicyKind::Prob2p, PolicyKind::Threshold]);
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_config_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("[experiment]\nhorizon = -3\n").is_err());
        assert!(ExperimentConfig::parse("[experiment]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("horizon = 3\n").is_err());
        assert!(ExperimentConfig::parse("[weird]\n").is_err());
        assert!(ExperimentConfig::parse("[experiment]\npolicies = ucb\n").is_err());
        let missing = SINGLE.replace("side = server", "side = customer");
        assert!(ExperimentConfig::parse(&missing).unwrap().validate().is_err());
        let wrong_bounds = SINGLE.replacen("p_max = 2", "p_max = 3", 1);
        assert!(ExperimentConfig::parse(&wrong_bounds).unwrap().validate().is_err());
        let big_delta = SINGLE.replace("delta_mult = 0.2", "delta_mult = 2");
        assert!(ExperimentConfig::parse(&big_delta).unwrap().validate().is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![Just(1.0 / 6.0), 1e-3..10.0f64, Just(0.2)]
    }

    prop_compose! {
        fn arb_config()(
            name in "[a-z][a-z0-9_]{0,12}",
            horizon in 1u64..10_000_000,
            policies in proptest::sample::subsequence(PolicyKind::ALL.to_vec(), 1..=4),
            lo in 0u64..100, span in 0u64..100,
            weights in proptest::collection::vec(0.0..1.0f64, 0..4),
            checkpoints in 1u64..5000,
            trace in any::<bool>(),
            zeta in proptest::option::of(0.01..1.0f64),
            gamma in 0.01..1.0f64,
            anytime in any::<bool>(),
            mults in (finite(), finite(), finite(), finite()),
            beta in proptest::option::of(finite()),
            e_mult in proptest::option::of(finite()),
            alpha_form in 0usize..2,
            a_min in 0.001..0.5f64,
            customers in 1usize..5, servers in 1usize..5,
            curve_vals in proptest::collection::vec((finite(), finite()), 2..6),
        ) -> ExperimentConfig {
            let edges = (0..customers.max(servers)).map(|k| (k % customers, k % servers)).collect();
            let curves = curve_vals.iter().enumerate().map(|(k, &(a, b))| CurveSpec {
                side: if k % 2 == 0 { Side::Customer } else { Side::Server },
                index: k / 2,
                intercept: a,
                slope: b,
                p_min: a - b,
                p_max: a,
            }).collect();
            ExperimentConfig {
                name,
                horizon,
                policies,
                seeds: (lo, lo + span),
                weights,
                checkpoints,
                trace,
                eto_zeta: zeta,
                schedule: Schedule {
                    gamma,
                    mode: if anytime { ScheduleMode::Anytime } else { ScheduleMode::FixedHorizon },
                    mult_eta: mults.0,
                    mult_delta: mults.1,
                    mult_alpha: mults.2,
                    mult_epsilon: mults.3,
                    beta,
                    e_override_mult: e_mult,
                    alpha_form: ALPHA_FORMS[alpha_form],
                    a_min,
                },
                customers,
                servers,
                edges,
                curves,
            }
        }
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(cfg in arb_config()) {
            let text = cfg.to_config_string();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_config_string(), text);
        }
    }
}
