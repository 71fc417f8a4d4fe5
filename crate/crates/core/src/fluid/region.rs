//! Feasible polytopes over per-edge match rates and the shrunk region used
//! for two-point exploration.
//!
//! Every polytope here has the same shape: a lower bound per edge plus an
//! interval on each customer sum `Σ_{j∈E_c,i} x_{i,j}` and each server sum
//! `Σ_{i∈E_s,j} x_{i,j}`. Because every edge belongs to exactly one
//! customer group and one server group, projecting onto the edge box, the
//! customer slabs or the server slabs alone is closed-form, which makes
//! Dykstra's alternating projections a cheap warm start for the exact
//! active-set solve.

use nalgebra::DMatrix;

use super::qp::{self, ConvexObjective, Halfspace};
use super::{MatchRates, Topology};
use crate::error::{Error, Result};

const DYKSTRA_CAP: usize = 100_000;
const ACTIVE_SET_CAP: usize = 10_000;

/// Identifies one linear constraint of a [`Polytope`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintId {
    EdgeLower(usize),
    CustomerLower(usize),
    CustomerUpper(usize),
    ServerLower(usize),
    ServerUpper(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    edge_lower: Vec<f64>,
    customer_bounds: Vec<(f64, f64)>,
    server_bounds: Vec<(f64, f64)>,
    /// A strictly feasible point, used to restore exact feasibility of the
    /// warm start.
    interior: Vec<f64>,
}

/// Result of a Euclidean projection.
#[derive(Clone, Debug)]
pub struct Projection {
    pub x: MatchRates,
    /// `‖(y − x) − Σ ν_k a_k‖_∞` over the active constraints: zero exactly
    /// when `x` is the projection of `y`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct SquaredDistance<'a>(&'a [f64]);

impl ConvexObjective for SquaredDistance<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(self.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.0).map(|(a, b)| a - b).collect()
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(x.len(), x.len())
    }
    fn is_quadratic(&self) -> bool {
        true
    }
}

fn project_groups(z: &mut [f64], groups: impl Iterator<Item = (usize, (f64, f64))>, topo_groups: &dyn Fn(usize) -> Vec<usize>) {
    for (g, (lo, hi)) in groups {
        let members = topo_groups(g);
        let s: f64 = members.iter().map(|&e| z[e]).sum();
        let shift = if s > hi {
            (hi - s) / members.len() as f64
        } else if s < lo {
            (lo - s) / members.len() as f64
        } else {
            continue;
        };
        for e in members {
            z[e] += shift;
        }
    }
}

impl Polytope {
    pub fn new(
        topology: &Topology,
        edge_lower: Vec<f64>,
        customer_bounds: Vec<(f64, f64)>,
        server_bounds: Vec<(f64, f64)>,
        interior: Vec<f64>,
    ) -> Result<Self> {
        if edge_lower.len() != topology.edge_count() {
            return Err(Error::Dimension {
                expected: topology.edge_count(),
                got: edge_lower.len(),
            });
        }
        if customer_bounds.len() != topology.customers() || server_bounds.len() != topology.servers() {
            return Err(Error::Config("polytope bounds do not match the topology".into()));
        }
        let p = Self {
            edge_lower,
            customer_bounds,
            server_bounds,
            interior,
        };
        if !p.contains(topology, &MatchRates(p.interior.clone()), 0.0) {
            return Err(Error::Config("polytope interior point is infeasible".into()));
        }
        Ok(p)
    }

    /// The feasible set of the fluid program: `x ≥ 0`, every λ_i and μ_j in `[0, 1]`.
    pub fn fluid(topology: &Topology) -> Self {
        Self::with_rate_floor(topology, 0.0)
    }

    /// `x ≥ 0`, every λ_i and μ_j in `[a_min, 1]`.
    ///
    /// The interior point is the shrunk-region center, which is strictly
    /// feasible when `a_min` satisfies [`a_min_conditions_hold`].
    pub fn with_rate_floor(topology: &Topology, a_min: f64) -> Self {
        let center = center(topology, a_min);
        Self {
            edge_lower: vec![0.0; topology.edge_count()],
            customer_bounds: vec![(a_min, 1.0); topology.customers()],
            server_bounds: vec![(a_min, 1.0); topology.servers()],
            interior: center,
        }
    }

    pub fn edge_lower(&self) -> &[f64] {
        &self.edge_lower
    }

    pub fn customer_bounds(&self) -> &[(f64, f64)] {
        &self.customer_bounds
    }

    pub fn server_bounds(&self) -> &[(f64, f64)] {
        &self.server_bounds
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    /// Largest constraint violation of `x` (zero when feasible).
    pub fn violation(&self, topology: &Topology, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (xe, le) in x.iter().zip(&self.edge_lower) {
            worst = worst.max(le - xe);
        }
        let (lambda, mu) = topology.induced_rates_unchecked(x);
        for (s, &(lo, hi)) in lambda
            .iter()
            .zip(&self.customer_bounds)
            .chain(mu.iter().zip(&self.server_bounds))
        {
            worst = worst.max(lo - s).max(s - hi);
        }
        worst
    }

    pub fn contains(&self, topology: &Topology, x: &MatchRates, tol: f64) -> bool {
        x.len() == topology.edge_count()
            && x.as_slice().iter().all(|v| v.is_finite())
            && self.violation(topology, x.as_slice()) <= tol
    }

    /// The non-redundant linear constraints `a · x ≤ b` of this polytope.
    pub(crate) fn halfspaces(&self, topology: &Topology) -> (Vec<ConstraintId>, Vec<Halfspace>) {
        let n = topology.edge_count();
        let mut ids = Vec::new();
        let mut cons = Vec::new();
        let unit = |e: usize, s: f64| {
            let mut v = vec![0.0; n];
            v[e] = s;
            v
        };
        let indicator = |edges: &[usize], s: f64| {
            let mut v = vec![0.0; n];
            for &e in edges {
                v[e] = s;
            }
            v
        };
        for (e, &l) in self.edge_lower.iter().enumerate() {
            ids.push(ConstraintId::EdgeLower(e));
            cons.push(Halfspace {
                normal: unit(e, -1.0),
                offset: -l,
            });
        }
        for (i, &(lo, hi)) in self.customer_bounds.iter().enumerate() {
            let edges = topology.customer_edges(i);
            let implied: f64 = edges.iter().map(|&e| self.edge_lower[e]).sum();
            if lo > implied {
                ids.push(ConstraintId::CustomerLower(i));
                cons.push(Halfspace {
                    normal: indicator(edges, -1.0),
                    offset: -lo,
                });
            }
            ids.push(ConstraintId::CustomerUpper(i));
            cons.push(Halfspace {
                normal: indicator(edges, 1.0),
                offset: hi,
            });
        }
        for (j, &(lo, hi)) in self.server_bounds.iter().enumerate() {
            let edges = topology.server_edges(j);
            let implied: f64 = edges.iter().map(|&e| self.edge_lower[e]).sum();
            if lo > implied {
                ids.push(ConstraintId::ServerLower(j));
                cons.push(Halfspace {
                    normal: indicator(edges, -1.0),
                    offset: -lo,
                });
            }
            ids.push(ConstraintId::ServerUpper(j));
            cons.push(Halfspace {
                normal: indicator(edges, 1.0),
                offset: hi,
            });
        }
        (ids, cons)
    }

    /// Dykstra's alternating projections over the edge box, the customer
    /// slabs and the server slabs. Converges to the projection but only
    /// linearly; used as a warm start.
    pub(crate) fn dykstra(&self, topology: &Topology, y: &[f64], tol: f64) -> Vec<f64> {
        let n = y.len();
        let mut x = y.to_vec();
        let mut inc = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let customer_members = |i: usize| topology.customer_edges(i).to_vec();
        let server_members = |j: usize| topology.server_edges(j).to_vec();
        for _ in 0..DYKSTRA_CAP {
            let prev = x.clone();
            for (set, incr) in inc.iter_mut().enumerate() {
                let mut z: Vec<f64> = x.iter().zip(incr.iter()).map(|(a, b)| a + b).collect();
                match set {
                    0 => z
                        .iter_mut()
                        .zip(&self.edge_lower)
                        .for_each(|(v, &l)| *v = v.max(l)),
                    1 => project_groups(
                        &mut z,
                        self.customer_bounds.iter().copied().enumerate(),
                        &customer_members,
                    ),
                    _ => project_groups(
                        &mut z,
                        self.server_bounds.iter().copied().enumerate(),
                        &server_members,
                    ),
                }
                for k in 0..n {
                    incr[k] = x[k] + incr[k] - z[k];
                }
                x = z;
            }
            let change = x
                .iter()
                .zip(&prev)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            if change <= tol && self.violation(topology, &x) <= tol {
                break;
            }
        }
        x
    }

    /// Move `x` toward the interior point just far enough to be feasible.
    fn restore_feasibility(&self, topology: &Topology, x: Vec<f64>) -> Vec<f64> {
        if self.violation(topology, &x) <= 0.0 {
            return x;
        }
        let (_, cons) = self.halfspaces(topology);
        let d: Vec<f64> = x.iter().zip(&self.interior).map(|(a, c)| a - c).collect();
        let mut t: f64 = 1.0;
        for c in &cons {
            let ad = qp::dot(&c.normal, &d);
            if ad > 0.0 {
                t = t.min(c.slack(&self.interior) / ad);
            }
        }
        let t = t.clamp(0.0, 1.0);
        self.interior
            .iter()
            .zip(&d)
            .map(|(c, di)| c + t * di)
            .collect()
    }

    /// Euclidean projection of `y` onto the polytope.
    pub fn project(&self, topology: &Topology, y: &MatchRates) -> Result<Projection> {
        topology.check_dim(y.as_slice())?;
        if y.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                what: "projection input",
                value: f64::NAN,
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            });
        }
        let y = y.as_slice();
        let warm = self.dykstra(topology, y, 1e-12);
        let start = self.restore_feasibility(topology, warm);
        let (_, cons) = self.halfspaces(topology);
        match qp::minimize(&SquaredDistance(y), &cons, start, ACTIVE_SET_CAP) {
            Ok(sol) => Ok(Projection {
                x: MatchRates(sol.x),
                kkt_residual: sol.stationarity,
                iterations: sol.iterations,
            }),
            Err(fail) => Err(Error::Numerical {
                routine: "polytope projection",
                residual: fail.residual,
                iterations: fail.iterations,
                best: fail.best,
            }),
        }
    }
}

/// `c_{i,j} = (a_min + 1) / (2 N_{i,j})`.
fn center(topology: &Topology, a_min: f64) -> Vec<f64> {
    (0..topology.edge_count())
        .map(|e| (a_min + 1.0) / (2.0 * topology.edge_width(e) as f64))
        .collect()
}

/// `Σ_{e∈group} 1 / (2 N_e)` for every customer then every server group.
fn group_weights(topology: &Topology) -> (Vec<f64>, Vec<f64>) {
    let w = |edges: &[usize]| {
        edges
            .iter()
            .map(|&e| 1.0 / (2.0 * topology.edge_width(e) as f64))
            .sum::<f64>()
    };
    (
        (0..topology.customers()).map(|i| w(topology.customer_edges(i))).collect(),
        (0..topology.servers()).map(|j| w(topology.server_edges(j))).collect(),
    )
}

/// Whether `Σ_{e∈group} (a_min + 1)/(2N_e) − a_min > 0` for every group.
pub fn a_min_conditions_hold(topology: &Topology, a_min: f64) -> bool {
    let (wc, ws) = group_weights(topology);
    a_min > 0.0
        && a_min < 1.0
        && wc.iter().chain(&ws).all(|&s| (a_min + 1.0) * s - a_min > 0.0)
}

/// The largest `a' ≤ a_min` that satisfies [`a_min_conditions_hold`].
///
/// Each group condition reads `a < s / (1 − s)` with `s` the group weight,
/// which is strict, so the bound is backed off by a relative `1e-6`.
pub fn largest_valid_a_min(topology: &Topology, a_min: f64) -> f64 {
    if a_min_conditions_hold(topology, a_min) {
        return a_min;
    }
    let (wc, ws) = group_weights(topology);
    let bound = wc
        .iter()
        .chain(&ws)
        .filter(|&&s| s < 1.0)
        .map(|&s| s / (1.0 - s))
        .fold(f64::INFINITY, f64::min);
    a_min.min(bound * (1.0 - 1e-6)).min(1.0 - 1e-6)
}

/// The inner radius `r`: the minimum over edges of `c_e` and over every
/// customer/server group of the two normalised slacks of the center.
pub fn inner_radius(topology: &Topology, a_min: f64) -> Result<f64> {
    if !a_min_conditions_hold(topology, a_min) {
        return Err(Error::Config(format!(
            "a_min = {a_min} violates the center-slack conditions; shrink it to at most {:.6}",
            largest_valid_a_min(topology, a_min)
        )));
    }
    let c = center(topology, a_min);
    let mut r = c.iter().copied().fold(f64::INFINITY, f64::min);
    let groups = (0..topology.customers())
        .map(|i| topology.customer_edges(i))
        .chain((0..topology.servers()).map(|j| topology.server_edges(j)));
    for edges in groups {
        let k = edges.len() as f64;
        let s: f64 = edges.iter().map(|&e| c[e]).sum();
        r = r.min((1.0 - s) / k).min((s - a_min) / k);
    }
    Ok(r)
}

/// The shrunk region: every point stays inside the `a_min` fluid domain
/// after a step of length `delta` in any direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ShrunkRegion {
    a_min: f64,
    delta: f64,
    r: f64,
    center: Vec<f64>,
    polytope: Polytope,
}

impl ShrunkRegion {
    pub fn new(topology: &Topology, a_min: f64, delta: f64) -> Result<Self> {
        let r = inner_radius(topology, a_min)?;
        if !(delta > 0.0 && delta < r) {
            return Err(Error::Config(format!(
                "exploration radius delta = {delta} must lie in (0, r) with r = {r}"
            )));
        }
        let c = center(topology, a_min);
        let theta = 1.0 - delta / r;
        let edge_lower = c.iter().map(|&ce| ce - theta * ce).collect();
        let bounds = |edges: &[usize]| {
            let s: f64 = edges.iter().map(|&e| c[e]).sum();
            (s - theta * (s - a_min), s + theta * (1.0 - s))
        };
        let customer_bounds = (0..topology.customers())
            .map(|i| bounds(topology.customer_edges(i)))
            .collect();
        let server_bounds = (0..topology.servers())
            .map(|j| bounds(topology.server_edges(j)))
            .collect();
        let polytope = Polytope::new(topology, edge_lower, customer_bounds, server_bounds, c.clone())?;
        Ok(Self {
            a_min,
            delta,
            r,
            center: c,
            polytope,
        })
    }

    /// Like [`ShrunkRegion::new`], but first replaces an `a_min` that
    /// violates the center-slack conditions by the largest valid one. The
    /// second field reports the replacement, if any.
    pub fn with_auto_shrink(topology: &Topology, a_min: f64, delta: f64) -> Result<(Self, Option<f64>)> {
        let adjusted = largest_valid_a_min(topology, a_min);
        let region = Self::new(topology, adjusted, delta)?;
        Ok((region, (adjusted != a_min).then_some(adjusted)))
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn polytope(&self) -> &Polytope {
        &self.polytope
    }

    pub fn contains(&self, topology: &Topology, x: &MatchRates) -> bool {
        self.polytope.contains(topology, x, 1e-12)
    }

    pub fn project(&self, topology: &Topology, x: &MatchRates) -> Result<Projection> {
        self.polytope.project(topology, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_link_radius() {
        let t = Topology::single_link();
        assert!((inner_radius(&t, 0.01).unwrap() - 0.495).abs() < 1e-15);
        assert!((inner_radius(&t, 1e-12).unwrap() - 0.5).abs() < 1e-11);
    }

    #[test]
    fn radius_bounded_by_first_term() {
        let t = Topology::three_by_three();
        let a = 0.01;
        let r = inner_radius(&t, a).unwrap();
        let max_width = (0..7).map(|e| t.edge_width(e)).max().unwrap() as f64;
        assert!(r > 0.0);
        assert!(r <= (1.0 + a) / (2.0 * max_width) + 1e-15);
    }

    #[test]
    fn a_min_violation_is_reported_and_shrinkable() {
        // Server 1 has degree 1 next to a customer of degree 3: weight 1/6,
        // so a_min must stay below (1/6)/(5/6) = 0.2.
        let t = Topology::new(1, 3, vec![(0, 0), (0, 1), (0, 2)]).unwrap();
        assert!(a_min_conditions_hold(&t, 0.19));
        assert!(!a_min_conditions_hold(&t, 0.25));
        let err = inner_radius(&t, 0.25).unwrap_err();
        assert!(err.to_string().contains("shrink"));
        let a = largest_valid_a_min(&t, 0.25);
        assert!(a < 0.2 && a > 0.199);
        assert!(a_min_conditions_hold(&t, a));
        let delta = 0.5 * inner_radius(&t, a).unwrap();
        let (region, adjusted) = ShrunkRegion::with_auto_shrink(&t, 0.25, delta).unwrap();
        assert_eq!(adjusted, Some(a));
        assert_eq!(region.a_min(), a);
    }

    #[test]
    fn delta_must_be_below_r() {
        let t = Topology::single_link();
        assert!(ShrunkRegion::new(&t, 0.01, 0.5).is_err());
        assert!(ShrunkRegion::new(&t, 0.01, 0.0).is_err());
        assert!(ShrunkRegion::new(&t, 0.01, 0.1).is_ok());
    }

    #[test]
    fn shrunk_membership_examples() {
        let t = Topology::single_link();
        let region = ShrunkRegion::new(&t, 0.01, 0.1).unwrap();
        assert!(region.contains(&t, &MatchRates(region.center().to_vec())));
        assert!(!region.contains(&t, &MatchRates(vec![0.01])));
        assert!(!region.contains(&t, &MatchRates(vec![-0.2])));
        // Per-edge bound c − (1 − δ/r)c.
        let lower = 0.505 * 0.1 / 0.495;
        assert!((region.polytope().edge_lower()[0] - lower).abs() < 1e-15);
        let (lo, hi) = region.polytope().customer_bounds()[0];
        assert!((lo - 0.11).abs() < 1e-12 && (hi - 0.9).abs() < 1e-12);

        let t3 = Topology::three_by_three();
        let r3 = ShrunkRegion::new(&t3, 0.01, 0.05).unwrap();
        let mut x = r3.center().to_vec();
        assert!(r3.contains(&t3, &MatchRates(x.clone())));
        x[2] = -0.01;
        assert!(!r3.contains(&t3, &MatchRates(x)));
    }

    #[test]
    fn single_link_projection_clamps() {
        let t = Topology::single_link();
        let region = ShrunkRegion::new(&t, 0.01, 0.1).unwrap();
        let p = region.project(&t, &MatchRates(vec![0.95])).unwrap();
        assert!((p.x.0[0] - 0.9).abs() < 1e-12);
        let p = region.project(&t, &MatchRates(vec![-3.0])).unwrap();
        assert!((p.x.0[0] - 0.11).abs() < 1e-12);
        let p = region.project(&t, &MatchRates(vec![0.3])).unwrap();
        assert_eq!(p.x.0[0], 0.3);
    }

    #[test]
    fn projection_rejects_bad_input() {
        let t = Topology::single_link();
        let region = ShrunkRegion::new(&t, 0.01, 0.1).unwrap();
        assert!(region.project(&t, &MatchRates(vec![f64::NAN])).is_err());
        assert!(region.project(&t, &MatchRates(vec![0.1, 0.2])).is_err());
    }

    #[test]
    fn projection_is_feasible_idempotent_and_satisfies_the_vi() {
        let t = Topology::three_by_three();
        let region = ShrunkRegion::new(&t, 0.01, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let y: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.5)).collect();
            let p = region.project(&t, &MatchRates(y.clone())).unwrap();
            assert!(region.contains(&t, &p.x));
            assert!(p.kkt_residual < 1e-9);
            let again = region.project(&t, &p.x).unwrap();
            for (a, b) in again.x.0.iter().zip(&p.x.0) {
                assert!((a - b).abs() < 1e-12);
            }
            for _ in 0..20 {
                let s: f64 = rng.random();
                let w: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.5)).collect();
                let wp = region.project(&t, &MatchRates(w)).unwrap().x.0;
                let witness: Vec<f64> = region
                    .center()
                    .iter()
                    .zip(&wp)
                    .map(|(c, v)| c + s * (v - c))
                    .collect();
                let vi: f64 = (0..7)
                    .map(|e| (y[e] - p.x.0[e]) * (witness[e] - p.x.0[e]))
                    .sum();
                assert!(vi <= 1e-7, "vi {vi}");
            }
        }
    }

    #[test]
    fn dykstra_warm_start_is_close() {
        let t = Topology::three_by_three();
        let region = ShrunkRegion::new(&t, 0.01, 0.05).unwrap();
        let y = vec![0.9, -0.2, 0.4, 0.7, 0.3, -0.1, 0.5];
        let d = region.polytope().dykstra(&t, &y, 1e-13);
        let exact = region.project(&t, &MatchRates(y)).unwrap().x.0;
        for (a, b) in d.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
