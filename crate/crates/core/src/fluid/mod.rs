//! The fluid benchmark: compatibility topology, the static profit program
//! over per-edge match rates, its feasible polytopes, Euclidean projection
//! and a KKT-certified solver.

mod qp;
mod region;
mod solver;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curves::{CurveKind, CurveRef, LinearCurve};
use crate::error::{Error, Result};

pub use region::{
    a_min_conditions_hold, inner_radius, largest_valid_a_min, ConstraintId, Polytope, Projection,
    ShrunkRegion,
};
pub use solver::{solve_fluid, FluidSolution, InteriorReport};

/// Bipartite compatibility graph between customer and server types.
///
/// Indices are zero-based internally. `edges[e] = (i, j)` fixes the order
/// of every per-edge vector in the crate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    customers: usize,
    servers: usize,
    edges: Vec<(usize, usize)>,
    customer_edges: Vec<Vec<usize>>,
    server_edges: Vec<Vec<usize>>,
    edge_width: Vec<usize>,
}

impl Topology {
    pub fn new(customers: usize, servers: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if customers == 0 || servers == 0 {
            return Err(Error::Config("topology needs at least one customer and one server type".into()));
        }
        let mut seen = HashSet::new();
        let mut customer_edges = vec![Vec::new(); customers];
        let mut server_edges = vec![Vec::new(); servers];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= customers || j >= servers {
                return Err(Error::Config(format!(
                    "edge ({}, {}) references a type outside {customers} customers x {servers} servers",
                    i + 1,
                    j + 1
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Config(format!("duplicate edge ({}, {})", i + 1, j + 1)));
            }
            customer_edges[i].push(e);
            server_edges[j].push(e);
        }
        if let Some(i) = customer_edges.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("customer type {} has no compatible server", i + 1)));
        }
        if let Some(j) = server_edges.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("server type {} has no compatible customer", j + 1)));
        }
        let edge_width = edges
            .iter()
            .map(|&(i, j)| customer_edges[i].len().max(server_edges[j].len()))
            .collect();
        Ok(Self {
            customers,
            servers,
            edges,
            customer_edges,
            server_edges,
            edge_width,
        })
    }

    pub fn single_link() -> Self {
        Self::new(1, 1, vec![(0, 0)]).expect("valid topology")
    }

    /// Three customer and three server types joined by
    /// (1,1), (1,2), (1,3), (2,1), (2,2), (3,2), (3,3).
    pub fn three_by_three() -> Self {
        Self::new(
            3,
            3,
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 1), (2, 2)],
        )
        .expect("valid topology")
    }

    pub fn customers(&self) -> usize {
        self.customers
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Edge indices incident to customer type `i`.
    pub fn customer_edges(&self, i: usize) -> &[usize] {
        &self.customer_edges[i]
    }

    /// Edge indices incident to server type `j`.
    pub fn server_edges(&self, j: usize) -> &[usize] {
        &self.server_edges[j]
    }

    /// `max(|E_c,i|, |E_s,j|)` for edge `e = (i, j)`.
    pub fn edge_width(&self, e: usize) -> usize {
        self.edge_width[e]
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.customer_edges[i]
            .iter()
            .copied()
            .find(|&e| self.edges[e].1 == j)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.edges.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-type arrival rates implied by per-edge match rates.
    pub fn induced_rates(&self, x: &MatchRates) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(x.as_slice())?;
        Ok(self.induced_rates_unchecked(x.as_slice()))
    }

    pub(crate) fn induced_rates_unchecked(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lambda = self
            .customer_edges
            .iter()
            .map(|es| es.iter().map(|&e| x[e]).sum())
            .collect();
        let mu = self
            .server_edges
            .iter()
            .map(|es| es.iter().map(|&e| x[e]).sum())
            .collect();
        (lambda, mu)
    }
}

/// Per-edge match rates, ordered like [`Topology::edges`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRates(pub Vec<f64>);

impl MatchRates {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for MatchRates {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A topology together with one demand curve per customer type and one
/// supply curve per server type.
#[derive(Clone, Debug)]
pub struct Instance {
    pub topology: Topology,
    pub demand: Vec<CurveRef>,
    pub supply: Vec<CurveRef>,
}

impl Instance {
    pub fn new(topology: Topology, demand: Vec<CurveRef>, supply: Vec<CurveRef>) -> Result<Self> {
        if demand.len() != topology.customers() {
            return Err(Error::Config(format!(
                "{} demand curves for {} customer types",
                demand.len(),
                topology.customers()
            )));
        }
        if supply.len() != topology.servers() {
            return Err(Error::Config(format!(
                "{} supply curves for {} server types",
                supply.len(),
                topology.servers()
            )));
        }
        if let Some(i) = demand.iter().position(|c| c.kind() != CurveKind::Demand) {
            return Err(Error::Config(format!("curve for customer type {} is not a demand curve", i + 1)));
        }
        if let Some(j) = supply.iter().position(|c| c.kind() != CurveKind::Supply) {
            return Err(Error::Config(format!("curve for server type {} is not a supply curve", j + 1)));
        }
        Ok(Self {
            topology,
            demand,
            supply,
        })
    }

    /// One link, `F(λ) = 2(1 − λ)`, `G(μ) = 2μ`.
    pub fn single_link() -> Self {
        Self::linear(Topology::single_link(), (2.0, 2.0), (0.0, 2.0))
    }

    /// The 3x3 graph of [`Topology::three_by_three`] with the same linear
    /// curves on every type.
    pub fn three_by_three() -> Self {
        Self::linear(Topology::three_by_three(), (2.0, 2.0), (0.0, 2.0))
    }

    /// Every customer gets `a − bλ`, every server `c + dμ`.
    pub fn linear(topology: Topology, demand: (f64, f64), supply: (f64, f64)) -> Self {
        let d: CurveRef = Arc::new(LinearCurve::demand(demand.0, demand.1).expect("valid demand"));
        let s: CurveRef = Arc::new(LinearCurve::supply(supply.0, supply.1).expect("valid supply"));
        let demand = vec![d; topology.customers()];
        let supply = vec![s; topology.servers()];
        Self::new(topology, demand, supply).expect("consistent instance")
    }

    /// Profit per slot at the given per-type rates.
    pub fn profit_at_rates(&self, lambda: &[f64], mu: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (c, &l) in self.demand.iter().zip(lambda) {
            total += c.revenue_rate(l)?;
        }
        for (c, &m) in self.supply.iter().zip(mu) {
            total -= c.revenue_rate(m)?;
        }
        Ok(total)
    }

    /// Gradient of the fluid objective with respect to per-edge rates.
    pub fn objective_gradient(&self, x: &MatchRates) -> Result<Vec<f64>> {
        let (lambda, mu) = self.topology.induced_rates(x)?;
        let mr_c = lambda
            .iter()
            .zip(&self.demand)
            .map(|(&l, c)| c.marginal_revenue(l))
            .collect::<Result<Vec<_>>>()?;
        let mr_s = mu
            .iter()
            .zip(&self.supply)
            .map(|(&m, c)| c.marginal_revenue(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(self
            .topology
            .edges()
            .iter()
            .map(|&(i, j)| mr_c[i] - mr_s[j])
            .collect())
    }
}

/// `f(x) = Σ_i λ_i F_i(λ_i) − Σ_j μ_j G_j(μ_j)` with λ, μ induced by `x`.
pub fn fluid_objective(instance: &Instance, x: &MatchRates) -> Result<f64> {
    let (lambda, mu) = instance.topology.induced_rates(x)?;
    instance.profit_at_rates(&lambda, &mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topology_validation() {
        assert!(Topology::new(1, 1, vec![(0, 0), (0, 0)]).is_err());
        assert!(Topology::new(2, 1, vec![(0, 0)]).is_err());
        assert!(Topology::new(1, 2, vec![(0, 0)]).is_err());
        assert!(Topology::new(1, 1, vec![(0, 1)]).is_err());
        assert!(Topology::new(0, 1, vec![]).is_err());
        let t = Topology::three_by_three();
        assert_eq!(t.edge_count(), 7);
        assert_eq!(t.customer_edges(0), &[0, 1, 2]);
        assert_eq!(t.server_edges(1), &[1, 4, 5]);
        // N_{1,1} = max(3, 2), N_{3,3} = max(2, 2)
        assert_eq!(t.edge_width(0), 3);
        assert_eq!(t.edge_width(6), 2);
        assert_eq!(t.edge_index(2, 2), Some(6));
        assert_eq!(t.edge_index(2, 0), None);
    }

    #[test]
    fn induced_rates_examples() {
        let t = Topology::single_link();
        assert_eq!(
            t.induced_rates(&MatchRates(vec![0.25])).unwrap(),
            (vec![0.25], vec![0.25])
        );
        assert_eq!(
            t.induced_rates(&MatchRates::zeros(1)).unwrap(),
            (vec![0.0], vec![0.0])
        );

        // x_{i,j} = 1 / (2 |E_c,i|): hand sums per server.
        let t = Topology::three_by_three();
        let x: Vec<f64> = t
            .edges()
            .iter()
            .map(|&(i, _)| 1.0 / (2.0 * t.customer_edges(i).len() as f64))
            .collect();
        let (lambda, mu) = t.induced_rates(&MatchRates(x)).unwrap();
        for l in &lambda {
            assert!((l - 0.5).abs() < 1e-15);
        }
        let expect_mu = [1.0 / 6.0 + 0.25, 1.0 / 6.0 + 0.25 + 0.25, 1.0 / 6.0 + 0.25];
        for (m, e) in mu.iter().zip(expect_mu) {
            assert!((m - e).abs() < 1e-15);
        }
        assert!(matches!(
            t.induced_rates(&MatchRates(vec![0.1; 3])),
            Err(Error::Dimension { expected: 7, got: 3 })
        ));
    }

    #[test]
    fn objective_examples() {
        let single = Instance::single_link();
        assert_eq!(fluid_objective(&single, &MatchRates(vec![0.25])).unwrap(), 0.25);
        assert_eq!(fluid_objective(&single, &MatchRates(vec![0.0])).unwrap(), 0.0);
        assert!(fluid_objective(&single, &MatchRates(vec![1.5])).is_err());

        // Marginals all 0.25 on the 3x3 graph, e.g. x = 0.25 on (1,1), (2,2), (3,3).
        let multi = Instance::three_by_three();
        let mut x = vec![0.0; 7];
        x[0] = 0.25;
        x[4] = 0.25;
        x[6] = 0.25;
        let f = fluid_objective(&multi, &MatchRates(x)).unwrap();
        assert!((f - 3.0 * (0.375 - 0.125)).abs() < 1e-15);
    }

    #[test]
    fn instance_rejects_wrong_kinds() {
        let t = Topology::single_link();
        let d: CurveRef = Arc::new(LinearCurve::demand(2.0, 2.0).unwrap());
        assert!(Instance::new(t.clone(), vec![d.clone()], vec![d.clone()]).is_err());
        assert!(Instance::new(t, vec![], vec![d]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let inst = Instance::three_by_three();
        let x = MatchRates(vec![0.1, 0.05, 0.2, 0.15, 0.1, 0.2, 0.12]);
        let g = inst.objective_gradient(&x).unwrap();
        for e in 0..7 {
            let h = 1e-6;
            let mut xp = x.clone();
            xp.0[e] += h;
            let mut xm = x.clone();
            xm.0[e] -= h;
            let fd = (fluid_objective(&inst, &xp).unwrap() - fluid_objective(&inst, &xm).unwrap()) / (2.0 * h);
            assert!((fd - g[e]).abs() < 1e-8);
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn induced_rates_are_linear(
            x in proptest::collection::vec(-1.0f64..1.0, 7),
            y in proptest::collection::vec(-1.0f64..1.0, 7),
            a in -4i32..4,
            b in -4i32..4,
        ) {
            // Integer coefficients and dyadic inputs keep the identity exact.
            let q = |v: f64| (v * 1024.0).round() / 1024.0;
            let x: Vec<f64> = x.into_iter().map(q).collect();
            let y: Vec<f64> = y.into_iter().map(q).collect();
            let (a, b) = (a as f64, b as f64);
            let t = Topology::three_by_three();
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, r)| a * p + b * r).collect();
            let (lx, mx) = t.induced_rates(&MatchRates(x)).unwrap();
            let (ly, my) = t.induced_rates(&MatchRates(y)).unwrap();
            let (lz, mz) = t.induced_rates(&MatchRates(z)).unwrap();
            for k in 0..3 {
                prop_assert_eq!(lz[k], a * lx[k] + b * ly[k]);
                prop_assert_eq!(mz[k], a * mx[k] + b * my[k]);
            }
            let sl: f64 = lz.iter().sum();
            let sm: f64 = mz.iter().sum();
            prop_assert_eq!(sl, sm);
        }
    }
}
