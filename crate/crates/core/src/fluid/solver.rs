//! KKT-certified solver for the fluid program
//! `max f(x)` over `x ≥ 0`, `λ_i(x), μ_j(x) ∈ [0, 1]`.

use nalgebra::DMatrix;
use serde::Serialize;

use super::qp::{self, ConvexObjective};
use super::region::{ConstraintId, Polytope};
use super::{fluid_objective, Instance, MatchRates};
use crate::error::{Error, Result};

const KKT_TOLERANCE: f64 = 1e-8;
const MAX_ITER: usize = 10_000;

/// How the optimum sits relative to the interior of the `a_min` domain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InteriorReport {
    pub a_min: f64,
    /// Every edge rate strictly positive.
    pub edges_positive: bool,
    /// Every λ_i and μ_j inside `[a_min, 1)`.
    pub rates_inside: bool,
    pub min_edge_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
}

impl InteriorReport {
    pub fn is_interior(&self) -> bool {
        self.edges_positive && self.rates_inside
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FluidSolution {
    pub x_star: MatchRates,
    pub lambda_star: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub f_star: f64,
    pub customer_prices: Vec<f64>,
    pub server_prices: Vec<f64>,
    /// Balance multipliers: `κ_c,i = MR_i(λ_i) − γ_c,i`, `κ_s,j = MR_j(μ_j) + γ_s,j`.
    pub kappa_c: Vec<f64>,
    pub kappa_s: Vec<f64>,
    /// Multipliers of `x_{i,j} ≥ 0`; stationarity reads `ξ = κ_s,j − κ_c,i`.
    pub xi: Vec<f64>,
    /// Multipliers of `λ_i ≤ 1` and `μ_j ≤ 1`.
    pub gamma_c: Vec<f64>,
    pub gamma_s: Vec<f64>,
    /// Max of the stationarity, feasibility, dual sign and complementary
    /// slackness residuals.
    pub kkt_residual: f64,
    pub interior: InteriorReport,
}

struct NegatedProfit<'a>(&'a Instance);

impl NegatedProfit<'_> {
    fn rates(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (l, m) = self.0.topology.induced_rates_unchecked(x);
        let clamp = |v: Vec<f64>| v.into_iter().map(|r| r.clamp(0.0, 1.0)).collect::<Vec<_>>();
        (clamp(l), clamp(m))
    }

    fn marginals(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (l, m) = self.rates(x);
        let mr = |curves: &[crate::curves::CurveRef], r: &[f64]| {
            curves
                .iter()
                .zip(r)
                .map(|(c, &v)| c.marginal_revenue(v).expect("rate clamped into [0, 1]"))
                .collect::<Vec<_>>()
        };
        (mr(&self.0.demand, &l), mr(&self.0.supply, &m))
    }
}

impl ConvexObjective for NegatedProfit<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let (l, m) = self.rates(x);
        -self.0.profit_at_rates(&l, &m).expect("rates clamped into [0, 1]")
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (mc, ms) = self.marginals(x);
        self.0
            .topology
            .edges()
            .iter()
            .map(|&(i, j)| ms[j] - mc[i])
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let (l, m) = self.rates(x);
        let dc: Vec<f64> = self
            .0
            .demand
            .iter()
            .zip(&l)
            .map(|(c, &r)| c.marginal_revenue_slope(r))
            .collect();
        let ds: Vec<f64> = self
            .0
            .supply
            .iter()
            .zip(&m)
            .map(|(c, &r)| c.marginal_revenue_slope(r))
            .collect();
        let edges = self.0.topology.edges();
        DMatrix::from_fn(edges.len(), edges.len(), |a, b| {
            let (ia, ja) = edges[a];
            let (ib, jb) = edges[b];
            let mut h = 0.0;
            if ia == ib {
                h -= dc[ia];
            }
            if ja == jb {
                h += ds[ja];
            }
            h
        })
    }

    fn is_quadratic(&self) -> bool {
        let grid = [0.0, 0.5, 1.0];
        self.0
            .demand
            .iter()
            .chain(&self.0.supply)
            .all(|c| grid.iter().all(|&r| c.price_curvature(r) == 0.0))
    }
}

/// Solve the fluid program. `a_min` only feeds the interior report: the
/// optimum is always taken over the full domain `λ, μ ∈ [0, 1]`.
pub fn solve_fluid(instance: &Instance, a_min: f64) -> Result<FluidSolution> {
    let topo = &instance.topology;
    let polytope = Polytope::fluid(topo);
    let (ids, cons) = polytope.halfspaces(topo);
    let objective = NegatedProfit(instance);
    let start = polytope.interior().to_vec();
    let sol = qp::minimize(&objective, &cons, start, MAX_ITER).map_err(|fail| Error::Numerical {
        routine: "fluid solver",
        residual: fail.residual,
        iterations: fail.iterations,
        best: fail.best,
    })?;

    // Snap round-off so the reported point is exactly feasible.
    let x: Vec<f64> = sol.x.iter().map(|&v| v.max(0.0)).collect();
    let (lambda, mu) = topo.induced_rates_unchecked(&x);
    let x_star = MatchRates(x);
    let f_star = fluid_objective(instance, &x_star)?;

    let mut xi = vec![0.0; topo.edge_count()];
    let mut gamma_c = vec![0.0; topo.customers()];
    let mut gamma_s = vec![0.0; topo.servers()];
    let mut complementarity: f64 = 0.0;
    for ((id, c), &nu) in ids.iter().zip(&cons).zip(&sol.multipliers) {
        complementarity = complementarity.max((nu * c.slack(x_star.as_slice())).abs());
        match *id {
            ConstraintId::EdgeLower(e) => xi[e] = nu,
            ConstraintId::CustomerUpper(i) => gamma_c[i] = nu,
            ConstraintId::ServerUpper(j) => gamma_s[j] = nu,
            // Implied by the edge bounds and never generated for this polytope.
            ConstraintId::CustomerLower(_) | ConstraintId::ServerLower(_) => {}
        }
    }
    let (mc, ms) = objective.marginals(x_star.as_slice());
    let kappa_c: Vec<f64> = mc.iter().zip(&gamma_c).map(|(m, g)| m - g).collect();
    let kappa_s: Vec<f64> = ms.iter().zip(&gamma_s).map(|(m, g)| m + g).collect();
    let stationarity = topo
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| (xi[e] - (kappa_s[j] - kappa_c[i])).abs())
        .fold(0.0, f64::max);
    let kkt_residual = stationarity
        .max(complementarity)
        .max(polytope.violation(topo, x_star.as_slice()));
    if kkt_residual > KKT_TOLERANCE {
        return Err(Error::Numerical {
            routine: "fluid solver",
            residual: kkt_residual,
            iterations: sol.iterations,
            best: x_star.0,
        });
    }

    let customer_prices = instance
        .demand
        .iter()
        .zip(&lambda)
        .map(|(c, &l)| c.price_of_rate(l.min(1.0)))
        .collect::<Result<Vec<_>>>()?;
    let server_prices = instance
        .supply
        .iter()
        .zip(&mu)
        .map(|(c, &m)| c.price_of_rate(m.min(1.0)))
        .collect::<Result<Vec<_>>>()?;

    let min_edge_rate = x_star.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let all_rates = lambda.iter().chain(&mu);
    let min_rate = all_rates.clone().copied().fold(f64::INFINITY, f64::min);
    let max_rate = all_rates.copied().fold(f64::NEG_INFINITY, f64::max);
    let interior = InteriorReport {
        a_min,
        edges_positive: min_edge_rate > 1e-9,
        rates_inside: min_rate >= a_min && max_rate < 1.0 - 1e-9,
        min_edge_rate,
        min_rate,
        max_rate,
    };

    Ok(FluidSolution {
        x_star,
        lambda_star: lambda,
        mu_star: mu,
        f_star,
        customer_prices,
        server_prices,
        kappa_c,
        kappa_s,
        xi,
        gamma_c,
        gamma_s,
        kkt_residual,
        interior,
    })
}
