//! Demand and supply curves.
//!
//! A curve is a strictly monotone bijection between an arrival rate in
//! `[0, 1]` and a posted price in `[p_min, p_max]`. Demand curves decrease
//! (a higher customer price means fewer customers), supply curves increase
//! (a higher payout means more servers). Both directions of the map are
//! exact; out-of-range inputs are errors rather than silent clamps, so any
//! clamping happens visibly in policy code.
//!
//! Alongside the map each curve reports the regularity constants the
//! learning schedule needs: Lipschitz constants of the map and its inverse,
//! smoothness of both, and a lower bound on the inverse slope.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Demand,
    Supply,
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurveKind::Demand => f.write_str("demand"),
            CurveKind::Supply => f.write_str("supply"),
        }
    }
}

pub trait Curve: fmt::Debug + Send + Sync {
    fn kind(&self) -> CurveKind;
    fn p_min(&self) -> f64;
    fn p_max(&self) -> f64;

    fn price_of_rate(&self, rate: f64) -> Result<f64>;
    fn rate_of_price(&self, price: f64) -> Result<f64>;

    /// Derivative of the price with respect to the rate.
    fn price_slope(&self, rate: f64) -> f64;
    /// Second derivative of the price with respect to the rate.
    fn price_curvature(&self, rate: f64) -> f64;

    fn lipschitz_fwd(&self) -> f64;
    fn lipschitz_inv(&self) -> f64;
    fn smoothness_fwd(&self) -> f64;
    fn smoothness_inv(&self) -> f64;
    /// Lower bound on `|d rate / d price|` over the price range.
    fn min_inv_slope(&self) -> f64;

    /// `rate * price_of_rate(rate)`: revenue per slot for demand, cost per
    /// slot for supply.
    fn revenue_rate(&self, rate: f64) -> Result<f64> {
        Ok(rate * self.price_of_rate(rate)?)
    }

    /// d/dr of `revenue_rate`.
    fn marginal_revenue(&self, rate: f64) -> Result<f64> {
        Ok(self.price_of_rate(rate)? + rate * self.price_slope(rate))
    }

    /// d²/dr² of `revenue_rate`.
    fn marginal_revenue_slope(&self, rate: f64) -> f64 {
        2.0 * self.price_slope(rate) + rate * self.price_curvature(rate)
    }

    /// The price that drives the arrival rate to zero.
    fn rejecting_price(&self) -> f64 {
        match self.kind() {
            CurveKind::Demand => self.p_max(),
            CurveKind::Supply => self.p_min(),
        }
    }

    /// Clamp a price into `[p_min, p_max]`.
    fn clamp_price(&self, price: f64) -> f64 {
        price.clamp(self.p_min(), self.p_max())
    }
}

pub type CurveRef = Arc<dyn Curve>;

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "rate",
            value: rate,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

fn check_price(price: f64, lo: f64, hi: f64) -> Result<()> {
    if price >= lo && price <= hi {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "price",
            value: price,
            lo,
            hi,
        })
    }
}

/// `F(λ) = a − bλ` (demand) or `G(μ) = a + bμ` (supply), with `b > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCurve {
    kind: CurveKind,
    intercept: f64,
    slope: f64,
}

impl LinearCurve {
    pub fn new(kind: CurveKind, intercept: f64, slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope > 0.0) || !intercept.is_finite() {
            return Err(Error::Config(format!(
                "{kind} curve needs a finite intercept and a positive slope, got intercept {intercept}, slope {slope}"
            )));
        }
        Ok(Self {
            kind,
            intercept,
            slope,
        })
    }

    pub fn demand(intercept: f64, slope: f64) -> Result<Self> {
        Self::new(CurveKind::Demand, intercept, slope)
    }

    pub fn supply(intercept: f64, slope: f64) -> Result<Self> {
        Self::new(CurveKind::Supply, intercept, slope)
    }

    /// Build from a declared price range, which must coincide with the image
    /// of `[0, 1]` (the map is a bijection onto it).
    pub fn with_bounds(
        kind: CurveKind,
        intercept: f64,
        slope: f64,
        p_min: f64,
        p_max: f64,
    ) -> Result<Self> {
        let curve = Self::new(kind, intercept, slope)?;
        let tol = 1e-9 * (1.0 + p_max.abs().max(p_min.abs()));
        if (curve.p_min() - p_min).abs() > tol || (curve.p_max() - p_max).abs() > tol {
            return Err(Error::Config(format!(
                "{kind} curve with intercept {intercept} and slope {slope} maps [0,1] onto [{}, {}], \
                 but the declared bounds are [{p_min}, {p_max}]",
                curve.p_min(),
                curve.p_max()
            )));
        }
        Ok(curve)
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    fn signed_slope(&self) -> f64 {
        match self.kind {
            CurveKind::Demand => -self.slope,
            CurveKind::Supply => self.slope,
        }
    }
}

impl Curve for LinearCurve {
    fn kind(&self) -> CurveKind {
        self.kind
    }

    fn p_min(&self) -> f64 {
        match self.kind {
            CurveKind::Demand => self.intercept - self.slope,
            CurveKind::Supply => self.intercept,
        }
    }

    fn p_max(&self) -> f64 {
        match self.kind {
            CurveKind::Demand => self.intercept,
            CurveKind::Supply => self.intercept + self.slope,
        }
    }

    fn price_of_rate(&self, rate: f64) -> Result<f64> {
        check_rate(rate)?;
        Ok(self.intercept + self.signed_slope() * rate)
    }

    fn rate_of_price(&self, price: f64) -> Result<f64> {
        check_price(price, self.p_min(), self.p_max())?;
        let rate = (price - self.intercept) / self.signed_slope();
        // Rounding can push the boundary rates a hair outside [0, 1].
        Ok(rate.clamp(0.0, 1.0))
    }

    fn price_slope(&self, _rate: f64) -> f64 {
        self.signed_slope()
    }

    fn price_curvature(&self, _rate: f64) -> f64 {
        0.0
    }

    fn lipschitz_fwd(&self) -> f64 {
        self.slope
    }

    fn lipschitz_inv(&self) -> f64 {
        1.0 / self.slope
    }

    fn smoothness_fwd(&self) -> f64 {
        0.0
    }

    fn smoothness_inv(&self) -> f64 {
        0.0
    }

    fn min_inv_slope(&self) -> f64 {
        1.0 / self.slope
    }
}

/// A monotone piecewise-linear curve through a set of `(rate, price)` knots.
///
/// Used for curves estimated from data. The first knot must sit at rate 0
/// and the last at rate 1, and prices must be strictly monotone in the
/// direction the kind requires.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearCurve {
    kind: CurveKind,
    rates: Vec<f64>,
    prices: Vec<f64>,
}

impl PiecewiseLinearCurve {
    pub fn new(kind: CurveKind, knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("piecewise-linear curve needs at least two knots".into()));
        }
        let (rates, prices): (Vec<f64>, Vec<f64>) = knots.iter().copied().unzip();
        if rates[0] != 0.0 || *rates.last().unwrap() != 1.0 {
            return Err(Error::Config("piecewise-linear knots must span rates 0 to 1".into()));
        }
        for w in knots.windows(2) {
            let (r0, p0) = w[0];
            let (r1, p1) = w[1];
            let monotone = match kind {
                CurveKind::Demand => p1 < p0,
                CurveKind::Supply => p1 > p0,
            };
            if !(r1 > r0) || !monotone {
                return Err(Error::Config(format!(
                    "piecewise-linear {kind} knots must be strictly monotone, got ({r0}, {p0}) then ({r1}, {p1})"
                )));
            }
        }
        Ok(Self {
            kind,
            rates,
            prices,
        })
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rates.iter().copied().zip(self.prices.iter().copied())
    }

    fn segment_of_rate(&self, rate: f64) -> usize {
        let idx = self.rates.partition_point(|&r| r <= rate);
        idx.saturating_sub(1).min(self.rates.len() - 2)
    }

    fn segment_slope(&self, seg: usize) -> f64 {
        (self.prices[seg + 1] - self.prices[seg]) / (self.rates[seg + 1] - self.rates[seg])
    }

    fn max_abs_slope(&self) -> f64 {
        (0..self.rates.len() - 1)
            .map(|s| self.segment_slope(s).abs())
            .fold(0.0, f64::max)
    }

    fn min_abs_slope(&self) -> f64 {
        (0..self.rates.len() - 1)
            .map(|s| self.segment_slope(s).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

impl Curve for PiecewiseLinearCurve {
    fn kind(&self) -> CurveKind {
        self.kind
    }

    fn p_min(&self) -> f64 {
        match self.kind {
            CurveKind::Demand => *self.prices.last().unwrap(),
            CurveKind::Supply => self.prices[0],
        }
    }

    fn p_max(&self) -> f64 {
        match self.kind {
            CurveKind::Demand => self.prices[0],
            CurveKind::Supply => *self.prices.last().unwrap(),
        }
    }

    fn price_of_rate(&self, rate: f64) -> Result<f64> {
        check_rate(rate)?;
        let s = self.segment_of_rate(rate);
        Ok(self.prices[s] + self.segment_slope(s) * (rate - self.rates[s]))
    }

    fn rate_of_price(&self, price: f64) -> Result<f64> {
        check_price(price, self.p_min(), self.p_max())?;
        let n = self.prices.len();
        // Prices are monotone, so find the bracketing segment by direction.
        let s = match self.kind {
            CurveKind::Supply => self.prices.partition_point(|&p| p <= price),
            CurveKind::Demand => self.prices.partition_point(|&p| p >= price),
        }
        .saturating_sub(1)
        .min(n - 2);
        let rate = self.rates[s] + (price - self.prices[s]) / self.segment_slope(s);
        Ok(rate.clamp(0.0, 1.0))
    }

    fn price_slope(&self, rate: f64) -> f64 {
        self.segment_slope(self.segment_of_rate(rate.clamp(0.0, 1.0)))
    }

    fn price_curvature(&self, _rate: f64) -> f64 {
        0.0
    }

    fn lipschitz_fwd(&self) -> f64 {
        self.max_abs_slope()
    }

    fn lipschitz_inv(&self) -> f64 {
        1.0 / self.min_abs_slope()
    }

    fn smoothness_fwd(&self) -> f64 {
        f64::INFINITY
    }

    fn smoothness_inv(&self) -> f64 {
        f64::INFINITY
    }

    fn min_inv_slope(&self) -> f64 {
        1.0 / self.max_abs_slope()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demand() -> LinearCurve {
        LinearCurve::demand(2.0, 2.0).unwrap()
    }

    fn supply() -> LinearCurve {
        LinearCurve::supply(0.0, 2.0).unwrap()
    }

    fn grid() -> impl Iterator<Item = f64> {
        (0..=100).map(|k| k as f64 / 100.0)
    }

    #[test]
    fn price_of_rate_examples() {
        assert_eq!(demand().price_of_rate(0.25).unwrap(), 1.5);
        assert_eq!(demand().price_of_rate(0.0).unwrap(), 2.0);
        assert_eq!(supply().price_of_rate(0.25).unwrap(), 0.5);
    }

    #[test]
    fn rate_of_price_examples() {
        assert_eq!(demand().rate_of_price(1.5).unwrap(), 0.25);
        assert_eq!(demand().rate_of_price(2.0).unwrap(), 0.0);
        assert_eq!(supply().rate_of_price(2.0).unwrap(), 1.0);
    }

    #[test]
    fn revenue_rate_examples() {
        assert_eq!(demand().revenue_rate(0.25).unwrap(), 0.375);
        assert_eq!(demand().revenue_rate(0.0).unwrap(), 0.0);
        assert_eq!(supply().revenue_rate(0.0).unwrap(), 0.0);
        assert_eq!(supply().revenue_rate(0.25).unwrap(), 0.125);
    }

    #[test]
    fn out_of_range_is_an_error() {
        assert!(matches!(demand().price_of_rate(1.01), Err(Error::Domain { .. })));
        assert!(matches!(demand().price_of_rate(-0.01), Err(Error::Domain { .. })));
        assert!(matches!(demand().rate_of_price(2.5), Err(Error::Domain { .. })));
        assert!(matches!(supply().rate_of_price(-0.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn declared_bounds_must_match_the_image() {
        assert!(LinearCurve::with_bounds(CurveKind::Demand, 2.0, 2.0, 0.0, 2.0).is_ok());
        assert!(LinearCurve::with_bounds(CurveKind::Supply, 2.0, 2.0, 2.0, 4.0).is_ok());
        assert!(LinearCurve::with_bounds(CurveKind::Demand, 2.0, 2.0, 0.0, 3.0).is_err());
        assert!(LinearCurve::new(CurveKind::Demand, 2.0, 0.0).is_err());
        assert!(LinearCurve::new(CurveKind::Supply, 2.0, -1.0).is_err());
    }

    fn audit(curve: &dyn Curve) {
        let xs: Vec<f64> = grid().collect();
        for &x in &xs {
            let back = curve.rate_of_price(curve.price_of_rate(x).unwrap()).unwrap();
            assert!((back - x).abs() <= 1e-12, "round trip at {x}: {back}");
        }
        for w in xs.windows(2) {
            let (p0, p1) = (
                curve.price_of_rate(w[0]).unwrap(),
                curve.price_of_rate(w[1]).unwrap(),
            );
            match curve.kind() {
                CurveKind::Demand => assert!(p1 < p0),
                CurveKind::Supply => assert!(p1 > p0),
            }
            let fwd = (p1 - p0).abs() / (w[1] - w[0]);
            assert!(fwd <= curve.lipschitz_fwd() + 1e-9);
            let inv = (w[1] - w[0]) / (p1 - p0).abs();
            assert!(inv <= curve.lipschitz_inv() + 1e-9);
            assert!(inv >= curve.min_inv_slope() - 1e-9);
        }
        for w in xs.windows(3) {
            let r: Vec<f64> = w.iter().map(|&x| curve.revenue_rate(x).unwrap()).collect();
            let second = r[0] - 2.0 * r[1] + r[2];
            match curve.kind() {
                CurveKind::Demand => assert!(second <= 1e-12),
                CurveKind::Supply => assert!(second >= -1e-12),
            }
        }
    }

    #[test]
    fn linear_curves_pass_the_audit() {
        audit(&demand());
        audit(&supply());
        audit(&LinearCurve::demand(5.0, 3.0).unwrap());
        audit(&LinearCurve::supply(2.0, 2.0).unwrap());
    }

    #[test]
    fn linear_metadata() {
        let c = LinearCurve::demand(3.0, 4.0).unwrap();
        assert_eq!(c.lipschitz_fwd(), 4.0);
        assert_eq!(c.lipschitz_inv(), 0.25);
        assert_eq!(c.min_inv_slope(), 0.25);
        assert_eq!(c.smoothness_fwd(), 0.0);
        assert_eq!(c.p_min(), -1.0);
        assert_eq!(c.rejecting_price(), 3.0);
        assert_eq!(supply().rejecting_price(), 0.0);
    }

    #[test]
    fn marginal_revenue_matches_finite_differences() {
        for c in [demand(), supply()] {
            for x in [0.1, 0.3, 0.7] {
                let h = 1e-6;
                let fd = (c.revenue_rate(x + h).unwrap() - c.revenue_rate(x - h).unwrap()) / (2.0 * h);
                assert!((fd - c.marginal_revenue(x).unwrap()).abs() < 1e-8);
            }
        }
        assert_eq!(demand().marginal_revenue_slope(0.4), -4.0);
        assert_eq!(supply().marginal_revenue_slope(0.4), 4.0);
    }

    #[test]
    fn piecewise_curve_inverts_and_interpolates() {
        let c = PiecewiseLinearCurve::new(
            CurveKind::Demand,
            &[(0.0, 2.0), (0.4, 1.0), (1.0, 0.0)],
        )
        .unwrap();
        assert!((c.price_of_rate(0.2).unwrap() - 1.5).abs() < 1e-15);
        assert!((c.rate_of_price(0.5).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(c.p_max(), 2.0);
        assert_eq!(c.p_min(), 0.0);
        assert_eq!(c.lipschitz_fwd(), 2.5);
        for x in grid() {
            let back = c.rate_of_price(c.price_of_rate(x).unwrap()).unwrap();
            assert!((back - x).abs() <= 1e-12);
        }
        assert!(PiecewiseLinearCurve::new(CurveKind::Supply, &[(0.0, 1.0), (1.0, 0.5)]).is_err());
        assert!(PiecewiseLinearCurve::new(CurveKind::Supply, &[(0.1, 1.0), (1.0, 2.0)]).is_err());
    }
}
