//! Primal active-set minimization of a smooth convex function over a small
//! polyhedron `{x : a_k · x ≤ b_k}`.
//!
//! Each iteration solves the equality-constrained Newton subproblem on the
//! current working set through an SVD least-squares solve of the KKT
//! matrix, so singular Hessians and tiny systems are handled uniformly. For
//! quadratic objectives the method terminates finitely with exact
//! multipliers.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub(crate) struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl Halfspace {
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.offset - dot(&self.normal, x)
    }
}

pub(crate) trait ConvexObjective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
    /// True when the Hessian is constant, so full Newton steps are exact.
    fn is_quadratic(&self) -> bool;
}

#[derive(Clone, Debug)]
pub(crate) struct ActiveSetSolution {
    pub x: Vec<f64>,
    /// One multiplier per constraint, zero off the working set.
    pub multipliers: Vec<f64>,
    /// `‖∇q(x) + Σ ν_k a_k‖_∞`.
    pub stationarity: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct ActiveSetFailure {
    pub best: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Orthonormal basis of the span of the working-set normals, used to keep
/// the working set linearly independent.
fn extends_span(basis: &[Vec<f64>], a: &[f64]) -> Option<Vec<f64>> {
    let mut r = a.to_vec();
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, &r);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
    }
    let norm = dot(&r, &r).sqrt();
    if norm > 1e-9 * dot(a, a).sqrt().max(1e-300) {
        r.iter_mut().for_each(|v| *v /= norm);
        Some(r)
    } else {
        None
    }
}

fn basis_of(cons: &[Halfspace], working: &[usize]) -> Vec<Vec<f64>> {
    let mut basis = Vec::new();
    for &k in working {
        if let Some(q) = extends_span(&basis, &cons[k].normal) {
            basis.push(q);
        }
    }
    basis
}

/// Newton step restricted to the null space of the working-set normals:
/// minimize `½ pᵀHp + gᵀp` subject to `Q p = 0`, where the rows of `Q` are
/// an orthonormal basis of the working normals. Returns `None` when the
/// quadratic model is unbounded along the face.
fn newton_step(h: &DMatrix<f64>, g: &[f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = g.len();
    let mut proj = DMatrix::<f64>::identity(n, n);
    for q in basis {
        for r in 0..n {
            for c in 0..n {
                proj[(r, c)] -= q[r] * q[c];
            }
        }
    }
    let reduced = &proj * h * &proj;
    let rhs = -(&proj * DVector::from_column_slice(g));
    let scale = reduced.amax().max(1e-300);
    let v = reduced.clone().svd(true, true).solve(&rhs, 1e-12 * scale).ok()?;
    let p = &proj * v;
    let resid = (&reduced * &p - &rhs).amax();
    if resid > 1e-10 * (1.0 + inf_norm(g)) {
        return None;
    }
    Some(p.iter().copied().collect())
}

/// Least-squares multipliers for `Aᵀν = −g` on the working set.
fn working_multipliers(g: &[f64], cons: &[Halfspace], working: &[usize]) -> Vec<f64> {
    let n = g.len();
    let m = working.len();
    if m == 0 {
        return Vec::new();
    }
    let at = DMatrix::from_fn(n, m, |r, c| cons[working[c]].normal[r]);
    let rhs = DVector::from_iterator(n, g.iter().map(|v| -v));
    at.svd(true, true)
        .solve(&rhs, 1e-12)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; m])
}

fn stationarity(g: &[f64], cons: &[Halfspace], multipliers: &[f64]) -> f64 {
    let mut r = g.to_vec();
    for (c, &nu) in cons.iter().zip(multipliers) {
        if nu != 0.0 {
            r.iter_mut().zip(&c.normal).for_each(|(ri, a)| *ri += nu * a);
        }
    }
    inf_norm(&r)
}

pub(crate) fn minimize<O: ConvexObjective>(
    obj: &O,
    cons: &[Halfspace],
    x0: Vec<f64>,
    max_iter: usize,
) -> Result<ActiveSetSolution, ActiveSetFailure> {
    let mut x = x0;
    let scale = 1.0 + inf_norm(&x);
    let mut working: Vec<usize> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (k, c) in cons.iter().enumerate() {
        if c.slack(&x) <= 1e-12 * scale {
            if let Some(q) = extends_span(&basis, &c.normal) {
                basis.push(q);
                working.push(k);
            }
        }
    }

    let mut last_residual = f64::INFINITY;
    for iter in 0..max_iter {
        let g = obj.gradient(&x);
        let h = obj.hessian(&x);
        let step = newton_step(&h, &g, &basis);
        let p = match &step {
            Some(p) => p.clone(),
            None => {
                // Unbounded along the face: fall back to projected steepest descent.
                let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
                for q in &basis {
                    let c = dot(q, &d);
                    d.iter_mut().zip(q).for_each(|(di, qi)| *di -= c * qi);
                }
                d
            }
        };

        let mut alpha = if step.is_some() { 1.0 } else { f64::INFINITY };
        let mut blocking = None;
        for (k, c) in cons.iter().enumerate() {
            if working.contains(&k) {
                continue;
            }
            let ap = dot(&c.normal, &p);
            if ap > 1e-15 * dot(&c.normal, &c.normal).sqrt() * inf_norm(&p) {
                let a = (c.slack(&x) / ap).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some(k);
                }
            }
        }
        // A step that is zero, or one that is blocked immediately by a
        // constraint already in the span of the working set, is round-off:
        // the iterate is a minimizer on its face.
        let stalled = alpha <= 0.0
            && blocking.is_some_and(|k| extends_span(&basis, &cons[k].normal).is_none());
        if basis.len() == x.len() || inf_norm(&p) <= 1e-14 * scale || stalled {
            let nu = working_multipliers(&g, cons, &working);
            let (pos, min_nu) = nu
                .iter()
                .copied()
                .enumerate()
                .fold((usize::MAX, 0.0), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
            if pos == usize::MAX || min_nu >= -1e-12 * (1.0 + inf_norm(&g)) {
                let mut multipliers = vec![0.0; cons.len()];
                for (&k, &v) in working.iter().zip(&nu) {
                    multipliers[k] = v.max(0.0);
                }
                let residual = stationarity(&g, cons, &multipliers);
                return Ok(ActiveSetSolution {
                    x,
                    multipliers,
                    stationarity: residual,
                    iterations: iter,
                });
            }
            last_residual = -min_nu;
            working.remove(pos);
            basis = basis_of(cons, &working);
            continue;
        }

        if !alpha.is_finite() {
            return Err(ActiveSetFailure {
                best: x,
                residual: inf_norm(&g),
                iterations: iter,
            });
        }

        if !obj.is_quadratic() || step.is_none() {
            let f0 = obj.value(&x);
            let mut t = alpha;
            let mut shrunk = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(&p).map(|(xi, pi)| xi + t * pi).collect();
                if obj.value(&trial) <= f0 + 1e-15 * f0.abs().max(1.0) {
                    break;
                }
                t *= 0.5;
                shrunk = true;
            }
            if shrunk {
                blocking = None;
            }
            alpha = t;
        }
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        if let Some(k) = blocking {
            if let Some(q) = extends_span(&basis, &cons[k].normal) {
                basis.push(q);
                working.push(k);
            }
        }
        last_residual = inf_norm(&p);
    }
    Err(ActiveSetFailure {
        best: x,
        residual: last_residual,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dist(Vec<f64>);

    impl ConvexObjective for Dist {
        fn value(&self, x: &[f64]) -> f64 {
            0.5 * x.iter().zip(&self.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        }
        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.0).map(|(a, b)| a - b).collect()
        }
        fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
            DMatrix::identity(x.len(), x.len())
        }
        fn is_quadratic(&self) -> bool {
            true
        }
    }

    fn hs(normal: &[f64], offset: f64) -> Halfspace {
        Halfspace {
            normal: normal.to_vec(),
            offset,
        }
    }

    #[test]
    fn projects_onto_simplex_corner() {
        // x ≥ 0, x1 + x2 ≤ 1; project (2, 2) → (0.5, 0.5).
        let cons = vec![hs(&[-1.0, 0.0], 0.0), hs(&[0.0, -1.0], 0.0), hs(&[1.0, 1.0], 1.0)];
        let sol = minimize(&Dist(vec![2.0, 2.0]), &cons, vec![0.0, 0.0], 100).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-14 && (sol.x[1] - 0.5).abs() < 1e-14);
        assert!((sol.multipliers[2] - 1.5).abs() < 1e-12);
        assert!(sol.stationarity < 1e-12);

        // (3, -1) → (1, 0), both the sum and x2 ≥ 0 active.
        let sol = minimize(&Dist(vec![3.0, -1.0]), &cons, vec![0.2, 0.2], 100).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14 && sol.x[1].abs() < 1e-14);
        assert!(sol.multipliers.iter().all(|&m| m >= 0.0));
    }

    #[test]
    fn redundant_constraints_do_not_break_the_working_set() {
        // Duplicate rows describing the same face.
        let cons = vec![hs(&[1.0, 0.0], 1.0), hs(&[2.0, 0.0], 2.0), hs(&[0.0, 1.0], 1.0)];
        let sol = minimize(&Dist(vec![3.0, 3.0]), &cons, vec![1.0, 1.0], 100).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-14 && (sol.x[1] - 1.0).abs() < 1e-14);
        assert!(sol.stationarity < 1e-12);
    }
}
