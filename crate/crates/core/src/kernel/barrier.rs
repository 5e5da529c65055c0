//! Log-barrier interior method with damped Newton centering for smooth
//! convex problems `min f0(x) s.t. f_i(x) <= 0`.

use log::trace;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Sparse gradient entries; repeated indices are summed.
pub type SparseGrad = Vec<(usize, f64)>;
/// Sparse Hessian entries `(row, col, value)`; both triangles must be
/// supplied and repeated positions are summed.
pub type SparseHess = Vec<(usize, usize, f64)>;

pub trait SmoothConvex {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Objective value. When `deriv` is given, the gradient and Hessian are
    /// added into the buffers.
    fn objective(
        &self,
        x: &DVector<f64>,
        deriv: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
    ) -> f64;
    /// All constraint values.
    fn constraints(&self, x: &DVector<f64>, out: &mut [f64]);
    /// Gradient and Hessian of constraint `i`, appended to the buffers.
    fn constraint_derivatives(
        &self,
        x: &DVector<f64>,
        i: usize,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    );
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    /// Relative duality-gap target `m / t <= tol (1 + |f0|)`.
    pub tol: f64,
    /// Barrier parameter growth per outer stage.
    pub growth: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            growth: 10.0,
            max_newton: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierStatus {
    Optimal,
    IterationLimit,
    /// The start point is not strictly feasible.
    InfeasibleStart,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct BarrierSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: BarrierStatus,
    pub newton_steps: usize,
    /// Final duality-gap bound `m / t`.
    pub gap: f64,
    /// `|grad f0 + sum lambda_i grad f_i|_inf / (1 + |grad f0|_inf)` with the
    /// barrier multipliers `lambda_i = -1 / (t f_i)`.
    pub stationarity: f64,
    /// Largest constraint value at `x`.
    pub max_constraint: f64,
}

struct Workspace {
    cons: Vec<f64>,
    grad: SparseGrad,
    hess: SparseHess,
}

fn strictly_feasible(p: &impl SmoothConvex, x: &DVector<f64>, ws: &mut Workspace) -> bool {
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    p.constraints(x, &mut ws.cons);
    ws.cons.iter().all(|&f| f < 0.0)
}

fn barrier_value(p: &impl SmoothConvex, x: &DVector<f64>, t: f64, ws: &mut Workspace) -> f64 {
    if !strictly_feasible(p, x, ws) {
        return f64::INFINITY;
    }
    t * p.objective(x, None) - ws.cons.iter().map(|&f| (-f).ln()).sum::<f64>()
}

/// Gradient and Hessian of `t f0 - sum log(-f_i)`, plus the gradient of `f0`
/// alone. Assumes `ws.cons` holds the constraint values at `x`.
fn barrier_derivatives(
    p: &impl SmoothConvex,
    x: &DVector<f64>,
    t: f64,
    ws: &mut Workspace,
) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let n = p.dim();
    let mut g0 = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    p.objective(x, Some((&mut g0, &mut h)));
    h *= t;
    let mut g = &g0 * t;
    for i in 0..p.num_constraints() {
        let f = ws.cons[i];
        ws.grad.clear();
        ws.hess.clear();
        p.constraint_derivatives(x, i, &mut ws.grad, &mut ws.hess);
        let inv = -1.0 / f;
        for &(a, ga) in &ws.grad {
            g[a] += inv * ga;
            for &(b, gb) in &ws.grad {
                h[(a, b)] += inv * inv * ga * gb;
            }
        }
        for &(a, b, v) in &ws.hess {
            h[(a, b)] += inv * v;
        }
    }
    (g, h, g0)
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let scale = h
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut shift = 0.0;
    for _ in 0..20 {
        let mut hs = h.clone();
        if shift > 0.0 {
            for i in 0..hs.nrows() {
                hs[(i, i)] += shift;
            }
        }
        if let Some(ch) = Cholesky::new(hs) {
            let dx = ch.solve(&(-g));
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        shift = if shift == 0.0 {
            1e-12 * scale
        } else {
            shift * 100.0
        };
    }
    None
}

/// Minimizes `p` from the strictly feasible point `x0`.
pub fn barrier_solve(
    p: &impl SmoothConvex,
    x0: DVector<f64>,
    opts: &BarrierOptions,
) -> BarrierSolution {
    let m = p.num_constraints();
    let mut ws = Workspace {
        cons: vec![0.0; m],
        grad: Vec::new(),
        hess: Vec::new(),
    };
    let mut x = x0;
    let finish = |x: DVector<f64>, status, steps, gap, stationarity, ws: &mut Workspace| {
        p.constraints(&x, &mut ws.cons);
        let max_constraint = ws.cons.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        BarrierSolution {
            objective: p.objective(&x, None),
            x,
            status,
            newton_steps: steps,
            gap,
            stationarity,
            max_constraint,
        }
    };
    if !strictly_feasible(p, &x, &mut ws) {
        return finish(
            x,
            BarrierStatus::InfeasibleStart,
            0,
            f64::INFINITY,
            f64::INFINITY,
            &mut ws,
        );
    }
    let mut t = (m.max(1) as f64) / (1.0 + p.objective(&x, None).abs());
    let mut steps = 0;
    let mut stationarity = f64::INFINITY;
    loop {
        // Centering.
        loop {
            if steps >= opts.max_newton {
                let gap = m as f64 / t;
                return finish(
                    x,
                    BarrierStatus::IterationLimit,
                    steps,
                    gap,
                    stationarity,
                    &mut ws,
                );
            }
            strictly_feasible(p, &x, &mut ws);
            let (g, h, g0) = barrier_derivatives(p, &x, t, &mut ws);
            stationarity = g.amax() / t / (1.0 + g0.amax());
            let Some(dx) = newton_direction(&g, &h) else {
                let gap = m as f64 / t;
                return finish(
                    x,
                    BarrierStatus::NumericalFailure,
                    steps,
                    gap,
                    stationarity,
                    &mut ws,
                );
            };
            let decrement = -g.dot(&dx);
            steps += 1;
            if decrement <= 1e-10 {
                break;
            }
            let mut s = 1.0;
            while s > 1e-16 && !strictly_feasible(p, &(&x + &dx * s), &mut ws) {
                s *= 0.5;
            }
            if decrement > 0.05 {
                let base = barrier_value(p, &x, t, &mut ws);
                while s > 1e-16
                    && barrier_value(p, &(&x + &dx * s), t, &mut ws) > base - 0.25 * s * decrement
                {
                    s *= 0.5;
                }
            }
            if s <= 1e-16 {
                break;
            }
            x += &dx * s;
            if s == 1.0 && decrement < 1e-8 {
                break;
            }
        }
        let gap = m as f64 / t;
        trace!("barrier stage t = {t:.3e}, gap {gap:.3e}, {steps} Newton steps");
        if gap <= opts.tol * (1.0 + p.objective(&x, None).abs()) {
            return finish(x, BarrierStatus::Optimal, steps, gap, stationarity, &mut ws);
        }
        t *= opts.growth;
    }
}

/// `min s s.t. f_i(x) <= s, s >= -1` over `(x, s)`.
struct PhaseOne<'a, P> {
    inner: &'a P,
}

impl<P: SmoothConvex> SmoothConvex for PhaseOne<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn num_constraints(&self) -> usize {
        self.inner.num_constraints() + 1
    }

    fn objective(
        &self,
        x: &DVector<f64>,
        deriv: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
    ) -> f64 {
        let n = self.inner.dim();
        if let Some((g, _)) = deriv {
            g[n] += 1.0;
        }
        x[n]
    }

    fn constraints(&self, x: &DVector<f64>, out: &mut [f64]) {
        let n = self.inner.dim();
        let m = self.inner.num_constraints();
        let head = x.rows(0, n).into_owned();
        self.inner.constraints(&head, &mut out[..m]);
        for v in &mut out[..m] {
            *v -= x[n];
        }
        out[m] = -1.0 - x[n];
    }

    fn constraint_derivatives(
        &self,
        x: &DVector<f64>,
        i: usize,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    ) {
        let n = self.inner.dim();
        if i < self.inner.num_constraints() {
            let head = x.rows(0, n).into_owned();
            self.inner.constraint_derivatives(&head, i, grad, hess);
        }
        grad.push((n, -1.0));
    }
}

/// Strictly feasible point of `p`, found by minimizing the largest
/// constraint value from `x0`. `None` when the minimum is not negative.
pub fn phase_one(
    p: &impl SmoothConvex,
    x0: DVector<f64>,
    opts: &BarrierOptions,
) -> Option<DVector<f64>> {
    let m = p.num_constraints();
    let mut vals = vec![0.0; m];
    p.constraints(&x0, &mut vals);
    if vals.iter().any(|v| v.is_nan()) {
        return None;
    }
    let worst = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if worst < 0.0 {
        return Some(x0);
    }
    let n = p.dim();
    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(&x0);
    start[n] = worst + 1.0;
    let sol = barrier_solve(&PhaseOne { inner: p }, start, opts);
    (sol.x[n] < 0.0).then(|| sol.x.rows(0, n).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `min (x - a)^2 + (y - b)^2` inside the unit disc.
    struct Disc {
        a: f64,
        b: f64,
    }

    impl SmoothConvex for Disc {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(
            &self,
            x: &DVector<f64>,
            deriv: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
        ) -> f64 {
            if let Some((g, h)) = deriv {
                g[0] += 2.0 * (x[0] - self.a);
                g[1] += 2.0 * (x[1] - self.b);
                h[(0, 0)] += 2.0;
                h[(1, 1)] += 2.0;
            }
            (x[0] - self.a).powi(2) + (x[1] - self.b).powi(2)
        }
        fn constraints(&self, x: &DVector<f64>, out: &mut [f64]) {
            out[0] = x[0] * x[0] + x[1] * x[1] - 1.0;
        }
        fn constraint_derivatives(
            &self,
            x: &DVector<f64>,
            _i: usize,
            grad: &mut SparseGrad,
            hess: &mut SparseHess,
        ) {
            grad.extend([(0, 2.0 * x[0]), (1, 2.0 * x[1])]);
            hess.extend([(0, 0, 2.0), (1, 1, 2.0)]);
        }
    }

    #[test]
    fn projects_onto_disc() {
        let p = Disc { a: 3.0, b: 4.0 };
        let s = barrier_solve(&p, DVector::zeros(2), &BarrierOptions::default());
        assert_eq!(s.status, BarrierStatus::Optimal);
        assert!((s.x[0] - 0.6).abs() < 1e-6 && (s.x[1] - 0.8).abs() < 1e-6);
        assert!(s.max_constraint <= 0.0);
        assert!(s.stationarity < 1e-6);
    }

    #[test]
    fn interior_optimum_is_exact() {
        let p = Disc { a: 0.2, b: -0.1 };
        let s = barrier_solve(&p, DVector::zeros(2), &BarrierOptions::default());
        assert!((s.x[0] - 0.2).abs() < 1e-6 && (s.x[1] + 0.1).abs() < 1e-6);
    }

    #[test]
    fn phase_one_finds_interior_point() {
        let p = Disc { a: 0.0, b: 0.0 };
        let x = phase_one(
            &p,
            DVector::from_vec(vec![3.0, -2.0]),
            &BarrierOptions::default(),
        )
        .expect("disc has an interior");
        assert!(x[0] * x[0] + x[1] * x[1] < 1.0);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = Disc { a: 0.0, b: 0.0 };
        let s = barrier_solve(
            &p,
            DVector::from_vec(vec![2.0, 0.0]),
            &BarrierOptions::default(),
        );
        assert_eq!(s.status, BarrierStatus::InfeasibleStart);
    }
}
