//! Deep-cut ellipsoid method on the stacked multiplier vector.

use log::trace;

use super::{
    abs_tol, dual_value, from_scaled, subgradient, to_scaled, DesignMask, DualOptions,
    DualSolution, BIT_SCALE,
};
use crate::channel::SlotSnr;
use crate::model::{DualVariables, Grid};
use crate::scenario::Scenario;

/// Ellipsoid `{x : (x - c)' P^-1 (x - c) <= 1}`.
#[derive(Debug, Clone)]
pub struct EllipsoidState {
    pub center: Vec<f64>,
    /// Row-major `n x n`, symmetric positive definite.
    pub shape: Vec<f64>,
    pub iteration: usize,
}

impl EllipsoidState {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        let n = center.len();
        let mut shape = vec![0.0; n * n];
        for i in 0..n {
            shape[i * n + i] = radius * radius;
        }
        Self {
            center,
            shape,
            iteration: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn shape_times(&self, a: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                self.shape[i * n..(i + 1) * n]
                    .iter()
                    .zip(a)
                    .map(|(p, x)| p * x)
                    .sum()
            })
            .collect()
    }

    /// `sqrt(a' P a)`: the largest change of `a'x` over the ellipsoid.
    pub fn width(&self, a: &[f64]) -> f64 {
        let pa = self.shape_times(a);
        pa.iter()
            .zip(a)
            .map(|(p, x)| p * x)
            .sum::<f64>()
            .max(0.0)
            .sqrt()
    }

    /// Keeps the part with `a'(x - c) <= -h`, `h >= 0`. Returns false when
    /// the remaining set is empty or the update degenerates.
    pub fn cut(&mut self, a: &[f64], h: f64) -> bool {
        let n = self.dim() as f64;
        let pa = self.shape_times(a);
        let apa: f64 = pa.iter().zip(a).map(|(p, x)| p * x).sum();
        if !(apa.is_finite() && apa > 0.0) {
            return false;
        }
        let root = apa.sqrt();
        let alpha = h / root;
        if alpha >= 1.0 {
            return false;
        }
        let step = (1.0 + n * alpha) / (n + 1.0);
        for (c, p) in self.center.iter_mut().zip(&pa) {
            *c -= step * p / root;
        }
        let scale = n * n * (1.0 - alpha * alpha) / (n * n - 1.0);
        let rank = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha)) / apa;
        let dim = self.dim();
        for i in 0..dim {
            for j in i..dim {
                let v = scale * (self.shape[i * dim + j] - rank * pa[i] * pa[j]);
                self.shape[i * dim + j] = v;
                self.shape[j * dim + i] = v;
            }
        }
        self.iteration += 1;
        true
    }
}

/// One row of the optional iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Dual value at the center, `-inf` on feasibility cuts.
    pub value: f64,
    pub max_violation: f64,
}

/// Indices of the stacked vector the design lets vary.
pub(crate) fn free_indices(sc: &Scenario, mask: DesignMask) -> Vec<usize> {
    let kn = sc.num_tds * sc.num_slots;
    (0..5 * kn)
        .filter(|&i| match i / kn {
            0 => mask.allow_uav_compute,
            1 | 2 => mask.allow_relay,
            _ => true,
        })
        .collect()
}

pub fn ellipsoid_solve(
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
    opts: &DualOptions,
    warm: Option<&DualVariables>,
) -> DualSolution {
    ellipsoid_solve_traced(links, sc, mask, opts, warm, None)
}

pub fn ellipsoid_solve_traced(
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
    opts: &DualOptions,
    warm: Option<&DualVariables>,
    mut trace_rows: Option<&mut Vec<TraceRow>>,
) -> DualSolution {
    let kn = sc.num_tds * sc.num_slots;
    let free = free_indices(sc, mask);
    let mut full = match warm {
        Some(d) => to_scaled(d),
        None => vec![1e-3; 5 * kn],
    };
    for (i, v) in full.iter_mut().enumerate() {
        if free.binary_search(&i).is_err() {
            *v = 0.0;
        }
    }
    let center: Vec<f64> = free.iter().map(|&i| full[i].max(1e-3)).collect();
    let mut ell = EllipsoidState::ball(center, opts.radius);
    let pos: Vec<Option<usize>> = {
        let mut p = vec![None; 5 * kn];
        for (j, &i) in free.iter().enumerate() {
            p[i] = Some(j);
        }
        p
    };

    let mut best_x = vec![0.0; 5 * kn];
    let mut best_g = f64::NEG_INFINITY;
    let mut converged = false;
    let mut evals = 0usize;
    let n = free.len();
    let mut a = vec![0.0; n];
    while ell.iteration < opts.max_iter {
        for (j, &i) in free.iter().enumerate() {
            full[i] = ell.center[j];
        }
        // Most violated domain constraint, if any.
        let mut worst = 0.0;
        let mut cut: Option<Vec<(usize, f64)>> = None;
        for (j, &c) in ell.center.iter().enumerate() {
            if -c > worst {
                worst = -c;
                cut = Some(vec![(j, -1.0)]);
            }
        }
        if mask.allow_relay {
            for i in 0..kn {
                let v = full[3 * kn + i] - full[kn + i] - full[2 * kn + i];
                if v > worst {
                    worst = v;
                    cut = Some(vec![
                        (pos[3 * kn + i].unwrap(), 1.0),
                        (pos[kn + i].unwrap(), -1.0),
                        (pos[2 * kn + i].unwrap(), -1.0),
                    ]);
                }
            }
        }
        if let Some(entries) = cut {
            a.iter_mut().for_each(|v| *v = 0.0);
            for (j, v) in entries {
                a[j] = v;
            }
            if let Some(rows) = trace_rows.as_deref_mut() {
                rows.push(TraceRow {
                    iteration: ell.iteration,
                    value: f64::NEG_INFINITY,
                    max_violation: worst,
                });
            }
            if !ell.cut(&a, worst) {
                break;
            }
            continue;
        }

        let duals = from_scaled(&full, sc);
        let (g, inner) = dual_value(&duals, links, sc, mask);
        evals += 1;
        if g > best_g {
            best_g = g;
            best_x.copy_from_slice(&full);
        }
        let s = subgradient(&inner, sc, mask);
        for (j, &i) in free.iter().enumerate() {
            let scale = if i < 4 * kn { 1.0 / BIT_SCALE } else { 1.0 };
            a[j] = -s[i] * scale;
        }
        if let Some(rows) = trace_rows.as_deref_mut() {
            rows.push(TraceRow {
                iteration: ell.iteration,
                value: g,
                max_violation: 0.0,
            });
        }
        let width = ell.width(&a);
        if width <= abs_tol(opts.tol, best_g) {
            converged = true;
            break;
        }
        if !ell.cut(&a, best_g - g) {
            break;
        }
    }
    trace!(
        "ellipsoid: {} iterations, {evals} evaluations, best {best_g:.9e}",
        ell.iteration
    );
    if best_g == f64::NEG_INFINITY {
        best_x.iter_mut().for_each(|v| *v = 0.0);
        best_g = dual_value(&from_scaled(&best_x, sc), links, sc, mask).0;
    }
    DualSolution {
        duals: from_scaled(&best_x, sc),
        value: best_g,
        iterations: ell.iteration,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cut_keeps_halfspace_and_shrinks() {
        let mut e = EllipsoidState::ball(vec![0.0, 0.0], 1.0);
        let before = e.width(&[1.0, 0.0]);
        assert!(e.cut(&[1.0, 0.0], 0.0));
        assert!(e.center[0] < 0.0);
        assert!(e.width(&[1.0, 0.0]) < before);
        // The point (-1, 0) stays inside.
        let n = 2;
        let x = [-1.0 - e.center[0], -e.center[1]];
        let det = e.shape[0] * e.shape[3] - e.shape[1] * e.shape[2];
        let inv = [
            e.shape[3] / det,
            -e.shape[1] / det,
            -e.shape[2] / det,
            e.shape[0] / det,
        ];
        let q = x[0] * (inv[0] * x[0] + inv[1] * x[1]) + x[1] * (inv[2] * x[0] + inv[3] * x[1]);
        assert!(q <= 1.0 + 1e-12, "{q} {n}");
    }

    #[test]
    fn minimizes_quadratic() {
        // Maximize -(x - 0.3)^2 - (y - 0.7)^2 with deep objective cuts.
        let mut e = EllipsoidState::ball(vec![0.0, 0.0], 10.0);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..500 {
            let (x, y) = (e.center[0], e.center[1]);
            let g = -(x - 0.3).powi(2) - (y - 0.7).powi(2);
            best = best.max(g);
            let a = [2.0 * (x - 0.3), 2.0 * (y - 0.7)];
            if e.width(&a) < 1e-12 || !e.cut(&a, best - g) {
                break;
            }
        }
        assert!(best > -1e-10);
    }
}
