//! Projected supergradient ascent on the dual.

use nalgebra::{DMatrix, DVector, Vector3};

use super::ellipsoid::free_indices;
use super::{
    abs_tol, dual_value, from_scaled, subgradient, to_scaled, DesignMask, DualOptions,
    DualSolution, BIT_SCALE,
};
use crate::channel::SlotSnr;
use crate::model::{DualVariables, Grid};
use crate::scenario::Scenario;

/// Euclidean projection of `(mu, nu, omega)` onto
/// `{mu, nu, omega >= 0, mu + nu >= omega}`.
pub fn project_relay_cone(x: Vector3<f64>) -> Vector3<f64> {
    let normals = [
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(1.0, 1.0, -1.0),
    ];
    let feasible = |p: &Vector3<f64>| {
        normals
            .iter()
            .all(|a| a.dot(p) >= -1e-14 * (1.0 + x.norm()))
    };
    if feasible(&x) {
        return x;
    }
    let mut best = Vector3::zeros();
    let mut best_d = x.norm_squared();
    for subset in 1u32..16 {
        let rows: Vec<&Vector3<f64>> = (0..4)
            .filter(|i| subset & (1 << i) != 0)
            .map(|i| &normals[i])
            .collect();
        if rows.len() > 2 {
            continue;
        }
        let a = DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]);
        let Some(gram_inv) = (&a * a.transpose()).try_inverse() else {
            continue;
        };
        let xv = DVector::from_column_slice(x.as_slice());
        let p = &xv - a.transpose() * (gram_inv * (&a * &xv));
        let p = Vector3::new(p[0], p[1], p[2]);
        let d = (p - x).norm_squared();
        if feasible(&p) && d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

fn project(x: &mut [f64], kn: usize, mask: DesignMask) {
    if mask.allow_relay {
        for i in 0..kn {
            let p = project_relay_cone(Vector3::new(x[kn + i], x[2 * kn + i], x[3 * kn + i]));
            x[kn + i] = p[0];
            x[2 * kn + i] = p[1];
            x[3 * kn + i] = p[2];
        }
    }
    for v in x.iter_mut() {
        *v = v.max(0.0);
    }
}

/// Normalized steps `1e-5 radius / sqrt(t + 1)`; stops when the best value
/// has improved by less than the tolerance over the last `50 * dim` steps.
pub fn subgradient_solve(
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
    opts: &DualOptions,
    warm: Option<&DualVariables>,
) -> DualSolution {
    let kn = sc.num_tds * sc.num_slots;
    let free = free_indices(sc, mask);
    let mut x = match warm {
        Some(d) => to_scaled(d),
        None => vec![1e-3; 5 * kn],
    };
    for (i, v) in x.iter_mut().enumerate() {
        if free.binary_search(&i).is_err() {
            *v = 0.0;
        }
    }
    project(&mut x, kn, mask);
    let window = 100 * free.len().max(1);
    let mut best_x = x.clone();
    let mut best_g = f64::NEG_INFINITY;
    let mut anchor = f64::NEG_INFINITY;
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        let (g, inner) = dual_value(&from_scaled(&x, sc), links, sc, mask);
        if g > best_g {
            best_g = g;
            best_x.copy_from_slice(&x);
        }
        let mut s = subgradient(&inner, sc, mask);
        for (i, v) in s.iter_mut().enumerate() {
            if i < 4 * kn {
                *v /= BIT_SCALE;
            }
            if free.binary_search(&i).is_err() {
                *v = 0.0;
            }
        }
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            converged = true;
            break;
        }
        let step = opts.radius * 1e-5 / ((it + 1) as f64).sqrt();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += step * si / norm;
        }
        project(&mut x, kn, mask);
        it += 1;
        if it % window == 0 {
            if best_g - anchor < abs_tol(opts.tol, best_g) {
                converged = true;
                break;
            }
            anchor = best_g;
        }
    }
    DualSolution {
        duals: from_scaled(&best_x, sc),
        value: best_g,
        iterations: it,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_projection_cases() {
        let inside = Vector3::new(1.0, 1.0, 1.5);
        assert_eq!(project_relay_cone(inside), inside);
        let p = project_relay_cone(Vector3::new(0.0, 0.0, 1.0));
        assert!((p - Vector3::new(1.0, 1.0, 2.0) / 3.0).norm() < 1e-15);
        let p = project_relay_cone(Vector3::new(-1.0, 2.0, 0.5));
        assert!((p - Vector3::new(0.0, 2.0, 0.5)).norm() < 1e-15);
        // Above the slanted face: (1, 1, 3) -> closest point on mu + nu = omega.
        let p = project_relay_cone(Vector3::new(1.0, 1.0, 3.0));
        assert!((p[0] + p[1] - p[2]).abs() < 1e-12);
        let d = (p - Vector3::new(1.0, 1.0, 3.0)).norm();
        for q in [
            Vector3::new(1.5, 1.5, 3.0),
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.0, 0.0, 0.0),
        ] {
            assert!((q - Vector3::new(1.0, 1.0, 3.0)).norm() >= d - 1e-12);
        }
    }
}
