//! The tableau simplex against vertex enumeration and an independent Big-M
//! simplex on random instances.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use uavmec::kernel::lp::{lp_solve, LinearProgram, LpStatus};

/// Dense `min c'x, A x <= b, 0 <= x <= u` with finite `u`.
struct Dense {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    u: Vec<f64>,
}

impl Dense {
    fn random(rng: &mut StdRng, m: usize, n: usize, allow_negative_rhs: bool) -> Self {
        let lo = if allow_negative_rhs { -0.5 } else { 0.1 };
        Self {
            c: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            a: (0..m)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            b: (0..m).map(|_| rng.gen_range(lo..2.0)).collect(),
            u: (0..n).map(|_| rng.gen_range(0.5..3.0)).collect(),
        }
    }

    fn to_lp(&self) -> LinearProgram {
        let n = self.c.len();
        let mut lp = LinearProgram::new(n);
        lp.objective = self.c.clone();
        for (row, &b) in self.a.iter().zip(&self.b) {
            let coeffs: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            lp.add_row(&coeffs, b);
        }
        for j in 0..n {
            lp.set_bounds(j, 0.0, self.u[j]);
        }
        lp
    }

    /// Every constraint as `g'x <= h`, bounds included.
    fn halfspaces(&self) -> Vec<(Vec<f64>, f64)> {
        let n = self.c.len();
        let mut out: Vec<(Vec<f64>, f64)> =
            self.a.iter().cloned().zip(self.b.iter().copied()).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            out.push((e.clone(), 0.0));
            e[j] = 1.0;
            out.push((e, self.u[j]));
        }
        out
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Minimum over all feasible vertices, `None` when there are none.
fn vertex_enumeration(p: &Dense) -> Option<f64> {
    let n = p.c.len();
    let hs = p.halfspaces();
    let mut best: Option<f64> = None;
    for set in combinations(hs.len(), n) {
        let g = DMatrix::from_fn(n, n, |i, j| hs[set[i]].0[j]);
        let h = DVector::from_fn(n, |i, _| hs[set[i]].1);
        let Some(x) = g.lu().solve(&h) else { continue };
        let feasible = hs
            .iter()
            .all(|(gi, hi)| gi.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() <= hi + 1e-9);
        if feasible {
            let v: f64 = p.c.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

/// Textbook Big-M simplex with Bland's rule on the standard form
/// `G x + s = h` (rows with negative `h` flipped and given an artificial).
fn big_m_simplex(p: &Dense) -> Option<f64> {
    const BIG_M: f64 = 1e7;
    let n = p.c.len();
    let hs = p.halfspaces();
    let m = hs.len();
    let n_art = hs.iter().filter(|(_, h)| *h < 0.0).count();
    let cols = n + m + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&p.c);
    let mut art = n + m;
    for (i, (g, h)) in hs.iter().enumerate() {
        let sign = if *h < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * g[j];
        }
        t[i][n + i] = sign;
        t[i][cols] = sign * h;
        if *h < 0.0 {
            t[i][art] = 1.0;
            cost[art] = BIG_M;
            basis[i] = art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    for _ in 0..100_000 {
        let reduced: Vec<f64> = (0..cols)
            .map(|j| cost[j] - (0..m).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>())
            .collect();
        let Some(enter) = (0..cols).find(|&j| reduced[j] < -1e-9) else {
            let mut x = vec![0.0; cols];
            for i in 0..m {
                x[basis[i]] = t[i][cols];
            }
            if x[n + m..].iter().any(|&a| a > 1e-7) {
                return None;
            }
            return Some((0..n).map(|j| p.c[j] * x[j]).sum());
        };
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if t[i][enter] > 1e-12 {
                let ratio = t[i][cols] / t[i][enter];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let best = t[l][cols] / t[l][enter];
                        ratio < best - 1e-12 || (ratio <= best + 1e-12 && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some(i);
                }
            }
        }
        let r = leave?;
        let piv = t[r][enter];
        for v in t[r].iter_mut() {
            *v /= piv;
        }
        for i in 0..m {
            if i != r {
                let f = t[i][enter];
                if f != 0.0 {
                    let pivot_row = t[r].clone();
                    for (v, pv) in t[i].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        basis[r] = enter;
    }
    None
}

#[test]
fn matches_vertex_enumeration_on_small_instances() {
    let mut rng = StdRng::seed_from_u64(11);
    let mut compared = 0;
    for _ in 0..200 {
        let p = Dense::random(&mut rng, 4, 3, true);
        let sol = lp_solve(&p.to_lp(), 1e-9);
        match vertex_enumeration(&p) {
            Some(v) => {
                assert_eq!(sol.status, LpStatus::Optimal);
                assert!((sol.objective - v).abs() < 1e-7, "{} vs {v}", sol.objective);
                compared += 1;
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible),
        }
    }
    assert!(compared > 100);
}

#[test]
fn matches_big_m_simplex_on_random_instances() {
    let mut rng = StdRng::seed_from_u64(23);
    for trial in 0..30 {
        let p = Dense::random(&mut rng, 20, 40, trial % 2 == 1);
        let lp = p.to_lp();
        let sol = lp_solve(&lp, 1e-9);
        match big_m_simplex(&p) {
            Some(v) => {
                assert_eq!(sol.status, LpStatus::Optimal, "trial {trial}");
                assert!((sol.objective - v).abs() < 1e-7 * v.abs().max(1.0));
                assert!(lp.max_violation(&sol.x) < 1e-9);
                assert!((sol.dual_objective - sol.objective).abs() < 1e-7 * v.abs().max(1.0));
            }
            None => assert_eq!(sol.status, LpStatus::Infeasible, "trial {trial}"),
        }
    }
}

#[test]
fn detects_infeasible_rows() {
    let mut lp = LinearProgram::new(2);
    lp.add_row(&[(0, 1.0), (1, 1.0)], 1.0);
    lp.add_row(&[(0, -1.0), (1, -1.0)], -2.0);
    assert_eq!(lp_solve(&lp, 1e-9).status, LpStatus::Infeasible);
}

#[test]
fn detects_unbounded_objective() {
    let mut lp = LinearProgram::new(2);
    lp.objective = vec![-1.0, 0.0];
    lp.add_row(&[(1, 1.0)], 1.0);
    assert_eq!(lp_solve(&lp, 1e-9).status, LpStatus::Unbounded);
}
