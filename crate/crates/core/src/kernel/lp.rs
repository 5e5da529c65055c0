//! Dense two-phase tableau simplex for `min c'x  s.t.  A x <= b,  l <= x <= u`.
//!
//! Entering columns follow Dantzig's most-negative reduced cost with lowest
//! index tie-breaking; after a run of degenerate pivots the rule falls back to
//! Bland's lowest-index rule, which cannot cycle. Ratio-test ties go to the
//! lowest basic variable index, so runs are deterministic.

use log::trace;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    /// Sparse `(row, col, value)` triples of `A`.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers `y >= 0` of the rows of `A`.
    pub row_duals: Vec<f64>,
    /// Multipliers of finite upper bounds (0 where the bound is infinite).
    pub upper_duals: Vec<f64>,
    /// Dual objective `l'z_l - u'z_u - b'y` assembled from the multipliers.
    pub dual_objective: f64,
    pub pivots: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, m: usize, pivots: usize) -> Self {
        Self {
            status,
            x: vec![0.0; n],
            objective: f64::NAN,
            row_duals: vec![0.0; m],
            upper_duals: vec![0.0; n],
            dual_objective: f64::NAN,
            pivots,
        }
    }
}

impl LinearProgram {
    /// Variables default to `0 <= x < inf` with zero cost.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            entries: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Appends `sum coeffs <= rhs` and returns its row index.
    pub fn add_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.rhs.len();
        for &(c, v) in coeffs {
            if v != 0.0 {
                self.entries.push((r, c, v));
            }
        }
        self.rhs.push(rhs);
        r
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    fn check(&self) -> bool {
        let n = self.num_vars;
        self.objective.len() == n
            && self.lower.len() == n
            && self.upper.len() == n
            && self.objective.iter().all(|c| c.is_finite())
            && self.rhs.iter().all(|b| b.is_finite())
            && self.lower.iter().all(|l| l.is_finite())
            && self.upper.iter().all(|u| !u.is_nan())
            && self
                .entries
                .iter()
                .all(|&(r, c, v)| r < self.rhs.len() && c < n && v.is_finite())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.rhs.len()];
        for &(r, c, v) in &self.entries {
            ax[r] += v * x[c];
        }
        let rows = ax
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max);
        let bounds = (0..self.num_vars)
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]))
            .fold(0.0, f64::max);
        rows.max(bounds)
    }
}

const PIVOT_TOL: f64 = 1e-10;
const DEGENERATE_RUN: usize = 50;

struct Tableau {
    /// `rows + 1` rows (last is reduced costs), `cols + 1` columns (last is rhs).
    t: Vec<f64>,
    width: usize,
    rows: usize,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for j in 0..w {
            self.t[r * w + j] /= p;
        }
        self.t[r * w + c] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &pv) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Runs simplex pivots over columns `< allowed`. Returns false on unbounded.
    fn optimize(&mut self, allowed: usize, max_pivots: usize) -> Option<bool> {
        let rhs = self.width - 1;
        let obj = self.rows;
        let mut degenerate = 0usize;
        loop {
            if self.pivots > max_pivots {
                return None;
            }
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -1e-9;
            for j in 0..allowed {
                let d = self.at(obj, j);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else {
                return Some(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 * lr.abs().max(1e-12)
                                || (ratio <= lr + 1e-12 * lr.abs().max(1e-12)
                                    && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Some(false);
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
        }
    }
}

/// Solves `lp`; `tol` is the absolute feasibility tolerance for phase one.
pub fn lp_solve(lp: &LinearProgram, tol: f64) -> LpSolution {
    let n = lp.num_vars;
    let m_a = lp.num_rows();
    if !lp.check() {
        return LpSolution::failed(LpStatus::NumericalFailure, n, m_a, 0);
    }
    if (0..n).any(|j| lp.upper[j] < lp.lower[j]) {
        return LpSolution::failed(LpStatus::Infeasible, n, m_a, 0);
    }

    // Shifted variables y = x - l >= 0; finite upper bounds become rows.
    let upper_rows: Vec<usize> = (0..n).filter(|&j| lp.upper[j].is_finite()).collect();
    let m = m_a + upper_rows.len();
    let mut dense = vec![0.0; m * n];
    let mut b = lp.rhs.clone();
    for &(r, c, v) in &lp.entries {
        dense[r * n + c] += v;
        b[r] -= v * lp.lower[c];
    }
    for (i, &j) in upper_rows.iter().enumerate() {
        dense[(m_a + i) * n + j] = 1.0;
        b.push(lp.upper[j] - lp.lower[j]);
    }
    // Row equilibration.
    let mut scale = vec![1.0; m];
    for i in 0..m {
        let mx = dense[i * n..(i + 1) * n]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        if mx > 0.0 {
            scale[i] = 1.0 / mx;
            for v in &mut dense[i * n..(i + 1) * n] {
                *v *= scale[i];
            }
            b[i] *= scale[i];
        }
    }

    let negated: Vec<bool> = b.iter().map(|&bi| bi < 0.0).collect();
    let n_art = negated.iter().filter(|&&x| x).count();
    let cols = n + m + n_art;
    let width = cols + 1;
    let mut t = vec![0.0; (m + 1) * width];
    let mut basis = vec![0usize; m];
    let mut art = n + m;
    for i in 0..m {
        let sign = if negated[i] { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sign * dense[i * n + j];
        }
        t[i * width + n + i] = sign;
        t[i * width + cols] = sign * b[i];
        if negated[i] {
            t[i * width + art] = 1.0;
            basis[i] = art;
            art += 1;
        } else {
            basis[i] = n + i;
        }
    }
    let mut tab = Tableau {
        t,
        width,
        rows: m,
        basis,
        pivots: 0,
    };
    let max_pivots = 50 * (m + cols) + 1000;
    let feas_tol = tol.max(1e-12);

    if n_art > 0 {
        // Phase one: minimize the sum of artificials.
        for j in 0..width {
            let mut d = if (n + m..cols).contains(&j) { 1.0 } else { 0.0 };
            for i in 0..m {
                if negated[i] {
                    d -= tab.at(i, j);
                }
            }
            tab.t[m * width + j] = d;
        }
        if tab.optimize(cols, max_pivots).is_none() {
            return LpSolution::failed(LpStatus::NumericalFailure, n, m_a, tab.pivots);
        }
        let infeas = -tab.at(m, cols);
        if infeas > feas_tol {
            trace!("lp phase one residual {infeas:.3e}");
            return LpSolution::failed(LpStatus::Infeasible, n, m_a, tab.pivots);
        }
        // Drive zero-level artificials out of the basis where possible.
        for i in 0..m {
            if tab.basis[i] >= n + m {
                if let Some(j) = (0..n + m).find(|&j| tab.at(i, j).abs() > 1e-9) {
                    tab.pivot(i, j);
                }
            }
        }
    }

    // Phase two reduced costs.
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    for j in 0..width {
        let cj = if j < cols { cost[j] } else { 0.0 };
        let mut d = cj;
        for i in 0..m {
            let cb = cost[tab.basis[i]];
            if cb != 0.0 {
                d -= cb * tab.at(i, j);
            }
        }
        tab.t[m * width + j] = d;
    }
    match tab.optimize(n + m, max_pivots) {
        None => return LpSolution::failed(LpStatus::NumericalFailure, n, m_a, tab.pivots),
        Some(false) => return LpSolution::failed(LpStatus::Unbounded, n, m_a, tab.pivots),
        Some(true) => {}
    }

    let mut y = vec![0.0; n];
    for i in 0..m {
        let bv = tab.basis[i];
        if bv < n {
            y[bv] = tab.at(i, cols).max(0.0);
        }
    }
    let x: Vec<f64> = (0..n).map(|j| y[j] + lp.lower[j]).collect();
    let objective: f64 = x.iter().zip(&lp.objective).map(|(a, c)| a * c).sum();

    // Row multipliers are the reduced costs of the slack columns, mapped back
    // through the equilibration scale.
    let mut row_duals = vec![0.0; m_a];
    let mut upper_duals = vec![0.0; n];
    let mut dual_objective: f64 = lp.lower.iter().zip(&lp.objective).map(|(l, c)| l * c).sum();
    let mut reduced: Vec<f64> = lp.objective.clone();
    for i in 0..m {
        let yi = tab.at(m, n + i).max(0.0) * scale[i];
        if i < m_a {
            row_duals[i] = yi;
            dual_objective -= yi * (lp.rhs[i] - row_lower_shift(lp, i));
        } else {
            let j = upper_rows[i - m_a];
            upper_duals[j] = yi;
            dual_objective -= yi * (lp.upper[j] - lp.lower[j]);
            reduced[j] += yi;
        }
    }
    for &(r, c, v) in &lp.entries {
        reduced[c] += v * row_duals[r];
    }
    // Remaining reduced cost is the lower-bound multiplier; its contribution
    // is already in the shifted constant, a negative part is dual infeasibility.
    let dual_infeas = reduced.iter().fold(0.0f64, |a, &z| a.max(-z));
    dual_objective -= dual_infeas * x.iter().map(|v| v.abs()).sum::<f64>();

    LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        row_duals,
        upper_duals,
        dual_objective,
        pivots: tab.pivots,
    }
}

fn row_lower_shift(lp: &LinearProgram, row: usize) -> f64 {
    lp.entries
        .iter()
        .filter(|e| e.0 == row)
        .map(|&(_, c, v)| v * lp.lower[c])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lower_bound() {
        let mut lp = LinearProgram::new(1);
        lp.objective[0] = 1.0;
        lp.add_row(&[(0, -1.0)], -3.0);
        let s = lp_solve(&lp, 1e-9);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
        assert!((s.row_duals[0] - 1.0).abs() < 1e-12);
        assert!((s.objective - s.dual_objective).abs() < 1e-12);
    }

    #[test]
    fn infeasible_box() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(&[(0, -1.0)], -1.0);
        lp.add_row(&[(0, 1.0)], 0.0);
        assert_eq!(lp_solve(&lp, 1e-9).status, LpStatus::Infeasible);
        let mut lp = LinearProgram::new(1);
        lp.set_bounds(0, 1.0, 0.0);
        assert_eq!(lp_solve(&lp, 1e-9).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, 0.0];
        lp.add_row(&[(0, 1.0), (1, -1.0)], 1.0);
        assert_eq!(lp_solve(&lp, 1e-9).status, LpStatus::Unbounded);
    }

    #[test]
    fn bounded_two_variable() {
        // max x + 2y s.t. x + y <= 4, x <= 3, 1 <= y <= 2.5
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -2.0];
        lp.add_row(&[(0, 1.0), (1, 1.0)], 4.0);
        lp.set_bounds(0, 0.0, 3.0);
        lp.set_bounds(1, 1.0, 2.5);
        let s = lp_solve(&lp, 1e-9);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.5).abs() < 1e-12 && (s.x[1] - 2.5).abs() < 1e-12);
        assert!((s.objective + 6.5).abs() < 1e-12);
        assert!((s.objective - s.dual_objective).abs() < 1e-10);
    }

    #[test]
    fn fixed_variable() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.set_bounds(0, 2.0, 2.0);
        lp.add_row(&[(0, -1.0), (1, -1.0)], -5.0);
        let s = lp_solve(&lp, 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 3.0).abs() < 1e-12);
    }
}
