//! Solver state: trajectories, per-(TD, slot) allocations, dual multipliers
//! and run reports.

use std::ops::{Index, IndexMut};

use nalgebra::Vector2;

use crate::error::{MecError, Result};
use crate::scenario::Scenario;

/// Dense `K x N` table indexed by `(k, n)`, both zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for k in 0..rows {
            for n in 0..cols {
                data.push(f(k, n));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;
    fn index(&self, (k, n): (usize, usize)) -> &T {
        debug_assert!(k < self.rows && n < self.cols);
        &self.data[k * self.cols + n]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (k, n): (usize, usize)) -> &mut T {
        debug_assert!(k < self.rows && n < self.cols);
        &mut self.data[k * self.cols + n]
    }
}

/// UAV horizontal path: `N + 1` waypoints, slot `n` flown from `q[n]` to
/// `q[n + 1]`. Slot `n` is served from `q[n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Vector2<f64>>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vector2<f64>>) -> Self {
        Self { waypoints }
    }

    pub fn num_slots(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    /// Position used for the links of slot `n`.
    pub fn position(&self, n: usize) -> Vector2<f64> {
        self.waypoints[n]
    }

    pub fn velocity(&self, n: usize, slot_len: f64) -> Vector2<f64> {
        (self.waypoints[n + 1] - self.waypoints[n]) / slot_len
    }

    pub fn speeds(&self, slot_len: f64) -> Vec<f64> {
        (0..self.num_slots())
            .map(|n| self.velocity(n, slot_len).norm())
            .collect()
    }

    /// Largest relative excess of any segment over `slot_len * v_max`, and
    /// the endpoint pinning error in meters.
    pub fn violations(&self, sc: &Scenario) -> (f64, f64) {
        let cap = sc.slot_len * sc.v_max;
        let speed = self
            .waypoints
            .windows(2)
            .map(|w| ((w[1] - w[0]).norm() - cap) / cap.max(1e-12))
            .fold(0.0, f64::max);
        let pin = match (self.waypoints.first(), self.waypoints.last()) {
            (Some(a), Some(b)) => (a - sc.q0).norm().max((b - sc.qf).norm()),
            _ => f64::INFINITY,
        };
        (speed, pin)
    }

    /// Checks waypoint count, endpoint pinning and the per-segment speed cap.
    pub fn validate(&self, sc: &Scenario, rtol: f64) -> Result<()> {
        if self.waypoints.len() != sc.num_slots + 1 {
            return Err(MecError::Invalid {
                field: "trajectory".into(),
                reason: format!(
                    "{} waypoints, expected N + 1 = {}",
                    self.waypoints.len(),
                    sc.num_slots + 1
                ),
            });
        }
        let (speed, pin) = self.violations(sc);
        if pin > 1e-9 || speed > rtol {
            return Err(MecError::Invalid {
                field: "trajectory".into(),
                reason: format!("endpoint error {pin:.3e} m, speed excess {speed:.3e}"),
            });
        }
        Ok(())
    }
}

/// Per-(TD, slot) bits, subslot durations and transmit powers. Subslot
/// index `m` is 0 (offload for UAV computing), 1 (offload for relaying),
/// 2 (UAV-to-AP forwarding).
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceAllocation {
    pub l_local: Grid<f64>,
    pub l_uav: Grid<f64>,
    pub l_ap: Grid<f64>,
    pub durations: Grid<[f64; 3]>,
    pub powers: Grid<[f64; 3]>,
}

impl ResourceAllocation {
    pub fn zeros(num_tds: usize, num_slots: usize) -> Self {
        Self {
            l_local: Grid::filled(num_tds, num_slots, 0.0),
            l_uav: Grid::filled(num_tds, num_slots, 0.0),
            l_ap: Grid::filled(num_tds, num_slots, 0.0),
            durations: Grid::filled(num_tds, num_slots, [0.0; 3]),
            powers: Grid::filled(num_tds, num_slots, [0.0; 3]),
        }
    }

    pub fn num_tds(&self) -> usize {
        self.l_local.rows()
    }

    pub fn num_slots(&self) -> usize {
        self.l_local.cols()
    }

    /// Transmit energy `t * p` of subslot `m`.
    pub fn energy(&self, k: usize, n: usize, m: usize) -> f64 {
        self.durations[(k, n)][m] * self.powers[(k, n)][m]
    }
}

/// Multipliers of the fixed-trajectory problem, all `K x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    /// Prefix causality (offloaded vs. computed at the UAV).
    pub lambda: Grid<f64>,
    /// Relay bits vs. TD-to-UAV relay capacity.
    pub mu: Grid<f64>,
    /// Relay bits vs. UAV-to-AP capacity.
    pub nu: Grid<f64>,
    /// Per-slot task requirement.
    pub omega: Grid<f64>,
    /// Subslot time budget.
    pub eta: Grid<f64>,
}

impl DualVariables {
    pub fn filled(num_tds: usize, num_slots: usize, value: f64) -> Self {
        let g = Grid::filled(num_tds, num_slots, value);
        Self {
            lambda: g.clone(),
            mu: g.clone(),
            nu: g.clone(),
            omega: g.clone(),
            eta: g,
        }
    }

    /// `lambda_hat[k][n] = sum_{i >= n} lambda[k][i]`.
    pub fn lambda_hat(&self) -> Grid<f64> {
        let (k_n, n_n) = (self.lambda.rows(), self.lambda.cols());
        let mut out = Grid::filled(k_n, n_n, 0.0);
        for k in 0..k_n {
            let mut acc = 0.0;
            for n in (0..n_n).rev() {
                acc += self.lambda[(k, n)];
                out[(k, n)] = acc;
            }
        }
        out
    }

    /// Most negative multiplier and most negative `mu + nu - omega`.
    pub fn feasibility_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in [&self.lambda, &self.mu, &self.nu, &self.omega, &self.eta] {
            for &v in g.iter() {
                worst = worst.max(-v);
            }
        }
        for k in 0..self.mu.rows() {
            for n in 0..self.mu.cols() {
                worst = worst.max(self.omega[(k, n)] - self.mu[(k, n)] - self.nu[(k, n)]);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    Infeasible,
    IterationLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
        }
    }
}

/// Energy split of one evaluated design point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub comm: f64,
    pub comp: f64,
    /// Unweighted flight energy.
    pub fly: f64,
    /// `comm + comp + w * fly`.
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationCounts {
    pub outer: usize,
    /// Dual iterations per resource solve.
    pub dual: Vec<usize>,
    /// Newton steps per trajectory solve.
    pub trajectory: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Objective after each outer iteration; entry 0 is the initial point.
    pub objective_trace: Vec<f64>,
    /// Energy split per trace entry.
    pub breakdown_trace: Vec<EnergyBreakdown>,
    pub energy: EnergyBreakdown,
    pub iterations: IterationCounts,
    pub feasibility: crate::joint::FeasibilityReport,
    pub status: SolveStatus,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_hat_is_suffix_sum() {
        let mut d = DualVariables::filled(1, 3, 0.0);
        d.lambda[(0, 0)] = 1.0;
        d.lambda[(0, 1)] = 2.0;
        d.lambda[(0, 2)] = 4.0;
        let h = d.lambda_hat();
        assert_eq!(h.row(0), &[7.0, 6.0, 4.0]);
    }

    #[test]
    fn dual_violation_reports_weight_gap() {
        let mut d = DualVariables::filled(1, 1, 0.0);
        d.omega[(0, 0)] = 0.5;
        d.mu[(0, 0)] = 0.2;
        assert!((d.feasibility_violation() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn trajectory_velocity() {
        let t = Trajectory::new(vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)]);
        assert_eq!(t.velocity(0, 0.5), Vector2::new(2.0, 0.0));
        assert_eq!(t.speeds(0.5), vec![2.0]);
    }
}
