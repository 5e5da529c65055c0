//! Brute-force and finite-difference references for the closed-form pieces
//! of the solver. Nothing here calls the closed-form minimizers or the rate
//! helpers they use; formulas are re-derived from the scenario constants.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::kernel::barrier::{
    barrier_solve, phase_one, BarrierOptions, BarrierStatus, SmoothConvex, SparseGrad, SparseHess,
};
use crate::model::Trajectory;
use crate::scenario::Scenario;

const MBIT: f64 = 1e6;
const REFINE_ROUNDS: usize = 3;

/// One of the per-(TD, slot) Lagrangian pieces, with its multipliers and
/// per-watt SNR where relevant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subproblem {
    /// `min t (p - w r(p) + eta)` over `[0, p_max] x [0, dt]`.
    Link {
        weight: f64,
        eta: f64,
        snr: f64,
        p_max: f64,
    },
    /// `min kappa_u (c_u l)^3 / dt^2 - omega l` over the local box.
    Local { omega: f64 },
    /// `min kappa_h (c_h l)^3 / dt^2 - (omega - lambda_hat) l` over the UAV box.
    Uav { omega: f64, lambda_hat: f64 },
    /// `min (mu + nu - omega) l` over `[0, l_max]`.
    Relay {
        mu: f64,
        nu: f64,
        omega: f64,
        l_max: f64,
    },
}

impl Subproblem {
    pub fn l1(lambda_hat: f64, eta: f64, snr: f64, sc: &Scenario) -> Self {
        Subproblem::Link {
            weight: lambda_hat,
            eta,
            snr,
            p_max: sc.p_td_max,
        }
    }

    pub fn l2(mu: f64, eta: f64, snr: f64, sc: &Scenario) -> Self {
        Subproblem::Link {
            weight: mu,
            eta,
            snr,
            p_max: sc.p_td_max,
        }
    }

    pub fn l3(nu: f64, eta: f64, snr: f64, sc: &Scenario) -> Self {
        Subproblem::Link {
            weight: nu,
            eta,
            snr,
            p_max: sc.p_uav_max,
        }
    }
}

/// Best grid point found and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptimum {
    pub argmin: Vec<f64>,
    pub value: f64,
}

/// `B0 log2(1 + p snr)` written out directly.
fn shannon(p: f64, snr: f64, b0: f64) -> f64 {
    b0 * (1.0 + p * snr).ln() / std::f64::consts::LN_2
}

fn cubic(l: f64, kappa: f64, cycles: f64, dt: f64) -> f64 {
    kappa * (cycles * l).powi(3) / (dt * dt)
}

/// Grid search over a box followed by [`REFINE_ROUNDS`] rounds of 10x finer
/// grids around the incumbent.
pub fn grid_minimize(
    f: impl Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    resolution: usize,
) -> OracleOptimum {
    let dim = lo.len();
    let res = resolution.max(2);
    let mut step: Vec<f64> = (0..dim).map(|i| (hi[i] - lo[i]) / res as f64).collect();
    let mut box_lo = lo.to_vec();
    let mut counts = vec![res + 1; dim];
    let mut best = OracleOptimum {
        argmin: lo.to_vec(),
        value: f(lo),
    };
    for round in 0..=REFINE_ROUNDS {
        let total: usize = counts.iter().product();
        let mut point = vec![0.0; dim];
        for idx in 0..total {
            let mut rem = idx;
            for i in 0..dim {
                let j = rem % counts[i];
                rem /= counts[i];
                point[i] = (box_lo[i] + j as f64 * step[i]).clamp(lo[i], hi[i]);
            }
            let v = f(&point);
            if v < best.value {
                best = OracleOptimum {
                    argmin: point.clone(),
                    value: v,
                };
            }
        }
        if round == REFINE_ROUNDS {
            break;
        }
        for i in 0..dim {
            box_lo[i] = (best.argmin[i] - step[i]).max(lo[i]);
            step[i] /= 10.0;
            counts[i] = 21;
        }
    }
    best
}

/// Grid-and-refine optimum of one Lagrangian piece.
pub fn oracle_subproblem(sp: &Subproblem, sc: &Scenario, resolution: usize) -> OracleOptimum {
    let dt = sc.slot_len;
    let b0 = sc.bandwidth / sc.num_tds as f64;
    match *sp {
        Subproblem::Link {
            weight,
            eta,
            snr,
            p_max,
        } => grid_minimize(
            |x| x[1] * (x[0] - weight * shannon(x[0], snr, b0) + eta),
            &[0.0, 0.0],
            &[p_max, dt],
            resolution,
        ),
        Subproblem::Local { omega } => {
            let cap = dt * sc.f_td_max / sc.cycles_per_bit_td;
            grid_minimize(
                |x| cubic(x[0], sc.cap_coeff_td, sc.cycles_per_bit_td, dt) - omega * x[0],
                &[0.0],
                &[cap],
                resolution,
            )
        }
        Subproblem::Uav { omega, lambda_hat } => {
            let cap = dt * sc.f_uav_max / sc.num_tds as f64 / sc.cycles_per_bit_uav;
            grid_minimize(
                |x| {
                    cubic(x[0], sc.cap_coeff_uav, sc.cycles_per_bit_uav, dt)
                        - (omega - lambda_hat) * x[0]
                },
                &[0.0],
                &[cap],
                resolution,
            )
        }
        Subproblem::Relay {
            mu,
            nu,
            omega,
            l_max,
        } => grid_minimize(|x| (mu + nu - omega) * x[0], &[0.0], &[l_max], resolution),
    }
}

/// Central-difference derivative of `f` at `point` along `direction`,
/// compared with `analytic`. Returns `|fd - analytic| / max(1, |analytic|)`.
pub fn fd_check(f: impl Fn(&[f64]) -> f64, point: &[f64], direction: &[f64], analytic: f64) -> f64 {
    let scale = point.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let h = f64::EPSILON.cbrt() * scale;
    let shifted = |s: f64| -> Vec<f64> {
        point
            .iter()
            .zip(direction)
            .map(|(x, d)| x + s * d)
            .collect()
    };
    let fd = (f(&shifted(h)) - f(&shifted(-h))) / (2.0 * h);
    (fd - analytic).abs() / analytic.abs().max(1.0)
}

/// Per-watt SNRs of one (TD, slot) recomputed from the raw channel constants.
fn slot_snrs(sc: &Scenario, q: &Vector2<f64>, k: usize) -> (f64, f64) {
    let b0 = sc.bandwidth / sc.num_tds as f64;
    let h2 = sc.altitude * sc.altitude;
    let d_up = (q - sc.td_pos[k]).norm_squared() + h2;
    let d_ap = (q - sc.ap_pos).norm_squared() + h2;
    (
        sc.ref_gain / (sc.noise_psd_uav * b0 * d_up),
        sc.ref_gain / (sc.noise_psd_ap * b0 * d_ap),
    )
}

const VARS: usize = 9;
const T1: usize = 0;
const E1: usize = 3;
const LU: usize = 6;
const LH: usize = 7;
const LA: usize = 8;

#[derive(Debug, Clone, Copy)]
enum Row {
    /// `coef * x[i] + constant <= 0`.
    Bound { i: usize, coef: f64, constant: f64 },
    /// `sum_i x[i] + constant <= 0`.
    Sum { vars: [usize; 3], constant: f64 },
    /// `-(lu + lh + la) + task <= 0`.
    Task { slot: usize, task: f64 },
    /// `e - p_max t <= 0`.
    PowerBox { e: usize, t: usize, p_max: f64 },
    /// `la - t r(e / t) <= 0`.
    Relay { slot: usize, m: usize, snr: f64 },
    /// `sum_{i <= n} lh_i - t1_i r(e1_i / t1_i) <= 0` for TD `td`.
    Causality { td: usize, upto: usize },
}

/// Perspective-form fixed-trajectory problem, in Mbit and joules.
struct PrimalProblem {
    slots: usize,
    tds: usize,
    b0: f64,
    cubic_u: f64,
    cubic_h: f64,
    snr_up: Vec<Vec<f64>>,
    rows: Vec<Row>,
}

impl PrimalProblem {
    fn base(&self, k: usize, n: usize) -> usize {
        VARS * (k * self.slots + n)
    }

    /// `t r(e / t)` in Mbit with its gradient in `(t, e)` and Hessian.
    fn perspective(&self, t: f64, e: f64, snr: f64) -> (f64, [f64; 2], [[f64; 2]; 3]) {
        let ln2 = std::f64::consts::LN_2;
        let c = self.b0 / MBIT / ln2;
        let a = snr * e / t;
        let val = t * c * a.ln_1p();
        let dt = c * (a.ln_1p() - a / (1.0 + a));
        let de = c * snr / (1.0 + a);
        // Hessian of t psi(e / t): psi''(x) / t [[x^2, -x], [-x, 1]], x = e / t.
        let x = e / t;
        let psi2 = -c * snr * snr / ((1.0 + a) * (1.0 + a));
        let s = psi2 / t;
        (
            val,
            [dt, de],
            [[s * x * x, -s * x], [-s * x, s], [0.0, 0.0]],
        )
    }

    fn row_value(&self, row: &Row, x: &DVector<f64>) -> f64 {
        match *row {
            Row::Bound { i, coef, constant } => coef * x[i] + constant,
            Row::Sum { vars, constant } => vars.iter().map(|&i| x[i]).sum::<f64>() + constant,
            Row::Task { slot, task } => task - x[slot + LU] - x[slot + LH] - x[slot + LA],
            Row::PowerBox { e, t, p_max } => x[e] - p_max * x[t],
            Row::Relay { slot, m, snr } => {
                let (t, e) = (x[slot + T1 + m], x[slot + E1 + m]);
                if t <= 0.0 {
                    return f64::NAN;
                }
                x[slot + LA] - self.perspective(t, e, snr).0
            }
            Row::Causality { td, upto } => {
                let mut v = 0.0;
                for n in 0..=upto {
                    let b = self.base(td, n);
                    let t = x[b + T1];
                    if t <= 0.0 {
                        return f64::NAN;
                    }
                    v += x[b + LH] - self.perspective(t, x[b + E1], self.snr_up[td][n]).0;
                }
                v
            }
        }
    }

    fn push_perspective(
        &self,
        t_idx: usize,
        e_idx: usize,
        x: &DVector<f64>,
        snr: f64,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    ) {
        let (_, g, h) = self.perspective(x[t_idx], x[e_idx], snr);
        grad.push((t_idx, -g[0]));
        grad.push((e_idx, -g[1]));
        let idx = [t_idx, e_idx];
        for a in 0..2 {
            for b in 0..2 {
                hess.push((idx[a], idx[b], -h[a][b]));
            }
        }
    }
}

impl SmoothConvex for PrimalProblem {
    fn dim(&self) -> usize {
        VARS * self.tds * self.slots
    }

    fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    fn objective(
        &self,
        x: &DVector<f64>,
        deriv: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
    ) -> f64 {
        let mut v = 0.0;
        let mut deriv = deriv;
        for k in 0..self.tds {
            for n in 0..self.slots {
                let b = self.base(k, n);
                let (lu, lh) = (x[b + LU].max(0.0), x[b + LH].max(0.0));
                v += x[b + E1] + x[b + E1 + 1] + x[b + E1 + 2];
                v += self.cubic_u * lu.powi(3) + self.cubic_h * lh.powi(3);
                if let Some((g, h)) = &mut deriv {
                    for m in 0..3 {
                        g[b + E1 + m] += 1.0;
                    }
                    g[b + LU] += 3.0 * self.cubic_u * lu * lu;
                    g[b + LH] += 3.0 * self.cubic_h * lh * lh;
                    h[(b + LU, b + LU)] += 6.0 * self.cubic_u * lu;
                    h[(b + LH, b + LH)] += 6.0 * self.cubic_h * lh;
                }
            }
        }
        v
    }

    fn constraints(&self, x: &DVector<f64>, out: &mut [f64]) {
        for (row, o) in self.rows.iter().zip(out.iter_mut()) {
            *o = self.row_value(row, x);
        }
    }

    fn constraint_derivatives(
        &self,
        x: &DVector<f64>,
        i: usize,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    ) {
        match self.rows[i] {
            Row::Bound { i, coef, .. } => grad.push((i, coef)),
            Row::Sum { vars, .. } => grad.extend(vars.iter().map(|&i| (i, 1.0))),
            Row::Task { slot, .. } => {
                grad.extend([(slot + LU, -1.0), (slot + LH, -1.0), (slot + LA, -1.0)])
            }
            Row::PowerBox { e, t, p_max } => grad.extend([(e, 1.0), (t, -p_max)]),
            Row::Relay { slot, m, snr } => {
                grad.push((slot + LA, 1.0));
                self.push_perspective(slot + T1 + m, slot + E1 + m, x, snr, grad, hess);
            }
            Row::Causality { td, upto } => {
                for n in 0..=upto {
                    let b = self.base(td, n);
                    grad.push((b + LH, 1.0));
                    self.push_perspective(b + T1, b + E1, x, self.snr_up[td][n], grad, hess);
                }
            }
        }
    }
}

/// Feasible point of the fixed-trajectory problem found by a direct convex
/// solve in perspective form, with its objective as an upper bound.
#[derive(Debug, Clone)]
pub struct PrimalBound {
    pub value: f64,
    pub l_local: Vec<Vec<f64>>,
    pub l_uav: Vec<Vec<f64>>,
    pub l_ap: Vec<Vec<f64>>,
    pub durations: Vec<Vec<[f64; 3]>>,
    pub energies: Vec<Vec<[f64; 3]>>,
}

/// Upper bound on the fixed-trajectory optimum for a small instance
/// (`K <= 2`, `N <= 5`), independent of the dual machinery. Returns `None`
/// when no strictly feasible point is found.
pub fn oracle_small_primal(sc: &Scenario, traj: &Trajectory) -> Option<PrimalBound> {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    if kk > 2 || nn > 5 || traj.num_slots() != nn {
        return None;
    }
    if sc.task_min.iter().flatten().all(|&l| l == 0.0) {
        return Some(PrimalBound {
            value: 0.0,
            l_local: vec![vec![0.0; nn]; kk],
            l_uav: vec![vec![0.0; nn]; kk],
            l_ap: vec![vec![0.0; nn]; kk],
            durations: vec![vec![[0.0; 3]; nn]; kk],
            energies: vec![vec![[0.0; 3]; nn]; kk],
        });
    }
    let dt = sc.slot_len;
    let b0 = sc.bandwidth / kk as f64;
    let cap_u = dt * sc.f_td_max / sc.cycles_per_bit_td / MBIT;
    let cap_h = dt * sc.f_uav_max / kk as f64 / sc.cycles_per_bit_uav / MBIT;
    let mut snr_up = vec![vec![0.0; nn]; kk];
    let mut rows = Vec::new();
    let mut prob = PrimalProblem {
        slots: nn,
        tds: kk,
        b0,
        cubic_u: cubic(MBIT, sc.cap_coeff_td, sc.cycles_per_bit_td, dt),
        cubic_h: cubic(MBIT, sc.cap_coeff_uav, sc.cycles_per_bit_uav, dt),
        snr_up: Vec::new(),
        rows: Vec::new(),
    };
    for k in 0..kk {
        for n in 0..nn {
            let (up, ap) = slot_snrs(sc, &traj.position(n), k);
            snr_up[k][n] = up;
            let b = prob.base(k, n);
            for i in 0..VARS {
                rows.push(Row::Bound {
                    i: b + i,
                    coef: -1.0,
                    constant: 0.0,
                });
            }
            rows.push(Row::Bound {
                i: b + LU,
                coef: 1.0,
                constant: -cap_u,
            });
            rows.push(Row::Bound {
                i: b + LH,
                coef: 1.0,
                constant: -cap_h,
            });
            rows.push(Row::Sum {
                vars: [b + T1, b + T1 + 1, b + T1 + 2],
                constant: -dt,
            });
            for (m, p_max) in [sc.p_td_max, sc.p_td_max, sc.p_uav_max]
                .into_iter()
                .enumerate()
            {
                rows.push(Row::PowerBox {
                    e: b + E1 + m,
                    t: b + T1 + m,
                    p_max,
                });
            }
            rows.push(Row::Task {
                slot: b,
                task: sc.task_min[k][n] / MBIT,
            });
            rows.push(Row::Relay {
                slot: b,
                m: 1,
                snr: up,
            });
            rows.push(Row::Relay {
                slot: b,
                m: 2,
                snr: ap,
            });
            rows.push(Row::Causality { td: k, upto: n });
        }
    }
    prob.snr_up = snr_up;
    prob.rows = rows;

    // Start: equal subslots at half power, bits spread evenly.
    let mut x0 = DVector::zeros(prob.dim());
    for k in 0..kk {
        for n in 0..nn {
            let b = prob.base(k, n);
            for m in 0..3 {
                x0[b + T1 + m] = dt / 4.0;
            }
            x0[b + E1] = sc.p_td_max * dt / 8.0;
            x0[b + E1 + 1] = sc.p_td_max * dt / 8.0;
            x0[b + E1 + 2] = sc.p_uav_max * dt / 8.0;
            let third = sc.task_min[k][n] / MBIT / 3.0;
            x0[b + LU] = third;
            x0[b + LH] = third;
            x0[b + LA] = third;
        }
    }
    let opts = BarrierOptions {
        tol: 1e-10,
        ..BarrierOptions::default()
    };
    let start = phase_one(&prob, x0, &opts)?;
    let sol = barrier_solve(&prob, start, &opts);
    if !matches!(
        sol.status,
        BarrierStatus::Optimal | BarrierStatus::IterationLimit
    ) || sol.max_constraint > 0.0
    {
        return None;
    }
    let x = &sol.x;
    let grid = |off: usize| -> Vec<Vec<f64>> {
        (0..kk)
            .map(|k| (0..nn).map(|n| x[prob.base(k, n) + off] * MBIT).collect())
            .collect()
    };
    let triple = |off: usize| -> Vec<Vec<[f64; 3]>> {
        (0..kk)
            .map(|k| {
                (0..nn)
                    .map(|n| {
                        let b = prob.base(k, n) + off;
                        [x[b], x[b + 1], x[b + 2]]
                    })
                    .collect()
            })
            .collect()
    };
    Some(PrimalBound {
        value: sol.objective,
        l_local: grid(LU),
        l_uav: grid(LH),
        l_ap: grid(LA),
        durations: triple(T1),
        energies: triple(E1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve_resources, DesignMask, DualEngine, DualOptions};
    use crate::scenario::{ScenarioFile, TaskSpec, DEFAULT_SCENARIO_JSON};

    fn mini(task: Vec<Vec<f64>>) -> Scenario {
        let mut f = ScenarioFile::parse(DEFAULT_SCENARIO_JSON).unwrap();
        f.num_tds = task.len();
        f.num_slots = task[0].len();
        f.td_pos_m.truncate(task.len());
        f.q0_m = [-3.0, 0.0];
        f.qf_m = [3.0, 0.0];
        f.task_min_bits = TaskSpec::Matrix(task);
        Scenario::from_file(f).unwrap()
    }

    fn line(sc: &Scenario) -> Trajectory {
        let n = sc.num_slots;
        Trajectory::new(
            (0..=n)
                .map(|i| sc.q0 + (sc.qf - sc.q0) * (i as f64 / n as f64))
                .collect(),
        )
    }

    #[test]
    fn grid_finds_quadratic_minimum() {
        let o = grid_minimize(
            |x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2),
            &[-1.0, -1.0],
            &[1.0, 1.0],
            50,
        );
        assert!((o.argmin[0] - 0.3).abs() < 1e-5);
        assert!((o.argmin[1] + 0.7).abs() < 1e-5);
        assert!(o.value < 1e-9);
    }

    #[test]
    fn grid_respects_box() {
        let o = grid_minimize(|x| -x[0], &[0.0], &[2.5], 7);
        assert_eq!(o.argmin, vec![2.5]);
    }

    #[test]
    fn fd_check_accepts_exact_and_rejects_wrong() {
        let f = |x: &[f64]| x[0].powi(3) + x[1].sin();
        let p = [1.2, 0.4];
        let g = 3.0 * 1.44 + 0.4f64.cos();
        assert!(fd_check(f, &p, &[1.0, 1.0], g) < 1e-8);
        assert!(fd_check(f, &p, &[1.0, 1.0], g * 1.01) > 1e-3);
    }

    #[test]
    fn relay_piece_is_zero_in_domain() {
        let sc = mini(vec![vec![1e5, 1e5]]);
        let sp = Subproblem::Relay {
            mu: 2e-6,
            nu: 1e-6,
            omega: 2.5e-6,
            l_max: 4e5,
        };
        assert_eq!(oracle_subproblem(&sp, &sc, 100).value, 0.0);
    }

    #[test]
    fn zero_task_costs_nothing() {
        let sc = mini(vec![vec![0.0, 0.0]]);
        assert_eq!(oracle_small_primal(&sc, &line(&sc)).unwrap().value, 0.0);
    }

    #[test]
    fn rejects_large_instances() {
        let sc = mini(vec![vec![1e5; 6]]);
        assert!(oracle_small_primal(&sc, &line(&sc)).is_none());
    }

    #[test]
    fn primal_bound_is_feasible_and_tight() {
        let sc = mini(vec![vec![2e5, 1e5, 3e5], vec![0.0, 4e5, 1e5]]);
        let traj = line(&sc);
        let o = oracle_small_primal(&sc, &traj).unwrap();
        for k in 0..2 {
            for n in 0..3 {
                let done = o.l_local[k][n] + o.l_uav[k][n] + o.l_ap[k][n];
                assert!(done >= sc.task_min[k][n] * (1.0 - 1e-7));
                let t: f64 = o.durations[k][n].iter().sum();
                assert!(t <= sc.slot_len * (1.0 + 1e-9));
            }
        }
        let opts = DualOptions {
            engine: DualEngine::Decomposed,
            ..DualOptions::default()
        };
        let r = solve_resources(&sc, &traj, DesignMask::FULL, &opts, None).unwrap();
        assert!(o.value >= r.dual_value * (1.0 - 1e-9));
        assert!((o.value - r.primal_value).abs() <= 1e-6 * o.value);
    }
}
