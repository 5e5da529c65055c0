//! One convexified trajectory step: speed and induced-power slacks, tangent
//! lower bounds on the link rates and on the induced-power relation, and the
//! resulting smooth convex subproblem.

use log::debug;
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::channel::{log2_1p, LOG2_E};
use crate::dual::DesignMask;
use crate::energy::{comm_energy, comp_energy, cubic_energy, flight_energy, induced_factor};
use crate::error::{MecError, Result};
use crate::kernel::barrier::{
    barrier_solve, BarrierOptions, BarrierStatus, SmoothConvex, SparseGrad, SparseHess,
};
use crate::model::{Grid, ResourceAllocation, Trajectory};
use crate::scenario::{AeroParams, Scenario};

const MBIT: f64 = 1e6;
/// Relaxation of bit constraints that are tight at the expansion point (Mbit).
const BIT_MARGIN: f64 = 1e-9;
/// Offsets that move the slack start strictly inside their constraints.
const SPEED_OFFSET: f64 = 1e-6;
const INDUCED_OFFSET: f64 = 1e-9;
/// Lower bound on the induced-power slack.
pub const INDUCED_FLOOR: f64 = 1e-6;
/// Largest constraint value at the expansion point that is still treated as
/// rounding (relative).
const START_TOL: f64 = 1e-6;

/// Tight slacks of a trajectory: `v_n = |v[n]|` and the induced factor at
/// that speed, so that [`p_appro`] reproduces the flight power exactly.
pub fn init_slacks(traj: &Trajectory, sc: &Scenario) -> (Vec<f64>, Vec<f64>) {
    let speed = traj.speeds(sc.slot_len);
    let induced = speed.iter().map(|&v| induced_factor(v, &sc.aero)).collect();
    (speed, induced)
}

/// Point around which the trajectory subproblem is convexified.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionPoint {
    pub traj: Trajectory,
    pub speed: Vec<f64>,
    pub induced: Vec<f64>,
    pub iteration: usize,
}

impl ExpansionPoint {
    pub fn new(traj: Trajectory, sc: &Scenario, iteration: usize) -> Self {
        let (speed, induced) = init_slacks(&traj, sc);
        Self {
            traj,
            speed,
            induced,
            iteration,
        }
    }
}

/// Exact right-hand side `u^2 + |v|^2 / v0^2` of the induced-power relation.
pub fn chi_exact(u: f64, velocity: &Vector2<f64>, aero: &AeroParams) -> f64 {
    let v0 = aero.induced_velocity;
    u * u + velocity.norm_squared() / (v0 * v0)
}

/// First-order expansion of [`chi_exact`] at the point's slack and velocity
/// of slot `n`; affine in `(u, velocity)`.
pub fn chi_lb(
    u: f64,
    velocity: &Vector2<f64>,
    point: &ExpansionPoint,
    n: usize,
    sc: &Scenario,
) -> f64 {
    let uj = point.induced[n];
    let vj = point.traj.velocity(n, sc.slot_len);
    let v0 = sc.aero.induced_velocity;
    uj * uj + 2.0 * uj * (u - uj) + (vj.norm_squared() + 2.0 * vj.dot(&(velocity - vj))) / (v0 * v0)
}

/// Convex surrogate of the flight power with the induced factor replaced by
/// the slack `u`.
pub fn p_appro(v: f64, u: f64, aero: &AeroParams) -> f64 {
    let tip2 = aero.tip_speed * aero.tip_speed;
    aero.blade_profile_power * (1.0 + 3.0 * v * v / tip2)
        + aero.induced_power * u
        + aero.parasite_coeff() * v * v * v
}

/// Tangent lower bound of `B0 log2(1 + p snr0 / (H^2 + x))` in the squared
/// horizontal distance `x = |q - anchor|^2`, taken at the expansion position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    pub anchor: Vector2<f64>,
    pub x0: f64,
    /// Exact rate at the expansion position (bit/s).
    pub value: f64,
    /// Derivative in `x` (bit/s per m^2), never positive.
    pub slope: f64,
}

impl RateBound {
    pub fn new(
        anchor: Vector2<f64>,
        q_j: &Vector2<f64>,
        ref_snr: f64,
        power: f64,
        sc: &Scenario,
    ) -> Self {
        let h2 = sc.altitude * sc.altitude;
        let x0 = (q_j - anchor).norm_squared();
        let c = power * ref_snr;
        Self {
            anchor,
            x0,
            value: sc.subcarrier_bw * log2_1p(c / (h2 + x0)),
            slope: -sc.subcarrier_bw * LOG2_E * c / ((h2 + x0) * (h2 + x0 + c)),
        }
    }

    pub fn eval(&self, q: &Vector2<f64>) -> f64 {
        self.value + self.slope * ((q - self.anchor).norm_squared() - self.x0)
    }
}

/// Lower bound on the TD-to-UAV rate used for UAV computing.
pub fn rate_lb_td_compute(
    q: &Vector2<f64>,
    k: usize,
    n: usize,
    point: &ExpansionPoint,
    p1: f64,
    sc: &Scenario,
) -> f64 {
    RateBound::new(
        sc.td_pos[k],
        &point.traj.position(n),
        sc.ref_snr_uav,
        p1,
        sc,
    )
    .eval(q)
}

/// Lower bound on the TD-to-UAV rate used for relaying.
pub fn rate_lb_td_relay(
    q: &Vector2<f64>,
    k: usize,
    n: usize,
    point: &ExpansionPoint,
    p2: f64,
    sc: &Scenario,
) -> f64 {
    RateBound::new(
        sc.td_pos[k],
        &point.traj.position(n),
        sc.ref_snr_uav,
        p2,
        sc,
    )
    .eval(q)
}

/// Lower bound on the UAV-to-AP forwarding rate.
pub fn rate_lb_uav_ap(
    q: &Vector2<f64>,
    n: usize,
    point: &ExpansionPoint,
    p3: f64,
    sc: &Scenario,
) -> f64 {
    RateBound::new(sc.ap_pos, &point.traj.position(n), sc.ref_snr_ap, p3, sc).eval(q)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Point {
    Fixed(Vector2<f64>),
    Var(usize),
}

impl Point {
    fn at(&self, x: &DVector<f64>) -> Vector2<f64> {
        match *self {
            Point::Fixed(p) => p,
            Point::Var(i) => Vector2::new(x[i], x[i + 1]),
        }
    }
}

#[derive(Debug, Clone)]
struct Layout {
    l_local: Grid<usize>,
    l_uav: Grid<Option<usize>>,
    l_ap: Grid<Option<usize>>,
    points: Vec<Point>,
    speed: Vec<usize>,
    induced: Vec<usize>,
    dim: usize,
}

#[derive(Debug, Clone)]
enum Constraint {
    /// `sum c x + sum w |p - anchor|^2 + constant <= 0` with `w >= 0`.
    Quadratic {
        linear: Vec<(usize, f64)>,
        squares: Vec<(usize, Vector2<f64>, f64)>,
        constant: f64,
    },
    /// `|to - from|^2 - cap^2 <= 0`.
    SegmentCap { from: Point, to: Point, cap_sq: f64 },
    /// `|v|^2 / s - s <= 0`, the cone `s >= |v|` for `s > 0`.
    Cone {
        from: Point,
        to: Point,
        speed: usize,
    },
    /// `1 / u^2 - chi_lb(u, v) <= 0`.
    Induced {
        from: Point,
        to: Point,
        induced: usize,
        u_j: f64,
        v_j: Vector2<f64>,
    },
}

/// Convexified trajectory problem around one expansion point with the
/// durations and powers of the current allocation held fixed.
#[derive(Debug, Clone)]
pub struct TrajectorySubproblem {
    sc: Scenario,
    layout: Layout,
    constraints: Vec<Constraint>,
    /// Relaxed right-hand sides.
    bounds: Vec<f64>,
    start: DVector<f64>,
    comm: f64,
    cubic_local: f64,
    cubic_uav: f64,
    /// Exact objective of the expansion point with the fixed allocation.
    pub expansion_objective: f64,
}

fn velocity(from: &Point, to: &Point, x: &DVector<f64>, dt: f64) -> Vector2<f64> {
    (to.at(x) - from.at(x)) / dt
}

/// Chain rule through `v = (to - from) / dt` for a function with velocity
/// gradient `gv` and Hessian `hv`.
fn push_velocity(
    from: &Point,
    to: &Point,
    dt: f64,
    gv: &Vector2<f64>,
    hv: Option<&Matrix2<f64>>,
    grad: &mut SparseGrad,
    hess: &mut SparseHess,
) {
    let ends = [(to, 1.0 / dt), (from, -1.0 / dt)];
    for (p, s) in ends {
        if let Point::Var(b) = *p {
            grad.push((b, s * gv[0]));
            grad.push((b + 1, s * gv[1]));
        }
    }
    let Some(hv) = hv else { return };
    for (p, s) in ends {
        let Point::Var(a) = *p else { continue };
        for (r, z) in ends {
            let Point::Var(b) = *r else { continue };
            for c in 0..2 {
                for d in 0..2 {
                    hess.push((a + c, b + d, s * z * hv[(c, d)]));
                }
            }
        }
    }
}

impl Constraint {
    fn value(&self, x: &DVector<f64>, dt: f64, v0_sq: f64) -> f64 {
        match self {
            Constraint::Quadratic {
                linear,
                squares,
                constant,
            } => {
                let lin: f64 = linear.iter().map(|&(i, c)| c * x[i]).sum();
                let sq: f64 = squares
                    .iter()
                    .map(|&(b, w, c)| c * (Vector2::new(x[b], x[b + 1]) - w).norm_squared())
                    .sum();
                lin + sq + constant
            }
            Constraint::SegmentCap { from, to, cap_sq } => {
                (to.at(x) - from.at(x)).norm_squared() - cap_sq
            }
            Constraint::Cone { from, to, speed } => {
                let s = x[*speed];
                velocity(from, to, x, dt).norm_squared() / s - s
            }
            Constraint::Induced {
                from,
                to,
                induced,
                u_j,
                v_j,
            } => {
                let u = x[*induced];
                let v = velocity(from, to, x, dt);
                let chi = u_j * u_j
                    + 2.0 * u_j * (u - u_j)
                    + (v_j.norm_squared() + 2.0 * v_j.dot(&(v - v_j))) / v0_sq;
                1.0 / (u * u) - chi
            }
        }
    }

    fn derivatives(
        &self,
        x: &DVector<f64>,
        dt: f64,
        v0_sq: f64,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    ) {
        match self {
            Constraint::Quadratic {
                linear, squares, ..
            } => {
                grad.extend_from_slice(linear);
                for &(b, w, c) in squares {
                    grad.push((b, 2.0 * c * (x[b] - w[0])));
                    grad.push((b + 1, 2.0 * c * (x[b + 1] - w[1])));
                    hess.push((b, b, 2.0 * c));
                    hess.push((b + 1, b + 1, 2.0 * c));
                }
            }
            Constraint::SegmentCap { from, to, .. } => {
                // Written through v = (to - from) / dt with dt = 1.
                let d = to.at(x) - from.at(x);
                let h = Matrix2::identity() * 2.0;
                push_velocity(from, to, 1.0, &(2.0 * d), Some(&h), grad, hess);
            }
            Constraint::Cone { from, to, speed } => {
                let s = x[*speed];
                let v = velocity(from, to, x, dt);
                let h = Matrix2::identity() * (2.0 / s);
                push_velocity(from, to, dt, &(2.0 * v / s), Some(&h), grad, hess);
                grad.push((*speed, -v.norm_squared() / (s * s) - 1.0));
                hess.push((*speed, *speed, 2.0 * v.norm_squared() / (s * s * s)));
                // Cross terms between the speed slack and the velocity.
                let cross = -2.0 * v / (s * s);
                for (p, sign) in [(to, 1.0 / dt), (from, -1.0 / dt)] {
                    if let Point::Var(b) = *p {
                        for c in 0..2 {
                            hess.push((b + c, *speed, sign * cross[c]));
                            hess.push((*speed, b + c, sign * cross[c]));
                        }
                    }
                }
            }
            Constraint::Induced {
                from,
                to,
                induced,
                u_j,
                v_j,
            } => {
                let u = x[*induced];
                grad.push((*induced, -2.0 / (u * u * u) - 2.0 * u_j));
                hess.push((*induced, *induced, 6.0 / (u * u * u * u)));
                push_velocity(from, to, dt, &(-2.0 * v_j / v0_sq), None, grad, hess);
            }
        }
    }
}

fn cubic_coeff(cap_coeff: f64, cycles_per_bit: f64, slot_len: f64) -> f64 {
    cubic_energy(MBIT, cap_coeff, cycles_per_bit, slot_len)
}

impl TrajectorySubproblem {
    /// Convexifies around `point` with the durations and powers of `alloc`
    /// held fixed. Rejects an expansion point that violates the linearized
    /// constraints beyond rounding.
    pub fn build(
        point: &ExpansionPoint,
        alloc: &ResourceAllocation,
        sc: &Scenario,
        mask: DesignMask,
    ) -> Result<Self> {
        let (kk, nn) = (sc.num_tds, sc.num_slots);
        let dt = sc.slot_len;
        if point.traj.num_slots() != nn || alloc.num_slots() != nn || alloc.num_tds() != kk {
            return Err(MecError::Invalid {
                field: "expansion point".into(),
                reason: "dimensions do not match the scenario".into(),
            });
        }
        let relay_usable = |k: usize, n: usize| {
            let (t, p) = (alloc.durations[(k, n)], alloc.powers[(k, n)]);
            mask.allow_relay && t[1] * p[1] > 0.0 && t[2] * p[2] > 0.0
        };

        let mut dim = 0;
        let mut next = |count: usize| {
            let i = dim;
            dim += count;
            i
        };
        let l_local = Grid::from_fn(kk, nn, |_, _| next(1));
        let l_uav = Grid::from_fn(kk, nn, |_, _| mask.allow_uav_compute.then(|| next(1)));
        let l_ap = Grid::from_fn(kk, nn, |k, n| relay_usable(k, n).then(|| next(1)));
        let mut points = Vec::with_capacity(nn + 1);
        points.push(Point::Fixed(sc.q0));
        for _ in 1..nn {
            points.push(Point::Var(next(2)));
        }
        points.push(Point::Fixed(sc.qf));
        let speed: Vec<usize> = (0..nn).map(|_| next(1)).collect();
        let induced: Vec<usize> = (0..nn).map(|_| next(1)).collect();
        let layout = Layout {
            l_local,
            l_uav,
            l_ap,
            points,
            speed,
            induced,
            dim,
        };

        let mut start = DVector::zeros(dim);
        for k in 0..kk {
            for n in 0..nn {
                start[layout.l_local[(k, n)]] = alloc.l_local[(k, n)] / MBIT;
                if let Some(i) = layout.l_uav[(k, n)] {
                    start[i] = alloc.l_uav[(k, n)] / MBIT;
                }
                if let Some(i) = layout.l_ap[(k, n)] {
                    start[i] = alloc.l_ap[(k, n)] / MBIT;
                }
            }
        }
        for (n, p) in layout.points.iter().enumerate() {
            if let Point::Var(b) = *p {
                let q = point.traj.position(n);
                start[b] = q[0];
                start[b + 1] = q[1];
            }
        }
        for n in 0..nn {
            start[layout.speed[n]] = point.traj.velocity(n, dt).norm() + SPEED_OFFSET;
            start[layout.induced[n]] = point.induced[n] + INDUCED_OFFSET;
        }

        // Each constraint carries the scale used to judge rounding at the start.
        let mut cons: Vec<(Constraint, f64)> = Vec::new();
        let bound = |i: usize, c: f64, constant: f64| Constraint::Quadratic {
            linear: vec![(i, c)],
            squares: Vec::new(),
            constant,
        };
        let cap_u = sc.local_cap_bits() / MBIT;
        let cap_h = sc.uav_cap_bits() / MBIT;
        for k in 0..kk {
            for n in 0..nn {
                let lu = layout.l_local[(k, n)];
                cons.push((bound(lu, -1.0, 0.0), 1.0));
                cons.push((bound(lu, 1.0, -cap_u), 1.0));
                let mut task = vec![(lu, -1.0)];
                if let Some(lh) = layout.l_uav[(k, n)] {
                    cons.push((bound(lh, -1.0, 0.0), 1.0));
                    cons.push((bound(lh, 1.0, -cap_h), 1.0));
                    task.push((lh, -1.0));
                }
                if let Some(la) = layout.l_ap[(k, n)] {
                    cons.push((bound(la, -1.0, 0.0), 1.0));
                    task.push((la, -1.0));
                    let q_j = point.traj.position(n);
                    let t = alloc.durations[(k, n)];
                    let p = alloc.powers[(k, n)];
                    let links = [
                        (
                            t[1],
                            RateBound::new(sc.td_pos[k], &q_j, sc.ref_snr_uav, p[1], sc),
                        ),
                        (
                            t[2],
                            RateBound::new(sc.ap_pos, &q_j, sc.ref_snr_ap, p[2], sc),
                        ),
                    ];
                    for (dur, rb) in links {
                        cons.push((
                            rate_constraint(vec![(la, 1.0)], &[(layout.points[n], dur, rb)]),
                            1.0,
                        ));
                    }
                }
                let c = Constraint::Quadratic {
                    linear: task,
                    squares: Vec::new(),
                    constant: sc.task_min[k][n] / MBIT,
                };
                cons.push((c, 1.0));
            }
            if mask.allow_uav_compute {
                let mut linear = Vec::new();
                let mut terms = Vec::new();
                for n in 0..nn {
                    linear.push((layout.l_uav[(k, n)].expect("uav variable"), 1.0));
                    let (t, p) = (alloc.durations[(k, n)][0], alloc.powers[(k, n)][0]);
                    if t * p > 0.0 {
                        let rb = RateBound::new(
                            sc.td_pos[k],
                            &point.traj.position(n),
                            sc.ref_snr_uav,
                            p,
                            sc,
                        );
                        terms.push((layout.points[n], t, rb));
                    }
                    cons.push((rate_constraint(linear.clone(), &terms), 1.0));
                }
            }
        }
        let step_cap = dt * sc.v_max;
        for n in 0..nn {
            let (from, to) = (layout.points[n], layout.points[n + 1]);
            if matches!(from, Point::Var(_)) || matches!(to, Point::Var(_)) {
                let cap_sq = step_cap * step_cap;
                cons.push((Constraint::SegmentCap { from, to, cap_sq }, cap_sq));
            }
            let s = layout.speed[n];
            cons.push((bound(s, -1.0, 0.0), 1.0));
            cons.push((Constraint::Cone { from, to, speed: s }, 1.0));
            let u = layout.induced[n];
            cons.push((bound(u, -1.0, INDUCED_FLOOR), 1.0));
            cons.push((
                Constraint::Induced {
                    from,
                    to,
                    induced: u,
                    u_j: point.induced[n],
                    v_j: point.traj.velocity(n, dt),
                },
                1.0,
            ));
        }

        let v0_sq = sc.aero.induced_velocity.powi(2);
        let mut bounds = Vec::with_capacity(cons.len());
        for (c, scale) in &cons {
            let f = c.value(&start, dt, v0_sq);
            if f.is_nan() || f > START_TOL * scale {
                return Err(MecError::Numerical(format!(
                    "expansion point violates a linearized constraint by {f:.3e}"
                )));
            }
            let margin = match c {
                Constraint::Quadratic { .. } => BIT_MARGIN,
                _ => 1e-12 * scale,
            };
            bounds.push(if f < -margin {
                0.0
            } else {
                f.max(0.0) + margin
            });
        }
        let comm = comm_energy(alloc);
        let expansion_objective = comm
            + comp_energy(alloc, sc)
            + sc.flight_weight * flight_energy(&point.traj, &sc.aero, dt);
        Ok(Self {
            sc: sc.clone(),
            layout,
            constraints: cons.into_iter().map(|(c, _)| c).collect(),
            bounds,
            start,
            comm,
            cubic_local: cubic_coeff(sc.cap_coeff_td, sc.cycles_per_bit_td, dt),
            cubic_uav: cubic_coeff(sc.cap_coeff_uav, sc.cycles_per_bit_uav, dt),
            expansion_objective,
        })
    }

    /// Strictly feasible start built from the expansion point.
    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn trajectory(&self, x: &DVector<f64>) -> Trajectory {
        Trajectory::new(self.layout.points.iter().map(|p| p.at(x)).collect())
    }

    /// Bits of `x` written into a copy of `alloc`, clipped at zero.
    pub fn allocation(&self, x: &DVector<f64>, alloc: &ResourceAllocation) -> ResourceAllocation {
        let mut out = alloc.clone();
        let l = &self.layout;
        for k in 0..self.sc.num_tds {
            for n in 0..self.sc.num_slots {
                out.l_local[(k, n)] = x[l.l_local[(k, n)]].max(0.0) * MBIT;
                out.l_uav[(k, n)] = l.l_uav[(k, n)].map_or(0.0, |i| x[i].max(0.0) * MBIT);
                out.l_ap[(k, n)] = l.l_ap[(k, n)].map_or(0.0, |i| x[i].max(0.0) * MBIT);
            }
        }
        out
    }

    /// Largest excess of any constraint over zero (not over its relaxed
    /// right-hand side).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let v0_sq = self.sc.aero.induced_velocity.powi(2);
        self.constraints
            .iter()
            .map(|c| c.value(x, self.sc.slot_len, v0_sq))
            .fold(0.0, f64::max)
    }
}

/// `sum linear - sum_i t_i R_i(q_i) / MBIT <= 0` with each `R_i` a tangent
/// rate bound; fixed positions fold into the constant.
fn rate_constraint(linear: Vec<(usize, f64)>, terms: &[(Point, f64, RateBound)]) -> Constraint {
    let mut constant = 0.0;
    let mut squares = Vec::new();
    for &(p, t, rb) in terms {
        let c = t / MBIT;
        match p {
            Point::Fixed(q) => constant -= c * rb.eval(&q),
            Point::Var(b) => {
                constant -= c * (rb.value - rb.slope * rb.x0);
                squares.push((b, rb.anchor, -c * rb.slope));
            }
        }
    }
    Constraint::Quadratic {
        linear,
        squares,
        constant,
    }
}

impl SmoothConvex for TrajectorySubproblem {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    fn objective(
        &self,
        x: &DVector<f64>,
        mut deriv: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
    ) -> f64 {
        let l = &self.layout;
        let mut value = self.comm;
        let cubic =
            |i: usize, a: f64, deriv: &mut Option<(&mut DVector<f64>, &mut DMatrix<f64>)>| {
                let z = x[i].max(0.0);
                if let Some((g, h)) = deriv {
                    g[i] += 3.0 * a * z * z;
                    h[(i, i)] += 6.0 * a * z;
                }
                a * z * z * z
            };
        for (&i, &j) in l.l_local.iter().zip(l.l_uav.iter()) {
            value += cubic(i, self.cubic_local, &mut deriv);
            if let Some(j) = j {
                value += cubic(j, self.cubic_uav, &mut deriv);
            }
        }
        let aero = &self.sc.aero;
        let w = self.sc.flight_weight * self.sc.slot_len;
        let tip2 = aero.tip_speed * aero.tip_speed;
        let par = aero.parasite_coeff();
        for n in 0..self.sc.num_slots {
            let (s, u) = (l.speed[n], l.induced[n]);
            let v = x[s];
            value += w * p_appro(v, x[u], aero);
            if let Some((g, h)) = &mut deriv {
                g[s] += w * (6.0 * aero.blade_profile_power * v / tip2 + 3.0 * par * v * v);
                g[u] += w * aero.induced_power;
                h[(s, s)] += w * (6.0 * aero.blade_profile_power / tip2 + 6.0 * par * v.max(0.0));
            }
        }
        value
    }

    fn constraints(&self, x: &DVector<f64>, out: &mut [f64]) {
        let v0_sq = self.sc.aero.induced_velocity.powi(2);
        for ((c, b), o) in self
            .constraints
            .iter()
            .zip(&self.bounds)
            .zip(out.iter_mut())
        {
            *o = c.value(x, self.sc.slot_len, v0_sq) - b;
        }
    }

    fn constraint_derivatives(
        &self,
        x: &DVector<f64>,
        i: usize,
        grad: &mut SparseGrad,
        hess: &mut SparseHess,
    ) {
        let v0_sq = self.sc.aero.induced_velocity.powi(2);
        self.constraints[i].derivatives(x, self.sc.slot_len, v0_sq, grad, hess);
    }
}

/// Outcome of one trajectory step.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub traj: Trajectory,
    /// Input allocation with the re-optimized bits.
    pub alloc: ResourceAllocation,
    /// Subproblem objective at the returned point.
    pub objective: f64,
    pub expansion_objective: f64,
    pub newton_steps: usize,
    pub status: BarrierStatus,
    pub stationarity: f64,
    /// False when the expansion point was returned unchanged.
    pub moved: bool,
}

/// Solves the subproblem and returns its minimizer, or the expansion point
/// itself when the solve does not produce a valid descent.
pub fn solve_trajectory_subproblem(
    tsp: &TrajectorySubproblem,
    point: &ExpansionPoint,
    alloc: &ResourceAllocation,
    opts: &BarrierOptions,
) -> TrajectoryStep {
    let sol = barrier_solve(tsp, tsp.start().clone(), opts);
    let traj = tsp.trajectory(&sol.x);
    let usable = matches!(
        sol.status,
        BarrierStatus::Optimal | BarrierStatus::IterationLimit
    ) && traj.validate(&tsp.sc, 1e-9).is_ok()
        && sol.objective <= tsp.expansion_objective;
    debug!(
        "trajectory step: {:?} after {} Newton steps, objective {:.9e} (expansion {:.9e})",
        sol.status, sol.newton_steps, sol.objective, tsp.expansion_objective
    );
    if usable {
        TrajectoryStep {
            traj,
            alloc: tsp.allocation(&sol.x, alloc),
            objective: sol.objective,
            expansion_objective: tsp.expansion_objective,
            newton_steps: sol.newton_steps,
            status: sol.status,
            stationarity: sol.stationarity,
            moved: true,
        }
    } else {
        TrajectoryStep {
            traj: point.traj.clone(),
            alloc: alloc.clone(),
            objective: tsp.expansion_objective,
            expansion_objective: tsp.expansion_objective,
            newton_steps: sol.newton_steps,
            status: sol.status,
            stationarity: sol.stationarity,
            moved: false,
        }
    }
}

/// Builds and solves one trajectory step around `point`.
pub fn trajectory_step(
    point: &ExpansionPoint,
    alloc: &ResourceAllocation,
    sc: &Scenario,
    mask: DesignMask,
    opts: &BarrierOptions,
) -> Result<TrajectoryStep> {
    let tsp = TrajectorySubproblem::build(point, alloc, sc, mask)?;
    Ok(solve_trajectory_subproblem(&tsp, point, alloc, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve_resources, DualOptions};
    use crate::energy::flight_power;
    use crate::joint::initial_trajectory;

    fn sc() -> Scenario {
        Scenario::default_with(6.0, 4e5).unwrap()
    }

    #[test]
    fn slacks_reproduce_flight_power() {
        let s = sc();
        let hover = Trajectory::new(vec![s.q0; 4]);
        let (v, u) = init_slacks(&hover, &s);
        assert_eq!(v, vec![0.0; 3]);
        assert!(u.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let mut prev = 1.0;
        for i in 1..40 {
            let speed = i as f64 * 0.5;
            let f = induced_factor(speed, &s.aero);
            assert!(f < prev);
            prev = f;
            let rel = p_appro(speed, f, &s.aero) / flight_power(speed, &s.aero) - 1.0;
            assert!(rel.abs() < 1e-14);
        }
    }

    #[test]
    fn surrogate_power_is_convex() {
        let a = sc().aero;
        for i in 0..20 {
            let (v1, u1) = (i as f64, 0.05 + 0.04 * i as f64);
            let (v2, u2) = (19.0 - 0.7 * i as f64, 1.0 - 0.03 * i as f64);
            let mid = p_appro(0.5 * (v1 + v2), 0.5 * (u1 + u2), &a);
            assert!(mid <= 0.5 * (p_appro(v1, u1, &a) + p_appro(v2, u2, &a)) + 1e-12);
        }
    }

    #[test]
    fn rate_bound_is_tangent_global_minorant() {
        let s = sc();
        let qj = Vector2::new(3.0, -7.0);
        let b = RateBound::new(s.td_pos[1], &qj, s.ref_snr_uav, 0.8 * s.p_td_max, &s);
        let exact = |q: &Vector2<f64>| {
            let d = s.altitude * s.altitude + (q - s.td_pos[1]).norm_squared();
            s.subcarrier_bw * (1.0 + 0.8 * s.p_td_max * s.ref_snr_uav / d).log2()
        };
        assert!((b.eval(&qj) - exact(&qj)).abs() <= 1e-9 * exact(&qj));
        assert!(b.slope < 0.0);
        for i in -10..=10 {
            for j in -10..=10 {
                let q = Vector2::new(7.0 * i as f64, 7.0 * j as f64);
                assert!(b.eval(&q) <= exact(&q) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn chi_bound_is_tangent_global_minorant() {
        let s = sc();
        let traj = Trajectory::new(vec![Vector2::new(0.0, 0.0), Vector2::new(1.2, -2.0)]);
        let point = ExpansionPoint::new(traj, &s, 0);
        let vj = point.traj.velocity(0, s.slot_len);
        let uj = point.induced[0];
        let gap = chi_lb(uj, &vj, &point, 0, &s) - chi_exact(uj, &vj, &s.aero);
        assert!(gap.abs() < 1e-12);
        for i in 0..15 {
            let u = 0.05 + 0.1 * i as f64;
            let v = Vector2::new(20.0 - 2.5 * i as f64, -3.0 + 0.7 * i as f64);
            assert!(chi_lb(u, &v, &point, 0, &s) <= chi_exact(u, &v, &s.aero) + 1e-12);
        }
    }

    #[test]
    fn expansion_point_is_feasible_start() {
        let s = sc();
        let traj = initial_trajectory(&s);
        let res =
            solve_resources(&s, &traj, DesignMask::FULL, &DualOptions::default(), None).unwrap();
        let point = ExpansionPoint::new(traj.clone(), &s, 0);
        let tsp = TrajectorySubproblem::build(&point, &res.alloc, &s, DesignMask::FULL).unwrap();
        assert!(tsp.max_violation(tsp.start()) < 1e-12);
        let mut f = vec![0.0; tsp.num_constraints()];
        tsp.constraints(tsp.start(), &mut f);
        assert!(f.iter().all(|&v| v < 0.0));
        assert_eq!(tsp.trajectory(tsp.start()), traj);
    }

    #[test]
    fn step_descends_and_stays_valid() {
        let s = sc();
        let traj = initial_trajectory(&s);
        let res =
            solve_resources(&s, &traj, DesignMask::FULL, &DualOptions::default(), None).unwrap();
        let point = ExpansionPoint::new(traj, &s, 0);
        let step = trajectory_step(
            &point,
            &res.alloc,
            &s,
            DesignMask::FULL,
            &BarrierOptions::default(),
        )
        .unwrap();
        assert!(step.moved);
        assert!(step.objective < step.expansion_objective);
        assert!(step.traj.validate(&s, 1e-9).is_ok());
        let before =
            res.primal_value + s.flight_weight * flight_energy(&point.traj, &s.aero, s.slot_len);
        assert!((step.expansion_objective - before).abs() < 1e-9 * before);
    }

    #[test]
    fn hover_without_tasks_stays_put() {
        let mut f = sc().to_file();
        f.qf_m = f.q0_m;
        let s = Scenario::from_file(f.with_uniform_task(0.0)).unwrap();
        let traj = initial_trajectory(&s);
        let alloc = ResourceAllocation::zeros(s.num_tds, s.num_slots);
        let point = ExpansionPoint::new(traj.clone(), &s, 0);
        let step = trajectory_step(
            &point,
            &alloc,
            &s,
            DesignMask::FULL,
            &BarrierOptions::default(),
        )
        .unwrap();
        assert!(step.objective <= step.expansion_objective);
        assert!(step.traj.validate(&s, 1e-9).is_ok());
        let hover = s.flight_weight * s.period() * flight_power(0.0, &s.aero);
        assert!((step.expansion_objective - hover).abs() < 1e-9 * hover);
    }
}
