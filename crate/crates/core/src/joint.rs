//! Alternating resource/trajectory optimization, the baseline designs and
//! the constraint checker used on every output.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use nalgebra::Vector2;

use crate::channel::{rate_from_snr, SlotSnr};
use crate::dual::{solve_resources, DesignMask, DualOptions};
use crate::energy::{local_comp_energy, max_endurance_speed, total_objective};
use crate::error::{MecError, Result};
use crate::kernel::barrier::BarrierOptions;
use crate::kernel::scalar::bisect_increasing;
use crate::model::{IterationCounts, ResourceAllocation, SolveReport, SolveStatus, Trajectory};
use crate::scenario::Scenario;
use crate::trajectory::{trajectory_step, ExpansionPoint};

/// Relative tolerance of every constraint family in [`check_feasibility`].
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct JointOptions {
    pub dual: DualOptions,
    pub barrier: BarrierOptions,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for JointOptions {
    fn default() -> Self {
        Self {
            dual: DualOptions::default(),
            barrier: BarrierOptions::default(),
            tol: 1e-4,
            max_iter: 50,
        }
    }
}

/// The proposed design and the four comparison designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Design {
    Proposed,
    /// Resource optimization on the straight-line path only.
    StraightFlight,
    /// No relaying to the AP.
    NoAp,
    /// No UAV computing; local computing and relaying remain.
    OnlyRelay,
    /// Every bit computed at its TD.
    LocalOnly,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::Proposed,
        Design::StraightFlight,
        Design::NoAp,
        Design::OnlyRelay,
        Design::LocalOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Design::Proposed => "proposed",
            Design::StraightFlight => "straight",
            Design::NoAp => "no-ap",
            Design::OnlyRelay => "only-relay",
            Design::LocalOnly => "local-only",
        }
    }

    pub fn mask(&self) -> DesignMask {
        match self {
            Design::Proposed | Design::StraightFlight => DesignMask::FULL,
            Design::NoAp => DesignMask::NO_RELAY,
            Design::OnlyRelay => DesignMask::RELAY_ONLY,
            Design::LocalOnly => DesignMask::LOCAL_ONLY,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Design::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown design `{s}` (expected one of: proposed, straight, no-ap, only-relay, local-only)"
                )
            })
    }
}

/// Allocation, path and run report of one solved design.
#[derive(Debug, Clone)]
pub struct JointSolution {
    pub alloc: ResourceAllocation,
    pub traj: Trajectory,
    pub report: SolveReport,
}

/// Straight line from `q0` to `qF` at constant speed.
pub fn initial_trajectory(sc: &Scenario) -> Trajectory {
    let n = sc.num_slots;
    Trajectory::new(
        (0..=n)
            .map(|i| sc.q0 + (sc.qf - sc.q0) * (i as f64 / n as f64))
            .collect(),
    )
}

/// Alternates the resource solve and one trajectory step, starting from
/// the straight line, until the relative objective decrease drops below
/// `opts.tol`. A step that would raise the objective is discarded.
pub fn solve_joint(sc: &Scenario, opts: &JointOptions) -> Result<JointSolution> {
    solve_joint_masked(sc, DesignMask::FULL, opts)
}

pub fn solve_joint_masked(
    sc: &Scenario,
    mask: DesignMask,
    opts: &JointOptions,
) -> Result<JointSolution> {
    let mut traj = initial_trajectory(sc);
    let mut res = solve_resources(sc, &traj, mask, &opts.dual, None)?;
    let mut energy = total_objective(&res.alloc, &traj, sc);
    let mut iterations = IterationCounts {
        outer: 0,
        dual: vec![res.iterations],
        trajectory: Vec::new(),
    };
    let mut objective_trace = vec![energy.total];
    let mut breakdown_trace = vec![energy];
    let mut status = SolveStatus::IterationLimit;
    for j in 1..=opts.max_iter {
        let point = ExpansionPoint::new(traj.clone(), sc, j - 1);
        let step = trajectory_step(&point, &res.alloc, sc, mask, &opts.barrier)?;
        iterations.trajectory.push(step.newton_steps);
        if !step.moved {
            status = SolveStatus::Converged;
            break;
        }
        let cand = match solve_resources(sc, &step.traj, mask, &opts.dual, Some(&res.duals)) {
            Ok(c) => c,
            Err(MecError::Infeasible { .. }) => {
                status = SolveStatus::Converged;
                break;
            }
            Err(e) => return Err(e),
        };
        iterations.dual.push(cand.iterations);
        let e = total_objective(&cand.alloc, &step.traj, sc);
        debug!("outer iteration {j}: objective {:.9e}", e.total);
        if e.total > energy.total {
            status = SolveStatus::Converged;
            break;
        }
        let decrease = (energy.total - e.total) / energy.total.abs().max(f64::MIN_POSITIVE);
        traj = step.traj;
        res = cand;
        energy = e;
        objective_trace.push(energy.total);
        breakdown_trace.push(energy);
        iterations.outer = j;
        if decrease < opts.tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    info!(
        "joint solve finished after {} outer iterations: {:.9e} J ({})",
        iterations.outer,
        energy.total,
        status.as_str()
    );
    let feasibility = check_feasibility(&res.alloc, &traj, sc, mask);
    Ok(JointSolution {
        alloc: res.alloc,
        traj,
        report: SolveReport {
            objective_trace,
            breakdown_trace,
            energy,
            iterations,
            feasibility,
            status,
        },
    })
}

fn single_point(
    alloc: ResourceAllocation,
    traj: Trajectory,
    sc: &Scenario,
    mask: DesignMask,
    dual_iterations: usize,
    status: SolveStatus,
) -> JointSolution {
    let energy = total_objective(&alloc, &traj, sc);
    let feasibility = check_feasibility(&alloc, &traj, sc, mask);
    JointSolution {
        alloc,
        traj,
        report: SolveReport {
            objective_trace: vec![energy.total],
            breakdown_trace: vec![energy],
            energy,
            iterations: IterationCounts {
                outer: 0,
                dual: vec![dual_iterations],
                trajectory: Vec::new(),
            },
            feasibility,
            status,
        },
    }
}

/// Resource optimization on the fixed straight-line path.
pub fn baseline_straight_flight(sc: &Scenario, opts: &JointOptions) -> Result<JointSolution> {
    let traj = initial_trajectory(sc);
    let res = solve_resources(sc, &traj, DesignMask::FULL, &opts.dual, None)?;
    let status = if res.converged {
        SolveStatus::Converged
    } else {
        SolveStatus::IterationLimit
    };
    Ok(single_point(
        res.alloc,
        traj,
        sc,
        DesignMask::FULL,
        res.iterations,
        status,
    ))
}

/// Joint optimization without relaying to the AP.
pub fn baseline_no_ap(sc: &Scenario, opts: &JointOptions) -> Result<JointSolution> {
    solve_joint_masked(sc, DesignMask::NO_RELAY, opts)
}

/// Joint optimization without UAV computing.
pub fn baseline_only_relaying(sc: &Scenario, opts: &JointOptions) -> Result<JointSolution> {
    solve_joint_masked(sc, DesignMask::RELAY_ONLY, opts)
}

/// Every TD computes its whole task locally while the UAV flies from `q0`
/// to `qF` at the maximum-endurance speed.
pub fn baseline_local_only(sc: &Scenario) -> Result<JointSolution> {
    let cap = sc.local_cap_bits();
    let mut alloc = ResourceAllocation::zeros(sc.num_tds, sc.num_slots);
    for k in 0..sc.num_tds {
        for n in 0..sc.num_slots {
            let l = sc.task_min[k][n];
            if l > cap * (1.0 + 1e-12) {
                return Err(MecError::Infeasible {
                    k,
                    n,
                    reason: format!("{l} bits exceed the local cap of {cap} bits"),
                });
            }
            alloc.l_local[(k, n)] = l.min(cap);
        }
    }
    let traj = endurance_path(sc);
    Ok(single_point(
        alloc,
        traj,
        sc,
        DesignMask::LOCAL_ONLY,
        0,
        SolveStatus::Converged,
    ))
}

/// Closed-form energy of the local-only design, `sum E_loc + w T P(v_me)`.
pub fn local_only_energy(sc: &Scenario) -> f64 {
    let comp: f64 = sc
        .task_min
        .iter()
        .flatten()
        .map(|&l| local_comp_energy(l, sc))
        .sum();
    let v = max_endurance_speed(&sc.aero);
    comp + sc.flight_weight * sc.period() * crate::energy::flight_power(v, &sc.aero)
}

/// Path of `N` equal chords on a circular arc from `q0` to `qF`, flown at the
/// maximum-endurance speed. Falls back to the straight line when that speed
/// cannot cover `|qF - q0|`.
pub fn endurance_path(sc: &Scenario) -> Trajectory {
    let n = sc.num_slots;
    let chord = max_endurance_speed(&sc.aero).min(sc.v_max) * sc.slot_len;
    let span = sc.qf - sc.q0;
    let d = span.norm();
    if chord * n as f64 <= d || n < 2 {
        return initial_trajectory(sc);
    }
    // N chords subtending theta each span sin(N theta / 2) / sin(theta / 2)
    // chord lengths, decreasing from N at theta = 0 to 0 at 2 pi / N.
    let ratio = |theta: f64| (n as f64 * theta / 2.0).sin() / (theta / 2.0).sin();
    let hi = 2.0 * std::f64::consts::PI / n as f64;
    let theta = bisect_increasing(|t| d / chord - ratio(t), 1e-9 * hi, hi, 1e-15 * hi);
    let radius = chord / (2.0 * (theta / 2.0).sin());
    let half = n as f64 * theta / 2.0;
    let u = if d > 0.0 {
        span / d
    } else {
        Vector2::new(1.0, 0.0)
    };
    let normal = Vector2::new(-u[1], u[0]);
    let mid = (sc.q0 + sc.qf) / 2.0;
    let mut pts: Vec<Vector2<f64>> = (0..=n)
        .map(|i| {
            let phi = -half + i as f64 * theta;
            mid + radius * (phi.sin() * u + (phi.cos() - half.cos()) * normal)
        })
        .collect();
    pts[0] = sc.q0;
    pts[n] = sc.qf;
    Trajectory::new(pts)
}

/// Solves one design.
pub fn solve_design(sc: &Scenario, design: Design, opts: &JointOptions) -> Result<JointSolution> {
    match design {
        Design::Proposed => solve_joint(sc, opts),
        Design::StraightFlight => baseline_straight_flight(sc, opts),
        Design::NoAp => baseline_no_ap(sc, opts),
        Design::OnlyRelay => baseline_only_relaying(sc, opts),
        Design::LocalOnly => baseline_local_only(sc),
    }
}

/// Largest relative violation per constraint family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeasibilityReport {
    pub families: Vec<(&'static str, f64)>,
    /// `|sum_n l_h - sum_n t1 r1| / max(sum_n t1 r1, 1)` over TDs: how far the
    /// last causality prefix is from equality.
    pub horizon_gap: f64,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        self.families.iter().map(|f| f.1).fold(0.0, f64::max)
    }

    pub fn family(&self, name: &str) -> Option<f64> {
        self.families.iter().find(|f| f.0 == name).map(|f| f.1)
    }
}

/// Evaluates every constraint family of the joint problem, plus the design
/// restrictions of `mask`, on `(alloc, traj)`.
pub fn check_feasibility(
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    sc: &Scenario,
    mask: DesignMask,
) -> FeasibilityReport {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    if alloc.num_tds() != kk || alloc.num_slots() != nn || traj.num_slots() != nn {
        return FeasibilityReport {
            families: vec![("dimensions", f64::INFINITY)],
            horizon_gap: f64::INFINITY,
            pass: false,
        };
    }
    let b0 = sc.subcarrier_bw;
    let cap_u = sc.local_cap_bits();
    let cap_h = sc.uav_cap_bits();
    let mut nonneg = 0.0f64;
    let mut task = 0.0f64;
    let mut budget = 0.0f64;
    let mut power = 0.0f64;
    let mut local_cap = 0.0f64;
    let mut uav_cap = 0.0f64;
    let mut causality = 0.0f64;
    let mut relay = 0.0f64;
    let mut design = 0.0f64;
    let mut horizon_gap = 0.0f64;
    for k in 0..kk {
        let mut offloaded = 0.0;
        let mut computed = 0.0;
        for n in 0..nn {
            let (lu, lh, la) = (
                alloc.l_local[(k, n)],
                alloc.l_uav[(k, n)],
                alloc.l_ap[(k, n)],
            );
            let t = alloc.durations[(k, n)];
            let p = alloc.powers[(k, n)];
            for v in [lu, lh, la] {
                nonneg = nonneg.max(-v / cap_u);
            }
            for m in 0..3 {
                nonneg = nonneg.max(-t[m] / sc.slot_len);
                nonneg = nonneg.max(-p[m] / sc.p_td_max);
            }
            let need = sc.task_min[k][n];
            task = task.max((need - (lu + lh + la)) / need.max(1.0));
            budget = budget.max((t[0] + t[1] + t[2] - sc.slot_len) / sc.slot_len);
            power = power
                .max((p[0] - sc.p_td_max) / sc.p_td_max)
                .max((p[1] - sc.p_td_max) / sc.p_td_max)
                .max((p[2] - sc.p_uav_max) / sc.p_uav_max);
            local_cap = local_cap.max((lu - cap_u) / cap_u);
            uav_cap = uav_cap.max((lh - cap_h) / cap_h);
            let snr = SlotSnr::at(sc, &traj.position(n), k);
            let r1 = t[0] * rate_from_snr(p[0], snr.uplink, b0);
            let r2 = t[1] * rate_from_snr(p[1], snr.uplink, b0);
            let r3 = t[2] * rate_from_snr(p[2], snr.relay, b0);
            offloaded += r1;
            computed += lh;
            causality = causality.max((computed - offloaded) / offloaded.max(cap_h));
            relay = relay
                .max((la - r2) / la.max(1.0))
                .max((la - r3) / la.max(1.0));
            if !mask.allow_uav_compute {
                design = design.max(lh / cap_h).max(t[0] / sc.slot_len);
            }
            if !mask.allow_relay {
                design = design
                    .max(la / cap_u)
                    .max(t[1] / sc.slot_len)
                    .max(t[2] / sc.slot_len);
            }
        }
        horizon_gap = horizon_gap.max((offloaded - computed).abs() / offloaded.max(1.0));
    }
    let (speed, pin) = traj.violations(sc);
    let reach = (sc.qf - sc.q0).norm().max(1.0);
    let families = vec![
        ("nonnegativity", nonneg),
        ("task", task),
        ("subslot_budget", budget),
        ("power", power),
        ("local_cap", local_cap),
        ("uav_cap", uav_cap),
        ("causality", causality),
        ("relay", relay),
        ("design", design),
        ("speed", speed),
        ("endpoints", pin / reach),
    ];
    let pass = families.iter().all(|f| f.1 <= FEASIBILITY_TOL);
    FeasibilityReport {
        families,
        horizon_gap,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::flight_energy;

    #[test]
    fn straight_line_geometry() {
        let sc = Scenario::default_with(6.0, 4e5).unwrap();
        let t = initial_trajectory(&sc);
        assert_eq!(t.waypoints.len(), sc.num_slots + 1);
        assert!(t.validate(&sc, 1e-12).is_ok());
        let speeds = t.speeds(sc.slot_len);
        let v = (sc.qf - sc.q0).norm() / 6.0;
        assert!(speeds.iter().all(|s| (s - v).abs() < 1e-9));
        let mut hover = sc.clone();
        hover.qf = hover.q0;
        let t = initial_trajectory(&hover);
        assert!(t.waypoints.iter().all(|w| *w == hover.q0));
    }

    #[test]
    fn endurance_path_flies_at_endurance_speed() {
        let sc = Scenario::default_with(6.0, 2e5).unwrap();
        let path = endurance_path(&sc);
        assert!(path.validate(&sc, 1e-9).is_ok());
        let v = max_endurance_speed(&sc.aero);
        for s in path.speeds(sc.slot_len) {
            assert!((s - v).abs() < 1e-6 * v, "{s} vs {v}");
        }
        let fly = flight_energy(&path, &sc.aero, sc.slot_len);
        let closed = 6.0 * crate::energy::flight_power(v, &sc.aero);
        assert!((fly - closed).abs() < 1e-6 * closed);
    }

    #[test]
    fn local_only_closed_form() {
        let sc = Scenario::default_with(6.0, 4e5).unwrap();
        let sol = baseline_local_only(&sc).unwrap();
        assert!(sol.report.feasibility.pass);
        let per_slot = local_comp_energy(4e5, &sc);
        assert!((per_slot - 1.6).abs() < 1e-12);
        assert!((sol.report.energy.total - local_only_energy(&sc)).abs() < 1e-6);
        let over = Scenario::default_with(6.0, 4.5e5).unwrap();
        assert!(matches!(
            baseline_local_only(&over),
            Err(MecError::Infeasible { .. })
        ));
    }

    #[test]
    fn checker_flags_budget_overrun() {
        let sc = Scenario::default_with(6.0, 0.0).unwrap();
        let traj = initial_trajectory(&sc);
        let mut alloc = ResourceAllocation::zeros(sc.num_tds, sc.num_slots);
        assert!(check_feasibility(&alloc, &traj, &sc, DesignMask::FULL).pass);
        alloc.durations[(0, 0)] = [0.5 * sc.slot_len, 0.3 * sc.slot_len, 0.3 * sc.slot_len];
        let r = check_feasibility(&alloc, &traj, &sc, DesignMask::FULL);
        assert!(!r.pass);
        assert!((r.family("subslot_budget").unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn design_names_roundtrip() {
        for d in Design::ALL {
            assert_eq!(d.as_str().parse::<Design>().unwrap(), d);
        }
        assert!("no-relay".parse::<Design>().is_err());
    }
}
