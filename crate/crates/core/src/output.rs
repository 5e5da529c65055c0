//! CSV emission. Every float is written as `{:.11e}` (12 significant
//! digits), rows end in `\n`, and column order is fixed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::channel::{rate_from_snr, SlotSnr};
use crate::error::{MecError, Result};
use crate::joint::{Design, JointSolution};
use crate::model::{ResourceAllocation, SolveStatus, Trajectory};
use crate::scenario::Scenario;

pub const CONVERGENCE_HEADER: &str = "iter,objective_j,e_comm_j,e_comp_j,e_fly_j";
pub const TRAJECTORY_HEADER: &str = "n,x_m,y_m,speed_mps";
pub const ALLOCATION_HEADER: &str = "n,k,l_u,l_h,l_a,t1,t2,t3,p1,p2,p3";
pub const CUMULATIVE_HEADER: &str = "n,k,cum_offloaded_bits,cum_computed_bits";
pub const SUMMARY_HEADER: &str = "design,status,objective_j,e_comm_j,e_comp_j,e_fly_j,outer_iterations,feasibility,max_violation,horizon_gap,period_s,task_bits,seed";
pub const SWEEP_HEADER: &str =
    "param_value,design,objective,e_comm,e_comp,e_fly,status,mean_l_u,mean_l_h,mean_l_a";

/// Fixed float format shared by every CSV.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        // Normalize negative zero so reruns cannot differ in sign only.
        format!("{:.11e}", if v == 0.0 { 0.0 } else { v })
    }
}

fn row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn convergence_csv(sol: &JointSolution) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for (i, e) in sol.report.breakdown_trace.iter().enumerate() {
        row(
            &mut out,
            &[
                i.to_string(),
                fmt_f64(e.total),
                fmt_f64(e.comm),
                fmt_f64(e.comp),
                fmt_f64(e.fly),
            ],
        );
    }
    out
}

/// Waypoints `0..=N`; the speed is that of the slot flown from waypoint `n`,
/// and the final waypoint repeats the last slot's speed.
pub fn trajectory_csv(traj: &Trajectory, sc: &Scenario) -> String {
    let mut out = format!("{TRAJECTORY_HEADER}\n");
    let speeds = traj.speeds(sc.slot_len);
    for (n, q) in traj.waypoints.iter().enumerate() {
        let v = speeds.get(n).or(speeds.last()).copied().unwrap_or(0.0);
        row(
            &mut out,
            &[n.to_string(), fmt_f64(q[0]), fmt_f64(q[1]), fmt_f64(v)],
        );
    }
    out
}

/// One row per slot `n = 1..N` and TD `k = 1..K`, slot-major.
pub fn allocation_csv(alloc: &ResourceAllocation) -> String {
    let mut out = format!("{ALLOCATION_HEADER}\n");
    for n in 0..alloc.num_slots() {
        for k in 0..alloc.num_tds() {
            let t = alloc.durations[(k, n)];
            let p = alloc.powers[(k, n)];
            row(
                &mut out,
                &[
                    (n + 1).to_string(),
                    (k + 1).to_string(),
                    fmt_f64(alloc.l_local[(k, n)]),
                    fmt_f64(alloc.l_uav[(k, n)]),
                    fmt_f64(alloc.l_ap[(k, n)]),
                    fmt_f64(t[0]),
                    fmt_f64(t[1]),
                    fmt_f64(t[2]),
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    fmt_f64(p[2]),
                ],
            );
        }
    }
    out
}

/// Running bits offloaded for UAV computing and computed at the UAV.
pub fn cumulative_csv(alloc: &ResourceAllocation, traj: &Trajectory, sc: &Scenario) -> String {
    let mut out = format!("{CUMULATIVE_HEADER}\n");
    let mut offloaded = vec![0.0; alloc.num_tds()];
    let mut computed = vec![0.0; alloc.num_tds()];
    for n in 0..alloc.num_slots() {
        for k in 0..alloc.num_tds() {
            let snr = SlotSnr::at(sc, &traj.position(n), k);
            let t = alloc.durations[(k, n)][0];
            let p = alloc.powers[(k, n)][0];
            offloaded[k] += t * rate_from_snr(p, snr.uplink, sc.subcarrier_bw);
            computed[k] += alloc.l_uav[(k, n)];
            row(
                &mut out,
                &[
                    (n + 1).to_string(),
                    (k + 1).to_string(),
                    fmt_f64(offloaded[k]),
                    fmt_f64(computed[k]),
                ],
            );
        }
    }
    out
}

pub fn summary_csv(sol: &JointSolution, design: Design, sc: &Scenario, seed: u64) -> String {
    let r = &sol.report;
    let e = r.energy;
    let task = sc.task_min.iter().flatten().copied().fold(0.0, f64::max);
    let mut out = format!("{SUMMARY_HEADER}\n");
    row(
        &mut out,
        &[
            design.as_str().into(),
            r.status.as_str().into(),
            fmt_f64(e.total),
            fmt_f64(e.comm),
            fmt_f64(e.comp),
            fmt_f64(e.fly),
            r.iterations.outer.to_string(),
            if r.feasibility.pass { "pass" } else { "fail" }.into(),
            fmt_f64(r.feasibility.worst()),
            fmt_f64(r.feasibility.horizon_gap),
            fmt_f64(sc.period()),
            fmt_f64(task),
            seed.to_string(),
        ],
    );
    out
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param_value: f64,
    pub design: Design,
    pub status: SolveStatus,
    pub objective: f64,
    pub e_comm: f64,
    pub e_comp: f64,
    pub e_fly: f64,
    pub mean_l_u: f64,
    pub mean_l_h: f64,
    pub mean_l_a: f64,
}

impl SweepRow {
    pub fn from_solution(param_value: f64, design: Design, sol: &JointSolution) -> Self {
        let a = &sol.alloc;
        let mean = |g: &crate::model::Grid<f64>| {
            let n = (a.num_tds() * a.num_slots()).max(1) as f64;
            g.iter().sum::<f64>() / n
        };
        let e = sol.report.energy;
        Self {
            param_value,
            design,
            status: sol.report.status,
            objective: e.total,
            e_comm: e.comm,
            e_comp: e.comp,
            e_fly: e.fly,
            mean_l_u: mean(&a.l_local),
            mean_l_h: mean(&a.l_uav),
            mean_l_a: mean(&a.l_ap),
        }
    }

    pub fn infeasible(param_value: f64, design: Design) -> Self {
        Self {
            param_value,
            design,
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            e_comm: f64::NAN,
            e_comp: f64::NAN,
            e_fly: f64::NAN,
            mean_l_u: f64::NAN,
            mean_l_h: f64::NAN,
            mean_l_a: f64::NAN,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(r.param_value),
            r.design.as_str(),
            fmt_f64(r.objective),
            fmt_f64(r.e_comm),
            fmt_f64(r.e_comp),
            fmt_f64(r.e_fly),
            r.status.as_str(),
            fmt_f64(r.mean_l_u),
            fmt_f64(r.mean_l_h),
            fmt_f64(r.mean_l_a),
        );
    }
    out
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| MecError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io(&path))
}

/// Writes the five per-solve CSVs into `dir`.
pub fn write_solution(
    dir: &Path,
    sol: &JointSolution,
    design: Design,
    sc: &Scenario,
    seed: u64,
) -> Result<()> {
    write_file(dir, "convergence.csv", &convergence_csv(sol))?;
    write_file(dir, "trajectory.csv", &trajectory_csv(&sol.traj, sc))?;
    write_file(dir, "allocation.csv", &allocation_csv(&sol.alloc))?;
    write_file(
        dir,
        "cumulative.csv",
        &cumulative_csv(&sol.alloc, &sol.traj, sc),
    )?;
    write_file(dir, "summary.csv", &summary_csv(sol, design, sc, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_is_pinned() {
        assert_eq!(fmt_f64(1.0), "1.00000000000e0");
        assert_eq!(fmt_f64(-0.0), "0.00000000000e0");
        assert_eq!(fmt_f64(123456.789), "1.23456789000e5");
        assert_eq!(fmt_f64(f64::NAN), "nan");
    }

    #[test]
    fn headers_have_expected_columns() {
        assert_eq!(ALLOCATION_HEADER.split(',').count(), 11);
        assert_eq!(SWEEP_HEADER.split(',').count(), 10);
        let rows = [SweepRow::infeasible(6e5, Design::NoAp)];
        let csv = sweep_csv(&rows);
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 10);
        assert!(line.contains(",infeasible,"));
        assert!(!csv.contains('\r'));
    }
}
