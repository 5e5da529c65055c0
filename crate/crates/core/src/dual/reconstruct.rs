//! Recovery of durations and relayed bits at the dual-optimal powers.
//!
//! With powers, local bits and UAV bits fixed by the closed forms, what is
//! left is a linear program per TD over the subslot durations and relayed
//! bits that minimizes transmit energy. The closed-form bits enter through
//! elastic deviation variables priced at [`ELASTIC_PRICE`], so an
//! approximately optimal multiplier still yields a feasible allocation.

use log::debug;

use super::{DesignMask, InnerSolution};
use crate::channel::{rate_from_snr, SlotSnr};
use crate::error::{MecError, Result};
use crate::kernel::lp::{lp_solve, LinearProgram, LpStatus};
use crate::model::{Grid, ResourceAllocation};
use crate::scenario::Scenario;

/// Penalty (J/bit) on moving local or UAV bits off their closed-form values.
pub const ELASTIC_PRICE: f64 = 1e-3;
const MBIT: f64 = 1e6;
const VARS_PER_SLOT: usize = 8;

/// Fixed inputs of one TD's reconstruction.
#[derive(Debug, Clone)]
pub struct TdInputs {
    pub powers: Vec<[f64; 3]>,
    /// Rates (bit/s) at `powers`.
    pub rates: Vec<[f64; 3]>,
    pub l_local: Vec<f64>,
    pub l_uav: Vec<f64>,
    pub task: Vec<f64>,
}

/// Per-slot result of one TD's reconstruction.
#[derive(Debug, Clone)]
pub struct TdAllocation {
    pub durations: Vec<[f64; 3]>,
    pub l_local: Vec<f64>,
    pub l_uav: Vec<f64>,
    pub l_ap: Vec<f64>,
    pub comm_energy: f64,
    pub duality_residual: f64,
}

/// Builds the LP over the first `slots` slots of one TD.
pub fn build_lp(inp: &TdInputs, slots: usize, sc: &Scenario, mask: DesignMask) -> LinearProgram {
    let cap_u = sc.local_cap_bits() / MBIT;
    let cap_h = sc.uav_cap_bits() / MBIT;
    let mut lp = LinearProgram::new(VARS_PER_SLOT * slots);
    let idx = |n: usize, j: usize| VARS_PER_SLOT * n + j;
    let (t1, t2, t3, la, up, um, hp, hm) = (0, 1, 2, 3, 4, 5, 6, 7);
    for n in 0..slots {
        let lu = inp.l_local[n] / MBIT;
        let lh = inp.l_uav[n] / MBIT;
        for m in 0..3 {
            lp.objective[idx(n, m)] = inp.powers[n][m];
            let usable = inp.powers[n][m] > 0.0
                && inp.rates[n][m] > 0.0
                && if m == 0 {
                    mask.allow_uav_compute
                } else {
                    mask.allow_relay
                };
            if !usable {
                lp.set_bounds(idx(n, m), 0.0, 0.0);
            }
        }
        if !mask.allow_relay {
            lp.set_bounds(idx(n, la), 0.0, 0.0);
        }
        for j in [up, um, hp, hm] {
            lp.objective[idx(n, j)] = ELASTIC_PRICE * MBIT;
        }
        lp.set_bounds(idx(n, up), 0.0, (cap_u - lu).max(0.0));
        lp.set_bounds(idx(n, um), 0.0, lu);
        if mask.allow_uav_compute {
            lp.set_bounds(idx(n, hp), 0.0, (cap_h - lh).max(0.0));
            lp.set_bounds(idx(n, hm), 0.0, lh);
        } else {
            lp.set_bounds(idx(n, hp), 0.0, 0.0);
            lp.set_bounds(idx(n, hm), 0.0, 0.0);
        }
    }
    // Prefix causality of UAV computing.
    if mask.allow_uav_compute {
        let mut base = 0.0;
        for n in 0..slots {
            base += inp.l_uav[n] / MBIT;
            let mut row = Vec::with_capacity(3 * (n + 1));
            for i in 0..=n {
                row.push((idx(i, hp), 1.0));
                row.push((idx(i, hm), -1.0));
                row.push((idx(i, t1), -inp.rates[i][0] / MBIT));
            }
            lp.add_row(&row, -base);
        }
    }
    for n in 0..slots {
        if mask.allow_relay {
            lp.add_row(
                &[(idx(n, la), 1.0), (idx(n, t2), -inp.rates[n][1] / MBIT)],
                0.0,
            );
            lp.add_row(
                &[(idx(n, la), 1.0), (idx(n, t3), -inp.rates[n][2] / MBIT)],
                0.0,
            );
        }
        lp.add_row(
            &[
                (idx(n, up), -1.0),
                (idx(n, um), 1.0),
                (idx(n, hp), -1.0),
                (idx(n, hm), 1.0),
                (idx(n, la), -1.0),
            ],
            (inp.l_local[n] + inp.l_uav[n] - inp.task[n]) / MBIT,
        );
        lp.add_row(
            &[(idx(n, t1), 1.0), (idx(n, t2), 1.0), (idx(n, t3), 1.0)],
            sc.slot_len,
        );
    }
    lp
}

fn solve_td_lp(inp: &TdInputs, sc: &Scenario, mask: DesignMask) -> Option<TdAllocation> {
    let nn = inp.task.len();
    let lp = build_lp(inp, nn, sc, mask);
    let sol = lp_solve(&lp, 1e-10);
    if sol.status != LpStatus::Optimal {
        return None;
    }
    let x = &sol.x;
    let cap_u = sc.local_cap_bits();
    let cap_h = sc.uav_cap_bits();
    let mut out = TdAllocation {
        durations: Vec::with_capacity(nn),
        l_local: Vec::with_capacity(nn),
        l_uav: Vec::with_capacity(nn),
        l_ap: Vec::with_capacity(nn),
        comm_energy: 0.0,
        duality_residual: (sol.objective - sol.dual_objective).abs(),
    };
    for n in 0..nn {
        let v = &x[VARS_PER_SLOT * n..VARS_PER_SLOT * (n + 1)];
        let t = [v[0].max(0.0), v[1].max(0.0), v[2].max(0.0)];
        out.comm_energy += (0..3).map(|m| t[m] * inp.powers[n][m]).sum::<f64>();
        out.durations.push(t);
        out.l_local
            .push((inp.l_local[n] + (v[4] - v[5]) * MBIT).clamp(0.0, cap_u));
        out.l_uav
            .push((inp.l_uav[n] + (v[6] - v[7]) * MBIT).clamp(0.0, cap_h));
        out.l_ap.push((v[3] * MBIT).max(0.0));
    }
    Some(out)
}

/// Smallest slot count whose truncated LP is already infeasible.
fn first_infeasible_slot(inp: &TdInputs, sc: &Scenario, mask: DesignMask) -> usize {
    let (mut lo, mut hi) = (0usize, inp.task.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let lp = build_lp(inp, mid, sc, mask);
        if lp_solve(&lp, 1e-10).status == LpStatus::Optimal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi - 1
}

fn full_power(inp: &TdInputs, snr: &[SlotSnr], sc: &Scenario) -> TdInputs {
    let mut out = inp.clone();
    for (n, s) in snr.iter().enumerate() {
        out.powers[n] = [sc.p_td_max, sc.p_td_max, sc.p_uav_max];
        out.rates[n] = [
            rate_from_snr(sc.p_td_max, s.uplink, sc.subcarrier_bw),
            rate_from_snr(sc.p_td_max, s.uplink, sc.subcarrier_bw),
            rate_from_snr(sc.p_uav_max, s.relay, sc.subcarrier_bw),
        ];
    }
    out
}

/// Solves one TD's reconstruction, falling back to full transmit power when
/// the closed-form powers leave the LP infeasible.
pub fn reconstruct_td(
    k: usize,
    inp: &TdInputs,
    snr: &[SlotSnr],
    sc: &Scenario,
    mask: DesignMask,
) -> Result<(TdAllocation, Vec<[f64; 3]>)> {
    if let Some(a) = solve_td_lp(inp, sc, mask) {
        return Ok((a, inp.powers.clone()));
    }
    let strong = full_power(inp, snr, sc);
    if let Some(a) = solve_td_lp(&strong, sc, mask) {
        debug!("TD {k}: reconstruction needed full transmit power");
        return Ok((a, strong.powers));
    }
    let n = first_infeasible_slot(&strong, sc, mask);
    Err(MecError::Infeasible {
        k,
        n,
        reason: "no schedule meets the task requirement".into(),
    })
}

/// Reconstructs the full allocation from the inner minimizers.
pub fn reconstruct_primal(
    inner: &InnerSolution,
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
) -> Result<ResourceAllocation> {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    let mut alloc = ResourceAllocation::zeros(kk, nn);
    for k in 0..kk {
        let inp = TdInputs {
            powers: (0..nn)
                .map(|n| {
                    let l = &inner.links[(k, n)];
                    [l[0].power, l[1].power, l[2].power]
                })
                .collect(),
            rates: inner.rates.row(k).to_vec(),
            l_local: inner.l_local.row(k).to_vec(),
            l_uav: inner.l_uav.row(k).to_vec(),
            task: sc.task_min[k].clone(),
        };
        let (td, powers) = reconstruct_td(k, &inp, links.row(k), sc, mask)?;
        for n in 0..nn {
            alloc.durations[(k, n)] = td.durations[n];
            alloc.powers[(k, n)] = std::array::from_fn(|m| {
                if td.durations[n][m] > 0.0 {
                    powers[n][m]
                } else {
                    0.0
                }
            });
            alloc.l_local[(k, n)] = td.l_local[n];
            alloc.l_uav[(k, n)] = td.l_uav[n];
            alloc.l_ap[(k, n)] = td.l_ap[n];
        }
    }
    Ok(alloc)
}
