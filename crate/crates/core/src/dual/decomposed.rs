//! Exact per-TD maximization of the dual.
//!
//! Every constraint couples only the slots of one TD, and for a fixed
//! suffix price `pi = lambda_hat[n]` the slot's remaining multipliers can be
//! maximized out in closed form up to two scalar searches:
//!
//! * `eta` leaves `-dt * max(phi_1, phi_2, phi_3)`, with `phi_m` the link
//!   profits of [`link_profit`];
//! * `mu + nu = omega` at the optimum, and the split minimizing
//!   `max(phi_2(mu), phi_3(nu))` is found by a root search;
//! * `omega` maximizes a concave function whose right derivative is the
//!   task shortfall.
//!
//! The resulting slot functions `h_n(pi)` are concave. The chain
//! `pi_1 >= ... >= pi_N >= 0` is solved by thresholding: at a trial price
//! the slots whose optimal price lies above it form the prefix with the
//! largest running sum of slopes, which splits the search in two.

use log::trace;

use super::closed_form::{link_profit, local_value, solve_l4, solve_l5, uav_value};
use super::{DesignMask, DualOptions, DualSolution};
use crate::channel::{rate_from_snr, SlotSnr};
use crate::error::{MecError, Result};
use crate::kernel::scalar::illinois_root;
use crate::model::{DualVariables, Grid};
use crate::scenario::Scenario;
use std::f64::consts::LN_2;

/// Largest price (J/bit) tried before a slot is declared infeasible.
const PRICE_CEILING: f64 = 1.0;
const PRICE_FLOOR: f64 = 1e-13;
/// Relative width at which the causality price search stops.
const PRICE_TOL: f64 = 1e-11;

/// Dual pieces of one (TD, slot).
pub struct SlotDual<'a> {
    sc: &'a Scenario,
    snr: SlotSnr,
    task: f64,
    mask: DesignMask,
    rel_tol: f64,
}

/// Maximizer of the relay split for a given `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaySplit {
    pub value: f64,
    pub mu: f64,
    /// Right derivative of the value in `omega`.
    pub slope: f64,
}

/// Slot optimum at a fixed suffix price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOptimum {
    pub value: f64,
    pub omega: f64,
    pub mu: f64,
}

impl<'a> SlotDual<'a> {
    pub fn new(sc: &'a Scenario, snr: SlotSnr, task: f64, mask: DesignMask) -> Self {
        Self {
            sc,
            snr,
            task,
            mask,
            rel_tol: 1e-13,
        }
    }

    fn power(&self, w: f64, snr: f64, p_max: f64) -> f64 {
        (w * self.sc.subcarrier_bw / LN_2 - 1.0 / snr).clamp(0.0, p_max)
    }

    fn rate(&self, w: f64, snr: f64, p_max: f64) -> f64 {
        rate_from_snr(self.power(w, snr, p_max), snr, self.sc.subcarrier_bw)
    }

    pub fn phi_compute(&self, pi: f64) -> f64 {
        if !self.mask.allow_uav_compute {
            return 0.0;
        }
        link_profit(pi, self.snr.uplink, self.sc.p_td_max, self.sc)
    }

    fn phi_up(&self, x: f64) -> f64 {
        link_profit(x, self.snr.uplink, self.sc.p_td_max, self.sc)
    }

    fn phi_fwd(&self, x: f64) -> f64 {
        link_profit(x, self.snr.relay, self.sc.p_uav_max, self.sc)
    }

    /// `min over mu in [0, omega] of max(phi_2(mu), phi_3(omega - mu))`.
    pub fn relay_split(&self, omega: f64) -> RelaySplit {
        if !self.mask.allow_relay || omega <= 0.0 {
            return RelaySplit {
                value: 0.0,
                mu: 0.0,
                slope: 0.0,
            };
        }
        let diff = |s: f64| self.phi_up(s) - self.phi_fwd(omega - s);
        let (d0, d1) = (diff(0.0), diff(omega));
        let mu = if d0 >= 0.0 {
            0.0
        } else if d1 <= 0.0 {
            omega
        } else {
            illinois_root(diff, 0.0, omega, d0, d1, self.rel_tol * omega)
        };
        let nu = omega - mu;
        let value = self.phi_up(mu).max(self.phi_fwd(nu));
        let r2 = self.rate(mu, self.snr.uplink, self.sc.p_td_max);
        let r3 = self.rate(nu, self.snr.relay, self.sc.p_uav_max);
        let slope = if r2 + r3 > 0.0 {
            r2 * r3 / (r2 + r3)
        } else {
            0.0
        };
        RelaySplit { value, mu, slope }
    }

    /// Slot dual objective with `eta`, `mu`, `nu` maximized out.
    pub fn objective(&self, pi: f64, omega: f64) -> f64 {
        let sc = self.sc;
        let mut v = local_value(omega, sc) + omega * self.task;
        if self.mask.allow_uav_compute {
            v += uav_value(omega - pi, sc);
        }
        v - sc.slot_len * self.phi_compute(pi).max(self.relay_split(omega).value)
    }

    /// Right derivative of [`Self::objective`] in `omega`.
    fn omega_slope(&self, pi: f64, phi1: f64, omega: f64) -> f64 {
        let sc = self.sc;
        let mut d = self.task - solve_l4(omega, sc);
        if self.mask.allow_uav_compute {
            d -= solve_l5(omega, pi, sc);
        }
        let split = self.relay_split(omega);
        if self.mask.allow_relay && split.value >= phi1 {
            d -= sc.slot_len * split.slope;
        }
        d
    }

    /// Supergradient of the slot value in the causality price: UAV bits
    /// minus the offloaded bits implied by the share `s` of the subslot
    /// budget price carried by the computing link. On the ridge where the
    /// computing and relay profits tie, `s` follows from stationarity in
    /// `omega`.
    pub fn slope(&self, pi: f64) -> f64 {
        let Some(o) = self.optimum(pi) else {
            return f64::NEG_INFINITY;
        };
        let sc = self.sc;
        let phi1 = self.phi_compute(pi);
        let lh = solve_l5(o.omega, pi, sc);
        let split = self.relay_split(o.omega);
        let share = if split.slope > 0.0 {
            let shortfall = self.task - solve_l4(o.omega, sc) - lh;
            (1.0 - shortfall / (sc.slot_len * split.slope)).clamp(0.0, 1.0)
        } else if phi1 > 0.0 && phi1 >= split.value {
            1.0
        } else {
            0.0
        };
        lh - share * sc.slot_len * self.rate(pi, self.snr.uplink, sc.p_td_max)
    }

    /// Maximizes over `omega >= 0`; `None` when the slot's task cannot be met.
    pub fn optimum(&self, pi: f64) -> Option<SlotOptimum> {
        let phi1 = self.phi_compute(pi);
        let slack = 1e-9 * self.task.max(1.0);
        let d = |w: f64| {
            let v = self.omega_slope(pi, phi1, w);
            if v.abs() <= slack {
                0.0
            } else {
                v
            }
        };
        let d0 = d(0.0);
        let omega = if d0 <= 0.0 {
            0.0
        } else {
            let mut lo = 0.0;
            let mut f_lo = d0;
            let mut hi = PRICE_FLOOR;
            let mut f_hi = d(hi);
            while f_hi > 0.0 {
                lo = hi;
                f_lo = f_hi;
                hi *= 2.0;
                if hi > PRICE_CEILING {
                    return None;
                }
                f_hi = d(hi);
            }
            illinois_root(d, lo, hi, f_lo, f_hi, self.rel_tol * hi)
        };
        let split = self.relay_split(omega);
        Some(SlotOptimum {
            value: self.objective(pi, omega),
            omega,
            mu: split.mu,
        })
    }
}

/// Splits slots `a..b` whose prices lie in `[lo, hi]`: the slots priced
/// above `theta` form the prefix maximizing the running sum of slopes at
/// `theta`.
fn assign_prices(slots: &[SlotDual], prices: &mut [f64], top: f64, tol: f64) {
    let mut work = vec![(0usize, slots.len(), 0.0f64, top)];
    while let Some((a, b, lo, hi)) = work.pop() {
        if a == b {
            continue;
        }
        if hi - lo <= tol {
            prices[a..b].iter_mut().for_each(|p| *p = 0.5 * (lo + hi));
            continue;
        }
        let theta = 0.5 * (lo + hi);
        let mut run = 0.0;
        let mut best = 0.0;
        let mut split = a;
        for (i, s) in slots[a..b].iter().enumerate() {
            run += s.slope(theta);
            if run > best {
                best = run;
                split = a + i + 1;
            }
        }
        work.push((a, split, theta, hi));
        work.push((split, b, lo, theta));
    }
}

/// Maximizes the dual of one TD; returns `lambda_hat`, `omega`, `mu`, `eta`
/// per slot and the TD's dual value.
fn solve_td(
    k: usize,
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
) -> Result<(Vec<[f64; 5]>, f64)> {
    let nn = sc.num_slots;
    let slots: Vec<SlotDual> = (0..nn)
        .map(|n| SlotDual::new(sc, links[(k, n)], sc.task_min[k][n], mask))
        .collect();
    for (n, s) in slots.iter().enumerate() {
        if s.optimum(0.0).is_none() {
            return Err(MecError::Infeasible {
                k,
                n,
                reason: "task exceeds the slot's computing and relaying capacity".into(),
            });
        }
    }
    let mut prices = vec![0.0; nn];
    if mask.allow_uav_compute {
        // Raise the ceiling until no prefix wants a higher price.
        let mut top = PRICE_FLOOR;
        loop {
            let mut run = 0.0;
            let rising = slots.iter().any(|s| {
                run += s.slope(top);
                run > 0.0
            });
            if !rising {
                break;
            }
            top *= 2.0;
            if top > PRICE_CEILING {
                return Err(MecError::Numerical(format!(
                    "TD {k}: causality price exceeds {PRICE_CEILING} J/bit"
                )));
            }
        }
        assign_prices(&slots, &mut prices, top, PRICE_TOL * top);
    }
    let mut out = Vec::with_capacity(nn);
    let mut value = 0.0;
    for (n, s) in slots.iter().enumerate() {
        let o = s.optimum(prices[n]).ok_or_else(|| MecError::Infeasible {
            k,
            n,
            reason: "task exceeds the slot's computing and relaying capacity".into(),
        })?;
        value += o.value;
        let mut profits = [
            s.phi_compute(prices[n]),
            if mask.allow_relay {
                s.phi_up(o.mu)
            } else {
                0.0
            },
            if mask.allow_relay {
                s.phi_fwd(o.omega - o.mu)
            } else {
                0.0
            },
        ];
        profits.sort_by(|a, b| b.total_cmp(a));
        // Rebuild omega from the split so that mu + nu - omega is exactly 0.
        let nu = o.omega - o.mu;
        out.push([prices[n], o.mu + nu, o.mu, nu, profits[1]]);
    }
    Ok((out, value))
}

pub fn decomposed_solve(
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
    _opts: &DualOptions,
) -> Result<DualSolution> {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    let mut duals = DualVariables::filled(kk, nn, 0.0);
    let mut value = 0.0;
    for k in 0..kk {
        let (rows, v) = solve_td(k, links, sc, mask)?;
        value += v;
        for n in 0..nn {
            let [pi, omega, mu, nu, eta] = rows[n];
            let next = if n + 1 < nn { rows[n + 1][0] } else { 0.0 };
            duals.lambda[(k, n)] = (pi - next).max(0.0);
            duals.omega[(k, n)] = omega;
            duals.eta[(k, n)] = eta;
            if mask.allow_relay {
                duals.mu[(k, n)] = mu;
                duals.nu[(k, n)] = nu;
            }
        }
        trace!("TD {k}: dual value {v:.9e}");
    }
    Ok(DualSolution {
        duals,
        value,
        iterations: 1,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_value, link_table};

    #[test]
    fn matches_dual_function_at_returned_multipliers() {
        let sc = Scenario::default_with(6.0, 3e5).unwrap();
        let traj = crate::joint::initial_trajectory(&sc);
        let links = link_table(&sc, &traj);
        for mask in [
            DesignMask::FULL,
            DesignMask::NO_RELAY,
            DesignMask::RELAY_ONLY,
        ] {
            let sol = decomposed_solve(&links, &sc, mask, &DualOptions::default()).unwrap();
            let (g, _) = dual_value(&sol.duals, &links, &sc, mask);
            assert!(
                (g - sol.value).abs() <= 1e-9 * sol.value.abs().max(1e-6),
                "{mask:?}: {g} vs {}",
                sol.value
            );
        }
    }

    #[test]
    fn relay_split_balances_links() {
        let sc = Scenario::default_with(6.0, 3e5).unwrap();
        let snr = SlotSnr::at(&sc, &nalgebra::Vector2::new(0.0, 10.0), 0);
        let s = SlotDual::new(&sc, snr, 3e5, DesignMask::FULL);
        let w = 2e-7;
        let r = s.relay_split(w);
        assert!((s.phi_up(r.mu) - s.phi_fwd(w - r.mu)).abs() < 1e-9 * r.value);
        for t in [0.1, 0.3, 0.7, 0.9] {
            assert!(s.phi_up(t * w).max(s.phi_fwd((1.0 - t) * w)) >= r.value - 1e-12);
        }
    }

    #[test]
    fn overloaded_slot_is_infeasible() {
        let sc = Scenario::default_with(6.0, 7e5).unwrap();
        let traj = crate::joint::initial_trajectory(&sc);
        let links = link_table(&sc, &traj);
        let err = decomposed_solve(&links, &sc, DesignMask::NO_RELAY, &DualOptions::default());
        assert!(matches!(err, Err(MecError::Infeasible { n: 0, .. })));
    }
}
