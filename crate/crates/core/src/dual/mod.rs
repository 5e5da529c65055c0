//! Fixed-trajectory resource allocation by Lagrange duality.
//!
//! The dual function separates over TDs and slots; each piece is minimized in
//! closed form by [`closed_form`]. Multipliers are found by one of the engines in
//! [`DualEngine`] and the non-unique durations and relay bits are recovered by
//! the linear program in [`reconstruct`].

pub mod closed_form;
pub mod decomposed;
pub mod ellipsoid;
pub mod reconstruct;
pub mod subgradient;

use log::debug;

use crate::channel::{rate_from_snr, SlotSnr};
use crate::energy::{cubic_energy, local_comp_energy};
use crate::error::{MecError, Result};
use crate::model::{DualVariables, Grid, ResourceAllocation, Trajectory};
use crate::scenario::Scenario;
use closed_form::{
    solve_l1, solve_l2, solve_l3, solve_l4, solve_l5, solve_l6, LinkSolution, RelayBits,
};

/// Which offloading paths a design may use. Local computing is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignMask {
    pub allow_uav_compute: bool,
    pub allow_relay: bool,
}

impl DesignMask {
    pub const FULL: DesignMask = DesignMask {
        allow_uav_compute: true,
        allow_relay: true,
    };
    pub const NO_RELAY: DesignMask = DesignMask {
        allow_uav_compute: true,
        allow_relay: false,
    };
    pub const RELAY_ONLY: DesignMask = DesignMask {
        allow_uav_compute: false,
        allow_relay: true,
    };
    pub const LOCAL_ONLY: DesignMask = DesignMask {
        allow_uav_compute: false,
        allow_relay: false,
    };

    /// Zeroes the multipliers of constraints the design removes.
    pub fn project(&self, d: &mut DualVariables) {
        if !self.allow_uav_compute {
            d.lambda = Grid::filled(d.lambda.rows(), d.lambda.cols(), 0.0);
        }
        if !self.allow_relay {
            d.mu = Grid::filled(d.mu.rows(), d.mu.cols(), 0.0);
            d.nu = Grid::filled(d.nu.rows(), d.nu.cols(), 0.0);
        }
    }
}

/// Per-watt SNRs of every (TD, slot) at the slot's serving position.
pub fn link_table(sc: &Scenario, traj: &Trajectory) -> Grid<SlotSnr> {
    Grid::from_fn(sc.num_tds, sc.num_slots, |k, n| {
        SlotSnr::at(sc, &traj.position(n), k)
    })
}

/// Inner minimizers at given multipliers.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub links: Grid<[LinkSolution; 3]>,
    /// Rates (bit/s) of the three links at the chosen powers.
    pub rates: Grid<[f64; 3]>,
    pub l_local: Grid<f64>,
    pub l_uav: Grid<f64>,
    pub relay: Grid<RelayBits>,
}

const IDLE: LinkSolution = LinkSolution {
    power: 0.0,
    duration: 0.0,
    energy: 0.0,
    tie: false,
};

/// Dual function value and the minimizers attaining it.
///
/// Multipliers are in SI units (J/bit for the bit constraints, W for the
/// subslot budget). Multipliers outside the dual domain give `-inf`.
pub fn dual_value(
    duals: &DualVariables,
    links: &Grid<SlotSnr>,
    sc: &Scenario,
    mask: DesignMask,
) -> (f64, InnerSolution) {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    let lhat = duals.lambda_hat();
    let mut inner = InnerSolution {
        links: Grid::filled(kk, nn, [IDLE; 3]),
        rates: Grid::filled(kk, nn, [0.0; 3]),
        l_local: Grid::filled(kk, nn, 0.0),
        l_uav: Grid::filled(kk, nn, 0.0),
        relay: Grid::filled(kk, nn, RelayBits::Zero),
    };
    let mut g = 0.0;
    let mut unbounded = false;
    for k in 0..kk {
        for n in 0..nn {
            let snr = links[(k, n)];
            let (lh, mu, nu, om, eta) = (
                lhat[(k, n)],
                duals.mu[(k, n)],
                duals.nu[(k, n)],
                duals.omega[(k, n)],
                duals.eta[(k, n)],
            );
            let mut sol = [IDLE; 3];
            let mut rate = [0.0; 3];
            let mut weights = [0.0; 3];
            if mask.allow_uav_compute {
                sol[0] = solve_l1(lh, eta, snr.uplink, sc);
                rate[0] = rate_from_snr(sol[0].power, snr.uplink, sc.subcarrier_bw);
                weights[0] = lh;
            }
            if mask.allow_relay {
                sol[1] = solve_l2(mu, eta, snr.uplink, sc);
                sol[2] = solve_l3(nu, eta, snr.relay, sc);
                rate[1] = rate_from_snr(sol[1].power, snr.uplink, sc.subcarrier_bw);
                rate[2] = rate_from_snr(sol[2].power, snr.relay, sc.subcarrier_bw);
                weights[1] = mu;
                weights[2] = nu;
                let r = solve_l6(mu, nu, om);
                unbounded |= r == RelayBits::Unbounded;
                inner.relay[(k, n)] = r;
            }
            for m in 0..3 {
                g += sol[m].duration * (sol[m].power - weights[m] * rate[m] + eta);
            }
            let lu = solve_l4(om, sc);
            g += local_comp_energy(lu, sc) - om * lu;
            if mask.allow_uav_compute {
                let lu_h = solve_l5(om, lh, sc);
                g += cubic_energy(lu_h, sc.cap_coeff_uav, sc.cycles_per_bit_uav, sc.slot_len)
                    + (lh - om) * lu_h;
                inner.l_uav[(k, n)] = lu_h;
            }
            g += om * sc.task_min[k][n] - eta * sc.slot_len;
            inner.links[(k, n)] = sol;
            inner.rates[(k, n)] = rate;
            inner.l_local[(k, n)] = lu;
        }
    }
    if unbounded || domain_violation(duals, mask) > 0.0 {
        g = f64::NEG_INFINITY;
    }
    (g, inner)
}

/// Distance outside the dual domain; the relay coupling only exists when
/// relaying is allowed.
pub fn domain_violation(d: &DualVariables, mask: DesignMask) -> f64 {
    if mask.allow_relay {
        return d.feasibility_violation();
    }
    [&d.lambda, &d.mu, &d.nu, &d.omega, &d.eta]
        .iter()
        .flat_map(|g| g.iter())
        .fold(0.0f64, |a, &v| a.max(-v))
}

/// Number of entries of the stacked multiplier vector.
pub fn stacked_len(sc: &Scenario) -> usize {
    5 * sc.num_tds * sc.num_slots
}

/// Stacked layout: blocks `lambda, mu, nu, omega, eta`, each `k`-major.
pub fn stack(d: &DualVariables) -> Vec<f64> {
    [&d.lambda, &d.mu, &d.nu, &d.omega, &d.eta]
        .iter()
        .flat_map(|g| g.iter().copied())
        .collect()
}

pub fn unstack(x: &[f64], num_tds: usize, num_slots: usize) -> DualVariables {
    let kn = num_tds * num_slots;
    let block = |b: usize| Grid::from_fn(num_tds, num_slots, |k, n| x[b * kn + k * num_slots + n]);
    DualVariables {
        lambda: block(0),
        mu: block(1),
        nu: block(2),
        omega: block(3),
        eta: block(4),
    }
}

/// Supergradient of the dual function at the multipliers that produced
/// `inner`, stacked like [`stack`]. Disabled constraint families get zeros.
pub fn subgradient(inner: &InnerSolution, sc: &Scenario, mask: DesignMask) -> Vec<f64> {
    let (kk, nn) = (sc.num_tds, sc.num_slots);
    let kn = kk * nn;
    let mut s = vec![0.0; 5 * kn];
    for k in 0..kk {
        let mut prefix = 0.0;
        for n in 0..nn {
            let i = k * nn + n;
            let l = &inner.links[(k, n)];
            let r = &inner.rates[(k, n)];
            if mask.allow_uav_compute {
                prefix += inner.l_uav[(k, n)] - l[0].duration * r[0];
                s[i] = prefix;
            }
            if mask.allow_relay {
                s[kn + i] = -l[1].duration * r[1];
                s[2 * kn + i] = -l[2].duration * r[2];
            }
            s[3 * kn + i] = sc.task_min[k][n] - inner.l_local[(k, n)] - inner.l_uav[(k, n)];
            s[4 * kn + i] = l[0].duration + l[1].duration + l[2].duration - sc.slot_len;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualEngine {
    /// Deep-cut ellipsoid method on the full stacked multiplier vector.
    Ellipsoid,
    /// Projected supergradient ascent.
    Subgradient,
    /// Per-TD exact maximization of the separable dual.
    Decomposed,
    /// Ellipsoid for small instances, decomposed otherwise.
    Auto,
}

impl std::str::FromStr for DualEngine {
    type Err = MecError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipsoid" => Ok(DualEngine::Ellipsoid),
            "subgradient" => Ok(DualEngine::Subgradient),
            "decomposed" => Ok(DualEngine::Decomposed),
            "auto" => Ok(DualEngine::Auto),
            _ => Err(MecError::Invalid {
                field: "dual-engine".into(),
                reason: format!("unknown engine '{s}'"),
            }),
        }
    }
}

/// Largest stacked dimension [`DualEngine::Auto`] hands to the ellipsoid.
pub const AUTO_ELLIPSOID_MAX_DIM: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct DualOptions {
    pub engine: DualEngine,
    /// Stopping tolerance on the dual objective, relative to its magnitude
    /// (absolute below 1 mJ).
    pub tol: f64,
    pub max_iter: usize,
    /// Initial ellipsoid radius in scaled multiplier units.
    pub radius: f64,
    pub warm_start: bool,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            engine: DualEngine::Auto,
            tol: 1e-5,
            max_iter: 2_000_000,
            radius: 1e3,
            warm_start: true,
        }
    }
}

impl DualOptions {
    pub fn resolved_engine(&self, sc: &Scenario) -> DualEngine {
        match self.engine {
            DualEngine::Auto if stacked_len(sc) <= AUTO_ELLIPSOID_MAX_DIM => DualEngine::Ellipsoid,
            DualEngine::Auto => DualEngine::Decomposed,
            e => e,
        }
    }
}

/// Absolute stopping threshold in joules for a relative tolerance at value `g`.
pub(crate) fn abs_tol(tol: f64, g: f64) -> f64 {
    tol * g.abs().max(1e-3)
}

/// Bit-constraint multipliers are handled by the engines in J/Mbit so that
/// all five blocks have comparable magnitude.
pub const BIT_SCALE: f64 = 1e6;

pub(crate) fn to_scaled(d: &DualVariables) -> Vec<f64> {
    let mut x = stack(d);
    let kn = x.len() / 5;
    for v in &mut x[..4 * kn] {
        *v *= BIT_SCALE;
    }
    x
}

pub(crate) fn from_scaled(x: &[f64], sc: &Scenario) -> DualVariables {
    let kn = x.len() / 5;
    let mut y = x.to_vec();
    for v in &mut y[..4 * kn] {
        *v /= BIT_SCALE;
    }
    unstack(&y, sc.num_tds, sc.num_slots)
}

/// Outcome of one multiplier search.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub duals: DualVariables,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of a full fixed-trajectory resource solve.
#[derive(Debug, Clone)]
pub struct ResourceSolution {
    pub alloc: ResourceAllocation,
    pub duals: DualVariables,
    pub dual_value: f64,
    /// Communication plus computation energy of `alloc`.
    pub primal_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the configured dual engine and reconstructs a primal allocation.
pub fn solve_resources(
    sc: &Scenario,
    traj: &Trajectory,
    mask: DesignMask,
    opts: &DualOptions,
    warm: Option<&DualVariables>,
) -> Result<ResourceSolution> {
    let links = link_table(sc, traj);
    let warm = if opts.warm_start { warm } else { None };
    let sol = match opts.resolved_engine(sc) {
        DualEngine::Ellipsoid => ellipsoid::ellipsoid_solve(&links, sc, mask, opts, warm),
        DualEngine::Subgradient => subgradient::subgradient_solve(&links, sc, mask, opts, warm),
        _ => decomposed::decomposed_solve(&links, sc, mask, opts)?,
    };
    debug!(
        "dual value {:.9e} after {} iterations (converged: {})",
        sol.value, sol.iterations, sol.converged
    );
    let (_, inner) = dual_value(&sol.duals, &links, sc, mask);
    let alloc = reconstruct::reconstruct_primal(&inner, &links, sc, mask)?;
    let primal_value = crate::energy::comm_energy(&alloc) + crate::energy::comp_energy(&alloc, sc);
    Ok(ResourceSolution {
        alloc,
        duals: sol.duals,
        dual_value: sol.value,
        primal_value,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn mini() -> (Scenario, Grid<SlotSnr>) {
        let mut s = Scenario::default_with(6.0, 2e5).unwrap();
        s.num_tds = 2;
        s.num_slots = 3;
        s.td_pos.truncate(2);
        s.task_min = vec![vec![2e5, 1e5, 3e5], vec![0.0, 4e5, 1e5]];
        let traj = Trajectory::new(vec![s.q0; 4]);
        let links = link_table(&s, &traj);
        (s, links)
    }

    #[test]
    fn zero_multipliers_give_zero() {
        let (s, links) = mini();
        let d = DualVariables::filled(2, 3, 0.0);
        let (g, inner) = dual_value(&d, &links, &s, DesignMask::FULL);
        assert_eq!(g, 0.0);
        assert!(inner.l_local.iter().all(|&v| v == 0.0));
        let sg = subgradient(&inner, &s, DesignMask::FULL);
        let kn = 6;
        assert_eq!(sg[3 * kn + 1], 1e5);
        assert!(sg[4 * kn..].iter().all(|&v| v == -s.slot_len));
    }

    #[test]
    fn stack_roundtrip() {
        let (s, _) = mini();
        let x: Vec<f64> = (0..stacked_len(&s)).map(|i| i as f64).collect();
        assert_eq!(stack(&unstack(&x, 2, 3)), x);
        let d = unstack(&x, 2, 3);
        let back = from_scaled(&to_scaled(&d), &s);
        assert_eq!(stack(&back), x);
    }

    #[test]
    fn outside_domain_is_minus_infinity() {
        let (s, links) = mini();
        let mut d = DualVariables::filled(2, 3, 1e-7);
        d.omega[(0, 0)] = 1e-6;
        assert_eq!(
            dual_value(&d, &links, &s, DesignMask::FULL).0,
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn engine_names() {
        assert_eq!(
            "ellipsoid".parse::<DualEngine>().unwrap(),
            DualEngine::Ellipsoid
        );
        assert!("newton".parse::<DualEngine>().is_err());
    }
}
