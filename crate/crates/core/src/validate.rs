//! Self-check suite behind `uavmec validate`: closed forms against brute
//! force, duality gaps on tiny instances, soundness of the convex bounds,
//! flight-power anchors and capacity boundaries.

use nalgebra::Vector2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::f64::consts::LN_2;

use crate::channel::rate_from_snr;
use crate::dual::closed_form::{
    solve_l1, solve_l2, solve_l3, solve_l4, solve_l5, solve_l6, LinkSolution, RelayBits,
};
use crate::dual::{solve_resources, DesignMask, DualOptions};
use crate::energy::{
    cubic_energy, flight_power, flight_power_slope, local_comp_energy, max_endurance_speed,
};
use crate::error::MecError;
use crate::joint::{
    baseline_local_only, baseline_straight_flight, initial_trajectory, JointOptions,
};
use crate::model::Trajectory;
use crate::oracle::{oracle_small_primal, oracle_subproblem, Subproblem};
use crate::scenario::{Scenario, ScenarioFile, TaskSpec, DEFAULT_SCENARIO_JSON};
use crate::trajectory::{chi_exact, chi_lb, ExpansionPoint, RateBound};

/// Relative agreement required between a closed form and its grid oracle.
pub const CLOSED_FORM_RTOL: f64 = 1e-6;
/// Relative primal-dual gap allowed on the tiny instances.
pub const DUALITY_RTOL: f64 = 1e-3;
/// Tangency residual of the lower bounds at the expansion point.
pub const TANGENCY_TOL: f64 = 1e-9;
/// Hover power of the bundled aerodynamic parameters (W).
pub const HOVER_POWER: f64 = 247.39;
/// Reference flight power at 0, 5, 10 and 20 m/s (W), evaluated by hand
/// from the textbook formula.
pub const FLIGHT_POWER_REFERENCE: [(f64, f64); 4] = [
    (0.0, 247.39),
    (5.0, 222.34676374505995),
    (10.0, 201.95612427372114),
    (20.0, 226.80476668719794),
];

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, pass: bool, detail: String) -> Self {
        Self { name, pass, detail }
    }
}

/// Axis-aligned box around start, end, TDs and AP, widened by 50 m.
pub fn flight_box(sc: &Scenario) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in sc.td_pos.iter().chain([&sc.q0, &sc.qf, &sc.ap_pos]) {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i] - 50.0);
            hi[i] = hi[i].max(p[i] + 50.0);
        }
    }
    (lo, hi)
}

pub fn sample_point(rng: &mut StdRng, sc: &Scenario) -> Vector2<f64> {
    let (lo, hi) = flight_box(sc);
    Vector2::new(rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]))
}

fn link_value(sol: &LinkSolution, weight: f64, eta: f64, snr: f64, sc: &Scenario) -> f64 {
    sol.energy - weight * sol.duration * rate_from_snr(sol.power, snr, sc.subcarrier_bw)
        + eta * sol.duration
}

/// Closed form value and oracle value of one random instance of each
/// piece; returns the worst relative mismatch per piece.
pub fn closed_form_conformance(
    sc: &Scenario,
    samples: usize,
    seed: u64,
) -> [(&'static str, f64); 6] {
    let mut rng = StdRng::seed_from_u64(seed);
    let b0 = sc.subcarrier_bw;
    let dt = sc.slot_len;
    let mut worst = [0.0f64; 6];
    let rel = |a: f64, b: f64, scale: f64| (a - b).abs() / b.abs().max(scale);
    for _ in 0..samples {
        let q = sample_point(&mut rng, sc);
        let k = rng.gen_range(0..sc.num_tds);
        let snr_up =
            sc.ref_snr_uav / ((q - sc.td_pos[k]).norm_squared() + sc.altitude * sc.altitude);
        let snr_ap = sc.ref_snr_ap / ((q - sc.ap_pos).norm_squared() + sc.altitude * sc.altitude);
        for (slot, snr, p_max) in [
            (0, snr_up, sc.p_td_max),
            (1, snr_up, sc.p_td_max),
            (2, snr_ap, sc.p_uav_max),
        ] {
            // Price putting the unclamped power anywhere in [-0.2, 1.2] p_max.
            let p_target = rng.gen_range(-0.2..1.2) * p_max;
            let w = (LN_2 / b0 * (p_target + 1.0 / snr)).max(0.0);
            let p = (w * b0 / LN_2 - 1.0 / snr).clamp(0.0, p_max);
            let profit = (w * rate_from_snr(p, snr, b0) - p).max(0.0);
            let eta = rng.gen_range(0.0..1.2) * profit.max(1e-3);
            let (sol, sp) = match slot {
                0 => (solve_l1(w, eta, snr, sc), Subproblem::l1(w, eta, snr, sc)),
                1 => (solve_l2(w, eta, snr, sc), Subproblem::l2(w, eta, snr, sc)),
                _ => (solve_l3(w, eta, snr, sc), Subproblem::l3(w, eta, snr, sc)),
            };
            let closed = link_value(&sol, w, eta, snr, sc);
            let oracle = oracle_subproblem(&sp, sc, 400).value;
            worst[slot] = worst[slot].max(rel(closed, oracle, dt * 1e-3));
        }

        let cap_u = sc.local_cap_bits();
        let r = rng.gen_range(0.0..1.2) * sc.f_td_max / sc.cycles_per_bit_td;
        let omega = 3.0 * sc.cap_coeff_td * sc.cycles_per_bit_td.powi(3) * r * r;
        let l = solve_l4(omega, sc);
        let closed = local_comp_energy(l, sc) - omega * l;
        let oracle = oracle_subproblem(&Subproblem::Local { omega }, sc, 400).value;
        let scale = omega * cap_u * 1e-3;
        worst[3] = worst[3].max(rel(closed, oracle, scale.max(1e-12)));

        let cap_h = sc.uav_cap_bits();
        let r = rng.gen_range(0.0..1.2) * sc.f_uav_per_td / sc.cycles_per_bit_uav;
        let price = 3.0 * sc.cap_coeff_uav * sc.cycles_per_bit_uav.powi(3) * r * r;
        let lambda_hat = rng.gen_range(0.0..2.0) * price;
        let omega = price + lambda_hat * rng.gen_range(0.0..1.0);
        let l = solve_l5(omega, lambda_hat, sc);
        let closed =
            cubic_energy(l, sc.cap_coeff_uav, sc.cycles_per_bit_uav, dt) - (omega - lambda_hat) * l;
        let oracle = oracle_subproblem(&Subproblem::Uav { omega, lambda_hat }, sc, 400).value;
        let scale = omega.max(1e-12) * cap_h * 1e-3;
        worst[4] = worst[4].max(rel(closed, oracle, scale));

        let mu = rng.gen_range(0.0..1e-5);
        let nu = rng.gen_range(0.0..1e-5);
        let omega = rng.gen_range(0.0..1.0) * (mu + nu);
        let l_max = cap_u;
        let closed = match solve_l6(mu, nu, omega) {
            RelayBits::Zero | RelayBits::Indeterminate => 0.0,
            RelayBits::Unbounded => f64::NEG_INFINITY,
        };
        let oracle = oracle_subproblem(
            &Subproblem::Relay {
                mu,
                nu,
                omega,
                l_max,
            },
            sc,
            400,
        )
        .value;
        worst[5] = worst[5].max(rel(closed, oracle, (mu + nu) * l_max * 1e-3));
    }
    [
        ("offload-compute", worst[0]),
        ("offload-relay", worst[1]),
        ("forward", worst[2]),
        ("local", worst[3]),
        ("uav", worst[4]),
        ("relay-bits", worst[5]),
    ]
}

/// Five tiny instances with a short straight path.
pub fn mini_instances() -> Vec<Scenario> {
    let mini = |task: Vec<Vec<f64>>| {
        let mut f = ScenarioFile::parse(DEFAULT_SCENARIO_JSON).expect("bundled scenario");
        f.num_tds = task.len();
        f.num_slots = task[0].len();
        f.td_pos_m.truncate(task.len());
        f.q0_m = [-3.0, 0.0];
        f.qf_m = [3.0, 0.0];
        f.task_min_bits = TaskSpec::Matrix(task);
        Scenario::from_file(f).expect("valid mini scenario")
    };
    vec![
        mini(vec![vec![3e5, 5e5]]),
        mini(vec![vec![2e5, 1e5, 3e5], vec![0.0, 4e5, 1e5]]),
        mini(vec![
            vec![2e5, 5e5, 3e5, 1e5, 4e5],
            vec![3e5, 3e5, 6e5, 0.0, 2e5],
        ]),
        mini(vec![vec![4e5, 4e5, 4e5, 4e5]]),
        mini(vec![vec![1e5, 2e5, 3e5, 4e5], vec![5e5, 1e5, 2e5, 2e5]]),
    ]
}

/// Per instance: dual value, reconstructed primal and brute-force primal.
pub fn duality_gaps(opts: &DualOptions) -> Vec<(f64, f64, Option<f64>)> {
    mini_instances()
        .iter()
        .map(|sc| {
            let traj = initial_trajectory(sc);
            let oracle = oracle_small_primal(sc, &traj).map(|o| o.value);
            match solve_resources(sc, &traj, DesignMask::FULL, opts, None) {
                Ok(r) => (r.dual_value, r.primal_value, oracle),
                Err(_) => (f64::NAN, f64::NAN, oracle),
            }
        })
        .collect()
}

/// Worst soundness violation and tangency residual of the rate and
/// induced-factor bounds over `samples` random points.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundCheck {
    pub rate_violation: f64,
    pub rate_tangency: f64,
    pub chi_violation: f64,
    pub chi_tangency: f64,
}

pub fn bound_soundness(sc: &Scenario, samples: usize, seed: u64) -> BoundCheck {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = BoundCheck::default();
    let h2 = sc.altitude * sc.altitude;
    let vmax = sc.v_max.max(1.0);
    for _ in 0..samples {
        let qj = sample_point(&mut rng, sc);
        let q = sample_point(&mut rng, sc);
        let (anchor, ref_snr, p_max) = match rng.gen_range(0..3) {
            2 => (sc.ap_pos, sc.ref_snr_ap, sc.p_uav_max),
            _ => (
                sc.td_pos[rng.gen_range(0..sc.num_tds)],
                sc.ref_snr_uav,
                sc.p_td_max,
            ),
        };
        let p = rng.gen_range(0.0..=1.0) * p_max;
        let bound = RateBound::new(anchor, &qj, ref_snr, p, sc);
        let exact = |x: &Vector2<f64>| {
            sc.subcarrier_bw * (1.0 + p * ref_snr / (h2 + (x - anchor).norm_squared())).log2()
        };
        let scale = exact(&qj).max(1.0);
        out.rate_violation = out.rate_violation.max((bound.eval(&q) - exact(&q)) / scale);
        out.rate_tangency = out
            .rate_tangency
            .max((bound.eval(&qj) - exact(&qj)).abs() / scale);

        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let vj = Vector2::new(angle.cos(), angle.sin()) * rng.gen_range(0.0..=vmax);
        let point = ExpansionPoint::new(Trajectory::new(vec![qj, qj + vj * sc.slot_len]), sc, 0);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let v = Vector2::new(angle.cos(), angle.sin()) * rng.gen_range(0.0..=vmax);
        let u = rng.gen_range(1e-3..=1.5);
        let uj = point.induced[0];
        let chi_scale = chi_exact(uj, &vj, &sc.aero).max(1.0);
        out.chi_violation = out
            .chi_violation
            .max((chi_lb(u, &v, &point, 0, sc) - chi_exact(u, &v, &sc.aero)) / chi_scale);
        out.chi_tangency = out
            .chi_tangency
            .max((chi_lb(uj, &vj, &point, 0, sc) - chi_exact(uj, &vj, &sc.aero)).abs() / chi_scale);
    }
    out
}

/// Runs every check on the scenario `base` (rescaled where a check needs a
/// specific horizon or task).
pub fn run_all(base: &Scenario, seed: u64, opts: &JointOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let pieces = closed_form_conformance(base, 200, seed);
    let worst = pieces.iter().map(|l| l.1).fold(0.0, f64::max);
    let detail = pieces
        .iter()
        .map(|(n, v)| format!("{n}={v:.1e}"))
        .collect::<Vec<_>>()
        .join(" ");
    out.push(CheckResult::new(
        "closed-form-vs-grid",
        worst <= CLOSED_FORM_RTOL,
        detail,
    ));

    let gaps = duality_gaps(&opts.dual);
    let mut worst = 0.0f64;
    for (dual, primal, oracle) in &gaps {
        let denom = primal.abs().max(1e-3);
        worst = worst.max((primal - dual).abs() / denom);
        if let Some(o) = oracle {
            worst = worst.max((o - primal).abs() / denom);
        }
    }
    out.push(CheckResult::new(
        "duality-gap",
        worst <= DUALITY_RTOL,
        format!(
            "worst relative gap {worst:.2e} over {} instances",
            gaps.len()
        ),
    ));

    let b = bound_soundness(base, 10_000, seed);
    out.push(CheckResult::new(
        "convex-bounds",
        b.rate_violation <= TANGENCY_TOL
            && b.chi_violation <= TANGENCY_TOL
            && b.rate_tangency <= TANGENCY_TOL
            && b.chi_tangency <= TANGENCY_TOL,
        format!(
            "rate over={:.1e} tangent={:.1e}; chi over={:.1e} tangent={:.1e}",
            b.rate_violation, b.rate_tangency, b.chi_violation, b.chi_tangency
        ),
    ));

    let aero = &base.aero;
    let v_me = max_endurance_speed(aero);
    let slope = flight_power_slope(v_me, aero);
    let hover = flight_power(0.0, aero);
    let table = FLIGHT_POWER_REFERENCE
        .iter()
        .map(|&(v, p)| (flight_power(v, aero) - p).abs())
        .fold(0.0, f64::max);
    out.push(CheckResult::new(
        "flight-power",
        (hover - HOVER_POWER).abs() <= 1e-9 && slope.abs() <= 1e-3 && table <= 1e-9,
        format!("P(0)={hover:.6} v_me={v_me:.6} P'(v_me)={slope:.1e} table={table:.1e}"),
    ));

    out.push(capacity_check(base, opts));
    out.push(feasibility_check(base, opts));
    out
}

fn is_infeasible<T>(r: &crate::error::Result<T>) -> bool {
    matches!(r, Err(MecError::Infeasible { .. }))
}

fn capacity_check(base: &Scenario, opts: &JointOptions) -> CheckResult {
    let local = base.local_cap_bits();
    let total = local + base.uav_cap_bits();
    let at = |bits: f64| base.rescaled(base.period(), bits);
    let mut pass = true;
    let mut notes = Vec::new();
    match (at(local), at(local * 1.0001)) {
        (Ok(ok), Ok(over)) => {
            let a = baseline_local_only(&ok).is_ok();
            let b = is_infeasible(&baseline_local_only(&over));
            pass &= a && b;
            notes.push(format!(
                "local-only feasible at cap={a} infeasible above={b}"
            ));
        }
        _ => pass = false,
    }
    match at(total * 1.0001) {
        Ok(over) => {
            let traj = initial_trajectory(&over);
            let r = solve_resources(&over, &traj, DesignMask::NO_RELAY, &opts.dual, None);
            let b = is_infeasible(&r);
            pass &= b;
            notes.push(format!("no-ap infeasible above {total:.3e}={b}"));
        }
        Err(_) => pass = false,
    }
    CheckResult::new("capacity-boundaries", pass, notes.join("; "))
}

fn feasibility_check(base: &Scenario, opts: &JointOptions) -> CheckResult {
    match baseline_straight_flight(base, opts) {
        Ok(sol) => CheckResult::new(
            "feasibility",
            sol.report.feasibility.pass,
            format!("worst residual {:.1e}", sol.report.feasibility.worst()),
        ),
        Err(e) => CheckResult::new("feasibility", false, e.to_string()),
    }
}
