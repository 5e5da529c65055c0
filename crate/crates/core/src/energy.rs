//! Communication, computation and rotary-wing propulsion energy.

use crate::kernel::scalar::golden_min;
use crate::model::{EnergyBreakdown, ResourceAllocation, Trajectory};
use crate::scenario::{AeroParams, Scenario};

/// Total transmit energy `sum t * p` over every TD, slot and subslot.
pub fn comm_energy(alloc: &ResourceAllocation) -> f64 {
    alloc
        .durations
        .iter()
        .zip(alloc.powers.iter())
        .map(|(t, p)| t[0] * p[0] + t[1] * p[1] + t[2] * p[2])
        .sum()
}

/// Local computing energy of one slot: `kappa_u (c_u l)^3 / dt^2`.
pub fn local_comp_energy(bits: f64, sc: &Scenario) -> f64 {
    cubic_energy(bits, sc.cap_coeff_td, sc.cycles_per_bit_td, sc.slot_len)
}

/// UAV computing energy of one slot over all TDs.
pub fn uav_comp_energy(bits_per_td: &[f64], sc: &Scenario) -> f64 {
    bits_per_td
        .iter()
        .map(|&l| cubic_energy(l, sc.cap_coeff_uav, sc.cycles_per_bit_uav, sc.slot_len))
        .sum()
}

#[inline]
pub(crate) fn cubic_energy(bits: f64, cap_coeff: f64, cycles_per_bit: f64, slot_len: f64) -> f64 {
    let cycles = cycles_per_bit * bits;
    cap_coeff * cycles * cycles * cycles / (slot_len * slot_len)
}

/// Computation energy of a whole allocation.
pub fn comp_energy(alloc: &ResourceAllocation, sc: &Scenario) -> f64 {
    let local: f64 = alloc
        .l_local
        .iter()
        .map(|&l| local_comp_energy(l, sc))
        .sum();
    let uav: f64 = alloc
        .l_uav
        .iter()
        .map(|&l| cubic_energy(l, sc.cap_coeff_uav, sc.cycles_per_bit_uav, sc.slot_len))
        .sum();
    local + uav
}

/// Induced-power factor `sqrt(sqrt(1 + v^4 / 4 v0^4) - v^2 / 2 v0^2)`.
///
/// Written as `1 / sqrt(sqrt(1 + a^2) + a)` with `a = v^2 / 2 v0^2`, which
/// is algebraically identical and does not cancel at high speed.
pub fn induced_factor(speed: f64, aero: &AeroParams) -> f64 {
    let v0 = aero.induced_velocity;
    let a = speed * speed / (2.0 * v0 * v0);
    1.0 / ((1.0 + a * a).sqrt() + a).sqrt()
}

/// Rotary-wing propulsion power (W) at horizontal speed `speed`.
pub fn flight_power(speed: f64, aero: &AeroParams) -> f64 {
    let v2 = speed * speed;
    let tip2 = aero.tip_speed * aero.tip_speed;
    aero.blade_profile_power * (1.0 + 3.0 * v2 / tip2)
        + aero.induced_power * induced_factor(speed, aero)
        + aero.parasite_coeff() * v2 * speed
}

/// Derivative of [`flight_power`] in the speed.
pub fn flight_power_slope(speed: f64, aero: &AeroParams) -> f64 {
    let v0 = aero.induced_velocity;
    let a = speed * speed / (2.0 * v0 * v0);
    let root = (1.0 + a * a).sqrt();
    // d/da (root + a)^(-1/2) = -(1 + a / root) / (2 (root + a)^(3/2))
    let da = -(1.0 + a / root) / (2.0 * (root + a).powf(1.5));
    let tip2 = aero.tip_speed * aero.tip_speed;
    6.0 * aero.blade_profile_power * speed / tip2
        + aero.induced_power * da * speed / (v0 * v0)
        + 3.0 * aero.parasite_coeff() * speed * speed
}

/// Flight energy `dt * sum_n P(|v[n]|)`.
pub fn flight_energy(traj: &Trajectory, aero: &AeroParams, slot_len: f64) -> f64 {
    traj.speeds(slot_len)
        .into_iter()
        .map(|v| flight_power(v, aero))
        .sum::<f64>()
        * slot_len
}

/// Speed minimizing [`flight_power`], searched on `[0, 100]` m/s.
pub fn max_endurance_speed(aero: &AeroParams) -> f64 {
    golden_min(|v| flight_power(v, aero), 0.0, 100.0, 1e-9)
}

/// Energy split of an allocation flown along `traj`.
pub fn total_objective(
    alloc: &ResourceAllocation,
    traj: &Trajectory,
    sc: &Scenario,
) -> EnergyBreakdown {
    let comm = comm_energy(alloc);
    let comp = comp_energy(alloc, sc);
    let fly = flight_energy(traj, &sc.aero, sc.slot_len);
    EnergyBreakdown {
        comm,
        comp,
        fly,
        total: comm + comp + sc.flight_weight * fly,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Grid;
    use nalgebra::Vector2;

    fn sc() -> Scenario {
        Scenario::default_with(6.0, 4e5).unwrap()
    }

    #[test]
    fn comm_energy_products() {
        let mut a = ResourceAllocation::zeros(3, 30);
        assert_eq!(comm_energy(&a), 0.0);
        a.durations[(1, 2)] = [0.1, 0.0, 0.0];
        a.powers[(1, 2)] = [2.0, 0.0, 0.0];
        assert!((comm_energy(&a) - 0.2).abs() < 1e-15);

        let s = sc();
        let full = ResourceAllocation {
            durations: Grid::filled(3, 30, [s.slot_len / 3.0; 3]),
            powers: Grid::filled(3, 30, [s.p_td_max; 3]),
            ..ResourceAllocation::zeros(3, 30)
        };
        let expected = 3.0 * 30.0 * s.slot_len * s.p_td_max;
        assert!((comm_energy(&full) / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn computation_energy_anchors() {
        let s = sc();
        assert_eq!(local_comp_energy(0.0, &s), 0.0);
        assert!((local_comp_energy(4e5, &s) - 1.6).abs() < 1e-12);
        assert!((uav_comp_energy(&[2e5, 0.0, 0.0], &s) - 0.2).abs() < 1e-12);
        assert_eq!(uav_comp_energy(&[0.0; 3], &s), 0.0);
        let e = local_comp_energy(1.3e5, &s);
        assert!((local_comp_energy(2.6e5, &s) / e - 8.0).abs() < 1e-12);
        let sum = uav_comp_energy(&[1e5, 2e4, 0.0], &s);
        let parts = uav_comp_energy(&[1e5], &s) + uav_comp_energy(&[2e4], &s);
        assert!((sum - parts).abs() < 1e-15);
    }

    #[test]
    fn hover_power_is_p0_plus_pi() {
        let s = sc();
        assert!((flight_power(0.0, &s.aero) - 247.39).abs() < 1e-12);
    }

    #[test]
    fn flight_power_is_continuous_on_grid() {
        let s = sc();
        let mut prev = flight_power(0.0, &s.aero);
        for i in 1..=4000 {
            let p = flight_power(i as f64 * 0.01, &s.aero);
            assert!((p - prev).abs() < 5.0);
            prev = p;
        }
    }

    #[test]
    fn parasite_dominates_at_high_speed() {
        let a = sc().aero;
        let v = 1e4;
        let ratio = flight_power(v, &a) / (a.parasite_coeff() * v * v * v);
        assert!((ratio - 1.0).abs() < 1e-2);
    }

    #[test]
    fn endurance_speed_is_interior_minimum() {
        let a = sc().aero;
        let v = max_endurance_speed(&a);
        assert!(v > 1.0 && v < 40.0);
        let p = flight_power(v, &a);
        assert!(p < flight_power(0.0, &a));
        assert!(p <= flight_power(v + 1e-3, &a) && p <= flight_power(v - 1e-3, &a));
        let h = 1e-4;
        let fd = (flight_power(v + h, &a) - flight_power(v - h, &a)) / (2.0 * h);
        assert!(fd.abs() < 1e-3);
        // Blade profile power scales a term with non-zero slope, so v_me moves.
        let mut heavier = a;
        heavier.blade_profile_power *= 1.5;
        assert!((max_endurance_speed(&heavier) - v).abs() > 1e-6);
    }

    #[test]
    fn hover_and_straight_flight_energy() {
        let s = sc();
        let hover = Trajectory::new(vec![Vector2::new(1.0, 2.0); 31]);
        assert!((flight_energy(&hover, &s.aero, 0.2) - 6.0 * 247.39).abs() < 1e-9);
        let line: Vec<_> = (0..=30)
            .map(|i| s.q0 + (s.qf - s.q0) * (i as f64 / 30.0))
            .collect();
        let e = flight_energy(&Trajectory::new(line), &s.aero, 0.2);
        let v = (s.qf - s.q0).norm() / 6.0;
        assert!((e - 6.0 * flight_power(v, &s.aero)).abs() < 1e-9);
        let vme = max_endurance_speed(&s.aero);
        assert!(e >= 6.0 * flight_power(vme, &s.aero));
    }

    #[test]
    fn objective_composition() {
        let s = sc();
        let hover = Trajectory::new(vec![s.q0; 31]);
        let zero = ResourceAllocation::zeros(3, 30);
        let e = total_objective(&zero, &hover, &s);
        assert!((e.total - 0.01 * 6.0 * 247.39).abs() < 1e-9);
        let mut a = zero.clone();
        a.l_local[(0, 0)] = 4e5;
        a.l_uav[(1, 3)] = 2e5;
        a.durations[(2, 5)] = [0.05, 0.0, 0.0];
        a.powers[(2, 5)] = [1.0, 0.0, 0.0];
        let e = total_objective(&a, &hover, &s);
        assert!((e.comm - 0.05).abs() < 1e-15);
        assert!((e.comp - 1.8).abs() < 1e-12);
        assert!((e.total - (e.comm + e.comp + 0.01 * e.fly)).abs() < 1e-12);
        let mut light = s.clone();
        light.flight_weight = 0.005;
        let e2 = total_objective(&a, &hover, &light);
        assert!(((e.total - e2.total) - 0.005 * e.fly).abs() < 1e-9);
    }

    #[test]
    fn slope_matches_central_difference() {
        let a = sc().aero;
        assert_eq!(flight_power_slope(0.0, &a), 0.0);
        for v in [0.5, 3.0, 11.5, 20.0, 35.0] {
            let h = 1e-5;
            let fd = (flight_power(v + h, &a) - flight_power(v - h, &a)) / (2.0 * h);
            assert!((fd - flight_power_slope(v, &a)).abs() < 1e-5, "v={v}");
        }
        assert!(flight_power_slope(max_endurance_speed(&a), &a).abs() < 1e-6);
    }
}
