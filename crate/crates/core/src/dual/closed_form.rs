//! Closed-form minimizers of the per-(TD, slot) Lagrangian pieces.

use crate::channel::rate_from_snr;
use crate::scenario::Scenario;
use std::f64::consts::LN_2;

/// Optimal power, duration and energy of one subslot link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSolution {
    pub power: f64,
    pub duration: f64,
    pub energy: f64,
    /// The duration coefficient is exactly zero, so any `t` in `[0, dt]`
    /// is optimal; `duration` is then 0 and the LP decides.
    pub tie: bool,
}

/// Minimizes `E - w t r(E / t) + eta t` over `0 <= E <= t p_max`, `0 <= t <= dt`.
///
/// `snr` is the per-watt received SNR of the link.
pub fn solve_link(weight: f64, eta: f64, snr: f64, p_max: f64, sc: &Scenario) -> LinkSolution {
    let b0 = sc.subcarrier_bw;
    let power = (weight * b0 / LN_2 - 1.0 / snr).clamp(0.0, p_max);
    let coeff = power - weight * rate_from_snr(power, snr, b0) + eta;
    let duration = if coeff < 0.0 { sc.slot_len } else { 0.0 };
    LinkSolution {
        power,
        duration,
        energy: power * duration,
        tie: coeff == 0.0,
    }
}

/// Offloading for UAV computing, weighted by the causality suffix sum.
pub fn solve_l1(lambda_hat: f64, eta: f64, snr_uplink: f64, sc: &Scenario) -> LinkSolution {
    solve_link(lambda_hat, eta, snr_uplink, sc.p_td_max, sc)
}

/// Offloading for relaying.
pub fn solve_l2(mu: f64, eta: f64, snr_uplink: f64, sc: &Scenario) -> LinkSolution {
    solve_link(mu, eta, snr_uplink, sc.p_td_max, sc)
}

/// UAV-to-AP forwarding.
pub fn solve_l3(nu: f64, eta: f64, snr_relay: f64, sc: &Scenario) -> LinkSolution {
    solve_link(nu, eta, snr_relay, sc.p_uav_max, sc)
}

/// Local bits `dt * clamp(sqrt(omega / (3 kappa_u c_u^3)), 0, f_u / c_u)`.
pub fn solve_l4(omega: f64, sc: &Scenario) -> f64 {
    cubic_argmin(
        omega,
        sc.cap_coeff_td,
        sc.cycles_per_bit_td,
        sc.f_td_max,
        sc.slot_len,
    )
}

/// UAV-computed bits, zero unless `omega >= lambda_hat`.
pub fn solve_l5(omega: f64, lambda_hat: f64, sc: &Scenario) -> f64 {
    if omega < lambda_hat {
        return 0.0;
    }
    cubic_argmin(
        omega - lambda_hat,
        sc.cap_coeff_uav,
        sc.cycles_per_bit_uav,
        sc.f_uav_per_td,
        sc.slot_len,
    )
}

fn cubic_argmin(price: f64, kappa: f64, cycles: f64, f_max: f64, slot_len: f64) -> f64 {
    let rate = (price.max(0.0) / (3.0 * kappa * cycles.powi(3))).sqrt();
    slot_len * rate.min(f_max / cycles)
}

/// Relayed bits minimizing `(mu + nu - omega) l_a` over `l_a >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayBits {
    Zero,
    /// Zero coefficient: every `l_a >= 0` is optimal.
    Indeterminate,
    /// Negative coefficient, outside the dual domain.
    Unbounded,
}

pub fn solve_l6(mu: f64, nu: f64, omega: f64) -> RelayBits {
    let c = mu + nu - omega;
    if c > 0.0 {
        RelayBits::Zero
    } else if c == 0.0 {
        RelayBits::Indeterminate
    } else {
        RelayBits::Unbounded
    }
}

/// Link value `max_p (w r(p) - p)` over `[0, p_max]`, the per-second profit
/// a link can offer at price `w`.
pub fn link_profit(weight: f64, snr: f64, p_max: f64, sc: &Scenario) -> f64 {
    let b0 = sc.subcarrier_bw;
    let p = (weight * b0 / LN_2 - 1.0 / snr).clamp(0.0, p_max);
    (weight * rate_from_snr(p, snr, b0) - p).max(0.0)
}

/// `min_l (kappa (c l)^3 / dt^2 - price l)` over the local box.
pub fn local_value(omega: f64, sc: &Scenario) -> f64 {
    let l = solve_l4(omega, sc);
    crate::energy::local_comp_energy(l, sc) - omega * l
}

/// `min_l (kappa (c l)^3 / dt^2 - price l)` over the UAV box.
pub fn uav_value(price: f64, sc: &Scenario) -> f64 {
    if price <= 0.0 {
        return 0.0;
    }
    let l = solve_l5(price, 0.0, sc);
    crate::energy::cubic_energy(l, sc.cap_coeff_uav, sc.cycles_per_bit_uav, sc.slot_len) - price * l
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn sc() -> Scenario {
        Scenario::default_with(6.0, 4e5).unwrap()
    }

    #[test]
    fn zero_weight_gives_idle_link() {
        let s = sc();
        let snr = s.ref_snr_uav / 400.0;
        let r = solve_l1(0.0, 0.0, snr, &s);
        assert_eq!((r.power, r.duration), (0.0, 0.0));
        assert!(r.tie);
        let r = solve_l1(0.0, 1.0, snr, &s);
        assert!(!r.tie && r.duration == 0.0);
    }

    #[test]
    fn large_weight_saturates_power() {
        let s = sc();
        let r = solve_l2(1.0, 0.0, s.ref_snr_uav / 400.0, &s);
        assert_eq!(r.power, s.p_td_max);
        assert_eq!(r.duration, s.slot_len);
        assert!((r.energy - s.p_td_max * s.slot_len).abs() < 1e-15);
        let r = solve_l3(1.0, 0.0, s.ref_snr_ap / 400.0, &s);
        assert_eq!(r.power, s.p_uav_max);
    }

    #[test]
    fn relay_power_distance_threshold() {
        let s = sc();
        let nu = 2e-8;
        for d2 in [100.0, 400.0, 1000.0, 5000.0, 2e4] {
            let p = solve_l3(nu, 0.0, s.ref_snr_ap / d2, &s).power;
            let threshold = nu * s.subcarrier_bw * s.ref_snr_ap / LN_2;
            assert_eq!(p > 0.0, d2 < threshold, "d2 = {d2}");
        }
    }

    #[test]
    fn computing_pieces_at_caps() {
        let s = sc();
        assert_eq!(solve_l4(0.0, &s), 0.0);
        let omega = 3.0
            * s.cap_coeff_td
            * s.cycles_per_bit_td.powi(3)
            * (s.f_td_max / s.cycles_per_bit_td).powi(2);
        assert!((solve_l4(omega, &s) - 4e5).abs() < 1e-6);
        assert_eq!(solve_l4(10.0 * omega, &s), 4e5);
        assert_eq!(solve_l5(0.3, 0.3, &s), 0.0);
        assert_eq!(solve_l5(0.2, 0.3, &s), 0.0);
        assert!((solve_l5(1.0, 0.0, &s) - 2e5).abs() < 1e-6);
    }

    #[test]
    fn relay_marker() {
        assert_eq!(solve_l6(0.1, 0.0, 0.0), RelayBits::Zero);
        assert_eq!(solve_l6(0.3, 0.2, 0.5), RelayBits::Indeterminate);
        assert_eq!(solve_l6(0.1, 0.1, 0.5), RelayBits::Unbounded);
    }

    #[test]
    fn profit_matches_link_solution() {
        let s = sc();
        let snr = s.ref_snr_uav / 500.0;
        for w in [0.0, 1e-9, 1e-8, 1e-7, 1e-5] {
            let r = solve_link(w, 0.0, snr, s.p_td_max, &s);
            let profit = link_profit(w, snr, s.p_td_max, &s);
            let direct = w * rate_from_snr(r.power, snr, s.subcarrier_bw) - r.power;
            assert!((profit - direct.max(0.0)).abs() <= 1e-12 * profit.max(1.0));
        }
    }
}
