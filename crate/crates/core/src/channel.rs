//! Free-space LoS channel gains and Shannon rates, including the
//! perspective form `t * r(E / t)` used by the fixed-trajectory problem.

use nalgebra::Vector2;

use crate::error::{MecError, Result};
use crate::scenario::Scenario;

/// `1 / ln 2`, shared by every base-2 logarithm in the crate.
pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

#[inline]
pub fn log2_1p(x: f64) -> f64 {
    x.ln_1p() * LOG2_E
}

/// Squared horizontal offset and squared altitude of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub horizontal_sq: f64,
    pub altitude_sq: f64,
}

impl LinkGeometry {
    pub fn new(q: &Vector2<f64>, w: &Vector2<f64>, altitude: f64) -> Self {
        Self {
            horizontal_sq: (q - w).norm_squared(),
            altitude_sq: altitude * altitude,
        }
    }

    pub fn distance_sq(&self) -> f64 {
        self.horizontal_sq + self.altitude_sq
    }
}

pub fn gain_td_uav(q: &Vector2<f64>, td: &Vector2<f64>, altitude: f64, ref_gain: f64) -> f64 {
    ref_gain / LinkGeometry::new(q, td, altitude).distance_sq()
}

pub fn gain_uav_ap(q: &Vector2<f64>, ap: &Vector2<f64>, altitude: f64, ref_gain: f64) -> f64 {
    ref_gain / LinkGeometry::new(q, ap, altitude).distance_sq()
}

/// Achievable rate in bit/s: `B0 * log2(1 + p * gain / (noise_psd * B0))`.
pub fn rate_bps(power: f64, gain: f64, noise_psd: f64, subcarrier_bw: f64) -> f64 {
    subcarrier_bw * log2_1p(power * gain / (noise_psd * subcarrier_bw))
}

/// Bits delivered in `t` seconds with energy `e`: `t * rate(e / t)`, and 0
/// at `t = 0` with `e = 0`.
pub fn perspective_bits(
    t: f64,
    e: f64,
    gain: f64,
    noise_psd: f64,
    subcarrier_bw: f64,
) -> Result<f64> {
    if t < 0.0 || e < 0.0 {
        return Err(MecError::Numerical(format!(
            "perspective rate needs t >= 0 and E >= 0 (t = {t}, E = {e})"
        )));
    }
    if t == 0.0 {
        if e > 0.0 {
            return Err(MecError::Numerical(format!(
                "energy {e} J spent in a zero-length subslot"
            )));
        }
        return Ok(0.0);
    }
    Ok(t * rate_bps(e / t, gain, noise_psd, subcarrier_bw))
}

/// Per-watt received SNR of each link of slot `n` for TD `k`, i.e. the
/// reference SNR divided by the squared link distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotSnr {
    /// TD to UAV.
    pub uplink: f64,
    /// UAV to AP.
    pub relay: f64,
}

impl SlotSnr {
    pub fn at(sc: &Scenario, q: &Vector2<f64>, k: usize) -> Self {
        let up = LinkGeometry::new(q, &sc.td_pos[k], sc.altitude).distance_sq();
        let ap = LinkGeometry::new(q, &sc.ap_pos, sc.altitude).distance_sq();
        Self {
            uplink: sc.ref_snr_uav / up,
            relay: sc.ref_snr_ap / ap,
        }
    }
}

/// Rate in bit/s given the per-watt SNR of a link.
#[inline]
pub fn rate_from_snr(power: f64, snr_per_watt: f64, subcarrier_bw: f64) -> f64 {
    subcarrier_bw * log2_1p(power * snr_per_watt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const B0: f64 = 10e6 / 3.0;
    const N0: f64 = 1e-16;

    #[test]
    fn overhead_gain() {
        let q = Vector2::new(3.0, 4.0);
        assert!((gain_td_uav(&q, &q, 20.0, 1e-5) - 2.5e-8).abs() < 1e-22);
        let g = gain_td_uav(&Vector2::zeros(), &Vector2::new(20.0, 0.0), 20.0, 1e-5);
        assert!((g - 1e-5 / 800.0).abs() < 1e-22);
        let g = gain_uav_ap(&Vector2::zeros(), &Vector2::new(0.0, 20.0), 20.0, 1e-5);
        assert!((g - 1e-5 / 800.0).abs() < 1e-22);
    }

    #[test]
    fn gain_symmetry_and_decay() {
        let a = Vector2::new(1.0, -2.0);
        let b = Vector2::new(-7.0, 5.0);
        assert_eq!(
            gain_uav_ap(&a, &b, 20.0, 1e-5),
            gain_uav_ap(&b, &a, 20.0, 1e-5)
        );
        let mut prev = f64::INFINITY;
        for d in [0.0, 1.0, 10.0, 100.0, 1e4, 1e8] {
            let g = gain_td_uav(&Vector2::new(d, 0.0), &Vector2::zeros(), 20.0, 1e-5);
            assert!(g < prev && g > 0.0);
            prev = g;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rate_bps(0.0, 2.5e-8, N0, B0), 0.0);
        // SNR = 0.1 * 2.5e-8 / (1e-16 * B0) = 7.5
        let r = rate_bps(0.1, 2.5e-8, N0, B0);
        assert!((r / (B0 * 8.5f64.log2()) - 1.0).abs() < 1e-14);
        let snr = 0.1 * 2.5e-8 / (N0 * B0);
        let doubled = rate_bps(0.1 * 2.0, 2.5e-8, N0, 2.0 * B0);
        assert!((doubled / (2.0 * B0 * (1.0 + snr).log2()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn perspective_edges() {
        assert_eq!(perspective_bits(0.0, 0.0, 2.5e-8, N0, B0).unwrap(), 0.0);
        assert!(perspective_bits(0.0, 1e-3, 2.5e-8, N0, B0).is_err());
        let p = 0.7;
        let v = perspective_bits(0.2, 0.2 * p, 2.5e-8, N0, B0).unwrap();
        assert!((v - 0.2 * rate_bps(p, 2.5e-8, N0, B0)).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn perspective_is_jointly_concave(
            t1 in 0.0f64..0.2, t2 in 0.0f64..0.2, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0,
        ) {
            let (e1, e2) = (t1 * f1 * 3.16, t2 * f2 * 3.16);
            let f = |t: f64, e: f64| perspective_bits(t, e, 2.5e-8, N0, B0).unwrap();
            let mid = f(0.5 * (t1 + t2), 0.5 * (e1 + e2));
            let avg = 0.5 * (f(t1, e1) + f(t2, e2));
            prop_assert!(mid >= avg - 1e-9 * avg.abs().max(1.0));
        }

        #[test]
        fn rate_is_concave_and_increasing(a in 0.0f64..3.0, b in 0.0f64..3.0, g in 1e-9f64..1e-6) {
            let r = |p: f64| rate_bps(p, g, N0, B0);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(r(hi) > r(lo));
            let mid = 0.5 * (lo + hi);
            prop_assert!(r(mid) >= 0.5 * (r(lo) + r(hi)) - 1e-9 * r(hi));
            prop_assert!(rate_bps(1.0, 2.0 * g, N0, B0) > rate_bps(1.0, g, N0, B0));
        }
    }
}
