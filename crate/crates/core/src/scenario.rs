//! Problem instances: the JSON scenario schema, unit conversion at the file
//! boundary, and the validated SI-unit [`Scenario`] used by every solver.
//!
//! Everything inside the crate works in W, J, s, Hz and bits. Decibel values
//! exist only in [`ScenarioFile`].

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{MecError, Result};

/// Bundled default instance: parameters and the TD/AP layout.
pub const DEFAULT_SCENARIO_JSON: &str = include_str!("../data/table1.json");

/// Relative slack accepted when checking terminal reachability, so that an
/// instance sitting exactly on the boundary is not rejected by rounding.
const REACH_RTOL: f64 = 1e-12;

pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watt_to_dbm(watt: f64) -> f64 {
    10.0 * watt.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Rotary-wing aerodynamic constants.
///
/// `drag_ratio` is the fuselage drag ratio; it is unrelated to the 1 m
/// reference distance of the path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeroParams {
    /// Blade profile power in hover (W).
    #[serde(rename = "P0_w")]
    pub blade_profile_power: f64,
    /// Induced power in hover (W).
    #[serde(rename = "Pi_w")]
    pub induced_power: f64,
    /// Rotor blade tip speed (m/s).
    #[serde(rename = "U_tip_mps")]
    pub tip_speed: f64,
    /// Mean rotor induced velocity in hover (m/s).
    #[serde(rename = "v0_ind_mps")]
    pub induced_velocity: f64,
    #[serde(rename = "drag_ratio")]
    pub drag_ratio: f64,
    /// Air density (kg/m^3).
    #[serde(rename = "rho")]
    pub air_density: f64,
    /// Rotor solidity.
    #[serde(rename = "s")]
    pub solidity: f64,
    /// Rotor disc area (m^2).
    #[serde(rename = "A_m2")]
    pub disc_area: f64,
}

impl AeroParams {
    fn validate(&self) -> Result<()> {
        let fields = [
            ("aero.P0_w", self.blade_profile_power),
            ("aero.Pi_w", self.induced_power),
            ("aero.U_tip_mps", self.tip_speed),
            ("aero.v0_ind_mps", self.induced_velocity),
            ("aero.drag_ratio", self.drag_ratio),
            ("aero.rho", self.air_density),
            ("aero.s", self.solidity),
            ("aero.A_m2", self.disc_area),
        ];
        for (name, v) in fields {
            require_positive(name, v)?;
        }
        Ok(())
    }

    /// Coefficient of the cubic parasite term, `0.5 * d0 * rho * s * A`.
    pub fn parasite_coeff(&self) -> f64 {
        0.5 * self.drag_ratio * self.air_density * self.solidity * self.disc_area
    }
}

/// Per-slot task requirement as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskSpec {
    Uniform(f64),
    PerTd(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

/// On-disk scenario. Field names are the exact JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "K")]
    pub num_tds: usize,
    #[serde(rename = "N")]
    pub num_slots: usize,
    pub slot_len_s: f64,
    pub altitude_m: f64,
    pub q0_m: [f64; 2],
    #[serde(rename = "qF_m")]
    pub qf_m: [f64; 2],
    pub v_max_mps: f64,
    pub td_pos_m: Vec<[f64; 2]>,
    pub ap_pos_m: [f64; 2],
    pub bandwidth_hz: f64,
    pub noise_psd_uav_dbm_hz: f64,
    pub noise_psd_ap_dbm_hz: f64,
    pub ref_gain_db: f64,
    pub p_td_max_dbm: f64,
    pub p_uav_max_dbm: f64,
    pub f_td_max_hz: f64,
    pub f_uav_max_hz: f64,
    pub cycles_per_bit_td: f64,
    pub cycles_per_bit_uav: f64,
    pub cap_coeff_td: f64,
    pub cap_coeff_uav: f64,
    pub flight_weight: f64,
    pub task_min_bits: TaskSpec,
    pub aero: AeroParams,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| MecError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Sets the horizon to `period` seconds. The task matrix, if given per
    /// slot, must be re-specified afterwards.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        self.num_slots = slots_for_period(period, self.slot_len_s)?;
        Ok(self)
    }

    pub fn with_uniform_task(mut self, bits: f64) -> Self {
        self.task_min_bits = TaskSpec::Uniform(bits);
        self
    }

    fn task_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let (k, n) = (self.num_tds, self.num_slots);
        let m = match &self.task_min_bits {
            TaskSpec::Uniform(v) => vec![vec![*v; n]; k],
            TaskSpec::PerTd(row) => {
                if row.len() != k {
                    return Err(invalid(
                        "task_min_bits",
                        format!("per-TD array has {} entries, expected K = {k}", row.len()),
                    ));
                }
                row.iter().map(|&v| vec![v; n]).collect()
            }
            TaskSpec::Matrix(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != n) {
                    return Err(invalid("task_min_bits", format!("matrix must be {k}x{n}")));
                }
                rows.clone()
            }
        };
        for (ki, row) in m.iter().enumerate() {
            for (ni, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(invalid(
                        "task_min_bits",
                        format!("entry [{ki}][{ni}] = {v} must be finite and >= 0"),
                    ));
                }
            }
        }
        Ok(m)
    }
}

/// Number of slots covering `period`; errors unless `period` is a positive
/// integer multiple of `slot_len`.
pub fn slots_for_period(period: f64, slot_len: f64) -> Result<usize> {
    let err = || MecError::NonMultiplePeriod { period, slot_len };
    if !(period > 0.0 && slot_len > 0.0 && period.is_finite()) {
        return Err(err());
    }
    let ratio = period / slot_len;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * n.max(1.0) {
        return Err(err());
    }
    Ok(n as usize)
}

/// Validated instance in SI units, with derived quantities populated.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub num_tds: usize,
    pub num_slots: usize,
    /// Slot length (s).
    pub slot_len: f64,
    /// Flight altitude (m).
    pub altitude: f64,
    pub q0: Vector2<f64>,
    pub qf: Vector2<f64>,
    pub v_max: f64,
    pub td_pos: Vec<Vector2<f64>>,
    pub ap_pos: Vector2<f64>,
    pub bandwidth: f64,
    /// Per-TD subcarrier bandwidth `B / K` (Hz).
    pub subcarrier_bw: f64,
    /// Noise PSD at the UAV (W/Hz).
    pub noise_psd_uav: f64,
    /// Noise PSD at the AP (W/Hz).
    pub noise_psd_ap: f64,
    /// Channel power gain at 1 m (linear).
    pub ref_gain: f64,
    /// Reference SNR per watt at the UAV, `beta0 / (N0 B0)`.
    pub ref_snr_uav: f64,
    /// Reference SNR per watt at the AP, `beta0 / (N1 B0)`.
    pub ref_snr_ap: f64,
    pub p_td_max: f64,
    pub p_uav_max: f64,
    pub f_td_max: f64,
    pub f_uav_max: f64,
    /// UAV CPU frequency share per TD, `f_uav_max / K`.
    pub f_uav_per_td: f64,
    pub cycles_per_bit_td: f64,
    pub cycles_per_bit_uav: f64,
    pub cap_coeff_td: f64,
    pub cap_coeff_uav: f64,
    pub flight_weight: f64,
    /// `task_min[k][n]`, bits.
    pub task_min: Vec<Vec<f64>>,
    pub aero: AeroParams,
    source: ScenarioFile,
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let f = &file;
        if f.num_tds < 1 {
            return Err(invalid("K", "must be >= 1".into()));
        }
        if f.num_slots < 1 {
            return Err(invalid("N", "must be >= 1".into()));
        }
        for (name, v) in [
            ("slot_len_s", f.slot_len_s),
            ("altitude_m", f.altitude_m),
            ("bandwidth_hz", f.bandwidth_hz),
            ("f_td_max_hz", f.f_td_max_hz),
            ("f_uav_max_hz", f.f_uav_max_hz),
            ("cycles_per_bit_td", f.cycles_per_bit_td),
            ("cycles_per_bit_uav", f.cycles_per_bit_uav),
            ("cap_coeff_td", f.cap_coeff_td),
            ("cap_coeff_uav", f.cap_coeff_uav),
        ] {
            require_positive(name, v)?;
        }
        for (name, v) in [
            ("v_max_mps", f.v_max_mps),
            ("flight_weight", f.flight_weight),
            ("noise_psd_uav_dbm_hz", f.noise_psd_uav_dbm_hz),
            ("noise_psd_ap_dbm_hz", f.noise_psd_ap_dbm_hz),
            ("ref_gain_db", f.ref_gain_db),
            ("p_td_max_dbm", f.p_td_max_dbm),
            ("p_uav_max_dbm", f.p_uav_max_dbm),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, format!("{v} is not finite")));
            }
        }
        if f.v_max_mps < 0.0 {
            return Err(invalid("v_max_mps", "must be >= 0".into()));
        }
        if f.flight_weight < 0.0 {
            return Err(invalid("flight_weight", "must be >= 0".into()));
        }
        if f.td_pos_m.len() != f.num_tds {
            return Err(invalid(
                "td_pos_m",
                format!(
                    "has {} positions, expected K = {}",
                    f.td_pos_m.len(),
                    f.num_tds
                ),
            ));
        }
        let points = f
            .td_pos_m
            .iter()
            .chain([&f.q0_m, &f.qf_m, &f.ap_pos_m])
            .flat_map(|p| p.iter());
        if points.into_iter().any(|c| !c.is_finite()) {
            return Err(invalid("positions", "coordinates must be finite".into()));
        }
        f.aero.validate()?;
        let task_min = f.task_matrix()?;

        let q0 = Vector2::from(f.q0_m);
        let qf = Vector2::from(f.qf_m);
        let distance = (qf - q0).norm();
        let reach = f.num_slots as f64 * f.slot_len_s * f.v_max_mps;
        if distance > reach * (1.0 + REACH_RTOL) {
            return Err(MecError::Unreachable { distance, reach });
        }

        let subcarrier_bw = f.bandwidth_hz / f.num_tds as f64;
        let noise_psd_uav = dbm_to_watt(f.noise_psd_uav_dbm_hz);
        let noise_psd_ap = dbm_to_watt(f.noise_psd_ap_dbm_hz);
        let ref_gain = db_to_linear(f.ref_gain_db);
        Ok(Self {
            num_tds: f.num_tds,
            num_slots: f.num_slots,
            slot_len: f.slot_len_s,
            altitude: f.altitude_m,
            q0,
            qf,
            v_max: f.v_max_mps,
            td_pos: f.td_pos_m.iter().map(|p| Vector2::from(*p)).collect(),
            ap_pos: Vector2::from(f.ap_pos_m),
            bandwidth: f.bandwidth_hz,
            subcarrier_bw,
            noise_psd_uav,
            noise_psd_ap,
            ref_gain,
            ref_snr_uav: ref_gain / (noise_psd_uav * subcarrier_bw),
            ref_snr_ap: ref_gain / (noise_psd_ap * subcarrier_bw),
            p_td_max: dbm_to_watt(f.p_td_max_dbm),
            p_uav_max: dbm_to_watt(f.p_uav_max_dbm),
            f_td_max: f.f_td_max_hz,
            f_uav_max: f.f_uav_max_hz,
            f_uav_per_td: f.f_uav_max_hz / f.num_tds as f64,
            cycles_per_bit_td: f.cycles_per_bit_td,
            cycles_per_bit_uav: f.cycles_per_bit_uav,
            cap_coeff_td: f.cap_coeff_td,
            cap_coeff_uav: f.cap_coeff_uav,
            flight_weight: f.flight_weight,
            task_min,
            aero: f.aero,
            source: file,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(text)?)
    }

    /// Default instance: bundled parameters and layout, horizon `period`
    /// seconds, and `bits` required per TD per slot.
    pub fn default_with(period: f64, bits: f64) -> Result<Self> {
        let file = ScenarioFile::parse(DEFAULT_SCENARIO_JSON)?
            .with_period(period)?
            .with_uniform_task(bits);
        Self::from_file(file)
    }

    /// The file this scenario was built from.
    pub fn to_file(&self) -> ScenarioFile {
        self.source.clone()
    }

    pub fn period(&self) -> f64 {
        self.num_slots as f64 * self.slot_len
    }

    /// Per-slot local computing cap `slot_len * f_td_max / c_u` (bits).
    pub fn local_cap_bits(&self) -> f64 {
        self.slot_len * self.f_td_max / self.cycles_per_bit_td
    }

    /// Per-slot, per-TD UAV computing cap `slot_len * f_uav_per_td / c_h` (bits).
    pub fn uav_cap_bits(&self) -> f64 {
        self.slot_len * self.f_uav_per_td / self.cycles_per_bit_uav
    }

    /// Same instance with a new horizon and uniform task.
    pub fn rescaled(&self, period: f64, bits: f64) -> Result<Self> {
        Self::from_file(self.to_file().with_period(period)?.with_uniform_task(bits))
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| MecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::parse(&text)
}

/// Alias of [`Scenario::default_with`].
pub fn default_scenario(period: f64, bits: f64) -> Result<Scenario> {
    Scenario::default_with(period, bits)
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be finite and > 0")))
    }
}

fn invalid(field: &str, reason: String) -> MecError {
    MecError::Invalid {
        field: field.to_string(),
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundled() -> ScenarioFile {
        ScenarioFile::parse(DEFAULT_SCENARIO_JSON).unwrap()
    }

    #[test]
    fn bundled_units_convert_to_si() {
        let sc = Scenario::default_with(6.0, 4e5).unwrap();
        assert!((sc.ref_gain - 1e-5).abs() < 1e-20);
        assert!((sc.noise_psd_uav - 1e-16).abs() < 1e-30);
        assert!((sc.p_td_max - 3.1622776601683795).abs() < 1e-12);
        let b0 = 10e6 / 3.0;
        assert!((sc.subcarrier_bw - b0).abs() < 1e-6);
        let gamma0 = 1e-5 / (1e-16 * b0);
        assert!((sc.ref_snr_uav / gamma0 - 1.0).abs() < 1e-12);
        assert!((sc.uav_cap_bits() - 2e5).abs() < 1e-6);
        assert!((sc.local_cap_bits() - 4e5).abs() < 1e-6);
    }

    #[test]
    fn default_period_and_task() {
        let sc = Scenario::default_with(6.0, 4e5).unwrap();
        assert_eq!(sc.num_slots, 30);
        assert!(sc.task_min.iter().flatten().all(|&l| l == 4e5));
        assert_eq!(Scenario::default_with(7.0, 4e5).unwrap().num_slots, 35);
        assert_eq!(slots_for_period(0.2, 0.2).unwrap(), 1);
        assert!(matches!(
            Scenario::default_with(6.1, 4e5),
            Err(MecError::NonMultiplePeriod { .. })
        ));
    }

    #[test]
    fn zero_speed_with_distinct_endpoints_is_unreachable() {
        let mut f = bundled();
        f.v_max_mps = 0.0;
        assert!(matches!(
            Scenario::from_file(f),
            Err(MecError::Unreachable { .. })
        ));
    }

    #[test]
    fn reachability_boundary_is_accepted() {
        // 40 m apart, 10 slots of 0.2 s at 20 m/s reach exactly 40 m.
        let mut f = bundled();
        f.num_slots = 10;
        assert!(Scenario::from_file(f.clone()).is_ok());
        f.v_max_mps = 19.999;
        assert!(Scenario::from_file(f).is_err());
    }

    #[test]
    fn rejects_bad_fields() {
        let mut f = bundled();
        f.altitude_m = 0.0;
        let err = Scenario::from_file(f).unwrap_err();
        assert!(err.to_string().contains("altitude_m"));

        let mut f = bundled();
        f.task_min_bits = TaskSpec::PerTd(vec![1.0, 2.0]);
        assert!(Scenario::from_file(f).is_err());

        let mut f = bundled();
        f.task_min_bits = TaskSpec::Uniform(-1.0);
        assert!(Scenario::from_file(f).is_err());

        let mut f = bundled();
        f.aero.disc_area = -0.5;
        assert!(Scenario::from_file(f).is_err());

        assert!(Scenario::parse("{\"K\": 3}").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(DEFAULT_SCENARIO_JSON).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(Scenario::parse(&v.to_string()).is_err());
    }

    #[test]
    fn task_matrix_forms() {
        let mut f = bundled();
        f.num_slots = 2;
        f.v_max_mps = 100.0;
        f.task_min_bits = TaskSpec::PerTd(vec![1.0, 2.0, 3.0]);
        let sc = Scenario::from_file(f.clone()).unwrap();
        assert_eq!(sc.task_min[2], vec![3.0, 3.0]);
        f.task_min_bits = TaskSpec::Matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let sc = Scenario::from_file(f).unwrap();
        assert_eq!(sc.task_min[1][1], 4.0);
    }

    #[test]
    fn roundtrip_through_json_is_identical() {
        let sc = Scenario::default_with(6.0, 4e5).unwrap();
        let back = Scenario::parse(&sc.to_file().to_json()).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn db_conversions_invert() {
        for x in [-130.0, -50.0, 0.0, 35.0, 12.345] {
            let w = dbm_to_watt(x);
            assert!((watt_to_dbm(w) - x).abs() <= 1e-12 * x.abs().max(1.0));
            let l = db_to_linear(x);
            assert!((linear_to_db(l) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
