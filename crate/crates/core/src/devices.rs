//! Device catalog: latency, power and optical-loss figures for every device
//! class in the accelerator, the DAC resolution scaling law, and the laser
//! power budget.
//!
//! Every field can be overridden from a JSON catalog file; missing fields
//! keep their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::workload::MAX_BITS;

/// Speed of light in vacuum, cm/ns.
const C_CM_PER_NS: f64 = 29.979_245_8;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("resolution {0} bits is outside 1..=16")]
    Resolution(u32),
    #[error("wavelength count must be at least 1")]
    NoWavelengths,
    #[error("cannot convert non-positive power {0} mW to dBm")]
    NonPositivePower(f64),
    #[error("catalog field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

impl DeviceError {
    pub fn is_parse(&self) -> bool {
        matches!(self, DeviceError::Io { .. } | DeviceError::Parse(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub latency_ns: f64,
    pub power_mw: f64,
}

impl DeviceSpec {
    const fn new(latency_ns: f64, power_mw: f64) -> Self {
        DeviceSpec { latency_ns, power_mw }
    }

    /// Energy in pJ for one activation lasting the device's own latency.
    pub fn activation_pj(&self) -> f64 {
        self.power_mw * self.latency_ns
    }
}

/// Resonance tuning. Power is quoted per unit of shift: per nm for EO,
/// per free spectral range for TO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpec {
    pub latency_ns: f64,
    pub power_mw_per_unit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub eo_tuning: TuningSpec,
    pub to_tuning: TuningSpec,
    pub vcsel: DeviceSpec,
    pub photodetector: DeviceSpec,
    pub soa: DeviceSpec,
    pub dac16: DeviceSpec,
    pub adc16: DeviceSpec,
    pub dac8: DeviceSpec,
    pub adc8: DeviceSpec,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            eo_tuning: TuningSpec {
                latency_ns: 20.0,
                power_mw_per_unit: 4e-3,
            },
            to_tuning: TuningSpec {
                latency_ns: 4_000.0,
                power_mw_per_unit: 27.5,
            },
            vcsel: DeviceSpec::new(0.07, 1.3),
            photodetector: DeviceSpec::new(5.8e-3, 2.8),
            soa: DeviceSpec::new(0.3, 2.2),
            dac16: DeviceSpec::new(0.33, 40.0),
            adc16: DeviceSpec::new(14.0, 62.0),
            dac8: DeviceSpec::new(0.29, 3.0),
            adc8: DeviceSpec::new(0.82, 3.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossModel {
    pub waveguide_db_per_cm: f64,
    pub splitter_db: f64,
    pub mr_through_db: f64,
    pub mr_modulation_db: f64,
    pub eo_tuning_db_per_cm: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        LossModel {
            waveguide_db_per_cm: 1.0,
            splitter_db: 0.05,
            mr_through_db: 0.02,
            mr_modulation_db: 0.72,
            eo_tuning_db_per_cm: 6.0,
        }
    }
}

/// Constants the device table does not pin down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Photodetector sensitivity.
    pub detector_sensitivity_dbm: f64,
    /// Fraction of time a bank's TO heater runs at full per-FSR power.
    pub to_duty_cycle: f64,
    /// Resonance shift per EO parameter imprint.
    pub eo_shift_nm: f64,
    /// Waveguide length consumed per microring along a bus.
    pub mr_pitch_cm: f64,
    /// Fixed routing length of every MVU optical path.
    pub base_waveguide_cm: f64,
    /// EO-tuned section length per modulating microring.
    pub eo_section_cm: f64,
    pub group_index: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            detector_sensitivity_dbm: -20.0,
            to_duty_cycle: 1e-3,
            eo_shift_nm: 1.0,
            mr_pitch_cm: 2e-3,
            base_waveguide_cm: 0.1,
            eo_section_cm: 1e-3,
            group_index: 4.2,
        }
    }
}

/// One element of an optical path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossElement {
    Waveguide { cm: f64 },
    Splitter { count: u64 },
    MrThrough { count: u64 },
    MrModulation { count: u64 },
    EoTuned { cm: f64 },
}

impl LossModel {
    /// Total loss of a path in dB. Counts and lengths must be non-negative.
    pub fn aggregate_photoloss(&self, path: &[LossElement]) -> f64 {
        path.iter()
            .map(|e| match *e {
                LossElement::Waveguide { cm } => cm * self.waveguide_db_per_cm,
                LossElement::Splitter { count } => count as f64 * self.splitter_db,
                LossElement::MrThrough { count } => count as f64 * self.mr_through_db,
                LossElement::MrModulation { count } => count as f64 * self.mr_modulation_db,
                LossElement::EoTuned { cm } => cm * self.eo_tuning_db_per_cm,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceCatalog {
    pub devices: DeviceParams,
    pub losses: LossModel,
    pub calibration: Calibration,
}

impl DeviceCatalog {
    pub fn from_json_str(text: &str) -> Result<Self, DeviceError> {
        let cat: DeviceCatalog = serde_json::from_str(text)?;
        cat.validate()?;
        Ok(cat)
    }

    /// Applies a partial catalog document on top of this one.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self, DeviceError> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overrides);
        let cat: DeviceCatalog = serde_json::from_value(base)?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let d = &self.devices;
        let specs = [
            ("vcsel", d.vcsel),
            ("photodetector", d.photodetector),
            ("soa", d.soa),
            ("dac16", d.dac16),
            ("adc16", d.adc16),
            ("dac8", d.dac8),
            ("adc8", d.adc8),
            (
                "eo_tuning",
                DeviceSpec::new(d.eo_tuning.latency_ns, d.eo_tuning.power_mw_per_unit),
            ),
            (
                "to_tuning",
                DeviceSpec::new(d.to_tuning.latency_ns, d.to_tuning.power_mw_per_unit),
            ),
        ];
        for (name, s) in specs {
            if !(positive(s.latency_ns) && positive(s.power_mw)) {
                return Err(invalid(name, "latency and power must be positive"));
            }
        }
        if d.dac16.power_mw < d.dac8.power_mw {
            return Err(invalid("dac16", "power must not be below the 8-bit DAC"));
        }
        let l = &self.losses;
        for (name, v) in [
            ("waveguide_db_per_cm", l.waveguide_db_per_cm),
            ("splitter_db", l.splitter_db),
            ("mr_through_db", l.mr_through_db),
            ("mr_modulation_db", l.mr_modulation_db),
            ("eo_tuning_db_per_cm", l.eo_tuning_db_per_cm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "loss must be non-negative"));
            }
        }
        let c = &self.calibration;
        if !(0.0..=1.0).contains(&c.to_duty_cycle) {
            return Err(invalid("to_duty_cycle", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("eo_shift_nm", c.eo_shift_nm),
            ("mr_pitch_cm", c.mr_pitch_cm),
            ("base_waveguide_cm", c.base_waveguide_cm),
            ("eo_section_cm", c.eo_section_cm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        if !positive(c.group_index) || !c.detector_sensitivity_dbm.is_finite() {
            return Err(invalid(
                "calibration",
                "group_index must be positive, sensitivity finite",
            ));
        }
        Ok(())
    }

    /// DAC power at `n_bits` resolution, in mW.
    ///
    /// Below 8 bits the 8-bit part is scaled by `(2^N/N + 1)`; between the 8-
    /// and 16-bit parts power is interpolated linearly in log space.
    pub fn dac_power(&self, n_bits: u32) -> Result<f64, DeviceError> {
        check_resolution(n_bits)?;
        let p8 = self.devices.dac8.power_mw;
        let p16 = self.devices.dac16.power_mw;
        Ok(match n_bits {
            16 => p16,
            n if n <= 8 => p8 * dac_scaling(n) / dac_scaling(8),
            n => p8 * (p16 / p8).powf(f64::from(n - 8) / 8.0),
        })
    }

    pub fn dac_latency(&self, n_bits: u32) -> Result<f64, DeviceError> {
        check_resolution(n_bits)?;
        Ok(if n_bits <= 8 {
            self.devices.dac8.latency_ns
        } else {
            self.devices.dac16.latency_ns
        })
    }

    /// DAC parameters at `n_bits` resolution.
    pub fn dac(&self, n_bits: u32) -> Result<DeviceSpec, DeviceError> {
        Ok(DeviceSpec::new(self.dac_latency(n_bits)?, self.dac_power(n_bits)?))
    }

    /// Only 8- and 16-bit ADCs are catalogued; anything up to 8 bits uses
    /// the 8-bit part.
    pub fn adc(&self, n_bits: u32) -> Result<DeviceSpec, DeviceError> {
        check_resolution(n_bits)?;
        Ok(if n_bits <= 8 {
            self.devices.adc8
        } else {
            self.devices.adc16
        })
    }

    /// Energy of one EO parameter imprint, pJ.
    pub fn eo_imprint_pj(&self) -> f64 {
        let eo = self.devices.eo_tuning;
        eo.power_mw_per_unit * self.calibration.eo_shift_nm * eo.latency_ns
    }

    /// Average TO heater power per MR bank, mW.
    pub fn to_bank_power_mw(&self) -> f64 {
        self.devices.to_tuning.power_mw_per_unit * self.calibration.to_duty_cycle
    }

    pub fn flight_time_ns(&self, waveguide_cm: f64) -> f64 {
        waveguide_cm * self.calibration.group_index / C_CM_PER_NS
    }

    pub fn min_laser_power(&self, p_photoloss_db: f64, n_lambda: u64) -> Result<f64, DeviceError> {
        min_laser_power(p_photoloss_db, n_lambda, self.calibration.detector_sensitivity_dbm)
    }
}

/// Loads a catalog file; absent fields keep their defaults.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<DeviceCatalog, DeviceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DeviceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DeviceCatalog::from_json_str(&text)
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn invalid(field: &str, reason: &str) -> DeviceError {
    DeviceError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

fn check_resolution(n_bits: u32) -> Result<(), DeviceError> {
    if (1..=MAX_BITS).contains(&n_bits) {
        Ok(())
    } else {
        Err(DeviceError::Resolution(n_bits))
    }
}

fn dac_scaling(n: u32) -> f64 {
    2f64.powi(n as i32) / f64::from(n) + 1.0
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Smallest laser power satisfying
/// `P_laser - S_detector >= P_photoloss + 10 log10(N_lambda)`.
pub fn min_laser_power(p_photoloss_db: f64, n_lambda: u64, s_detector_dbm: f64) -> Result<f64, DeviceError> {
    if n_lambda < 1 {
        return Err(DeviceError::NoWavelengths);
    }
    Ok(s_detector_dbm + p_photoloss_db + 10.0 * (n_lambda as f64).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub p_laser_dbm: f64,
    pub s_detector_dbm: f64,
    pub p_photoloss_db: f64,
    pub n_lambda: u64,
}

impl PowerBudget {
    pub fn margin_db(&self) -> f64 {
        self.p_laser_dbm - self.s_detector_dbm - self.p_photoloss_db - 10.0 * (self.n_lambda.max(1) as f64).log10()
    }

    pub fn is_feasible(&self) -> bool {
        self.n_lambda >= 1 && self.margin_db() >= 0.0
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> Result<f64, DeviceError> {
    if mw > 0.0 {
        Ok(10.0 * mw.log10())
    } else {
        Err(DeviceError::NonPositivePower(mw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dac_anchors() {
        let c = DeviceCatalog::default();
        assert_eq!(c.dac_power(16).unwrap(), 40.0);
        assert_eq!(c.dac_power(8).unwrap(), 3.0);
        assert_relative_eq!(c.dac_power(4).unwrap(), 3.0 * 5.0 / 33.0);
        assert_relative_eq!(c.dac_power(1).unwrap(), 3.0 * 3.0 / 33.0);
        assert!(c.dac_power(0).is_err());
        assert!(c.dac_power(17).is_err());
    }

    #[test]
    fn dac_monotone() {
        let c = DeviceCatalog::default();
        let powers: Vec<f64> = (1..=16).map(|n| c.dac_power(n).unwrap()).collect();
        assert!(powers.windows(2).all(|w| w[0] <= w[1]), "{powers:?}");
    }

    #[test]
    fn dac_latency_rule() {
        let c = DeviceCatalog::default();
        assert_eq!(c.dac_latency(4).unwrap(), 0.29);
        assert_eq!(c.dac_latency(1).unwrap(), 0.29);
        assert_eq!(c.dac_latency(12).unwrap(), 0.33);
        assert_eq!(c.dac_latency(16).unwrap(), 0.33);
    }

    #[test]
    fn photoloss_sums() {
        let l = LossModel::default();
        assert_eq!(l.aggregate_photoloss(&[]), 0.0);
        assert_eq!(l.aggregate_photoloss(&[LossElement::Waveguide { cm: 1.0 }]), 1.0);
        let path = [
            LossElement::Waveguide { cm: 2.0 },
            LossElement::Splitter { count: 1 },
            LossElement::MrThrough { count: 10 },
            LossElement::MrModulation { count: 1 },
        ];
        assert_relative_eq!(l.aggregate_photoloss(&path), 2.97, epsilon = 1e-12);
    }

    #[test]
    fn laser_budget() {
        assert_eq!(min_laser_power(0.0, 1, -20.0).unwrap(), -20.0);
        assert_relative_eq!(min_laser_power(10.0, 16, -20.0).unwrap(), 2.041, epsilon = 1e-3);
        assert!(min_laser_power(0.0, 0, -20.0).is_err());
        let budget = PowerBudget {
            p_laser_dbm: 2.05,
            s_detector_dbm: -20.0,
            p_photoloss_db: 10.0,
            n_lambda: 16,
        };
        assert!(budget.is_feasible());
        assert!(!PowerBudget {
            p_laser_dbm: 2.0,
            ..budget
        }
        .is_feasible());
    }

    #[test]
    fn dbm_conversions() {
        assert_eq!(dbm_to_mw(0.0), 1.0);
        assert_eq!(dbm_to_mw(10.0), 10.0);
        assert_relative_eq!(dbm_to_mw(-20.0), 0.01);
        assert!(mw_to_dbm(0.0).is_err());
        assert!(mw_to_dbm(-1.0).is_err());
    }

    #[test]
    fn partial_catalog_file() {
        let c = DeviceCatalog::from_json_str(
            r#"{"devices":{"adc8":{"latency_ns":1.0,"power_mw":5.0}},
                "calibration":{"detector_sensitivity_dbm":-25.0}}"#,
        )
        .unwrap();
        assert_eq!(c.devices.adc8.power_mw, 5.0);
        assert_eq!(c.devices.adc16, DeviceParams::default().adc16);
        assert_eq!(c.calibration.detector_sensitivity_dbm, -25.0);
        assert_eq!(c.calibration.to_duty_cycle, Calibration::default().to_duty_cycle);
        assert!(DeviceCatalog::from_json_str(r#"{"devices":{"laser":{}}}"#).is_err());
        assert!(DeviceCatalog::from_json_str(r#"{"devices":{"soa":{"latency_ns":0.0,"power_mw":1.0}}}"#).is_err());
    }

    #[test]
    fn overrides_merge_deeply() {
        let c = DeviceCatalog::default()
            .with_overrides(&serde_json::json!({"devices": {"dac8": {"power_mw": 6.0}}}))
            .unwrap();
        assert_eq!(c.devices.dac8.power_mw, 6.0);
        assert_eq!(c.devices.dac8.latency_ns, 0.29);
    }

    proptest! {
        #[test]
        fn laser_additive_in_loss(loss in 0.0f64..60.0, d in 0.0f64..30.0, n in 1u64..4096) {
            let a = min_laser_power(loss, n, -20.0).unwrap();
            let b = min_laser_power(loss + d, n, -20.0).unwrap();
            prop_assert!((b - a - d).abs() < 1e-9);
            let doubled = min_laser_power(loss, 2 * n, -20.0).unwrap();
            prop_assert!((doubled - a - 10.0 * 2f64.log10()).abs() < 1e-9);
        }

        #[test]
        fn dbm_round_trip(dbm in -80.0f64..40.0) {
            let back = mw_to_dbm(dbm_to_mw(dbm)).unwrap();
            prop_assert!((back - dbm).abs() <= 1e-12 * dbm.abs().max(1.0));
        }

        #[test]
        fn photoloss_additive(a in 0.0f64..5.0, n in 0u64..100, b in 0.0f64..5.0, m in 0u64..100) {
            let l = LossModel::default();
            let p1 = [LossElement::Waveguide { cm: a }, LossElement::MrThrough { count: n }];
            let p2 = [LossElement::EoTuned { cm: b }, LossElement::Splitter { count: m }];
            let joined: Vec<_> = p1.iter().chain(&p2).copied().collect();
            let sum = l.aggregate_photoloss(&p1) + l.aggregate_photoloss(&p2);
            prop_assert!((l.aggregate_photoloss(&joined) - sum).abs() < 1e-9);
        }
    }
}
