//! Analytical model of the MVU-array accelerator.
//!
//! Layers are mapped onto two pools of matrix-vector units: `V` FC-MVUs,
//! each holding a `v`-wide activation slice against a `v x v` weight tile,
//! and `K` Conv-MVUs, each holding a `k`-long kernel chunk with every weight
//! slice on its own waveguide. Time steps come from the slice schedules in
//! [`crate::bitslice`]; energy is the sum of per-activation device energies
//! plus static laser/TO power over the busy MVU time. Idle MVUs are treated
//! as power-gated.
//!
//! Baselines reuse the same device catalog and MVU geometry but run each
//! dot product in one full-resolution step.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bitslice::{self, build_schedule, BitSliceError, Mode};
use crate::devices::{dbm_to_mw, DeviceCatalog, DeviceError, DeviceSpec, LossElement, PowerBudget};
use crate::div_ceil;
use crate::workload::{LayerKind, LayerSpec, WorkloadModel, MAX_BITS};

/// Energy of the two-element, 8-bit, 4-bit-slice dot product used to fix
/// `energy_scale`, in joules.
pub const MICRO_ANCHOR_J: f64 = 6e-3;

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error(
        "laser infeasible on {mvu}: needs {required_dbm:.3} dBm but the ceiling is \
         {ceiling_dbm:.3} dBm (path loss {loss_db:.3} dB, {n_lambda} wavelengths)"
    )]
    LaserInfeasible {
        mvu: String,
        required_dbm: f64,
        ceiling_dbm: f64,
        loss_db: f64,
        n_lambda: u64,
    },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    BitSlice(#[from] BitSliceError),
    #[error("functional check failed on layer {layer}: engine {engine} vs oracle {oracle}")]
    Functional { layer: usize, engine: u64, oracle: u64 },
    #[error("report has zero processed bits")]
    ZeroBits,
}

impl ArchError {
    pub fn is_parse(&self) -> bool {
        match self {
            ArchError::Io { .. } | ArchError::Parse(_) => true,
            ArchError::Device(d) => d.is_parse(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchCalibration {
    pub energy_scale: f64,
}

impl Default for ArchCalibration {
    fn default() -> Self {
        ArchCalibration { energy_scale: 1.0 }
    }
}

fn default_ceiling() -> f64 {
    20.0
}

fn default_true() -> bool {
    true
}

/// Accelerator configuration `(v, k, b, V, K)` plus timing and calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// FC-MVU vector width.
    pub v: u64,
    /// Conv-MVU kernel vector length.
    pub k: u64,
    /// Bit-slice width.
    pub b: u32,
    #[serde(rename = "V")]
    pub fc_mvus: u64,
    #[serde(rename = "K")]
    pub conv_mvus: u64,
    /// Fixed time-step period. When absent it is derived from the per-step
    /// device chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_period_ns: Option<f64>,
    #[serde(default = "default_ceiling")]
    pub laser_ceiling_dbm: f64,
    /// Step period is the slowest device in the chain when true, the sum
    /// of the chain otherwise.
    #[serde(default = "default_true")]
    pub pipelined: bool,
    #[serde(default)]
    pub calibration: ArchCalibration,
}

impl ArchConfig {
    pub fn new(v: u64, k: u64, b: u32, fc_mvus: u64, conv_mvus: u64) -> Self {
        ArchConfig {
            v,
            k,
            b,
            fc_mvus,
            conv_mvus,
            step_period_ns: None,
            laser_ceiling_dbm: default_ceiling(),
            pipelined: true,
            calibration: ArchCalibration::default(),
        }
    }

    pub fn key(&self) -> (u64, u64, u32, u64, u64) {
        (self.v, self.k, self.b, self.fc_mvus, self.conv_mvus)
    }

    pub fn with_energy_scale(mut self, energy_scale: f64) -> Self {
        self.calibration.energy_scale = energy_scale;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |field, reason: &str| {
            Err(ArchError::Config {
                field,
                reason: reason.to_string(),
            })
        };
        for (field, value) in [("v", self.v), ("k", self.k), ("V", self.fc_mvus), ("K", self.conv_mvus)] {
            if value == 0 {
                return bad(field, "must be at least 1");
            }
        }
        if !(1..=bitslice::MAX_SLICE_BITS).contains(&self.b) {
            return bad("b", "must lie in 1..=16");
        }
        if !(self.calibration.energy_scale.is_finite() && self.calibration.energy_scale > 0.0) {
            return bad("energy_scale", "must be positive");
        }
        if let Some(p) = self.step_period_ns {
            if !(p.is_finite() && p > 0.0) {
                return bad("step_period_ns", "must be positive");
            }
        }
        if !self.laser_ceiling_dbm.is_finite() {
            return bad("laser_ceiling_dbm", "must be finite");
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, ArchError> {
        let cfg: ArchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ArchConfig, ArchError> {
    ArchConfig::from_json_str(&read(path.as_ref())?)
}

fn read(path: &Path) -> Result<String, ArchError> {
    std::fs::read_to_string(path).map_err(|source| ArchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A fixed-resolution comparison accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub name: String,
    pub weight_bits: u32,
    pub act_bits: u32,
    /// Full-resolution dot products in one step. When false the baseline
    /// is bit-sliced with the configuration's `b`.
    #[serde(default = "default_true")]
    pub single_step: bool,
    /// Partial device catalog applied on top of the shared one.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub device_overrides: Value,
}

impl BaselineSpec {
    pub fn new(name: impl Into<String>, weight_bits: u32, act_bits: u32) -> Self {
        BaselineSpec {
            name: name.into(),
            weight_bits,
            act_bits,
            single_step: true,
            device_overrides: Value::Null,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ArchError> {
        let spec: BaselineSpec = serde_json::from_str(text)?;
        for (field, bits) in [("weight_bits", spec.weight_bits), ("act_bits", spec.act_bits)] {
            if !(1..=MAX_BITS).contains(&bits) {
                return Err(ArchError::Config {
                    field,
                    reason: format!("{bits} is outside 1..=16"),
                });
            }
        }
        Ok(spec)
    }
}

pub fn load_baseline(path: impl AsRef<Path>) -> Result<BaselineSpec, ArchError> {
    BaselineSpec::from_json_str(&read(path.as_ref())?)
}

/// Device activations, either per step or accumulated over a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeviceCounts {
    pub act_dac: u64,
    pub weight_dac: u64,
    pub eo_imprints: u64,
    pub vcsel: u64,
    pub photodetector: u64,
    pub soa: u64,
    pub adc: u64,
}

/// Converter resolutions in effect for a layer.
#[derive(Debug, Clone, Copy)]
struct Converters {
    act_dac: DeviceSpec,
    weight_dac: DeviceSpec,
    adc: DeviceSpec,
}

impl DeviceCounts {
    fn energy_pj(&self, conv: &Converters, catalog: &DeviceCatalog) -> f64 {
        let d = &catalog.devices;
        self.act_dac as f64 * conv.act_dac.activation_pj()
            + self.weight_dac as f64 * conv.weight_dac.activation_pj()
            + self.eo_imprints as f64 * catalog.eo_imprint_pj()
            + self.vcsel as f64 * d.vcsel.activation_pj()
            + self.photodetector as f64 * d.photodetector.activation_pj()
            + self.soa as f64 * d.soa.activation_pj()
            + self.adc as f64 * conv.adc.activation_pj()
    }

    /// Power drawn with every counted device on at once, mW.
    fn power_mw(&self, conv: &Converters, catalog: &DeviceCatalog) -> f64 {
        let d = &catalog.devices;
        let eo_mw = d.eo_tuning.power_mw_per_unit * catalog.calibration.eo_shift_nm;
        self.act_dac as f64 * conv.act_dac.power_mw
            + self.weight_dac as f64 * conv.weight_dac.power_mw
            + self.eo_imprints as f64 * eo_mw
            + self.vcsel as f64 * d.vcsel.power_mw
            + self.photodetector as f64 * d.photodetector.power_mw
            + self.soa as f64 * d.soa.power_mw
            + self.adc as f64 * conv.adc.power_mw
    }
}

/// Physical structure of one MVU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvuSpec {
    pub kind: LayerKind,
    /// WDM channel count, `v` or `k`.
    pub n_wavelengths: u64,
    /// Waveguides after the splitter: weight rows (FC) or weight slices (CONV).
    pub n_waveguides: u64,
    pub n_mr: u64,
    /// MR banks, one per waveguide plus the activation bank; each carries a
    /// TO heater.
    pub n_banks: u64,
    pub waveguide_cm: f64,
    pub path_loss_db: f64,
    pub soa_ladder: bool,
    /// Devices active on a fully occupied step.
    pub per_step: DeviceCounts,
}

impl MvuSpec {
    pub fn fc(v: u64, catalog: &DeviceCatalog) -> Self {
        Self::build(LayerKind::Fc, v, v, false, catalog)
    }

    pub fn conv(k: u64, waveguides: u64, soa_ladder: bool, catalog: &DeviceCatalog) -> Self {
        Self::build(LayerKind::Conv, k, waveguides, soa_ladder, catalog)
    }

    fn build(kind: LayerKind, lanes: u64, waveguides: u64, soa_ladder: bool, catalog: &DeviceCatalog) -> Self {
        let cal = &catalog.calibration;
        // Worst path: activation bank, splitter tree, one weight bank.
        let waveguide_cm = cal.base_waveguide_cm + cal.mr_pitch_cm * (2 * lanes) as f64;
        let splitter_stages = u64::from(waveguides.next_power_of_two().trailing_zeros());
        let path = [
            LossElement::Waveguide { cm: waveguide_cm },
            LossElement::Splitter { count: splitter_stages },
            LossElement::MrThrough { count: 2 * (lanes - 1) },
            LossElement::MrModulation { count: 2 },
            LossElement::EoTuned {
                cm: 2.0 * cal.eo_section_cm,
            },
        ];
        let per_step = match kind {
            LayerKind::Fc => DeviceCounts {
                act_dac: lanes,
                weight_dac: lanes * waveguides,
                eo_imprints: lanes + lanes * waveguides,
                vcsel: lanes,
                photodetector: waveguides,
                soa: 0,
                adc: waveguides,
            },
            LayerKind::Conv => DeviceCounts {
                act_dac: lanes,
                weight_dac: lanes * waveguides,
                eo_imprints: lanes + lanes * waveguides,
                vcsel: lanes,
                photodetector: waveguides,
                soa: if soa_ladder { waveguides } else { 0 },
                adc: 1,
            },
        };
        MvuSpec {
            kind,
            n_wavelengths: lanes,
            n_waveguides: waveguides,
            n_mr: lanes + lanes * waveguides,
            n_banks: 1 + waveguides,
            waveguide_cm,
            path_loss_db: catalog.losses.aggregate_photoloss(&path),
            soa_ladder,
            per_step,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            LayerKind::Fc => format!("FC-MVU (v={})", self.n_wavelengths),
            LayerKind::Conv => format!("Conv-MVU (k={}, {} waveguides)", self.n_wavelengths, self.n_waveguides),
        }
    }

    /// Laser budget at the minimum feasible laser power.
    pub fn laser_budget(&self, catalog: &DeviceCatalog) -> Result<PowerBudget, ArchError> {
        let p_laser_dbm = catalog.min_laser_power(self.path_loss_db, self.n_wavelengths)?;
        Ok(PowerBudget {
            p_laser_dbm,
            s_detector_dbm: catalog.calibration.detector_sensitivity_dbm,
            p_photoloss_db: self.path_loss_db,
            n_lambda: self.n_wavelengths,
        })
    }

    pub fn check_laser(&self, catalog: &DeviceCatalog, ceiling_dbm: f64) -> Result<(), ArchError> {
        let budget = self.laser_budget(catalog)?;
        if budget.p_laser_dbm > ceiling_dbm {
            return Err(ArchError::LaserInfeasible {
                mvu: self.label(),
                required_dbm: budget.p_laser_dbm,
                ceiling_dbm,
                loss_db: self.path_loss_db,
                n_lambda: self.n_wavelengths,
            });
        }
        Ok(())
    }

    /// Laser plus TO heaters, mW.
    pub fn static_power_mw(&self, catalog: &DeviceCatalog) -> Result<f64, ArchError> {
        let laser = dbm_to_mw(self.laser_budget(catalog)?.p_laser_dbm);
        Ok(laser + self.n_banks as f64 * catalog.to_bank_power_mw())
    }
}

/// Waveguides a Conv-MVU provisions so any weight up to 16 bits fits.
pub fn conv_waveguides(b: u32) -> u64 {
    u64::from(MAX_BITS.div_ceil(b))
}

pub fn fc_time_steps(act_bits: u32, weight_bits: u32, b: u32) -> u64 {
    u64::from(act_bits.div_ceil(b)) * u64::from(weight_bits.div_ceil(b))
}

pub fn conv_time_steps(act_bits: u32, b: u32) -> u64 {
    u64::from(act_bits.div_ceil(b))
}

/// How one layer is spread over the MVU pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub kind: LayerKind,
    /// FC: `v x v` weight tiles. CONV: (output channel, kernel chunk) groups.
    pub tiles: u64,
    /// Kernel chunks per output channel (1 for FC).
    pub chunks: u64,
    /// Passes each tile needs: 1 for FC, one per output position for CONV.
    pub passes_per_tile: u64,
    pub steps_per_pass: u64,
    pub mvus_used: u64,
    /// Steps on the critical path with tiles dealt round-robin.
    pub sequential_steps: u64,
    /// Sum of steps over all MVUs.
    pub busy_mvu_steps: u64,
}

/// Maps a layer with the given slice counts (activation, weight). Tiles
/// are dealt whole to MVUs so weights stay resident for a tile's passes.
fn plan(layer: &LayerSpec, lanes: u64, mvus: u64, steps_per_pass: u64) -> MappingPlan {
    let (tiles, chunks, passes) = match layer.kind() {
        LayerKind::Fc => {
            let rows = div_ceil(layer.output_channels(), lanes);
            let cols = div_ceil(layer.reduction_len(), lanes);
            (rows * cols, 1, 1)
        }
        LayerKind::Conv => {
            let chunks = div_ceil(layer.reduction_len(), lanes);
            (layer.output_channels() * chunks, chunks, layer.output_positions())
        }
    };
    MappingPlan {
        kind: layer.kind(),
        tiles,
        chunks,
        passes_per_tile: passes,
        steps_per_pass,
        mvus_used: tiles.min(mvus),
        sequential_steps: div_ceil(tiles, mvus) * passes * steps_per_pass,
        busy_mvu_steps: tiles * passes * steps_per_pass,
    }
}

/// Mapping of `layer` onto the bit-sliced accelerator described by `cfg`.
pub fn map_layer(layer: &LayerSpec, cfg: &ArchConfig) -> MappingPlan {
    match layer.kind() {
        LayerKind::Fc => plan(
            layer,
            cfg.v,
            cfg.fc_mvus,
            fc_time_steps(layer.act_bits, layer.weight_bits, cfg.b),
        ),
        LayerKind::Conv => plan(layer, cfg.k, cfg.conv_mvus, conv_time_steps(layer.act_bits, cfg.b)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    pub macs: u64,
    pub processed_bits: u64,
    pub time_steps: u64,
    pub step_period_ns: f64,
    pub latency_s: f64,
    pub dynamic_energy_j: f64,
    pub static_energy_j: f64,
    pub energy_j: f64,
    pub peak_power_w: f64,
    pub mvus_used: u64,
    pub devices: DeviceCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub accelerator: String,
    pub model: String,
    pub total_time_steps: u64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub peak_power_w: f64,
    pub macs: u64,
    pub processed_bits: u64,
    pub epb_j_per_bit: f64,
    pub gops: f64,
    pub gops_per_epb: f64,
    /// Dot products replayed through the bit-slice engine and checked
    /// against integer arithmetic.
    pub verified_dots: u64,
    pub layers: Vec<LayerReport>,
}

impl SimReport {
    fn roll_up(accelerator: String, model: String, layers: Vec<LayerReport>, verified_dots: u64) -> Self {
        let total_time_steps = layers.iter().map(|l| l.time_steps).sum();
        let latency_s = layers.iter().map(|l| l.latency_s).sum();
        let energy_j = layers.iter().map(|l| l.energy_j).sum();
        let peak_power_w = layers.iter().map(|l| l.peak_power_w).fold(0.0, f64::max);
        let macs: u64 = layers.iter().map(|l| l.macs).sum();
        let processed_bits = layers.iter().map(|l| l.processed_bits).sum();
        let mut report = SimReport {
            accelerator,
            model,
            total_time_steps,
            latency_s,
            energy_j,
            peak_power_w,
            macs,
            processed_bits,
            epb_j_per_bit: 0.0,
            gops: 0.0,
            gops_per_epb: 0.0,
            verified_dots,
            layers,
        };
        report.epb_j_per_bit = epb(&report).unwrap_or(0.0);
        report.gops = if latency_s > 0.0 {
            2.0 * macs as f64 / latency_s / 1e9
        } else {
            0.0
        };
        report.gops_per_epb = gops_per_epb(&report).unwrap_or(0.0);
        report
    }

    /// Per-layer breakdown as CSV.
    pub fn layers_csv(&self) -> String {
        let mut out = String::from(
            "index,kind,macs,processed_bits,time_steps,step_period_ns,latency_s,energy_j,peak_power_w,mvus_used\n",
        );
        for l in &self.layers {
            let kind = match l.kind {
                LayerKind::Conv => "CONV",
                LayerKind::Fc => "FC",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                l.index,
                kind,
                l.macs,
                l.processed_bits,
                l.time_steps,
                l.step_period_ns,
                l.latency_s,
                l.energy_j,
                l.peak_power_w,
                l.mvus_used
            ));
        }
        out
    }
}

/// Energy per processed bit, where a MAC processes `p_w + p_a` bits.
pub fn epb(report: &SimReport) -> Result<f64, ArchError> {
    if report.processed_bits == 0 {
        return Err(ArchError::ZeroBits);
    }
    Ok(report.energy_j / report.processed_bits as f64)
}

pub fn gops_per_epb(report: &SimReport) -> Result<f64, ArchError> {
    let e = epb(report)?;
    if e == 0.0 {
        return Ok(0.0);
    }
    Ok(report.gops / e)
}

/// Execution style of the simulated accelerator.
#[derive(Debug, Clone, Copy)]
enum Style {
    /// Bit-sliced with slice width `b`.
    Sliced { b: u32 },
    /// One full-resolution step per dot product.
    SingleStep,
}

struct LayerEngine {
    mode: Mode,
    weight_slices: u64,
    act_changes: u64,
    weight_changes: u64,
    steps_per_pass: u64,
    converters: Converters,
    mvu: MvuSpec,
}

impl LayerEngine {
    fn new(layer: &LayerSpec, cfg: &ArchConfig, style: Style, catalog: &DeviceCatalog) -> Result<Self, ArchError> {
        let (pa, pw) = (layer.act_bits, layer.weight_bits);
        let mode = match layer.kind() {
            LayerKind::Fc => Mode::Fc,
            LayerKind::Conv => Mode::Conv,
        };
        let (slice_bits, converters, conv_mvu) = match style {
            Style::Sliced { b } => {
                let dac = catalog.dac(b)?;
                let conv = Converters {
                    act_dac: dac,
                    weight_dac: dac,
                    adc: catalog.adc(b)?,
                };
                (b, conv, MvuSpec::conv(cfg.k, conv_waveguides(b), true, catalog))
            }
            Style::SingleStep => {
                let conv = Converters {
                    act_dac: catalog.dac(pa)?,
                    weight_dac: catalog.dac(pw)?,
                    adc: catalog.adc(pa.max(pw))?,
                };
                (pa.max(pw), conv, MvuSpec::conv(cfg.k, 1, false, catalog))
            }
        };
        let schedule = build_schedule(pa, pw, slice_bits, mode)?;
        let mvu = match mode {
            Mode::Fc => MvuSpec::fc(cfg.v, catalog),
            Mode::Conv => conv_mvu,
        };
        Ok(LayerEngine {
            mode,
            weight_slices: schedule.weight_slices() as u64,
            act_changes: schedule.act_changes() as u64,
            weight_changes: schedule.weight_changes() as u64,
            steps_per_pass: schedule.n_steps() as u64,
            converters,
            mvu,
        })
    }

    fn step_period_ns(&self, cfg: &ArchConfig, catalog: &DeviceCatalog) -> f64 {
        if let Some(p) = cfg.step_period_ns {
            return p;
        }
        let d = &catalog.devices;
        let mut chain = vec![
            self.converters.act_dac.latency_ns,
            self.converters.weight_dac.latency_ns,
            d.eo_tuning.latency_ns,
            catalog.flight_time_ns(self.mvu.waveguide_cm),
            d.photodetector.latency_ns,
            self.converters.adc.latency_ns,
        ];
        if self.mvu.soa_ladder {
            chain.push(d.soa.latency_ns);
        }
        if cfg.pipelined {
            chain.into_iter().fold(0.0, f64::max)
        } else {
            chain.into_iter().sum()
        }
    }

    /// Total device activations for the layer.
    fn counts(&self, layer: &LayerSpec, plan: &MappingPlan) -> DeviceCounts {
        let lanes = self.mvu.n_wavelengths;
        let s = self.steps_per_pass;
        match self.mode {
            Mode::Fc => {
                let inputs = layer.reduction_len();
                let outputs = layer.output_channels();
                let row_tiles = div_ceil(outputs, lanes);
                let col_tiles = div_ceil(inputs, lanes);
                let weight_dac = inputs * outputs * self.weight_changes;
                let act_dac = row_tiles * inputs * self.act_changes;
                DeviceCounts {
                    act_dac,
                    weight_dac,
                    eo_imprints: act_dac + weight_dac,
                    vcsel: row_tiles * inputs * s,
                    photodetector: col_tiles * outputs * s,
                    soa: 0,
                    adc: col_tiles * outputs * s,
                }
            }
            Mode::Conv => {
                let len = layer.reduction_len();
                let oc = layer.output_channels();
                let positions = plan.passes_per_tile;
                let steps = plan.busy_mvu_steps;
                let weight_dac = oc * len * self.weight_slices;
                let act_dac = oc * positions * len * self.act_changes;
                DeviceCounts {
                    act_dac,
                    weight_dac,
                    eo_imprints: act_dac + weight_dac,
                    vcsel: oc * positions * len * s,
                    photodetector: steps * self.weight_slices,
                    soa: if self.mvu.soa_ladder {
                        steps * self.weight_slices
                    } else {
                        0
                    },
                    adc: steps,
                }
            }
        }
    }

    /// Devices on for the busiest step of a single MVU on this layer.
    fn worst_step(&self, layer: &LayerSpec) -> DeviceCounts {
        let lanes = self.mvu.n_wavelengths;
        let cols = layer.reduction_len().min(lanes);
        match self.mode {
            Mode::Fc => {
                let rows = layer.output_channels().min(lanes);
                DeviceCounts {
                    act_dac: cols,
                    weight_dac: rows * cols,
                    eo_imprints: cols + rows * cols,
                    vcsel: cols,
                    photodetector: rows,
                    soa: 0,
                    adc: rows,
                }
            }
            Mode::Conv => {
                let ws = self.weight_slices;
                DeviceCounts {
                    act_dac: cols,
                    weight_dac: cols * ws,
                    eo_imprints: cols + cols * ws,
                    vcsel: cols,
                    photodetector: ws,
                    soa: if self.mvu.soa_ladder { ws } else { 0 },
                    adc: 1,
                }
            }
        }
    }
}

fn simulate(
    model: &WorkloadModel,
    cfg: &ArchConfig,
    catalog: &DeviceCatalog,
    style: Style,
    accelerator: String,
) -> Result<SimReport, ArchError> {
    cfg.validate()?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut verified = 0;
    for layer in &model.layers {
        let engine = LayerEngine::new(layer, cfg, style, catalog)?;
        engine.mvu.check_laser(catalog, cfg.laser_ceiling_dbm)?;
        let (lanes, mvus) = match engine.mode {
            Mode::Fc => (cfg.v, cfg.fc_mvus),
            Mode::Conv => (cfg.k, cfg.conv_mvus),
        };
        let plan = plan(layer, lanes, mvus, engine.steps_per_pass);
        let period_ns = engine.step_period_ns(cfg, catalog);
        let counts = engine.counts(layer, &plan);
        let static_mw = engine.mvu.static_power_mw(catalog)?;
        let scale = cfg.calibration.energy_scale;
        let dynamic_j = counts.energy_pj(&engine.converters, catalog) * 1e-12 * scale;
        let static_j = static_mw * period_ns * plan.busy_mvu_steps as f64 * 1e-12 * scale;
        let active_mw = engine.worst_step(layer).power_mw(&engine.converters, catalog);
        let macs = layer.mac_count();

        if let Style::Sliced { b } = style {
            check_layer_numerics(layer, lanes, b, engine.mode)?;
            verified += 1;
        }

        layers.push(LayerReport {
            index: layer.index,
            kind: layer.kind(),
            macs,
            processed_bits: macs * u64::from(layer.act_bits + layer.weight_bits),
            time_steps: plan.sequential_steps,
            step_period_ns: period_ns,
            latency_s: plan.sequential_steps as f64 * period_ns * 1e-9,
            dynamic_energy_j: dynamic_j,
            static_energy_j: static_j,
            energy_j: dynamic_j + static_j,
            peak_power_w: plan.mvus_used as f64 * (static_mw + active_mw) * 1e-3,
            mvus_used: plan.mvus_used,
            devices: counts,
        });
    }
    Ok(SimReport::roll_up(accelerator, model.name.clone(), layers, verified))
}

/// Replays one tile-sized dot product of the layer through the bit-slice
/// engine with deterministic operands.
fn check_layer_numerics(layer: &LayerSpec, lanes: u64, b: u32, mode: Mode) -> Result<(), ArchError> {
    let n = layer.reduction_len().min(lanes) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(layer.index as u64);
    let act: Vec<u64> = (0..n).map(|_| rng.gen_range(0..1u64 << layer.act_bits)).collect();
    let weight: Vec<u64> = (0..n).map(|_| rng.gen_range(0..1u64 << layer.weight_bits)).collect();
    let out = bitslice::execute_dot(&act, &weight, layer.act_bits, layer.weight_bits, b, mode)?;
    let oracle: u64 = act.iter().zip(&weight).map(|(a, w)| a * w).sum();
    if out.result != oracle {
        return Err(ArchError::Functional {
            layer: layer.index,
            engine: out.result,
            oracle,
        });
    }
    Ok(())
}

/// Simulates one inference of `model` on the bit-sliced accelerator.
pub fn simulate_inference(
    model: &WorkloadModel,
    cfg: &ArchConfig,
    catalog: &DeviceCatalog,
) -> Result<SimReport, ArchError> {
    simulate(
        model,
        cfg,
        catalog,
        Style::Sliced { b: cfg.b },
        "tdm-bitslice".to_string(),
    )
}

/// Simulates `model` requantized to the baseline's fixed bitwidths.
pub fn simulate_baseline(
    model: &WorkloadModel,
    cfg: &ArchConfig,
    spec: &BaselineSpec,
    catalog: &DeviceCatalog,
) -> Result<SimReport, ArchError> {
    let catalog = if spec.device_overrides.is_null() {
        *catalog
    } else {
        catalog.with_overrides(&spec.device_overrides)?
    };
    let requantized = model.with_homogeneous_bits(spec.weight_bits, spec.act_bits);
    let style = if spec.single_step {
        Style::SingleStep
    } else {
        Style::Sliced { b: cfg.b }
    };
    simulate(&requantized, cfg, &catalog, style, spec.name.clone())
}

/// Worst-case power with every MVU in both pools fully active, in W.
pub fn max_power(cfg: &ArchConfig, catalog: &DeviceCatalog) -> Result<f64, ArchError> {
    let dac = catalog.dac(cfg.b)?;
    let conv = Converters {
        act_dac: dac,
        weight_dac: dac,
        adc: catalog.adc(cfg.b)?,
    };
    let mut total_mw = 0.0;
    if cfg.fc_mvus > 0 {
        let fc = MvuSpec::fc(cfg.v, catalog);
        total_mw += cfg.fc_mvus as f64 * (fc.static_power_mw(catalog)? + fc.per_step.power_mw(&conv, catalog));
    }
    if cfg.conv_mvus > 0 {
        let cv = MvuSpec::conv(cfg.k, conv_waveguides(cfg.b), true, catalog);
        total_mw += cfg.conv_mvus as f64 * (cv.static_power_mw(catalog)? + cv.per_step.power_mw(&conv, catalog));
    }
    Ok(total_mw * 1e-3)
}

/// The two-element dot product of the worked slicing example as a one-layer
/// workload on a two-wavelength FC-MVU.
pub fn micro_workload(bits: u32, b: u32) -> (WorkloadModel, ArchConfig) {
    use crate::workload::LayerShape;
    let layer = LayerSpec {
        index: 0,
        shape: LayerShape::Fc {
            in_features: 2,
            out_features: 1,
        },
        weight_bits: bits,
        act_bits: bits,
    };
    let model =
        WorkloadModel::new(format!("micro-dot-{bits}b"), vec![layer], None, 1.0).expect("micro workload is valid");
    (model, ArchConfig::new(2, 2, b, 1, 1))
}

/// `energy_scale` that maps the raw micro-workload energy onto the 6 mJ
/// anchor.
pub fn calibrate_energy_scale(catalog: &DeviceCatalog) -> Result<f64, ArchError> {
    let (model, cfg) = micro_workload(8, 4);
    let raw = simulate_inference(&model, &cfg, catalog)?;
    Ok(MICRO_ANCHOR_J / raw.energy_j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::test_util::{conv, fc, model};
    use approx::assert_relative_eq;

    fn cat() -> DeviceCatalog {
        DeviceCatalog::default()
    }

    #[test]
    fn step_count_examples() {
        assert_eq!(fc_time_steps(8, 8, 4), 4);
        assert_eq!(fc_time_steps(5, 5, 5), 1);
        assert_eq!(fc_time_steps(10, 2, 4), 3);
        assert_eq!(conv_time_steps(4, 4), 1);
        assert_eq!(conv_time_steps(8, 4), 2);
        assert_eq!(conv_time_steps(10, 4), 3);
    }

    #[test]
    fn mapping_examples() {
        let cfg = ArchConfig::new(50, 20, 4, 200, 100);
        let p = map_layer(&fc(50, 50, 4, 4), &cfg);
        assert_eq!((p.tiles, p.sequential_steps), (1, 1));
        assert_eq!(map_layer(&fc(100, 100, 4, 4), &cfg).tiles, 4);
        // 5x5 kernel on one input channel: 25 taps, 2 chunks of 20
        let p = map_layer(&conv(5, 1, 1, 8, 1, 0, 4, 8), &cfg);
        assert_eq!(p.chunks, 2);
        assert_eq!(p.passes_per_tile, 16);
        assert_eq!(p.steps_per_pass, 2);
        assert_eq!(p.sequential_steps, 32);
    }

    #[test]
    fn round_robin_over_few_mvus() {
        let cfg = ArchConfig::new(10, 20, 4, 3, 1);
        // 4 row tiles x 3 col tiles = 12 tiles over 3 MVUs, 4 steps each
        let p = map_layer(&fc(30, 40, 8, 8), &cfg);
        assert_eq!(p.tiles, 12);
        assert_eq!(p.sequential_steps, 16);
        assert_eq!(p.busy_mvu_steps, 48);
    }

    #[test]
    fn empty_model_reports_zero() {
        let r = simulate_inference(&model(vec![]), &ArchConfig::new(2, 2, 4, 1, 1), &cat()).unwrap();
        assert_eq!(r.total_time_steps, 0);
        assert_eq!(r.energy_j, 0.0);
        assert_eq!(r.gops_per_epb, 0.0);
        assert!(matches!(epb(&r), Err(ArchError::ZeroBits)));
        let b = simulate_baseline(
            &model(vec![]),
            &ArchConfig::new(2, 2, 4, 1, 1),
            &BaselineSpec::new("x", 16, 16),
            &cat(),
        )
        .unwrap();
        assert_eq!(b.energy_j, 0.0);
    }

    #[test]
    fn micro_workload_counts() {
        let (m, cfg) = micro_workload(8, 4);
        let r = simulate_inference(&m, &cfg, &cat()).unwrap();
        assert_eq!(r.total_time_steps, 4);
        let d = r.layers[0].devices;
        assert_eq!(d.weight_dac, 8);
        assert_eq!(d.act_dac, 4);
        assert_eq!(d.adc, 4);
        assert_eq!(d.vcsel, 8);
        assert_eq!(r.layers[0].step_period_ns, 20.0);
        let base = simulate_baseline(&m, &cfg, &BaselineSpec::new("b16", 16, 16), &cat()).unwrap();
        assert_eq!(base.total_time_steps, 1);
    }

    #[test]
    fn epb_arithmetic() {
        let mut r = SimReport::roll_up("a".into(), "m".into(), vec![], 0);
        r.energy_j = 2.0;
        r.processed_bits = 1_000_000_000;
        r.gops = 100.0;
        assert_relative_eq!(epb(&r).unwrap(), 2e-9);
        assert_relative_eq!(gops_per_epb(&r).unwrap(), 5e10);
    }

    #[test]
    fn invalid_config_names_field() {
        let err = ArchConfig::from_json_str(r#"{"v":2,"k":2,"b":0,"V":1,"K":1}"#).unwrap_err();
        assert!(err.to_string().contains("`b`"), "{err}");
        let err = ArchConfig::from_json_str(r#"{"v":2,"k":2,"b":4,"V":0,"K":1}"#).unwrap_err();
        assert!(err.to_string().contains("`V`"), "{err}");
    }

    #[test]
    fn laser_ceiling_enforced() {
        let mut cfg = ArchConfig::new(2000, 20, 4, 1, 1);
        let m = model(vec![fc(4000, 10, 4, 4)]);
        let err = simulate_inference(&m, &cfg, &cat()).unwrap_err();
        assert!(matches!(err, ArchError::LaserInfeasible { .. }), "{err}");
        assert!(err.to_string().contains("FC-MVU (v=2000)"));
        cfg.laser_ceiling_dbm = 1000.0;
        assert!(simulate_inference(&m, &cfg, &cat()).is_ok());
    }

    #[test]
    fn max_power_single_fc_mvu_hand_sum() {
        let c = cat();
        // v=2, b=4: 2 act + 4 weight DACs, 6 EO imprints, 2 VCSELs, 2 PDs,
        // 2 ADCs, plus laser and 3 TO banks.
        let cfg = ArchConfig::new(2, 1, 4, 1, 0);
        let dac4 = 3.0 * 5.0 / 33.0;
        let loss = 0.1 + 4.0 * 0.002 + 0.05 + 2.0 * 0.02 + 2.0 * 0.72 + 2.0 * 0.001 * 6.0;
        let laser = 10f64.powf((-20.0 + loss + 10.0 * 2f64.log10()) / 10.0);
        let expected_mw = 6.0 * dac4 + 6.0 * 0.004 + 2.0 * 1.3 + 2.0 * 2.8 + 2.0 * 3.1 + laser + 3.0 * 27.5 * 1e-3;
        assert_relative_eq!(max_power(&cfg, &c).unwrap(), expected_mw * 1e-3, max_relative = 1e-12);
        let none = ArchConfig::new(2, 2, 4, 0, 0);
        assert_eq!(max_power(&none, &c).unwrap(), 0.0);
    }

    #[test]
    fn max_power_monotone() {
        let c = cat();
        let base = ArchConfig::new(8, 8, 4, 4, 4);
        let p0 = max_power(&base, &c).unwrap();
        for cfg in [
            ArchConfig { v: 9, ..base },
            ArchConfig { k: 9, ..base },
            ArchConfig { fc_mvus: 5, ..base },
            ArchConfig { conv_mvus: 5, ..base },
        ] {
            assert!(max_power(&cfg, &c).unwrap() >= p0);
        }
    }

    #[test]
    fn no_pipeline_sums_chain() {
        let (m, mut cfg) = micro_workload(8, 4);
        let piped = simulate_inference(&m, &cfg, &cat()).unwrap();
        cfg.pipelined = false;
        let serial = simulate_inference(&m, &cfg, &cat()).unwrap();
        assert!(serial.layers[0].step_period_ns > piped.layers[0].step_period_ns);
        assert!(serial.latency_s > piped.latency_s);
    }

    #[test]
    fn baseline_overrides_apply() {
        let (m, cfg) = micro_workload(8, 4);
        let mut spec = BaselineSpec::new("b", 16, 16);
        let plain = simulate_baseline(&m, &cfg, &spec, &cat()).unwrap();
        spec.device_overrides = serde_json::json!({"devices": {"adc16": {"power_mw": 124.0}}});
        let hot = simulate_baseline(&m, &cfg, &spec, &cat()).unwrap();
        assert!(hot.energy_j > plain.energy_j);
    }

    #[test]
    fn conv_layer_uses_soa_ladder_only_when_sliced() {
        let m = model(vec![conv(3, 4, 8, 8, 1, 1, 8, 8)]);
        let cfg = ArchConfig::new(16, 12, 4, 2, 2);
        let r = simulate_inference(&m, &cfg, &cat()).unwrap();
        assert!(r.layers[0].devices.soa > 0);
        let b = simulate_baseline(&m, &cfg, &BaselineSpec::new("b", 8, 8), &cat()).unwrap();
        assert_eq!(b.layers[0].devices.soa, 0);
        assert_eq!(r.macs, b.macs);
    }
}
