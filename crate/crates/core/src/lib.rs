//! Simulator and design-space explorer for a bit-sliced, time/wavelength
//! multiplexed photonic CNN inference accelerator.
//!
//! The crate is split along the data flow of a run:
//!
//! - [`workload`]: quantized CNN descriptions, parameter/MAC/footprint accounting.
//! - [`bitslice`]: bit-accurate functional model of slice-serial dot products.
//! - [`devices`]: device latency/power/loss catalog, DAC scaling, laser budget.
//! - [`arch`]: MVU-array mapping and latency/energy/power roll-up, plus
//!   fixed-resolution single-step baselines.
//! - [`dse`]: exhaustive `(v, k, b, V, K)` grid search ranked by GOPS/EPB.
//! - [`cli`]: the `simulate`, `compare`, `explore` and `validate` commands.

pub mod arch;
pub mod bitslice;
pub mod cli;
pub mod devices;
pub mod dse;
pub mod workload;

pub use arch::{ArchConfig, BaselineSpec, SimReport};
pub use bitslice::{BitSliceVector, Mode, SoaGainLadder, StepTrace, TdmSchedule};
pub use devices::DeviceCatalog;
pub use dse::{SearchResult, SearchSpace};
pub use workload::{LayerSpec, WorkloadModel};

/// Ceiling division for the slice/tile arithmetic used throughout.
#[inline]
pub(crate) fn div_ceil(n: u64, d: u64) -> u64 {
    n.div_ceil(d)
}
