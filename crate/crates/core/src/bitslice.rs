//! Bit-accurate model of slice-serial (TDM) dot products.
//!
//! Operands are split into `b`-bit slices, least significant first. In FC
//! mode every (activation slice, weight slice) pair occupies its own time
//! step and the per-step sums are shifted and added digitally. In CONV mode
//! all weight slices sit on parallel waveguides, weighted by an SOA gain
//! ladder, so only the activation slices are serialized.
//!
//! The engine is unsigned; signed operands must be offset before entry.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::MAX_BITS;

/// Widest slice the engine accepts.
pub const MAX_SLICE_BITS: u32 = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitSliceError {
    #[error("{name} = {bits} is outside 1..={max}")]
    BitsOutOfRange { name: &'static str, bits: u32, max: u32 },
    #[error("value {value} does not fit in {p} bits")]
    ValueOutOfRange { value: u64, p: u32 },
    #[error("operand lengths differ: {act} activations vs {weight} weights")]
    LengthMismatch { act: usize, weight: usize },
    #[error("gain ladder has {len} entries but the trace needs index {needed}")]
    LadderTooShort { needed: usize, len: usize },
    #[error("shift of {shift} bits is not a multiple of the ladder slice width {b}")]
    LadderMisaligned { shift: u32, b: u32 },
    #[error("reconstruction overflowed 64 bits")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Fc,
    Conv,
}

fn check_bits(name: &'static str, bits: u32, max: u32) -> Result<(), BitSliceError> {
    if (1..=max).contains(&bits) {
        Ok(())
    } else {
        Err(BitSliceError::BitsOutOfRange { name, bits, max })
    }
}

/// Number of `b`-bit slices a `p`-bit value occupies.
pub fn slice_count(p: u32, b: u32) -> usize {
    p.div_ceil(b) as usize
}

/// Little-endian base-`2^b` decomposition of `value` into `ceil(p/b)` slices.
pub fn slice(value: u64, p: u32, b: u32) -> Result<Vec<u64>, BitSliceError> {
    check_bits("p", p, MAX_BITS)?;
    check_bits("b", b, MAX_SLICE_BITS)?;
    if value >> p != 0 {
        return Err(BitSliceError::ValueOutOfRange { value, p });
    }
    let mask = (1u64 << b) - 1;
    Ok((0..slice_count(p, b))
        .map(|i| (value >> (b as usize * i)) & mask)
        .collect())
}

pub fn recompose(slices: &[u64], b: u32) -> u64 {
    slices.iter().enumerate().map(|(i, s)| s << (b as usize * i)).sum()
}

/// A vector of `p`-bit values together with their `b`-bit slices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSliceVector {
    pub values: Vec<u64>,
    pub p: u32,
    pub b: u32,
    /// `slices[e][i]` is slice `i` of element `e`.
    pub slices: Vec<Vec<u64>>,
}

impl BitSliceVector {
    pub fn new(values: &[u64], p: u32, b: u32) -> Result<Self, BitSliceError> {
        let slices = values.iter().map(|&v| slice(v, p, b)).collect::<Result<Vec<_>, _>>()?;
        Ok(BitSliceVector {
            values: values.to_vec(),
            p,
            b,
            slices,
        })
    }

    pub fn n_slices(&self) -> usize {
        slice_count(self.p, self.b)
    }

    /// Slice `i` of every element, in element order.
    pub fn plane(&self, i: usize) -> impl Iterator<Item = u64> + '_ {
        self.slices.iter().map(move |s| s[i])
    }
}

/// One time step. `weight_slice` is `None` in CONV mode, where every weight
/// slice is present at once on its own waveguide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub act_slice: usize,
    pub weight_slice: Option<usize>,
    pub shift_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdmSchedule {
    pub mode: Mode,
    pub act_bits: u32,
    pub weight_bits: u32,
    pub slice_bits: u32,
    pub steps: Vec<ScheduleStep>,
}

impl TdmSchedule {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn act_slices(&self) -> usize {
        slice_count(self.act_bits, self.slice_bits)
    }

    pub fn weight_slices(&self) -> usize {
        slice_count(self.weight_bits, self.slice_bits)
    }

    /// Steps on which the activation slice differs from the previous step
    /// (the first step always counts).
    pub fn act_changes(&self) -> usize {
        changes(self.steps.iter().map(|s| Some(s.act_slice)))
    }

    /// Steps on which the weight operand has to be re-imprinted. In CONV
    /// mode weights stay resident for the whole schedule.
    pub fn weight_changes(&self) -> usize {
        match self.mode {
            Mode::Fc => changes(self.steps.iter().map(|s| s.weight_slice)),
            Mode::Conv => usize::from(!self.steps.is_empty()),
        }
    }
}

fn changes<I: Iterator<Item = Option<usize>>>(seq: I) -> usize {
    let mut prev = None;
    let mut n = 0;
    for cur in seq {
        if prev.is_none() || prev != Some(cur) {
            n += 1;
        }
        prev = Some(cur);
    }
    n
}

/// Builds the step order for one dot product.
///
/// FC mode walks weight slices innermost, so each activation slice stays
/// imprinted while the weight slices cycle past it.
pub fn build_schedule(
    act_bits: u32,
    weight_bits: u32,
    slice_bits: u32,
    mode: Mode,
) -> Result<TdmSchedule, BitSliceError> {
    check_bits("p_a", act_bits, MAX_BITS)?;
    check_bits("p_w", weight_bits, MAX_BITS)?;
    check_bits("b", slice_bits, MAX_SLICE_BITS)?;
    let na = slice_count(act_bits, slice_bits);
    let nw = slice_count(weight_bits, slice_bits);
    let steps = match mode {
        Mode::Fc => (0..na)
            .flat_map(|a| {
                (0..nw).map(move |w| ScheduleStep {
                    act_slice: a,
                    weight_slice: Some(w),
                    shift_bits: slice_bits * (a + w) as u32,
                })
            })
            .collect(),
        Mode::Conv => (0..na)
            .map(|a| ScheduleStep {
                act_slice: a,
                weight_slice: None,
                shift_bits: slice_bits * a as u32,
            })
            .collect(),
    };
    Ok(TdmSchedule {
        mode,
        act_bits,
        weight_bits,
        slice_bits,
        steps,
    })
}

/// What the photodetector sees on one time step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTrace {
    pub step_index: usize,
    pub act_slice: usize,
    pub weight_slice: Option<usize>,
    /// Per-lane products before summation. In CONV mode lanes are ordered
    /// weight-slice major and already carry their ladder gain.
    pub lane_partials: Vec<u64>,
    pub step_sum: u64,
    pub shift_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DotOutcome {
    pub result: u64,
    pub trace: Vec<StepTrace>,
}

/// Slice-serial dot product of `act` and `weight`, returning the
/// reconstructed value and the per-step trace.
pub fn execute_dot(
    act: &[u64],
    weight: &[u64],
    act_bits: u32,
    weight_bits: u32,
    slice_bits: u32,
    mode: Mode,
) -> Result<DotOutcome, BitSliceError> {
    if act.len() != weight.len() {
        return Err(BitSliceError::LengthMismatch {
            act: act.len(),
            weight: weight.len(),
        });
    }
    let schedule = build_schedule(act_bits, weight_bits, slice_bits, mode)?;
    let a = BitSliceVector::new(act, act_bits, slice_bits)?;
    let w = BitSliceVector::new(weight, weight_bits, slice_bits)?;
    let ladder = SoaGainLadder::new(slice_bits, w.n_slices());

    let trace: Vec<StepTrace> = schedule
        .steps
        .iter()
        .enumerate()
        .map(|(step_index, step)| {
            let lane_partials: Vec<u64> = match step.weight_slice {
                Some(ws) => a.plane(step.act_slice).zip(w.plane(ws)).map(|(x, y)| x * y).collect(),
                None => (0..w.n_slices())
                    .flat_map(|ws| {
                        let gain = ladder.exact_gain(ws);
                        a.plane(step.act_slice).zip(w.plane(ws)).map(move |(x, y)| x * y * gain)
                    })
                    .collect(),
            };
            StepTrace {
                step_index,
                act_slice: step.act_slice,
                weight_slice: step.weight_slice,
                step_sum: lane_partials.iter().sum(),
                lane_partials,
                shift_bits: step.shift_bits,
            }
        })
        .collect();
    let result = reconstruct(&trace, None)?;
    Ok(DotOutcome { result, trace })
}

/// SOA gains `2^(b*i)` that realize the shift for slice `i` photonically.
#[derive(Debug, Clone, PartialEq)]
pub struct SoaGainLadder {
    pub b: u32,
    pub gains: Vec<f64>,
}

impl SoaGainLadder {
    pub fn new(b: u32, n_slices: usize) -> Self {
        let gains = (0..n_slices).map(|i| 2f64.powi((b as usize * i) as i32)).collect();
        SoaGainLadder { b, gains }
    }

    fn exact_gain(&self, i: usize) -> u64 {
        1u64 << (self.b as usize * i)
    }
}

/// Shift-and-add over a trace. Without a ladder the shifts are applied
/// digitally; with one, each step sum is scaled by the gain for its shift
/// and the analog total is rounded.
pub fn reconstruct(trace: &[StepTrace], ladder: Option<&SoaGainLadder>) -> Result<u64, BitSliceError> {
    match ladder {
        None => trace.iter().try_fold(0u64, |acc, s| {
            let shifted = s
                .step_sum
                .checked_mul(1u64.checked_shl(s.shift_bits).ok_or(BitSliceError::Overflow)?)
                .ok_or(BitSliceError::Overflow)?;
            acc.checked_add(shifted).ok_or(BitSliceError::Overflow)
        }),
        Some(ladder) => {
            let mut total = 0f64;
            for s in trace {
                if s.shift_bits % ladder.b != 0 {
                    return Err(BitSliceError::LadderMisaligned {
                        shift: s.shift_bits,
                        b: ladder.b,
                    });
                }
                let idx = (s.shift_bits / ladder.b) as usize;
                let gain = ladder.gains.get(idx).ok_or(BitSliceError::LadderTooShort {
                    needed: idx,
                    len: ladder.gains.len(),
                })?;
                total += s.step_sum as f64 * gain;
            }
            let rounded = total.round();
            if rounded >= u64::MAX as f64 {
                return Err(BitSliceError::Overflow);
            }
            Ok(rounded as u64)
        }
    }
}

/// One CSV row per step: `step_index,shift_bits,step_sum`.
pub fn trace_to_csv(trace: &[StepTrace]) -> String {
    let mut out = String::from("step_index,shift_bits,step_sum\n");
    for s in trace {
        out.push_str(&format!("{},{},{}\n", s.step_index, s.shift_bits, s.step_sum));
    }
    out
}
