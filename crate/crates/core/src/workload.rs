//! Quantized CNN workload descriptions.
//!
//! A workload is an ordered list of CONV/FC layers, each carrying its own
//! weight and activation bitwidth. Loading validates every layer; accounting
//! helpers (parameters, MACs, weight footprint) operate on validated models.
//!
//! Parameter counts cover weights only. Biases are not represented.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest parameter the hardware model supports.
pub const MAX_BITS: u32 = 16;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed workload document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("layer {index}: {reason}")]
    Layer { index: usize, reason: String },
    #[error("{list} bitwidth list has {found} entries but the model has {expected} layers")]
    ListLength {
        list: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("declared parameter count {declared} does not match the layer shapes ({computed})")]
    ParamMismatch { declared: u64, computed: u64 },
    #[error("footprint_scale must be positive and finite, got {0}")]
    FootprintScale(f64),
}

impl WorkloadError {
    /// Parse and I/O failures, as opposed to documents that parsed but
    /// break an invariant.
    pub fn is_parse(&self) -> bool {
        matches!(self, WorkloadError::Io { .. } | WorkloadError::Parse(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "CONV")]
    Conv,
    #[serde(rename = "FC")]
    Fc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShape {
    Conv {
        in_channels: u64,
        out_channels: u64,
        kernel_h: u64,
        kernel_w: u64,
        in_height: u64,
        in_width: u64,
        stride: u64,
        padding: u64,
    },
    Fc {
        in_features: u64,
        out_features: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub shape: LayerShape,
    /// Bits per weight parameter.
    pub weight_bits: u32,
    /// Bits per input activation.
    pub act_bits: u32,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self.shape {
            LayerShape::Conv { .. } => LayerKind::Conv,
            LayerShape::Fc { .. } => LayerKind::Fc,
        }
    }

    pub fn param_count(&self) -> u64 {
        match self.shape {
            LayerShape::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => kernel_h * kernel_w * in_channels * out_channels,
            LayerShape::Fc {
                in_features,
                out_features,
            } => in_features * out_features,
        }
    }

    /// Output spatial dims of a CONV layer; `None` for FC layers.
    pub fn output_dims(&self) -> Option<(u64, u64)> {
        match self.shape {
            LayerShape::Conv {
                kernel_h,
                kernel_w,
                in_height,
                in_width,
                stride,
                padding,
                ..
            } => {
                let out = |input: u64, kernel: u64| {
                    let padded = input + 2 * padding;
                    if padded < kernel {
                        0
                    } else {
                        (padded - kernel) / stride + 1
                    }
                };
                Some((out(in_height, kernel_h), out(in_width, kernel_w)))
            }
            LayerShape::Fc { .. } => None,
        }
    }

    /// Number of output positions a CONV kernel is applied at (1 for FC).
    pub fn output_positions(&self) -> u64 {
        self.output_dims().map_or(1, |(h, w)| h * w)
    }

    /// Length of the unfurled CONV kernel, `k_h * k_w * in_ch`, or the FC
    /// input width.
    pub fn reduction_len(&self) -> u64 {
        match self.shape {
            LayerShape::Conv {
                in_channels,
                kernel_h,
                kernel_w,
                ..
            } => kernel_h * kernel_w * in_channels,
            LayerShape::Fc { in_features, .. } => in_features,
        }
    }

    pub fn output_channels(&self) -> u64 {
        match self.shape {
            LayerShape::Conv { out_channels, .. } => out_channels,
            LayerShape::Fc { out_features, .. } => out_features,
        }
    }

    pub fn mac_count(&self) -> u64 {
        self.output_positions() * self.output_channels() * self.reduction_len()
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        let err = |reason: String| WorkloadError::Layer {
            index: self.index,
            reason,
        };
        for (name, bits) in [("weight_bits", self.weight_bits), ("act_bits", self.act_bits)] {
            if !(1..=MAX_BITS).contains(&bits) {
                return Err(err(format!("{name} = {bits} is outside 1..={MAX_BITS}")));
            }
        }
        match self.shape {
            LayerShape::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                in_height,
                in_width,
                stride,
                ..
            } => {
                for (name, v) in [
                    ("in_channels", in_channels),
                    ("out_channels", out_channels),
                    ("kernel_h", kernel_h),
                    ("kernel_w", kernel_w),
                    ("in_height", in_height),
                    ("in_width", in_width),
                    ("stride", stride),
                ] {
                    if v == 0 {
                        return Err(err(format!("{name} must be positive")));
                    }
                }
                let (oh, ow) = self.output_dims().unwrap_or((0, 0));
                if oh == 0 || ow == 0 {
                    return Err(err("kernel does not fit the padded input".into()));
                }
            }
            LayerShape::Fc {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(err("in_features and out_features must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadModel {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub declared_param_count: Option<u64>,
    /// Multiplier applied to the raw weight footprint when reporting MB.
    pub footprint_scale: f64,
}

impl WorkloadModel {
    /// Builds and validates a model from layers already in order. Layer
    /// indices are reassigned to their positions.
    pub fn new(
        name: impl Into<String>,
        mut layers: Vec<LayerSpec>,
        declared_param_count: Option<u64>,
        footprint_scale: f64,
    ) -> Result<Self, WorkloadError> {
        for (i, layer) in layers.iter_mut().enumerate() {
            layer.index = i;
        }
        let model = WorkloadModel {
            name: name.into(),
            layers,
            declared_param_count,
            footprint_scale,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.footprint_scale.is_finite() && self.footprint_scale > 0.0) {
            return Err(WorkloadError::FootprintScale(self.footprint_scale));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        if let Some(declared) = self.declared_param_count {
            let computed = self.param_count();
            if computed != declared {
                return Err(WorkloadError::ParamMismatch { declared, computed });
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn weight_footprint_bits(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.param_count() * u64::from(l.weight_bits))
            .sum()
    }

    pub fn footprint_mb(&self) -> f64 {
        self.weight_footprint_bits() as f64 / 8.0 / (1u64 << 20) as f64 * self.footprint_scale
    }

    /// Parameter-weighted mean weight bitwidth; 0 for an empty model.
    pub fn mean_weight_bits(&self) -> f64 {
        let params = self.param_count();
        if params == 0 {
            return 0.0;
        }
        self.weight_footprint_bits() as f64 / params as f64
    }

    pub fn layer_macs(&self) -> Vec<u64> {
        self.layers.iter().map(LayerSpec::mac_count).collect()
    }

    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(LayerSpec::mac_count).sum()
    }

    /// Same shapes with every layer forced to one weight/activation width.
    pub fn with_homogeneous_bits(&self, weight_bits: u32, act_bits: u32) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            layer.weight_bits = weight_bits;
            layer.act_bits = act_bits;
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<Self, WorkloadError> {
        let doc: WorkloadDoc = serde_json::from_str(text)?;
        doc.into_model()
    }

    pub fn to_json_string(&self) -> String {
        let doc = WorkloadDoc::from_model(self);
        serde_json::to_string_pretty(&doc).expect("workload document serializes")
    }
}

/// Reads and validates a workload document from disk.
pub fn load_workload(path: impl AsRef<Path>) -> Result<WorkloadModel, WorkloadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WorkloadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WorkloadModel::from_json_str(&text)
}

fn default_scale() -> f64 {
    1.0
}

/// On-disk form. Bitwidths may be given per layer, or as top-level lists
/// with one entry per layer; when both are present they must agree.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadDoc {
    name: String,
    #[serde(default = "default_scale")]
    footprint_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declared_param_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_bits: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    act_bits: Option<Vec<u32>>,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    index: Option<usize>,
    kind: Option<LayerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_channels: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_h: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel_w: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_height: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_width: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    padding: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    in_features: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    out_features: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_bits: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    act_bits: Option<u32>,
}

impl WorkloadDoc {
    fn into_model(self) -> Result<WorkloadModel, WorkloadError> {
        let n = self.layers.len();
        for (list, values) in [("weight", &self.weight_bits), ("activation", &self.act_bits)] {
            if let Some(values) = values {
                if values.len() != n {
                    return Err(WorkloadError::ListLength {
                        list,
                        found: values.len(),
                        expected: n,
                    });
                }
            }
        }
        let mut layers = Vec::with_capacity(n);
        for (index, rec) in self.layers.into_iter().enumerate() {
            let weight_bits = pick_bits(index, "weight_bits", rec.weight_bits, &self.weight_bits)?;
            let act_bits = pick_bits(index, "act_bits", rec.act_bits, &self.act_bits)?;
            let shape = rec.shape(index)?;
            layers.push(LayerSpec {
                index,
                shape,
                weight_bits,
                act_bits,
            });
        }
        let model = WorkloadModel {
            name: self.name,
            layers,
            declared_param_count: self.declared_param_count,
            footprint_scale: self.footprint_scale,
        };
        model.validate()?;
        Ok(model)
    }

    fn from_model(model: &WorkloadModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| {
                let mut rec = LayerRecord {
                    index: Some(l.index),
                    kind: Some(l.kind()),
                    weight_bits: Some(l.weight_bits),
                    act_bits: Some(l.act_bits),
                    ..Default::default()
                };
                match l.shape {
                    LayerShape::Conv {
                        in_channels,
                        out_channels,
                        kernel_h,
                        kernel_w,
                        in_height,
                        in_width,
                        stride,
                        padding,
                    } => {
                        rec.in_channels = Some(in_channels);
                        rec.out_channels = Some(out_channels);
                        rec.kernel_h = Some(kernel_h);
                        rec.kernel_w = Some(kernel_w);
                        rec.in_height = Some(in_height);
                        rec.in_width = Some(in_width);
                        rec.stride = Some(stride);
                        rec.padding = Some(padding);
                    }
                    LayerShape::Fc {
                        in_features,
                        out_features,
                    } => {
                        rec.in_features = Some(in_features);
                        rec.out_features = Some(out_features);
                    }
                }
                rec
            })
            .collect();
        WorkloadDoc {
            name: model.name.clone(),
            footprint_scale: model.footprint_scale,
            declared_param_count: model.declared_param_count,
            weight_bits: None,
            act_bits: None,
            layers,
        }
    }
}

fn pick_bits(index: usize, field: &str, own: Option<u32>, list: &Option<Vec<u32>>) -> Result<u32, WorkloadError> {
    let listed = list.as_ref().map(|l| l[index]);
    match (own, listed) {
        (Some(a), Some(b)) if a != b => Err(WorkloadError::Layer {
            index,
            reason: format!("{field} = {a} disagrees with the top-level list entry {b}"),
        }),
        (Some(a), _) | (None, Some(a)) => Ok(a),
        (None, None) => Err(WorkloadError::Layer {
            index,
            reason: format!("{field} missing"),
        }),
    }
}

impl LayerRecord {
    fn shape(&self, index: usize) -> Result<LayerShape, WorkloadError> {
        let err = |reason: String| WorkloadError::Layer { index, reason };
        if let Some(declared) = self.index {
            if declared != index {
                return Err(err(format!("index field {declared} does not match position")));
            }
        }
        let conv_fields = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("in_height", self.in_height),
            ("in_width", self.in_width),
            ("stride", self.stride),
            ("padding", self.padding),
        ];
        let fc_fields = [("in_features", self.in_features), ("out_features", self.out_features)];
        let kind = self.kind.ok_or_else(|| err("kind missing".into()))?;
        match kind {
            LayerKind::Conv => {
                if let Some((name, _)) = fc_fields.iter().find(|(_, v)| v.is_some()) {
                    return Err(err(format!("CONV layer must not set {name}")));
                }
                let need = |name: &str, v: Option<u64>| v.ok_or_else(|| err(format!("CONV layer missing {name}")));
                Ok(LayerShape::Conv {
                    in_channels: need("in_channels", self.in_channels)?,
                    out_channels: need("out_channels", self.out_channels)?,
                    kernel_h: need("kernel_h", self.kernel_h)?,
                    kernel_w: need("kernel_w", self.kernel_w)?,
                    in_height: need("in_height", self.in_height)?,
                    in_width: need("in_width", self.in_width)?,
                    stride: self.stride.unwrap_or(1),
                    padding: self.padding.unwrap_or(0),
                })
            }
            LayerKind::Fc => {
                if let Some((name, _)) = conv_fields.iter().find(|(_, v)| v.is_some()) {
                    return Err(err(format!("FC layer must not set {name}")));
                }
                Ok(LayerShape::Fc {
                    in_features: self
                        .in_features
                        .ok_or_else(|| err("FC layer missing in_features".into()))?,
                    out_features: self
                        .out_features
                        .ok_or_else(|| err("FC layer missing out_features".into()))?,
                })
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn fc_param_count() {
        assert_eq!(model(vec![fc(100, 200, 4, 4)]).param_count(), 20_000);
    }

    #[test]
    fn conv_param_count() {
        assert_eq!(model(vec![conv(3, 16, 32, 8, 1, 1, 4, 4)]).param_count(), 4_608);
    }

    #[test]
    fn footprint_bits() {
        assert_eq!(model(vec![fc(10, 10, 4, 8)]).weight_footprint_bits(), 400);
    }

    #[test]
    fn mac_counts() {
        assert_eq!(model(vec![fc(3, 4, 8, 8)]).mac_count(), 12);
        // 4x4 input, 3x3 kernel, valid: 2x2 positions of 9 MACs each.
        assert_eq!(model(vec![conv(3, 1, 1, 4, 1, 0, 8, 8)]).mac_count(), 36);
        assert_eq!(model(vec![]).mac_count(), 0);
        assert_eq!(model(vec![]).param_count(), 0);
        assert_eq!(model(vec![]).footprint_mb(), 0.0);
    }

    #[test]
    fn strided_padded_output_dims() {
        // 32 + 2*2 - 5 = 31, /2 = 15, +1 = 16
        let l = conv(5, 3, 8, 32, 2, 2, 8, 8);
        assert_eq!(l.output_dims(), Some((16, 16)));
    }

    #[test]
    fn list_length_mismatch() {
        let doc = r#"{"name":"m","weight_bits":[4,4],"act_bits":[4],
            "layers":[{"kind":"FC","in_features":2,"out_features":2},
                      {"kind":"FC","in_features":2,"out_features":2}]}"#;
        let err = WorkloadModel::from_json_str(doc).unwrap_err();
        assert!(matches!(
            err,
            WorkloadError::ListLength {
                list: "activation",
                found: 1,
                expected: 2
            }
        ));
    }

    #[test]
    fn mixed_kind_fields_rejected() {
        let doc = r#"{"name":"m","layers":[{"kind":"FC","in_features":2,"out_features":2,
            "kernel_h":3,"weight_bits":4,"act_bits":4}]}"#;
        let err = WorkloadModel::from_json_str(doc).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        assert!(err.to_string().contains("kernel_h"), "{err}");
    }

    #[test]
    fn missing_conv_field_names_layer() {
        let doc = r#"{"name":"m","layers":[
            {"kind":"FC","in_features":2,"out_features":2,"weight_bits":4,"act_bits":4},
            {"kind":"CONV","in_channels":1,"out_channels":1,"kernel_h":3,
             "in_height":8,"in_width":8,"weight_bits":4,"act_bits":4}]}"#;
        let err = WorkloadModel::from_json_str(doc).unwrap_err();
        assert_eq!(err.to_string(), "layer 1: CONV layer missing kernel_w");
    }

    #[test]
    fn bit_range_checked() {
        let doc = r#"{"name":"m","layers":[{"kind":"FC","in_features":2,"out_features":2,
            "weight_bits":17,"act_bits":4}]}"#;
        assert!(WorkloadModel::from_json_str(doc)
            .unwrap_err()
            .to_string()
            .contains("weight_bits = 17"));
        let doc = doc.replace("17", "0");
        assert!(WorkloadModel::from_json_str(&doc).is_err());
    }

    #[test]
    fn declared_count_mismatch() {
        let doc = r#"{"name":"m","declared_param_count":5,"layers":[
            {"kind":"FC","in_features":2,"out_features":2,"weight_bits":4,"act_bits":4}]}"#;
        assert!(matches!(
            WorkloadModel::from_json_str(doc).unwrap_err(),
            WorkloadError::ParamMismatch {
                declared: 5,
                computed: 4
            }
        ));
    }

    #[test]
    fn kernel_larger_than_input() {
        let doc = r#"{"name":"m","layers":[{"kind":"CONV","in_channels":1,"out_channels":1,
            "kernel_h":5,"kernel_w":5,"in_height":3,"in_width":3,"weight_bits":4,"act_bits":4}]}"#;
        assert!(WorkloadModel::from_json_str(doc).is_err());
    }

    #[test]
    fn conflicting_list_and_field() {
        let doc = r#"{"name":"m","weight_bits":[8],"act_bits":[8],"layers":[
            {"kind":"FC","in_features":2,"out_features":2,"weight_bits":4}]}"#;
        assert!(WorkloadModel::from_json_str(doc).is_err());
    }

    #[test]
    fn malformed_is_parse_error() {
        let err = WorkloadModel::from_json_str("{ nope").unwrap_err();
        assert!(err.is_parse());
    }

    #[test]
    fn homogeneous_override_keeps_shapes() {
        let m = model(vec![fc(10, 10, 4, 8), conv(3, 2, 2, 5, 1, 0, 2, 2)]);
        let h = m.with_homogeneous_bits(16, 16);
        assert_eq!(h.param_count(), m.param_count());
        assert!(h.layers.iter().all(|l| l.weight_bits == 16 && l.act_bits == 16));
    }
}
