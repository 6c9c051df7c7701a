//! Exhaustive `(v, k, b, V, K)` grid search.
//!
//! Every configuration in the grid is simulated on every workload and scored
//! by an aggregate of the per-workload GOPS/EPB. Configurations that break
//! the power cap or the laser ceiling are counted and dropped. Evaluation
//! runs in parallel; the ranking is a total order so results do not depend
//! on scheduling.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{max_power, simulate_inference, ArchCalibration, ArchConfig, ArchError};
use crate::devices::DeviceCatalog;
use crate::workload::WorkloadModel;

#[derive(Debug, Error)]
pub enum DseError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed search space: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("search space list `{0}` is empty")]
    EmptyList(&'static str),
    #[error("search space value {value} in `{list}` is invalid: {reason}")]
    BadValue {
        list: &'static str,
        value: u64,
        reason: &'static str,
    },
    #[error("no workloads to evaluate")]
    NoModels,
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constraints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_power_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub laser_ceiling_dbm: Option<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub v_values: Vec<u64>,
    pub k_values: Vec<u64>,
    pub b_values: Vec<u32>,
    #[serde(rename = "V_values")]
    pub fc_mvu_values: Vec<u64>,
    #[serde(rename = "K_values")]
    pub conv_mvu_values: Vec<u64>,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub calibration: ArchCalibration,
    #[serde(default = "default_true")]
    pub pipelined: bool,
}

impl SearchSpace {
    pub fn grid(v: &[u64], k: &[u64], b: &[u32], fc: &[u64], conv: &[u64]) -> Self {
        SearchSpace {
            v_values: v.to_vec(),
            k_values: k.to_vec(),
            b_values: b.to_vec(),
            fc_mvu_values: fc.to_vec(),
            conv_mvu_values: conv.to_vec(),
            constraints: Constraints::default(),
            calibration: ArchCalibration::default(),
            pipelined: true,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, DseError> {
        let space: SearchSpace = serde_json::from_str(text)?;
        space.validate()?;
        Ok(space)
    }

    /// Checks that every list is non-empty and every value is admissible.
    pub fn validate(&self) -> Result<(), DseError> {
        let lists: [(&'static str, Vec<u64>); 5] = [
            ("v_values", self.v_values.clone()),
            ("k_values", self.k_values.clone()),
            ("b_values", self.b_values.iter().map(|&b| u64::from(b)).collect()),
            ("V_values", self.fc_mvu_values.clone()),
            ("K_values", self.conv_mvu_values.clone()),
        ];
        for (name, values) in lists {
            if values.is_empty() {
                return Err(DseError::EmptyList(name));
            }
            if let Some(&value) = values.iter().find(|&&x| x == 0) {
                return Err(DseError::BadValue {
                    list: name,
                    value,
                    reason: "must be at least 1",
                });
            }
            if name == "b_values" {
                if let Some(&value) = values.iter().find(|&&x| x > 16) {
                    return Err(DseError::BadValue {
                        list: name,
                        value,
                        reason: "slice width must be at most 16",
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn load_space(path: impl AsRef<Path>) -> Result<SearchSpace, DseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SearchSpace::from_json_str(&text)
}

fn dedup<T: Ord + Copy>(values: &[T]) -> Vec<T> {
    values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Cartesian product of the deduplicated lists in `(v, k, b, V, K)`
/// lexicographic order. Any empty list yields no configurations.
pub fn enumerate(space: &SearchSpace) -> Vec<ArchConfig> {
    let (vs, ks, bs) = (dedup(&space.v_values), dedup(&space.k_values), dedup(&space.b_values));
    let (fcs, convs) = (dedup(&space.fc_mvu_values), dedup(&space.conv_mvu_values));
    let mut out = Vec::with_capacity(vs.len() * ks.len() * bs.len() * fcs.len() * convs.len());
    for &v in &vs {
        for &k in &ks {
            for &b in &bs {
                for &fc in &fcs {
                    for &conv in &convs {
                        let mut cfg = ArchConfig::new(v, k, b, fc, conv);
                        cfg.calibration = space.calibration;
                        cfg.pipelined = space.pipelined;
                        if let Some(ceiling) = space.constraints.laser_ceiling_dbm {
                            cfg.laser_ceiling_dbm = ceiling;
                        }
                        out.push(cfg);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Geomean,
    Mean,
    Min,
}

impl Aggregate {
    pub fn apply(self, scores: &[f64]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        match self {
            Aggregate::Geomean => {
                if scores.iter().any(|&s| s <= 0.0) {
                    return 0.0;
                }
                (scores.iter().map(|s| s.ln()).sum::<f64>() / scores.len() as f64).exp()
            }
            Aggregate::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
            Aggregate::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geomean" => Ok(Aggregate::Geomean),
            "mean" => Ok(Aggregate::Mean),
            "min" => Ok(Aggregate::Min),
            other => Err(format!("unknown aggregate `{other}` (expected geomean, mean or min)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub latency_s: f64,
    pub energy_j: f64,
    pub epb_j_per_bit: f64,
    pub gops: f64,
    pub gops_per_epb: f64,
    /// 1-based rank of this config among feasible configs for this model.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub config: ArchConfig,
    pub max_power_w: f64,
    pub score: f64,
    pub per_model: Vec<ModelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub aggregate: Aggregate,
    pub evaluated: usize,
    pub infeasible_count: usize,
    pub infeasible_power: usize,
    pub infeasible_laser: usize,
    pub ranked: Vec<RankedConfig>,
    pub best: Option<RankedConfig>,
}

impl SearchResult {
    pub fn position(&self, key: (u64, u64, u32, u64, u64)) -> Option<usize> {
        self.ranked.iter().position(|r| r.config.key() == key)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,v,k,b,V,K,max_power_w,score");
        if let Some(first) = self.ranked.first() {
            for m in &first.per_model {
                out.push_str(&format!(",{0}_gops_per_epb,{0}_rank", m.model));
            }
        }
        out.push('\n');
        for (i, r) in self.ranked.iter().enumerate() {
            let c = &r.config;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}",
                i + 1,
                c.v,
                c.k,
                c.b,
                c.fc_mvus,
                c.conv_mvus,
                r.max_power_w,
                r.score
            ));
            for m in &r.per_model {
                out.push_str(&format!(",{},{}", m.gops_per_epb, m.rank));
            }
            out.push('\n');
        }
        out
    }
}

/// Total order used for ranking: higher score, then lower power, then the
/// smaller `(v, k, b, V, K)` tuple.
pub fn rank_order(a: &RankedConfig, b: &RankedConfig) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.max_power_w.total_cmp(&b.max_power_w))
        .then(a.config.key().cmp(&b.config.key()))
}

enum Outcome {
    Feasible(RankedConfig),
    OverPower,
    LaserLimited,
}

fn evaluate(
    cfg: &ArchConfig,
    models: &[WorkloadModel],
    space: &SearchSpace,
    catalog: &DeviceCatalog,
    aggregate: Aggregate,
) -> Result<Outcome, DseError> {
    let power = max_power(cfg, catalog)?;
    if let Some(limit) = space.constraints.max_power_w {
        if power > limit {
            return Ok(Outcome::OverPower);
        }
    }
    let mut per_model = Vec::with_capacity(models.len());
    for model in models {
        let report = match simulate_inference(model, cfg, catalog) {
            Ok(r) => r,
            Err(ArchError::LaserInfeasible { .. }) => return Ok(Outcome::LaserLimited),
            Err(e) => return Err(e.into()),
        };
        per_model.push(ModelScore {
            model: model.name.clone(),
            latency_s: report.latency_s,
            energy_j: report.energy_j,
            epb_j_per_bit: report.epb_j_per_bit,
            gops: report.gops,
            gops_per_epb: report.gops_per_epb,
            rank: 0,
        });
    }
    let scores: Vec<f64> = per_model.iter().map(|m| m.gops_per_epb).collect();
    Ok(Outcome::Feasible(RankedConfig {
        config: *cfg,
        max_power_w: power,
        score: aggregate.apply(&scores),
        per_model,
    }))
}

pub fn explore(
    models: &[WorkloadModel],
    space: &SearchSpace,
    catalog: &DeviceCatalog,
    aggregate: Aggregate,
) -> Result<SearchResult, DseError> {
    if models.is_empty() {
        return Err(DseError::NoModels);
    }
    let configs = enumerate(space);
    let outcomes = configs
        .par_iter()
        .map(|cfg| evaluate(cfg, models, space, catalog, aggregate))
        .collect::<Result<Vec<_>, _>>()?;

    let mut ranked = Vec::new();
    let (mut over_power, mut laser) = (0, 0);
    for outcome in outcomes {
        match outcome {
            Outcome::Feasible(r) => ranked.push(r),
            Outcome::OverPower => over_power += 1,
            Outcome::LaserLimited => laser += 1,
        }
    }

    for m in 0..models.len() {
        let mut order: Vec<usize> = (0..ranked.len()).collect();
        order.sort_by(|&x, &y| {
            let (a, b) = (&ranked[x], &ranked[y]);
            b.per_model[m]
                .gops_per_epb
                .total_cmp(&a.per_model[m].gops_per_epb)
                .then(a.max_power_w.total_cmp(&b.max_power_w))
                .then(a.config.key().cmp(&b.config.key()))
        });
        for (rank, idx) in order.into_iter().enumerate() {
            ranked[idx].per_model[m].rank = rank + 1;
        }
    }
    ranked.sort_by(rank_order);

    Ok(SearchResult {
        aggregate,
        evaluated: configs.len(),
        infeasible_count: over_power + laser,
        infeasible_power: over_power,
        infeasible_laser: laser,
        best: ranked.first().cloned(),
        ranked,
    })
}
