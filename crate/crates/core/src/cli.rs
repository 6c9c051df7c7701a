//! Command-line front end.
//!
//! Exit codes: 0 success, 1 `validate` mismatch, 2 usage/file/parse errors,
//! 3 validation errors, 4 laser infeasibility. Outputs are written only
//! after every result has been computed, each through a temporary file that
//! is renamed into place.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arch::{
    calibrate_energy_scale, load_baseline, load_config, max_power, simulate_baseline, simulate_inference, ArchConfig,
    ArchError, BaselineSpec, SimReport,
};
use crate::bitslice::{execute_dot, trace_to_csv, Mode};
use crate::devices::{load_catalog, DeviceCatalog, DeviceError};
use crate::dse::{explore, load_space, Aggregate, DseError};
use crate::workload::{load_workload, WorkloadError, WorkloadModel};

/// Reference configuration used when no `--config` is given.
pub const REFERENCE_CONFIG: (u64, u64, u32, u64, u64) = (50, 20, 4, 200, 100);

#[derive(Debug, Parser)]
#[command(
    name = "photonic-tdm",
    version,
    about = "Bit-sliced photonic CNN accelerator simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Device catalog overriding the built-in device table.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Sum the per-step device chain instead of taking its slowest stage.
    #[arg(long)]
    no_pipeline: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one workload on one configuration.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the bit-sliced accelerator against fixed-resolution baselines.
    Compare {
        #[arg(required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "baselines")]
        baselines: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Grid-search (v, k, b, V, K) ranked by GOPS/EPB.
    Explore {
        #[arg(required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        space: PathBuf,
        #[arg(long, default_value = "geomean")]
        aggregate: Aggregate,
        #[command(flatten)]
        common: Common,
    },
    /// Fuzz the bit-slice engine against integer arithmetic.
    Validate {
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 4, 6, 8, 10, 16])]
        p_values: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 4, 8])]
        b_values: Vec<u32>,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
        max_len: u64,
        /// Write the first trial's step trace as CSV.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Dse(#[from] DseError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Workload(e) => parse_or_invalid(e.is_parse()),
            CliError::Device(e) => parse_or_invalid(e.is_parse()),
            CliError::Arch(e) => arch_code(e),
            CliError::Dse(e) => match e {
                DseError::Io { .. } | DseError::Parse(_) => 2,
                DseError::Arch(a) => arch_code(a),
                _ => 3,
            },
        }
    }
}

fn parse_or_invalid(parse: bool) -> i32 {
    if parse {
        2
    } else {
        3
    }
}

fn arch_code(e: &ArchError) -> i32 {
    match e {
        ArchError::LaserInfeasible { .. } => 4,
        e if e.is_parse() => 2,
        _ => 3,
    }
}

/// Provenance block embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub catalog: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    fn new(command: &str, inputs: &[&Path], catalog: &Option<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            catalog: catalog.as_ref().map(|p| p.display().to_string()),
            seed: None,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# manifest: {}\n",
            serde_json::to_string(self).expect("manifest serializes")
        )
    }
}

#[derive(Serialize)]
struct WithManifest<'a, T: Serialize> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    body: &'a T,
}

fn json_doc<T: Serialize>(manifest: &RunManifest, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&WithManifest { manifest, body }).expect("report serializes");
    s.push('\n');
    s
}

/// Files to write once everything has been computed.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn names(&self) -> Vec<String> {
        self.files
            .iter()
            .map(|(n, _)| self.dir.join(n).display().to_string())
            .collect()
    }

    fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", p.display()));
        fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, contents) in &self.files {
            let tmp = self.dir.join(format!(".{name}.tmp"));
            fs::write(&tmp, contents).map_err(|e| io(&tmp, e))?;
            staged.push((tmp, self.dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).map_err(|e| io(&dest, e))?;
            written.push(dest);
        }
        Ok(written)
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Simulate { model, config, common } => cmd_simulate(&model, config.as_deref(), &common),
        Command::Compare {
            models,
            config,
            baselines,
            common,
        } => cmd_compare(&models, config.as_deref(), &baselines, &common),
        Command::Explore {
            models,
            space,
            aggregate,
            common,
        } => cmd_explore(&models, &space, aggregate, &common),
        Command::Validate {
            trials,
            seed,
            p_values,
            b_values,
            max_len,
            trace_csv,
        } => cmd_validate(trials, seed, &p_values, &b_values, max_len, trace_csv.as_deref()),
    }
}

fn catalog(common: &Common) -> Result<DeviceCatalog, CliError> {
    Ok(match &common.catalog {
        Some(path) => load_catalog(path)?,
        None => DeviceCatalog::default(),
    })
}

/// The reference `(v, k, b, V, K)` with `energy_scale` solved against the
/// micro-workload anchor for this catalog.
pub fn reference_config(catalog: &DeviceCatalog) -> Result<ArchConfig, ArchError> {
    let (v, k, b, fc, conv) = REFERENCE_CONFIG;
    Ok(ArchConfig::new(v, k, b, fc, conv).with_energy_scale(calibrate_energy_scale(catalog)?))
}

fn config(path: Option<&Path>, catalog: &DeviceCatalog, common: &Common) -> Result<ArchConfig, CliError> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => reference_config(catalog)?,
    };
    if common.no_pipeline {
        cfg.pipelined = false;
    }
    Ok(cfg)
}

fn stem(model: &WorkloadModel) -> String {
    model
        .name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn finish(outputs: Outputs) -> Result<(), CliError> {
    for path in outputs.commit()? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_simulate(model_path: &Path, config_path: Option<&Path>, common: &Common) -> Result<i32, CliError> {
    let catalog = catalog(common)?;
    let model = load_workload(model_path)?;
    let cfg = config(config_path, &catalog, common)?;
    let report = simulate_inference(&model, &cfg, &catalog)?;

    let mut inputs = vec![model_path];
    inputs.extend(config_path);
    let mut manifest = RunManifest::new("simulate", &inputs, &common.catalog);
    let mut outputs = Outputs::new(&common.out_dir);
    let name = stem(&model);
    outputs.files.push((format!("{name}_report.json"), String::new()));
    outputs.files.push((format!("{name}_layers.csv"), String::new()));
    manifest.outputs = outputs.names();

    #[derive(Serialize)]
    struct Body<'a> {
        config: &'a ArchConfig,
        report: &'a SimReport,
    }
    outputs.files[0].1 = json_doc(
        &manifest,
        &Body {
            config: &cfg,
            report: &report,
        },
    );
    outputs.files[1].1 = manifest.csv_header() + &report.layers_csv();

    println!(
        "{}: {} steps, latency {:.6e} s, energy {:.6e} J, EPB {:.6e} J/bit, {:.6e} GOPS, GOPS/EPB {:.6e}",
        model.name,
        report.total_time_steps,
        report.latency_s,
        report.energy_j,
        report.epb_j_per_bit,
        report.gops,
        report.gops_per_epb
    );
    finish(outputs)?;
    Ok(0)
}

/// Baseline specs found in `dir`, sorted by file name. A missing or empty
/// directory yields none.
fn baselines_in(dir: &Path) -> Result<Vec<(PathBuf, BaselineSpec)>, CliError> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(Vec::new());
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| Ok((p.clone(), load_baseline(&p)?))).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub model: String,
    pub accelerator: String,
    pub epb_j_per_bit: f64,
    pub gops: f64,
    pub gops_per_epb: f64,
    pub energy_j: f64,
    pub latency_s: f64,
}

impl CompareRow {
    fn from_report(r: &SimReport) -> Self {
        CompareRow {
            model: r.model.clone(),
            accelerator: r.accelerator.clone(),
            epb_j_per_bit: r.epb_j_per_bit,
            gops: r.gops,
            gops_per_epb: r.gops_per_epb,
            energy_j: r.energy_j,
            latency_s: r.latency_s,
        }
    }
}

/// Runs every model on the bit-sliced accelerator and each baseline.
pub fn compare_rows(
    models: &[WorkloadModel],
    cfg: &ArchConfig,
    baselines: &[BaselineSpec],
    catalog: &DeviceCatalog,
) -> Result<Vec<CompareRow>, ArchError> {
    let mut rows = Vec::new();
    for model in models {
        rows.push(CompareRow::from_report(&simulate_inference(model, cfg, catalog)?));
        for spec in baselines {
            rows.push(CompareRow::from_report(&simulate_baseline(model, cfg, spec, catalog)?));
        }
    }
    Ok(rows)
}

fn cmd_compare(
    model_paths: &[PathBuf],
    config_path: Option<&Path>,
    baselines_dir: &Path,
    common: &Common,
) -> Result<i32, CliError> {
    let catalog = catalog(common)?;
    let models = model_paths.iter().map(load_workload).collect::<Result<Vec<_>, _>>()?;
    let cfg = config(config_path, &catalog, common)?;
    let baselines = baselines_in(baselines_dir)?;
    if baselines.is_empty() {
        eprintln!(
            "warning: no baseline specs found in {}; comparing the bit-sliced accelerator only",
            baselines_dir.display()
        );
    }
    let specs: Vec<BaselineSpec> = baselines.iter().map(|(_, s)| s.clone()).collect();
    let rows = compare_rows(&models, &cfg, &specs, &catalog)?;

    let mut inputs: Vec<&Path> = model_paths.iter().map(PathBuf::as_path).collect();
    inputs.extend(config_path);
    inputs.extend(baselines.iter().map(|(p, _)| p.as_path()));
    let mut manifest = RunManifest::new("compare", &inputs, &common.catalog);
    let mut outputs = Outputs::new(&common.out_dir);
    outputs.files.push(("compare.csv".into(), String::new()));
    manifest.outputs = outputs.names();

    let mut csv = manifest.csv_header();
    csv.push_str("model,accelerator,epb_j_per_bit,gops,gops_per_epb,energy_j,latency_s\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model, r.accelerator, r.epb_j_per_bit, r.gops, r.gops_per_epb, r.energy_j, r.latency_s
        ));
        println!(
            "{:<24} {:<14} EPB {:.4e} J/bit  GOPS/EPB {:.4e}",
            r.model, r.accelerator, r.epb_j_per_bit, r.gops_per_epb
        );
    }
    outputs.files[0].1 = csv;
    finish(outputs)?;
    Ok(0)
}

fn cmd_explore(
    model_paths: &[PathBuf],
    space_path: &Path,
    aggregate: Aggregate,
    common: &Common,
) -> Result<i32, CliError> {
    let catalog = catalog(common)?;
    let models = model_paths.iter().map(load_workload).collect::<Result<Vec<_>, _>>()?;
    let mut space = load_space(space_path)?;
    if common.no_pipeline {
        space.pipelined = false;
    }
    let result = explore(&models, &space, &catalog, aggregate)?;

    let mut inputs: Vec<&Path> = model_paths.iter().map(PathBuf::as_path).collect();
    inputs.push(space_path);
    let mut manifest = RunManifest::new("explore", &inputs, &common.catalog);
    let mut outputs = Outputs::new(&common.out_dir);
    outputs.files.push(("explore_ranking.csv".into(), String::new()));
    outputs.files.push(("explore_best.json".into(), String::new()));
    manifest.outputs = outputs.names();

    #[derive(Serialize)]
    struct Best<'a> {
        aggregate: Aggregate,
        evaluated: usize,
        feasible: usize,
        infeasible_count: usize,
        infeasible_power: usize,
        infeasible_laser: usize,
        best: &'a Option<crate::dse::RankedConfig>,
        reference_rank: Option<usize>,
        reference_max_power_w: f64,
    }
    let (v, k, b, fc, conv) = REFERENCE_CONFIG;
    let reference_rank = result.position(REFERENCE_CONFIG).map(|i| i + 1);
    let reference_max_power_w = max_power(&ArchConfig::new(v, k, b, fc, conv), &catalog)?;
    outputs.files[0].1 = manifest.csv_header() + &result.to_csv();
    outputs.files[1].1 = json_doc(
        &manifest,
        &Best {
            aggregate,
            evaluated: result.evaluated,
            feasible: result.ranked.len(),
            infeasible_count: result.infeasible_count,
            infeasible_power: result.infeasible_power,
            infeasible_laser: result.infeasible_laser,
            best: &result.best,
            reference_rank,
            reference_max_power_w,
        },
    );

    println!(
        "evaluated {} configs: {} feasible, {} over power cap, {} laser-limited",
        result.evaluated,
        result.ranked.len(),
        result.infeasible_power,
        result.infeasible_laser
    );
    if let Some(best) = &result.best {
        let c = &best.config;
        println!(
            "best (v={}, k={}, b={}, V={}, K={}): score {:.6e}, max power {:.3} W",
            c.v, c.k, c.b, c.fc_mvus, c.conv_mvus, best.score, best.max_power_w
        );
    }
    match reference_rank {
        Some(r) => println!("reference (50, 20, 4, 200, 100): rank {r}, max power {reference_max_power_w:.3} W"),
        None => println!("reference (50, 20, 4, 200, 100): not in the feasible ranking"),
    }
    finish(outputs)?;
    Ok(0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidateSummary {
    pub trials: u64,
    pub passed: u64,
    pub digest: String,
    pub first_failure: Option<String>,
}

/// Randomized engine-vs-integer comparisons. Activation and weight widths
/// are drawn independently from `p_values`.
pub fn validate_engine(
    trials: u64,
    seed: u64,
    p_values: &[u32],
    b_values: &[u32],
    max_len: u64,
    mut first_trace: Option<&mut String>,
) -> Result<ValidateSummary, CliError> {
    if p_values.is_empty() || b_values.is_empty() {
        return Err(CliError::Usage("--p-values and --b-values must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hasher = Sha256::new();
    let mut passed = 0;
    let mut first_failure = None;
    for trial in 0..trials {
        let pa = p_values[rng.gen_range(0..p_values.len())];
        let pw = p_values[rng.gen_range(0..p_values.len())];
        let b = b_values[rng.gen_range(0..b_values.len())];
        let mode = if rng.gen_bool(0.5) { Mode::Fc } else { Mode::Conv };
        let len = rng.gen_range(1..=max_len) as usize;
        let act: Vec<u64> = (0..len).map(|_| rng.gen_range(0..1u64 << pa)).collect();
        let weight: Vec<u64> = (0..len).map(|_| rng.gen_range(0..1u64 << pw)).collect();
        let oracle: u64 = act.iter().zip(&weight).map(|(a, w)| a * w).sum();
        let out =
            execute_dot(&act, &weight, pa, pw, b, mode).map_err(|e| CliError::Usage(format!("trial {trial}: {e}")))?;
        if let Some(buf) = first_trace.take() {
            *buf = trace_to_csv(&out.trace);
        }
        hasher.update(format!("{trial}:{pa}:{pw}:{b}:{mode:?}:{len}:{};", out.result).as_bytes());
        if out.result == oracle {
            passed += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!(
                "trial {trial}: p_a={pa} p_w={pw} b={b} mode={mode:?} a={act:?} w={weight:?} engine={} oracle={oracle}",
                out.result
            ));
        }
    }
    let digest = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect::<String>();
    Ok(ValidateSummary {
        trials,
        passed,
        digest,
        first_failure,
    })
}

fn cmd_validate(
    trials: u64,
    seed: u64,
    p_values: &[u32],
    b_values: &[u32],
    max_len: u64,
    trace_csv: Option<&Path>,
) -> Result<i32, CliError> {
    for &p in p_values {
        if !(1..=16).contains(&p) {
            return Err(CliError::Usage(format!("p value {p} is outside 1..=16")));
        }
    }
    for &b in b_values {
        if !(1..=16).contains(&b) {
            return Err(CliError::Usage(format!("b value {b} is outside 1..=16")));
        }
    }
    let mut trace = String::new();
    let summary = validate_engine(
        trials,
        seed,
        p_values,
        b_values,
        max_len,
        trace_csv.is_some().then_some(&mut trace),
    )?;
    if let Some(path) = trace_csv {
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("--trace-csv {} has no file name", path.display())))?;
        let mut outputs = Outputs::new(dir);
        outputs.files.push((name.to_string_lossy().into_owned(), trace));
        outputs.commit()?;
    }
    println!("{}/{} ok", summary.passed, summary.trials);
    println!("digest {}", summary.digest);
    match summary.first_failure {
        None => Ok(0),
        Some(f) => {
            println!("first counterexample: {f}");
            Ok(1)
        }
    }
}
