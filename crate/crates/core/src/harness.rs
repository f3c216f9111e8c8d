//! Declarative experiments: a TOML file describes the cluster, the classes,
//! the policies to compare, a one-dimensional parameter sweep and the number
//! of replications. Every (sweep point, policy, replication) triple is an
//! independent single-threaded run; runs execute in parallel.
//!
//! Output layout under the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `results.csv` | one row per run, sorted by sweep point, policy, replication |
//! | `partial.csv` | the same rows appended as runs finish |
//! | `series_<policy>.csv` | sweep value, mean revenue, CI half-width |
//! | `pdf/<policy>_<point>_class<i>.csv` | session mean-wait histogram |
//! | `traces/<policy>_<point>_<rep>.jsonl` | event trace, when requested |

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Attribution, ServiceClass};
use crate::engine::{run, SimConfig};
use crate::error::{Error, Result};
use crate::estimation::EstimatorConfig;
use crate::metrics::{bucket_interval, confidence_interval, revenue_rate, sla_met_fraction, WaitPdf};
use crate::policies::{build_policy, PolicyKind};
use crate::queueing::ThresholdSearch;
use crate::workload::JobSpacing;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Cluster size `N`.
    pub servers: usize,
    /// Number of classes; checked against the class blocks when given.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_bucket_width")]
    pub bucket_width: f64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub search: ThresholdSearch,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub spacing: JobSpacing,
    #[serde(default)]
    pub attribution: Attribution,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: OutputConfig,
    pub classes: Vec<ServiceClass>,
}

fn default_horizon() -> f64 {
    7200.0
}

fn default_bucket_width() -> f64 {
    600.0
}

fn default_replications() -> u32 {
    5
}

fn default_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

/// The swept parameter and its values.
///
/// `var` names a class field with a one-based class index, for example
/// `session_rate.4`, or the cluster size `servers`. Without explicit
/// `values` the sweep uses `points` evenly spaced values from `start` to
/// `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "default_sweep_var")]
    pub var: String,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_start")]
    pub start: f64,
    #[serde(default = "default_stop")]
    pub stop: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_sweep_var() -> String {
    "session_rate.4".into()
}

fn default_start() -> f64 {
    0.02
}

fn default_stop() -> f64 {
    0.2
}

fn default_points() -> usize {
    10
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            var: default_sweep_var(),
            values: None,
            start: default_start(),
            stop: default_stop(),
            points: default_points(),
        }
    }
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        if let Some(v) = &self.values {
            return v.clone();
        }
        match self.points {
            0 => Vec::new(),
            1 => vec![self.start],
            n => {
                let step = (self.stop - self.start) / (n - 1) as f64;
                (0..n).map(|i| if i == n - 1 { self.stop } else { self.start + step * i as f64 }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_output_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_pdf_bin")]
    pub pdf_bin_width: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_pdf_bin() -> f64 {
    WaitPdf::DEFAULT_BIN_WIDTH
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_output_dir(),
            pdf_bin_width: default_pdf_bin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Field {
    Servers,
    Class(usize, ClassField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClassField {
    SessionRate,
    JobRate,
    Charge,
    Penalty,
    Obligation,
    JobsPerSession,
    Weight,
}

fn parse_var(var: &str, classes: usize) -> Result<Field> {
    if var == "servers" {
        return Ok(Field::Servers);
    }
    let bad = || Error::InvalidConfig(format!("unknown sweep variable `{var}`"));
    let (name, idx) = var.rsplit_once('.').ok_or_else(bad)?;
    let idx: usize = idx.parse().map_err(|_| bad())?;
    if idx == 0 || idx > classes {
        return Err(Error::InvalidConfig(format!("sweep variable `{var}` names class {idx} of {classes}")));
    }
    let field = match name {
        "session_rate" => ClassField::SessionRate,
        "job_rate" => ClassField::JobRate,
        "charge" => ClassField::Charge,
        "penalty" => ClassField::Penalty,
        "obligation" => ClassField::Obligation,
        "jobs_per_session" => ClassField::JobsPerSession,
        "weight" => ClassField::Weight,
        _ => return Err(bad()),
    };
    Ok(Field::Class(idx - 1, field))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Check the schema and every cell's simulation config.
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.m {
            if m != self.classes.len() {
                return Err(Error::InvalidConfig(format!("m = {m} but {} class blocks given", self.classes.len())));
            }
        }
        if !(self.horizon > self.bucket_width) {
            return Err(Error::InvalidConfig(format!(
                "horizon {} must exceed bucket width {}",
                self.horizon, self.bucket_width
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::InvalidConfig("no policies to run".into()));
        }
        if !(self.output.pdf_bin_width > 0.0) {
            return Err(Error::InvalidConfig("pdf bin width must be positive".into()));
        }
        let values = self.sweep.values();
        if values.is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("sweep value {v} is not finite")));
        }
        parse_var(&self.sweep.var, self.classes.len())?;
        for &v in &values {
            self.sim_config(v)?.validate()?;
        }
        Ok(())
    }

    /// Simulation config with the sweep variable set to `value`.
    pub fn sim_config(&self, value: f64) -> Result<SimConfig> {
        let mut classes = self.classes.clone();
        for (i, c) in classes.iter_mut().enumerate() {
            c.id = i;
        }
        let mut servers = self.servers;
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("sweep value {v} is not a count")))
            }
        };
        match parse_var(&self.sweep.var, classes.len())? {
            Field::Servers => servers = as_count(value)?,
            Field::Class(i, f) => {
                let c = &mut classes[i];
                match f {
                    ClassField::SessionRate => c.session_rate = value,
                    ClassField::JobRate => c.job_rate = value,
                    ClassField::Charge => c.charge = value,
                    ClassField::Penalty => c.penalty = value,
                    ClassField::Obligation => c.obligation = value,
                    ClassField::JobsPerSession => c.jobs_per_session = as_count(value)? as u32,
                    ClassField::Weight => c.weight = value,
                }
            }
        }
        let mut cfg = SimConfig::new(servers, classes, self.horizon);
        cfg.bucket_width = self.bucket_width;
        cfg.estimator = self.estimator.clone();
        cfg.spacing = self.spacing;
        cfg.attribution = self.attribution;
        Ok(cfg)
    }

    pub fn total_runs(&self) -> usize {
        self.sweep.values().len() * self.policies.len() * self.replications as usize
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep` at sweep point `cell`.
///
/// All policies at the same sweep point and replication see the same seed,
/// so they are compared on identical session and job streams.
pub fn replication_seed(base_seed: u64, cell: usize, rep: u32) -> u64 {
    base_seed ^ splitmix64(((cell as u64) << 32) | u64::from(rep))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub policy: PolicyKind,
    pub sweep_var: String,
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub replication: u32,
    pub seed: u64,
    pub revenue_per_sec: f64,
    /// Within-run half-width over the revenue buckets; 0 with one bucket.
    pub ci_half_width: f64,
    pub accepted: Vec<u64>,
    pub rejected: Vec<u64>,
    pub violated: Vec<u64>,
    pub sla_met_frac: Vec<Option<f64>>,
}

impl RunRow {
    pub fn header(m: usize) -> Vec<String> {
        let mut h: Vec<String> = ["policy", "sweep_var", "sweep_value", "seed", "revenue_per_sec", "ci_half_width"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for name in ["accepted", "rejected", "violated", "sla_met_frac"] {
            h.extend((1..=m).map(|i| format!("{name}{i}")));
        }
        h
    }

    pub fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.policy.name().to_string(),
            self.sweep_var.clone(),
            self.sweep_value.to_string(),
            self.seed.to_string(),
            self.revenue_per_sec.to_string(),
            self.ci_half_width.to_string(),
        ];
        for v in [&self.accepted, &self.rejected, &self.violated] {
            r.extend(v.iter().map(u64::to_string));
        }
        r.extend(self.sla_met_frac.iter().map(|f| f.map(|x| x.to_string()).unwrap_or_default()));
        r
    }

    pub fn total_accepted(&self) -> u64 {
        self.accepted.iter().sum()
    }
}

/// A finished run: its row plus the per-class session mean waits.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub row: RunRow,
    pub waits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub policy: PolicyKind,
    pub sweep_index: usize,
    pub replication: u32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub sweep_var: String,
    pub sweep_values: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub classes: usize,
    pub runs: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

/// Mean revenue at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub sweep_value: f64,
    pub mean_revenue: f64,
    pub ci_half_width: f64,
    pub replications: usize,
}

impl ResultTable {
    pub fn cell(&self, policy: PolicyKind, sweep_index: usize) -> impl Iterator<Item = &RunResult> {
        self.runs
            .iter()
            .filter(move |r| r.row.policy == policy && r.row.sweep_index == sweep_index)
    }

    /// Across-replication interval per sweep point. A single replication
    /// falls back to its within-run interval.
    pub fn series(&self, policy: PolicyKind) -> Vec<SeriesPoint> {
        (0..self.sweep_values.len())
            .filter_map(|i| {
                let rows: Vec<&RunRow> = self.cell(policy, i).map(|r| &r.row).collect();
                let revenues: Vec<f64> = rows.iter().map(|r| r.revenue_per_sec).collect();
                let (mean, half) = match (rows.as_slice(), confidence_interval(&revenues)) {
                    ([], _) => return None,
                    ([one], _) => (one.revenue_per_sec, one.ci_half_width),
                    (_, Some(ci)) => (ci.mean, ci.half_width),
                    (_, None) => unreachable!(),
                };
                Some(SeriesPoint {
                    sweep_value: self.sweep_values[i],
                    mean_revenue: mean,
                    ci_half_width: half.max(0.0),
                    replications: rows.len(),
                })
            })
            .collect()
    }

    /// Session mean waits of one class pooled over the replications of a cell.
    pub fn pooled_waits(&self, policy: PolicyKind, sweep_index: usize, class: usize) -> Vec<f64> {
        self.cell(policy, sweep_index)
            .flat_map(|r| r.waits[class].iter().copied())
            .collect()
    }
}

/// Knobs that do not change results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads; all cores when absent.
    pub jobs: Option<usize>,
    /// Directory for `partial.csv` and traces; nothing is written when absent.
    pub output: Option<PathBuf>,
    pub trace: bool,
    /// Called after every run with its row, or with the failure.
    pub progress: Option<&'a (dyn Fn(std::result::Result<&RunRow, &RunFailure>) + Sync)>,
}

struct Task {
    policy: PolicyKind,
    sweep_index: usize,
    replication: u32,
}

fn run_one(config: &ExperimentConfig, task: &Task, sweep_value: f64, trace_dir: Option<&Path>) -> Result<RunResult> {
    let mut sim = config.sim_config(sweep_value)?;
    sim.trace = trace_dir.is_some();
    let seed = replication_seed(config.base_seed, task.sweep_index, task.replication);
    let mut policy = build_policy(task.policy, &sim.classes, config.search);
    let out = run(&sim, policy.as_mut(), seed)?;
    if let Some(dir) = trace_dir {
        let path = dir.join(format!("{}_{}_{}.jsonl", task.policy.name(), task.sweep_index, task.replication));
        let mut w = BufWriter::new(File::create(path)?);
        for rec in &out.trace {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let ledger = &out.ledger;
    let m = sim.classes.len();
    let row = RunRow {
        policy: task.policy,
        sweep_var: config.sweep.var.clone(),
        sweep_index: task.sweep_index,
        sweep_value,
        replication: task.replication,
        seed,
        revenue_per_sec: revenue_rate(ledger, sim.horizon),
        ci_half_width: bucket_interval(ledger).map_or(0.0, |ci| ci.half_width),
        accepted: ledger.classes.iter().map(|c| c.accepted).collect(),
        rejected: ledger.classes.iter().map(|c| c.rejected).collect(),
        violated: ledger.classes.iter().map(|c| c.violated).collect(),
        sla_met_frac: (0..m).map(|i| sla_met_fraction(ledger, i)).collect(),
    };
    Ok(RunResult {
        row,
        waits: ledger.session_waits.clone(),
    })
}

/// Run every (sweep point, policy, replication) of `config`.
///
/// Fails before any run when the config is invalid. Individual run failures
/// are collected in [`ResultTable::failures`].
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions<'_>) -> Result<ResultTable> {
    config.validate()?;
    let values = config.sweep.values();
    let m = config.classes.len();
    let mut tasks = Vec::new();
    for sweep_index in 0..values.len() {
        for &policy in &config.policies {
            for replication in 0..config.replications {
                tasks.push(Task {
                    policy,
                    sweep_index,
                    replication,
                });
            }
        }
    }

    let partial = match &options.output {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_writer(File::create(dir.join("partial.csv"))?);
            w.write_record(RunRow::header(m))?;
            w.flush()?;
            let file = OpenOptions::new().append(true).open(dir.join("partial.csv"))?;
            Some(Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(file)))
        }
        None => None,
    };
    let trace_dir = match (&options.output, options.trace) {
        (Some(dir), true) => {
            let d = dir.join("traces");
            fs::create_dir_all(&d)?;
            Some(d)
        }
        _ => None,
    };

    let execute = || -> Vec<std::result::Result<RunResult, RunFailure>> {
        tasks
            .par_iter()
            .map(|task| {
                let outcome = run_one(config, task, values[task.sweep_index], trace_dir.as_deref()).map_err(|e| RunFailure {
                    policy: task.policy,
                    sweep_index: task.sweep_index,
                    replication: task.replication,
                    message: e.to_string(),
                });
                if let (Ok(res), Some(w)) = (&outcome, &partial) {
                    let mut w = w.lock().unwrap_or_else(|p| p.into_inner());
                    let _ = w.write_record(res.row.record()).and_then(|_| w.flush().map_err(csv::Error::from));
                }
                if let Some(cb) = options.progress {
                    cb(outcome.as_ref().map(|r| &r.row));
                }
                outcome
            })
            .collect()
    };
    let outcomes = match options.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?
            .install(execute),
        None => execute(),
    };

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(ResultTable {
        sweep_var: config.sweep.var.clone(),
        sweep_values: values,
        policies: config.policies.clone(),
        classes: m,
        runs,
        failures,
    })
}

/// Write `results.csv` with rows in task order.
pub fn write_results(table: &ResultTable, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(RunRow::header(table.classes))?;
    for r in &table.runs {
        w.write_record(r.row.record())?;
    }
    w.flush()?;
    Ok(path)
}

/// One series file per policy: sweep value, mean revenue, CI half-width.
pub fn emit_plot_data(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for &policy in &table.policies {
        let path = dir.join(format!("series_{}.csv", policy.name()));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([table.sweep_var.as_str(), "mean_revenue", "ci_half_width", "replications"])?;
        for p in table.series(policy) {
            w.write_record([
                p.sweep_value.to_string(),
                p.mean_revenue.to_string(),
                p.ci_half_width.to_string(),
                p.replications.to_string(),
            ])?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Per-class wait histograms, one file per (policy, sweep point, class).
pub fn emit_wait_pdfs(table: &ResultTable, dir: &Path, bin_width: f64) -> Result<Vec<PathBuf>> {
    let dir = dir.join("pdf");
    fs::create_dir_all(&dir)?;
    let mut paths = Vec::new();
    for &policy in &table.policies {
        for i in 0..table.sweep_values.len() {
            for class in 0..table.classes {
                let pdf = WaitPdf::from_waits(&table.pooled_waits(policy, i, class), bin_width);
                let path = dir.join(format!("{}_{}_class{}.csv", policy.name(), i, class + 1));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["bin_start", "density", "count"])?;
                for ((start, density), count) in pdf.density().into_iter().zip(&pdf.counts) {
                    w.write_record([start.to_string(), density.to_string(), count.to_string()])?;
                }
                w.flush()?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}

/// Results, series and histograms in one go.
pub fn write_outputs(config: &ExperimentConfig, table: &ResultTable, dir: &Path) -> Result<()> {
    write_results(table, dir)?;
    emit_plot_data(table, dir)?;
    emit_wait_pdfs(table, dir, config.output.pdf_bin_width)?;
    Ok(())
}

/// Progress of a sweep read back from its `partial.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStatus {
    pub expected: usize,
    pub completed: usize,
    /// Completed runs per policy, in config order.
    pub per_policy: Vec<(PolicyKind, usize)>,
}

pub fn sweep_status(config: &ExperimentConfig, dir: &Path) -> Result<SweepStatus> {
    let path = dir.join("partial.csv");
    let mut per_policy: Vec<(PolicyKind, usize)> = config.policies.iter().map(|&p| (p, 0)).collect();
    let mut completed = 0;
    if path.exists() {
        let mut r = csv::Reader::from_path(&path)?;
        for rec in r.records() {
            let rec = rec?;
            completed += 1;
            if let Some(slot) = per_policy.iter_mut().find(|(p, _)| Some(p.name()) == rec.get(0)) {
                slot.1 += 1;
            }
        }
    }
    Ok(SweepStatus {
        expected: config.total_runs(),
        completed,
        per_policy,
    })
}
