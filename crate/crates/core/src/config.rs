//! Run configuration: a single self-describing JSON document naming traces
//! (files or synthetic generators), penalty-model sources, policy grids, and
//! output settings, plus the fit pipeline that turns a config into a
//! [`PolicyContext`].

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MatchOn;
use crate::penalty::{
    batch_penalty, calibrate_weight, lasso_fit, selected_features_for, BatchContext,
    BatchPenaltyModel, FeatureName, PenaltyError, RealtimePenaltyModel, REALTIME_MAX_LATENCY,
    REALTIME_MEDIAN_LATENCY,
};
use crate::policies::{
    PolicyContext, PolicyError, PolicySpec, WorkloadCtx, WorkloadPenaltyModel,
};
use crate::scheduler::{generate_training_set, CapacityModel, SchedulerError, TrainingSample};
use crate::solver::SolverOptions;
use crate::traces::{
    load_carbon_trace, load_job_trace, load_power_trace, synth_carbon_trace, synth_job_trace,
    synth_power_trace, CarbonScenario, CarbonTrace, Horizon, JobTrace, PowerTrace, TraceError,
    WorkloadId, WorkloadKind,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing input: workload {workload} needs {what}")]
    MissingInput { workload: String, what: String },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Published real-time latency-vs-curtailment curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealtimeCurve {
    MedianLatency,
    MaxLatency,
}

impl RealtimeCurve {
    pub fn coeffs(self) -> (f64, f64, f64) {
        match self {
            RealtimeCurve::MedianLatency => REALTIME_MEDIAN_LATENCY,
            RealtimeCurve::MaxLatency => REALTIME_MAX_LATENCY,
        }
    }
}

/// Where a workload's power trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PowerSource {
    File { path: PathBuf },
    Synth,
}

/// Where a batch workload's job trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum JobSource {
    File { path: PathBuf },
    Synth { n_jobs: usize },
}

/// Where the carbon-intensity trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CarbonSource {
    File { path: PathBuf },
    Synth { scenario: CarbonScenario },
}

/// Exactly one penalty-model source per workload, enforced by the tagged
/// representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PenaltySource {
    /// Fixed coefficients: a published latency curve with an explicit
    /// weight, or a weight calibrated at fit time when omitted.
    /// Real-time workloads only.
    RealtimeCurve {
        curve: RealtimeCurve,
        #[serde(default)]
        weight_k: Option<f64>,
    },
    /// Fit from data: batch workloads train on scheduler simulations of
    /// their job trace; real-time workloads take the median-latency curve
    /// with a calibrated weight.
    Fit,
    /// A previously fitted model JSON document.
    ModelFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub name: String,
    pub kind: WorkloadKind,
    pub entitlement_np: f64,
    #[serde(default = "default_power_source")]
    pub power: PowerSource,
    #[serde(default)]
    pub jobs: Option<JobSource>,
    pub penalty: PenaltySource,
}

fn default_power_source() -> PowerSource {
    PowerSource::Synth
}

/// Training-set generation knobs for the batch fit pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub n_samples: usize,
    /// Random-walk step sigma as a fraction of the entitlement.
    pub step_sigma_frac: f64,
    /// Weight calibration severity: the entitlement fraction a sustained cap
    /// at this level is deemed equivalent to.
    pub cap_fraction: f64,
    pub folds: usize,
    pub capacity_slope: f64,
    pub capacity_intercept: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_samples: 150,
            step_sigma_frac: 0.05,
            cap_fraction: 0.15,
            folds: 10,
            capacity_slope: 1.0,
            capacity_intercept: 0.0,
        }
    }
}

/// One policy with its hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyGrid {
    Cr1 { grid: Vec<f64> },
    Cr2 { grid: Vec<f64> },
    Cr3 { grid: Vec<f64> },
    B1 {
        grid: Vec<f64>,
        #[serde(default)]
        enforce_batch_preservation: bool,
    },
    B2 { grid: Vec<f64> },
    B3 {
        priority_order: Vec<String>,
        max_cut_pct: f64,
        /// Grid of curtailment targets in np-hours.
        grid: Vec<f64>,
    },
    B4 { grid: Vec<f64> },
}

impl PolicyGrid {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyGrid::Cr1 { .. } => "cr1",
            PolicyGrid::Cr2 { .. } => "cr2",
            PolicyGrid::Cr3 { .. } => "cr3",
            PolicyGrid::B1 { .. } => "b1",
            PolicyGrid::B2 { .. } => "b2",
            PolicyGrid::B3 { .. } => "b3",
            PolicyGrid::B4 { .. } => "b4",
        }
    }

    pub fn grid(&self) -> &[f64] {
        match self {
            PolicyGrid::Cr1 { grid }
            | PolicyGrid::Cr2 { grid }
            | PolicyGrid::Cr3 { grid }
            | PolicyGrid::B1 { grid, .. }
            | PolicyGrid::B2 { grid }
            | PolicyGrid::B3 { grid, .. }
            | PolicyGrid::B4 { grid } => grid,
        }
    }

    /// The spec for one grid value.
    pub fn spec_at(&self, value: f64) -> PolicySpec {
        match self {
            PolicyGrid::Cr1 { .. } => PolicySpec::Cr1 { lambda: value },
            PolicyGrid::Cr2 { .. } => PolicySpec::Cr2 { cap_pct: value },
            PolicyGrid::Cr3 { .. } => PolicySpec::Cr3 { tax_rate: value },
            PolicyGrid::B1 {
                enforce_batch_preservation,
                ..
            } => PolicySpec::B1 {
                f: value,
                enforce_batch_preservation: *enforce_batch_preservation,
            },
            PolicyGrid::B2 { .. } => PolicySpec::B2 { lambda: value },
            PolicyGrid::B3 {
                priority_order,
                max_cut_pct,
                ..
            } => PolicySpec::B3 {
                priority_order: priority_order.clone(),
                max_cut_pct: *max_cut_pct,
                target_np_hours: value,
            },
            PolicyGrid::B4 { .. } => PolicySpec::B4 { lambda: value },
        }
    }

    pub fn specs(&self) -> Vec<PolicySpec> {
        self.grid().iter().map(|&v| self.spec_at(v)).collect()
    }
}

/// Scenario-projection settings for the `project` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub policy: String,
    pub hyperparameter: f64,
    /// Named carbon scenarios to reprice the solved adjustments under.
    pub scenarios: Vec<(String, CarbonSource)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub horizon_hours: usize,
    pub seed: u64,
    pub np_to_mw: f64,
    pub output_dir: PathBuf,
    pub workloads: Vec<WorkloadConfig>,
    pub carbon: CarbonSource,
    pub policies: Vec<PolicyGrid>,
    pub report_levels: Vec<f64>,
    pub report_match_on: MatchOn,
    pub training: TrainingConfig,
    pub project: Option<ProjectConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon_hours: 48,
            seed: 0,
            np_to_mw: 1.0,
            output_dir: PathBuf::from("out"),
            workloads: Vec::new(),
            carbon: CarbonSource::Synth {
                scenario: CarbonScenario::Today,
            },
            policies: Vec::new(),
            report_levels: vec![0.5, 2.0, 8.0],
            report_match_on: MatchOn::PenaltyPct,
            training: TrainingConfig::default(),
            project: None,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let config: RunConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workloads.is_empty() {
            return Err(ConfigError::BadConfig("no workloads".into()));
        }
        let mut seen = Vec::new();
        for w in &self.workloads {
            if seen.contains(&w.name) {
                return Err(ConfigError::BadConfig(format!(
                    "duplicate workload name {}",
                    w.name
                )));
            }
            seen.push(w.name.clone());
            if let PenaltySource::RealtimeCurve { .. } = w.penalty {
                if w.kind != WorkloadKind::RealTime {
                    return Err(ConfigError::BadConfig(format!(
                        "workload {} is batch but names a real-time latency curve",
                        w.name
                    )));
                }
            }
            if w.kind == WorkloadKind::RealTime && w.jobs.is_some() {
                return Err(ConfigError::BadConfig(format!(
                    "real-time workload {} must not carry a job trace",
                    w.name
                )));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> Result<Horizon, ConfigError> {
        Ok(Horizon::new(self.horizon_hours, "config")?)
    }

    fn kind_of(&self, name: &str) -> WorkloadKind {
        self.workloads
            .iter()
            .find(|w| w.name == name)
            .map(|w| w.kind)
            .unwrap_or(WorkloadKind::RealTime)
    }
}

/// Stable per-workload seed derivation (FNV-1a over the name, mixed with the
/// global seed and a purpose salt) so adding a workload never reshuffles the
/// others' draws.
pub fn derive_seed(global: u64, name: &str, salt: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ global.wrapping_mul(0x9e3779b97f4a7c15) ^ salt
}

/// All traces resolved to concrete in-memory data.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub horizon: Horizon,
    pub power: Vec<PowerTrace>,
    pub jobs: BTreeMap<String, JobTrace>,
    pub carbon: CarbonTrace,
}

pub fn materialize(config: &RunConfig, seed: u64) -> Result<Materialized, ConfigError> {
    let horizon = config.horizon()?;
    // File-backed power traces may share one CSV; load each file once.
    let mut file_traces: BTreeMap<PathBuf, Vec<PowerTrace>> = BTreeMap::new();
    let mut power = Vec::new();
    let mut jobs = BTreeMap::new();
    for w in &config.workloads {
        let trace = match &w.power {
            PowerSource::Synth => synth_power_trace(
                &w.name,
                w.kind,
                w.entitlement_np,
                derive_seed(seed, &w.name, 1),
                &horizon,
            )?,
            PowerSource::File { path } => {
                if !file_traces.contains_key(path) {
                    let traces = load_power_trace(path, &horizon, |n| config.kind_of(n))?;
                    file_traces.insert(path.clone(), traces);
                }
                file_traces[path]
                    .iter()
                    .find(|t| t.workload.name == w.name)
                    .cloned()
                    .ok_or_else(|| ConfigError::MissingInput {
                        workload: w.name.clone(),
                        what: format!("a power trace in {}", path.display()),
                    })?
            }
        };
        if let Some(source) = &w.jobs {
            let trace = match source {
                JobSource::Synth { n_jobs } => synth_job_trace(
                    &trace.workload,
                    *n_jobs,
                    derive_seed(seed, &w.name, 2),
                    &horizon,
                )?,
                JobSource::File { path } => {
                    load_job_trace(path, &horizon, std::slice::from_ref(&trace.workload))?
                        .into_iter()
                        .find(|t| t.workload.name == w.name)
                        .ok_or_else(|| ConfigError::MissingInput {
                            workload: w.name.clone(),
                            what: format!("a job trace in {}", path.display()),
                        })?
                }
            };
            jobs.insert(w.name.clone(), trace);
        }
        power.push(trace);
    }
    let carbon = match &config.carbon {
        CarbonSource::File { path } => load_carbon_trace(path, &horizon, config.np_to_mw)?,
        CarbonSource::Synth { scenario } => {
            let mut c = synth_carbon_trace(*scenario, derive_seed(seed, "carbon", 3), &horizon)?;
            c.np_to_mw = config.np_to_mw;
            c
        }
    };
    Ok(Materialized {
        horizon,
        power,
        jobs,
        carbon,
    })
}

pub fn resolve_carbon_source(
    source: &CarbonSource,
    config: &RunConfig,
    seed: u64,
) -> Result<CarbonTrace, ConfigError> {
    let horizon = config.horizon()?;
    Ok(match source {
        CarbonSource::File { path } => load_carbon_trace(path, &horizon, config.np_to_mw)?,
        CarbonSource::Synth { scenario } => {
            let mut c = synth_carbon_trace(*scenario, derive_seed(seed, "carbon", 3), &horizon)?;
            c.np_to_mw = config.np_to_mw;
            c
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_samples: usize,
    pub alpha: f64,
    pub cv_mae_mean: f64,
    pub cv_mae_var: f64,
    pub r2: f64,
}

/// A fitted penalty model for one workload, serializable to JSON with a
/// bit-exact round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub workload: String,
    pub kind: WorkloadKind,
    pub model: WorkloadPenaltyModel,
    pub diagnostics: Option<FitDiagnostics>,
}

impl FittedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let mut f = std::fs::File::create(path.as_ref())?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(
            path.as_ref(),
        )?)?)
    }
}

/// The per-workload output of the fit pipeline: the model plus the training
/// samples (batch only) for CSV export.
#[derive(Debug)]
pub struct FitResult {
    pub model: FittedModel,
    pub samples: Vec<TrainingSample>,
}

fn realtime_raw_penalty_at_cap(curve: RealtimeCurve, n_hours: usize, cap_fraction: f64) -> f64 {
    let m = RealtimePenaltyModel::new(curve.coeffs(), 1.0).expect("published curves are valid");
    n_hours as f64 * m.f(cap_fraction)
}

/// Fits (or resolves) the penalty model for one workload:
/// real-time curves get an explicit or calibrated weight; batch workloads run
/// `generate_training_set -> lasso_fit -> calibrate_weight`.
pub fn fit_workload(
    w: &WorkloadConfig,
    power: &PowerTrace,
    jobs: Option<&JobTrace>,
    training: &TrainingConfig,
    seed: u64,
) -> Result<FitResult, ConfigError> {
    let n_hours = power.n_hours();
    let cap = training.cap_fraction;
    let done = |model: WorkloadPenaltyModel, diagnostics, samples| {
        Ok(FitResult {
            model: FittedModel {
                workload: w.name.clone(),
                kind: w.kind,
                model,
                diagnostics,
            },
            samples,
        })
    };
    match (&w.penalty, w.kind) {
        (PenaltySource::ModelFile { path }, _) => {
            let model = FittedModel::load(path)?;
            if model.workload != w.name || model.kind != w.kind {
                return Err(ConfigError::BadConfig(format!(
                    "model file {} is for {}/{:?}, not {}/{:?}",
                    path.display(),
                    model.workload,
                    model.kind,
                    w.name,
                    w.kind
                )));
            }
            Ok(FitResult {
                model,
                samples: Vec::new(),
            })
        }
        (PenaltySource::RealtimeCurve { curve, weight_k }, _) => {
            let k = match weight_k {
                Some(k) => *k,
                None => calibrate_weight(
                    w.entitlement_np,
                    realtime_raw_penalty_at_cap(*curve, n_hours, cap),
                    cap,
                )?,
            };
            let model = RealtimePenaltyModel::new(curve.coeffs(), k)?;
            done(WorkloadPenaltyModel::RealTime(model), None, Vec::new())
        }
        (PenaltySource::Fit, WorkloadKind::RealTime) => {
            let curve = RealtimeCurve::MedianLatency;
            let k = calibrate_weight(
                w.entitlement_np,
                realtime_raw_penalty_at_cap(curve, n_hours, cap),
                cap,
            )?;
            let model = RealtimePenaltyModel::new(curve.coeffs(), k)?;
            done(WorkloadPenaltyModel::RealTime(model), None, Vec::new())
        }
        (PenaltySource::Fit, kind) => {
            let jobs = jobs.ok_or_else(|| ConfigError::MissingInput {
                workload: w.name.clone(),
                what: "a job trace (batch workloads fit from scheduler simulations)".into(),
            })?;
            let capacity = CapacityModel::new(training.capacity_slope, training.capacity_intercept);
            let step_sigma = training.step_sigma_frac * w.entitlement_np;
            let samples = generate_training_set(
                jobs,
                power,
                &capacity,
                training.n_samples,
                step_sigma,
                derive_seed(seed, &w.name, 4),
            )?;
            let selected = selected_features_for(kind);
            let x: Vec<Vec<f64>> = samples
                .iter()
                .map(|s| vec![s.features.get(selected.0), s.features.get(selected.1)])
                .collect();
            let y: Vec<f64> = samples.iter().map(|s| s.target).collect();
            let fit = lasso_fit(&x, &y, training.folds, derive_seed(seed, &w.name, 5))?;
            let mut model = BatchPenaltyModel {
                selected,
                betas: (fit.intercept, fit.slopes[0], fit.slopes[1]),
                weight_k: 1.0,
                alpha: fit.alpha,
            };
            // Calibrate the job-hours -> np weight against a sustained cap.
            let jobs_per_hour = jobs.jobs_per_hour(n_hours);
            let slo_hours = match kind {
                WorkloadKind::BatchSlo => jobs.min_slo_hours(),
                _ => None,
            };
            let ctx = BatchContext {
                usage: power.usage(),
                jobs_per_hour: &jobs_per_hour,
                slo_hours,
            };
            let d_cap: Vec<f64> = power
                .usage()
                .iter()
                .map(|&u| u.min(cap * w.entitlement_np))
                .collect();
            let raw = batch_penalty(&d_cap, &ctx, &model)?;
            // A workload whose schedule is unharmed even at a sustained cap
            // fits a zero penalty; any weight is equivalent, so keep 1.
            model.weight_k = match calibrate_weight(w.entitlement_np, raw, cap) {
                Ok(k) => k,
                Err(PenaltyError::ZeroPenalty) => 1.0,
                Err(e) => return Err(e.into()),
            };
            let diagnostics = Some(FitDiagnostics {
                n_samples: samples.len(),
                alpha: fit.alpha,
                cv_mae_mean: fit.cv_mae_mean,
                cv_mae_var: fit.cv_mae_var,
                r2: fit.r2,
            });
            done(WorkloadPenaltyModel::Batch(model), diagnostics, samples)
        }
    }
}

/// Resolves a policy name and hyperparameter into a spec, preferring the
/// config's grid entry (which can carry extra fields such as B3's priority
/// order) over the bare defaults.
pub fn spec_for(
    config: &RunConfig,
    policy: &str,
    hyperparameter: f64,
) -> Result<PolicySpec, ConfigError> {
    if let Some(grid) = config.policies.iter().find(|g| g.name() == policy) {
        return Ok(grid.spec_at(hyperparameter));
    }
    // Policies that need nothing beyond the hyperparameter can run without a
    // grid entry.
    Ok(match policy {
        "cr1" => PolicySpec::Cr1 {
            lambda: hyperparameter,
        },
        "cr2" => PolicySpec::Cr2 {
            cap_pct: hyperparameter,
        },
        "cr3" => PolicySpec::Cr3 {
            tax_rate: hyperparameter,
        },
        "b1" => PolicySpec::B1 {
            f: hyperparameter,
            enforce_batch_preservation: false,
        },
        "b2" => PolicySpec::B2 {
            lambda: hyperparameter,
        },
        "b4" => PolicySpec::B4 {
            lambda: hyperparameter,
        },
        "b3" => {
            return Err(ConfigError::BadConfig(
                "b3 needs a policy grid entry with priority_order and max_cut_pct".into(),
            ))
        }
        other => {
            return Err(ConfigError::BadConfig(format!(
                "unknown policy {other}; expected cr1, cr2, cr3, b1, b2, b3, or b4"
            )))
        }
    })
}

/// Fits every workload in config order.
pub fn fit_all(
    config: &RunConfig,
    data: &Materialized,
    seed: u64,
) -> Result<Vec<FitResult>, ConfigError> {
    config
        .workloads
        .iter()
        .zip(&data.power)
        .map(|(w, power)| fit_workload(w, power, data.jobs.get(&w.name), &config.training, seed))
        .collect()
}

/// Assembles the policy-solve context from materialized traces and fitted
/// models.
pub fn build_policy_context(
    config: &RunConfig,
    data: &Materialized,
    models: &[FittedModel],
) -> Result<PolicyContext, ConfigError> {
    let n_hours = data.horizon.n_hours();
    let mut workloads = Vec::new();
    for (w, power) in config.workloads.iter().zip(&data.power) {
        let model = models
            .iter()
            .find(|m| m.workload == w.name)
            .ok_or_else(|| ConfigError::MissingInput {
                workload: w.name.clone(),
                what: "a fitted penalty model".into(),
            })?;
        let (jobs_per_hour, slo_hours) = match data.jobs.get(&w.name) {
            Some(jobs) => (
                jobs.jobs_per_hour(n_hours),
                match w.kind {
                    WorkloadKind::BatchSlo => jobs.min_slo_hours(),
                    _ => None,
                },
            ),
            None => (vec![0.0; n_hours], None),
        };
        workloads.push(WorkloadCtx {
            id: WorkloadId::new(&w.name, w.kind, w.entitlement_np)?,
            usage: power.usage().to_vec(),
            jobs_per_hour,
            slo_hours,
            model: model.model.clone(),
        });
    }
    Ok(PolicyContext::new(
        workloads,
        data.carbon.clone(),
        SolverOptions::default(),
    )?)
}

/// Exports a training set as the two inspection CSVs:
/// `<stem>_adjustments.csv` (`sample_id,hour,adjustment_np`) and
/// `<stem>_targets.csv` (`sample_id,target,` + one column per feature).
pub fn write_training_set_csv(
    dir: impl AsRef<Path>,
    stem: &str,
    samples: &[TrainingSample],
) -> Result<(), ConfigError> {
    let dir = dir.as_ref();
    let mut adj = std::fs::File::create(dir.join(format!("{stem}_adjustments.csv")))?;
    writeln!(adj, "sample_id,hour,adjustment_np")?;
    for (i, s) in samples.iter().enumerate() {
        for (t, d) in s.adjustment.iter().enumerate() {
            writeln!(adj, "{i},{t},{d}")?;
        }
    }
    let mut tgt = std::fs::File::create(dir.join(format!("{stem}_targets.csv")))?;
    writeln!(
        tgt,
        "sample_id,target,wt_jobs,wt_power,wt_sq,n_jobs_delayed,total_tardiness"
    )?;
    for (i, s) in samples.iter().enumerate() {
        writeln!(
            tgt,
            "{i},{},{},{},{},{},{}",
            s.target,
            s.features.get(FeatureName::WtJobs),
            s.features.get(FeatureName::WtPower),
            s.features.get(FeatureName::WtSq),
            s.features.get(FeatureName::NJobsDelayed),
            s.features.get(FeatureName::TotalTardiness)
        )?;
    }
    Ok(())
}
