//! Power, batch-job and carbon-intensity traces over a fixed hourly horizon.
//!
//! All types are immutable after construction and validated by their
//! constructors. Loading and synthesis are pure functions of `(inputs, seed)`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("horizon must have n_hours >= 2 and divisible by 24, got {0}")]
    InvalidHorizon(usize),
    #[error("malformed row {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("workload {workload}: missing hour {hour}")]
    MissingHour { workload: String, hour: usize },
    #[error(
        "workload {workload}: usage {usage} exceeds entitlement {entitlement} at hour {hour}"
    )]
    UsageExceedsEntitlement {
        workload: String,
        hour: usize,
        usage: f64,
        entitlement: f64,
    },
    #[error("workload {workload}: negative usage {usage} at hour {hour}")]
    NegativeUsage {
        workload: String,
        hour: usize,
        usage: f64,
    },
    #[error("workload {workload}: entitlement must be positive, got {entitlement}")]
    InvalidEntitlement { workload: String, entitlement: f64 },
    #[error("workload {workload} ({kind:?}): slo_hours {slo:?} not allowed for this kind")]
    InvalidSlo {
        workload: String,
        kind: WorkloadKind,
        slo: Option<u32>,
    },
    #[error("job {job}: {msg}")]
    InvalidJob { job: String, msg: String },
    #[error("carbon trace: {0}")]
    InvalidCarbon(String),
    #[error("trace length {got} does not match horizon {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Fixed hourly horizon; whole days only, since batch preservation is
/// enforced per calendar day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    n_hours: usize,
    /// Informational timestamp of hour 0.
    pub hour0_label: String,
}

impl Horizon {
    pub fn new(n_hours: usize, hour0_label: impl Into<String>) -> Result<Self, TraceError> {
        if n_hours < 2 || n_hours % HOURS_PER_DAY != 0 {
            return Err(TraceError::InvalidHorizon(n_hours));
        }
        Ok(Self {
            n_hours,
            hour0_label: hour0_label.into(),
        })
    }

    pub fn n_hours(&self) -> usize {
        self.n_hours
    }

    pub fn n_days(&self) -> usize {
        self.n_hours / HOURS_PER_DAY
    }
}

impl Default for Horizon {
    fn default() -> Self {
        Self {
            n_hours: 48,
            hour0_label: "day0-00:00".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    RealTime,
    BatchNoSlo,
    BatchSlo,
}

impl WorkloadKind {
    pub fn is_batch(self) -> bool {
        matches!(self, WorkloadKind::BatchNoSlo | WorkloadKind::BatchSlo)
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadKind::RealTime => write!(f, "real_time"),
            WorkloadKind::BatchNoSlo => write!(f, "batch_no_slo"),
            WorkloadKind::BatchSlo => write!(f, "batch_slo"),
        }
    }
}

/// Workload identity plus its power capacity entitlement `E_i` (np), the
/// common currency all penalties are converted into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadId {
    pub name: String,
    pub kind: WorkloadKind,
    pub entitlement_np: f64,
}

impl WorkloadId {
    pub fn new(
        name: impl Into<String>,
        kind: WorkloadKind,
        entitlement_np: f64,
    ) -> Result<Self, TraceError> {
        let name = name.into();
        if !(entitlement_np > 0.0) {
            return Err(TraceError::InvalidEntitlement {
                workload: name,
                entitlement: entitlement_np,
            });
        }
        Ok(Self {
            name,
            kind,
            entitlement_np,
        })
    }
}

/// Per-workload hourly power usage `U_{i,t}` in normalized-power units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub workload: WorkloadId,
    usage: Vec<f64>,
}

impl PowerTrace {
    pub fn new(workload: WorkloadId, usage: Vec<f64>) -> Result<Self, TraceError> {
        for (hour, &u) in usage.iter().enumerate() {
            if u < 0.0 {
                return Err(TraceError::NegativeUsage {
                    workload: workload.name.clone(),
                    hour,
                    usage: u,
                });
            }
            if u > workload.entitlement_np {
                return Err(TraceError::UsageExceedsEntitlement {
                    workload: workload.name.clone(),
                    hour,
                    usage: u,
                    entitlement: workload.entitlement_np,
                });
            }
        }
        Ok(Self { workload, usage })
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    pub fn n_hours(&self) -> usize {
        self.usage.len()
    }
}

/// One batch job; `slo_hours: None` means no deadline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub arrival_hour: usize,
    pub duration_hours: usize,
    pub power_np: f64,
    pub slo_hours: Option<u32>,
}

impl Job {
    /// Due hour; unbounded SLOs sort after every bounded one.
    pub fn due(&self) -> u64 {
        match self.slo_hours {
            Some(s) => self.arrival_hour as u64 + s as u64,
            None => u64::MAX,
        }
    }
}

pub const BATCH_SLO_TIERS: [u32; 4] = [1, 2, 4, 8];

/// Batch-job records driving the earliest-due-date simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobTrace {
    pub workload: WorkloadId,
    jobs: Vec<Job>,
}

impl JobTrace {
    pub fn new(workload: WorkloadId, jobs: Vec<Job>, horizon_hours: usize) -> Result<Self, TraceError> {
        if !workload.kind.is_batch() {
            return Err(TraceError::InvalidSlo {
                workload: workload.name.clone(),
                kind: workload.kind,
                slo: None,
            });
        }
        for job in &jobs {
            if job.arrival_hour >= horizon_hours {
                return Err(TraceError::InvalidJob {
                    job: job.id.clone(),
                    msg: format!("arrival_hour {} outside horizon", job.arrival_hour),
                });
            }
            if job.duration_hours == 0 {
                return Err(TraceError::InvalidJob {
                    job: job.id.clone(),
                    msg: "duration_hours must be positive".into(),
                });
            }
            if !(job.power_np > 0.0) {
                return Err(TraceError::InvalidJob {
                    job: job.id.clone(),
                    msg: format!("power_np must be positive, got {}", job.power_np),
                });
            }
            let slo_ok = match workload.kind {
                WorkloadKind::BatchNoSlo => job.slo_hours.is_none(),
                WorkloadKind::BatchSlo => match job.slo_hours {
                    None => true,
                    Some(s) => BATCH_SLO_TIERS.contains(&s),
                },
                WorkloadKind::RealTime => false,
            };
            if !slo_ok {
                return Err(TraceError::InvalidSlo {
                    workload: workload.name.clone(),
                    kind: workload.kind,
                    slo: job.slo_hours,
                });
            }
        }
        Ok(Self { workload, jobs })
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    /// Job arrivals aggregated per hour: `|J_{i,t}|`.
    pub fn jobs_per_hour(&self, n_hours: usize) -> Vec<f64> {
        let mut counts = vec![0.0; n_hours];
        for job in &self.jobs {
            if job.arrival_hour < n_hours {
                counts[job.arrival_hour] += 1.0;
            }
        }
        counts
    }

    /// Tightest bounded SLO across jobs, if any.
    pub fn min_slo_hours(&self) -> Option<u32> {
        self.jobs.iter().filter_map(|j| j.slo_hours).min()
    }
}

/// Hourly marginal and average grid carbon intensity (kg CO2 / MWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonTrace {
    pub marginal: Vec<f64>,
    pub average: Vec<f64>,
    /// MW per np. Defaults to 1.0: the np-to-MW mapping is site-specific.
    pub np_to_mw: f64,
}

impl CarbonTrace {
    pub fn new(marginal: Vec<f64>, average: Vec<f64>, np_to_mw: f64) -> Result<Self, TraceError> {
        if marginal.len() != average.len() {
            return Err(TraceError::InvalidCarbon(format!(
                "marginal has {} hours, average has {}",
                marginal.len(),
                average.len()
            )));
        }
        if marginal.iter().chain(average.iter()).any(|&v| v < 0.0) {
            return Err(TraceError::InvalidCarbon("negative intensity".into()));
        }
        if !(np_to_mw > 0.0) {
            return Err(TraceError::InvalidCarbon(format!(
                "np_to_mw must be positive, got {np_to_mw}"
            )));
        }
        Ok(Self {
            marginal,
            average,
            np_to_mw,
        })
    }

    pub fn n_hours(&self) -> usize {
        self.marginal.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarbonScenario {
    Today,
    Future2050,
}

// ---------------------------------------------------------------------------
// CSV ingest / export
// ---------------------------------------------------------------------------

/// Loads the power CSV (`hour,workload,usage_np,entitlement_np`), one row per
/// (hour, workload). `kind_of` supplies each workload's kind, which the CSV
/// does not carry.
pub fn load_power_trace(
    path: impl AsRef<Path>,
    horizon: &Horizon,
    kind_of: impl Fn(&str) -> WorkloadKind,
) -> Result<Vec<PowerTrace>, TraceError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    // name -> (entitlement, per-hour usage)
    let mut by_workload: BTreeMap<String, (f64, Vec<Option<f64>>)> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record?;
        let parse = |field: usize, name: &str| -> Result<f64, TraceError> {
            record
                .get(field)
                .ok_or_else(|| TraceError::MalformedRow {
                    line,
                    msg: format!("missing column {name}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| TraceError::MalformedRow {
                    line,
                    msg: format!("bad {name}: {e}"),
                })
        };
        let hour = parse(0, "hour")? as usize;
        let name = record
            .get(1)
            .ok_or_else(|| TraceError::MalformedRow {
                line,
                msg: "missing column workload".into(),
            })?
            .to_string();
        let usage = parse(2, "usage_np")?;
        let entitlement = parse(3, "entitlement_np")?;
        if hour >= horizon.n_hours() {
            return Err(TraceError::MalformedRow {
                line,
                msg: format!("hour {hour} outside horizon of {}", horizon.n_hours()),
            });
        }
        let entry = by_workload.entry(name.clone()).or_insert_with(|| {
            order.push(name.clone());
            (entitlement, vec![None; horizon.n_hours()])
        });
        if (entry.0 - entitlement).abs() > 1e-9 {
            return Err(TraceError::MalformedRow {
                line,
                msg: format!(
                    "inconsistent entitlement for {name}: {} vs {}",
                    entry.0, entitlement
                ),
            });
        }
        if entry.1[hour].is_some() {
            return Err(TraceError::MalformedRow {
                line,
                msg: format!("duplicate hour {hour} for {name}"),
            });
        }
        entry.1[hour] = Some(usage);
    }
    let mut traces = Vec::new();
    for name in order {
        let (entitlement, slots) = by_workload.remove(&name).expect("tracked name");
        let mut usage = Vec::with_capacity(slots.len());
        for (hour, slot) in slots.into_iter().enumerate() {
            usage.push(slot.ok_or_else(|| TraceError::MissingHour {
                workload: name.clone(),
                hour,
            })?);
        }
        let kind = kind_of(&name);
        let id = WorkloadId::new(name, kind, entitlement)?;
        traces.push(PowerTrace::new(id, usage)?);
    }
    Ok(traces)
}

/// Writes the power CSV in the External Interfaces format, rows ordered by
/// hour then by the given trace order.
pub fn write_power_trace(
    path: impl AsRef<Path>,
    traces: &[PowerTrace],
) -> Result<(), TraceError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(["hour", "workload", "usage_np", "entitlement_np"])?;
    let n_hours = traces.first().map_or(0, PowerTrace::n_hours);
    for hour in 0..n_hours {
        for trace in traces {
            writer.write_record([
                hour.to_string(),
                trace.workload.name.clone(),
                format!("{}", trace.usage[hour]),
                format!("{}", trace.workload.entitlement_np),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Loads the jobs CSV
/// (`job_id,workload,arrival_hour,duration_hours,power_np,slo_hours`);
/// `inf` is allowed for `slo_hours`.
pub fn load_job_trace(
    path: impl AsRef<Path>,
    horizon: &Horizon,
    workloads: &[WorkloadId],
) -> Result<Vec<JobTrace>, TraceError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut by_workload: BTreeMap<String, Vec<Job>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        let get = |field: usize, name: &str| -> Result<&str, TraceError> {
            record.get(field).ok_or_else(|| TraceError::MalformedRow {
                line,
                msg: format!("missing column {name}"),
            })
        };
        let job_id = get(0, "job_id")?.to_string();
        let workload = get(1, "workload")?.to_string();
        let arrival_hour = get(2, "arrival_hour")?
            .trim()
            .parse::<usize>()
            .map_err(|e| TraceError::MalformedRow {
                line,
                msg: format!("bad arrival_hour: {e}"),
            })?;
        let duration_hours = get(3, "duration_hours")?
            .trim()
            .parse::<usize>()
            .map_err(|e| TraceError::MalformedRow {
                line,
                msg: format!("bad duration_hours: {e}"),
            })?;
        let power_np = get(4, "power_np")?
            .trim()
            .parse::<f64>()
            .map_err(|e| TraceError::MalformedRow {
                line,
                msg: format!("bad power_np: {e}"),
            })?;
        let slo_raw = get(5, "slo_hours")?.trim();
        let slo_hours = if slo_raw.eq_ignore_ascii_case("inf") {
            None
        } else {
            Some(
                slo_raw
                    .parse::<u32>()
                    .map_err(|e| TraceError::MalformedRow {
                        line,
                        msg: format!("bad slo_hours: {e}"),
                    })?,
            )
        };
        if !by_workload.contains_key(&workload) {
            order.push(workload.clone());
        }
        by_workload.entry(workload).or_default().push(Job {
            id: job_id,
            arrival_hour,
            duration_hours,
            power_np,
            slo_hours,
        });
    }
    let mut traces = Vec::new();
    for name in order {
        let jobs = by_workload.remove(&name).expect("tracked name");
        let id = workloads
            .iter()
            .find(|w| w.name == name)
            .cloned()
            .ok_or_else(|| TraceError::MalformedRow {
                line: 0,
                msg: format!("jobs reference unknown workload {name}"),
            })?;
        traces.push(JobTrace::new(id, jobs, horizon.n_hours())?);
    }
    Ok(traces)
}

pub fn write_job_trace(path: impl AsRef<Path>, traces: &[JobTrace]) -> Result<(), TraceError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record([
        "job_id",
        "workload",
        "arrival_hour",
        "duration_hours",
        "power_np",
        "slo_hours",
    ])?;
    for trace in traces {
        for job in trace.jobs() {
            writer.write_record([
                job.id.clone(),
                trace.workload.name.clone(),
                job.arrival_hour.to_string(),
                job.duration_hours.to_string(),
                format!("{}", job.power_np),
                job.slo_hours
                    .map_or_else(|| "inf".to_string(), |s| s.to_string()),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Loads the carbon CSV (`hour,marginal_kg_per_mwh,average_kg_per_mwh`).
pub fn load_carbon_trace(
    path: impl AsRef<Path>,
    horizon: &Horizon,
    np_to_mw: f64,
) -> Result<CarbonTrace, TraceError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut marginal = vec![None; horizon.n_hours()];
    let mut average = vec![None; horizon.n_hours()];
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        let parse = |field: usize, name: &str| -> Result<f64, TraceError> {
            record
                .get(field)
                .ok_or_else(|| TraceError::MalformedRow {
                    line,
                    msg: format!("missing column {name}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| TraceError::MalformedRow {
                    line,
                    msg: format!("bad {name}: {e}"),
                })
        };
        let hour = parse(0, "hour")? as usize;
        if hour >= horizon.n_hours() {
            return Err(TraceError::MalformedRow {
                line,
                msg: format!("hour {hour} outside horizon"),
            });
        }
        marginal[hour] = Some(parse(1, "marginal_kg_per_mwh")?);
        average[hour] = Some(parse(2, "average_kg_per_mwh")?);
    }
    let collect = |v: Vec<Option<f64>>| -> Result<Vec<f64>, TraceError> {
        v.into_iter()
            .enumerate()
            .map(|(hour, slot)| {
                slot.ok_or_else(|| TraceError::MissingHour {
                    workload: "carbon".into(),
                    hour,
                })
            })
            .collect()
    };
    CarbonTrace::new(collect(marginal)?, collect(average)?, np_to_mw)
}

pub fn write_carbon_trace(
    path: impl AsRef<Path>,
    trace: &CarbonTrace,
) -> Result<(), TraceError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(["hour", "marginal_kg_per_mwh", "average_kg_per_mwh"])?;
    for hour in 0..trace.n_hours() {
        writer.write_record([
            hour.to_string(),
            format!("{}", trace.marginal[hour]),
            format!("{}", trace.average[hour]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generators (stand-ins for confidential production traces)
// ---------------------------------------------------------------------------

/// Deterministic synthetic power trace: real-time workloads follow a diurnal
/// shape peaking in the evening, batch workloads run nearly flat.
pub fn synth_power_trace(
    name: impl Into<String>,
    kind: WorkloadKind,
    entitlement_np: f64,
    seed: u64,
    horizon: &Horizon,
) -> Result<PowerTrace, TraceError> {
    let id = WorkloadId::new(name, kind, entitlement_np)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = horizon.n_hours();
    let mut usage = Vec::with_capacity(n);
    for t in 0..n {
        let hour_of_day = (t % HOURS_PER_DAY) as f64;
        let base = match kind {
            WorkloadKind::RealTime => {
                // Peaks at hour 20 (evening), troughs at hour 8.
                let phase = 2.0 * std::f64::consts::PI * (hour_of_day - 14.0) / 24.0;
                0.75 + 0.2 * phase.sin()
            }
            WorkloadKind::BatchNoSlo | WorkloadKind::BatchSlo => 0.9,
        };
        let noise = match kind {
            WorkloadKind::RealTime => rng.gen_range(-0.02..0.02),
            _ => rng.gen_range(-0.01..0.01),
        };
        let u = (entitlement_np * base * (1.0 + noise))
            .clamp(1e-6 * entitlement_np, entitlement_np);
        usage.push(u);
    }
    PowerTrace::new(id, usage)
}

/// Deterministic synthetic batch-job trace. Arrivals are uniform over the
/// horizon (the upstream trace's arrival distribution is unpublished), short
/// durations, per-job power a small fraction of the entitlement.
pub fn synth_job_trace(
    workload: &WorkloadId,
    n_jobs: usize,
    seed: u64,
    horizon: &Horizon,
) -> Result<JobTrace, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = horizon.n_hours();
    let mut jobs = Vec::with_capacity(n_jobs);
    for j in 0..n_jobs {
        let arrival_hour = rng.gen_range(0..n);
        let duration_hours = if rng.gen_bool(0.8) { 1 } else { 2 };
        let power_np = workload.entitlement_np * rng.gen_range(0.01..0.05);
        let slo_hours = match workload.kind {
            WorkloadKind::BatchSlo => {
                // Five tiers: 1, 2, 4, 8, unbounded.
                match rng.gen_range(0..5u8) {
                    0 => Some(1),
                    1 => Some(2),
                    2 => Some(4),
                    3 => Some(8),
                    _ => None,
                }
            }
            _ => None,
        };
        jobs.push(Job {
            id: format!("{}-{j}", workload.name),
            arrival_hour,
            duration_hours,
            power_np,
            slo_hours,
        });
    }
    JobTrace::new(workload.clone(), jobs, n)
}

/// Synthetic duck-curve carbon trace with a midday trough. The trough/peak
/// ratio is 0.66 today and 0.40 in the 2050 scenario.
pub fn synth_carbon_trace(
    scenario: CarbonScenario,
    seed: u64,
    horizon: &Horizon,
) -> Result<CarbonTrace, TraceError> {
    let (peak, ratio) = match scenario {
        CarbonScenario::Today => (400.0, 0.66),
        CarbonScenario::Future2050 => (300.0, 0.40),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = horizon.n_hours();
    let mut marginal = Vec::with_capacity(n);
    let mut average = Vec::with_capacity(n);
    for t in 0..n {
        let hour_of_day = (t % HOURS_PER_DAY) as f64;
        // 1.0 at hour 13 (solar trough in intensity), 0.0 at hour 1.
        let trough = (1.0 + (2.0 * std::f64::consts::PI * (hour_of_day - 13.0) / 24.0).cos()) / 2.0;
        // Multiplicative noise small enough to keep min/max within +-0.02 of
        // the target ratio.
        let noise = 1.0 + rng.gen_range(-0.004..0.004);
        marginal.push(peak * (1.0 - (1.0 - ratio) * trough) * noise);
        average.push(0.9 * peak * (1.0 - 0.5 * (1.0 - ratio) * trough));
    }
    CarbonTrace::new(marginal, average, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn horizon48() -> Horizon {
        Horizon::default()
    }

    #[test]
    fn horizon_rejects_partial_days() {
        assert!(Horizon::new(47, "t0").is_err());
        assert!(Horizon::new(0, "t0").is_err());
        assert!(Horizon::new(24, "t0").is_ok());
        assert!(Horizon::new(48, "t0").is_ok());
    }

    #[test]
    fn power_trace_boundary_and_violation() {
        let id = WorkloadId::new("w", WorkloadKind::RealTime, 10.0).unwrap();
        // U_t = E_i accepted (boundary).
        assert!(PowerTrace::new(id.clone(), vec![10.0; 48]).is_ok());
        let err = PowerTrace::new(id, vec![11.0; 48]).unwrap_err();
        assert!(matches!(err, TraceError::UsageExceedsEntitlement { .. }));
    }

    #[test]
    fn load_power_csv_four_workloads() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("power.csv");
        let mut body = String::from("hour,workload,usage_np,entitlement_np\n");
        for hour in 0..48 {
            for w in ["a", "b", "c", "d"] {
                body.push_str(&format!("{hour},{w},5.0,10.0\n"));
            }
        }
        std::fs::write(&path, body).unwrap();
        let traces =
            load_power_trace(&path, &horizon48(), |_| WorkloadKind::RealTime).unwrap();
        assert_eq!(traces.len(), 4);
        assert!(traces.iter().all(|t| t.n_hours() == 48));
    }

    #[test]
    fn load_power_csv_rejects_missing_hour() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("power.csv");
        let mut body = String::from("hour,workload,usage_np,entitlement_np\n");
        for hour in 0..47 {
            body.push_str(&format!("{hour},a,5.0,10.0\n"));
        }
        std::fs::write(&path, body).unwrap();
        let err =
            load_power_trace(&path, &horizon48(), |_| WorkloadKind::RealTime).unwrap_err();
        assert!(matches!(err, TraceError::MissingHour { hour: 47, .. }));
    }

    #[test]
    fn load_power_csv_rejects_usage_over_entitlement() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("power.csv");
        let mut body = String::from("hour,workload,usage_np,entitlement_np\n");
        for hour in 0..48 {
            let usage = if hour == 13 { 11.0 } else { 10.0 };
            body.push_str(&format!("{hour},a,{usage},10.0\n"));
        }
        std::fs::write(&path, body).unwrap();
        let err =
            load_power_trace(&path, &horizon48(), |_| WorkloadKind::RealTime).unwrap_err();
        assert!(matches!(err, TraceError::UsageExceedsEntitlement { .. }));
    }

    #[test]
    fn power_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("power.csv");
        let a = synth_power_trace("a", WorkloadKind::RealTime, 100.0, 3, &horizon48()).unwrap();
        let b = synth_power_trace("b", WorkloadKind::BatchNoSlo, 50.0, 4, &horizon48()).unwrap();
        write_power_trace(&path, &[a.clone(), b.clone()]).unwrap();
        let first = std::fs::read(&path).unwrap();
        let kind_of = |name: &str| {
            if name == "b" {
                WorkloadKind::BatchNoSlo
            } else {
                WorkloadKind::RealTime
            }
        };
        let reloaded = load_power_trace(&path, &horizon48(), kind_of).unwrap();
        assert_eq!(reloaded[0].usage(), a.usage());
        assert_eq!(reloaded[1].usage(), b.usage());
        let path2 = dir.path().join("power2.csv");
        write_power_trace(&path2, &reloaded).unwrap();
        assert_eq!(first, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn synth_power_is_deterministic() {
        let h = horizon48();
        let a = synth_power_trace("rt", WorkloadKind::RealTime, 100.0, 7, &h).unwrap();
        let b = synth_power_trace("rt", WorkloadKind::RealTime, 100.0, 7, &h).unwrap();
        assert_eq!(a.usage(), b.usage());
    }

    #[test]
    fn synth_batch_is_flat() {
        let h = horizon48();
        let t = synth_power_trace("ai", WorkloadKind::BatchNoSlo, 50.0, 1, &h).unwrap();
        let max = t.usage().iter().cloned().fold(f64::MIN, f64::max);
        let min = t.usage().iter().cloned().fold(f64::MAX, f64::min);
        let mean = t.usage().iter().sum::<f64>() / 48.0;
        assert!(max - min <= 0.10 * mean, "spread {} mean {mean}", max - min);
    }

    #[test]
    fn synth_realtime_peaks_in_evening() {
        let h = horizon48();
        let t = synth_power_trace("rt", WorkloadKind::RealTime, 100.0, 1, &h).unwrap();
        let argmax = t
            .usage()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
            % HOURS_PER_DAY;
        assert!((17..=23).contains(&argmax), "argmax hour-of-day {argmax}");
    }

    #[test]
    fn synth_carbon_ratios() {
        let h = horizon48();
        for (scenario, lo, hi) in [
            (CarbonScenario::Today, 0.64, 0.68),
            (CarbonScenario::Future2050, 0.38, 0.42),
        ] {
            let t = synth_carbon_trace(scenario, 11, &h).unwrap();
            let max = t.marginal.iter().cloned().fold(f64::MIN, f64::max);
            let min = t.marginal.iter().cloned().fold(f64::MAX, f64::min);
            let ratio = min / max;
            assert!(ratio >= lo && ratio <= hi, "{scenario:?} ratio {ratio}");
        }
        let a = synth_carbon_trace(CarbonScenario::Today, 5, &h).unwrap();
        let b = synth_carbon_trace(CarbonScenario::Today, 5, &h).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn job_trace_slo_validation() {
        let slo_id = WorkloadId::new("dp", WorkloadKind::BatchSlo, 10.0).unwrap();
        let bad = Job {
            id: "j".into(),
            arrival_hour: 0,
            duration_hours: 1,
            power_np: 1.0,
            slo_hours: Some(3),
        };
        assert!(JobTrace::new(slo_id.clone(), vec![bad], 48).is_err());
        let noslo_id = WorkloadId::new("ai", WorkloadKind::BatchNoSlo, 10.0).unwrap();
        let bad = Job {
            id: "j".into(),
            arrival_hour: 0,
            duration_hours: 1,
            power_np: 1.0,
            slo_hours: Some(1),
        };
        assert!(JobTrace::new(noslo_id, vec![bad], 48).is_err());
    }

    #[test]
    fn jobs_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("jobs.csv");
        let id = WorkloadId::new("dp", WorkloadKind::BatchSlo, 10.0).unwrap();
        let trace = synth_job_trace(&id, 20, 9, &horizon48()).unwrap();
        write_job_trace(&path, &[trace.clone()]).unwrap();
        let reloaded = load_job_trace(&path, &horizon48(), &[id]).unwrap();
        assert_eq!(reloaded[0].jobs(), trace.jobs());
    }
}
