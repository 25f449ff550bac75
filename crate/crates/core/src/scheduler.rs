//! Earliest-due-date batch simulation under time-varying capacity, plus
//! training-data generation for the batch penalty models via random-walk
//! curtailment sampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::penalty::{compute_features, BatchContext, FeatureVector, PenaltyError};
use crate::traces::{Job, JobTrace, PowerTrace, WorkloadKind};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("job {job}: power {power} exceeds peak capacity {peak}; can never run")]
    JobPowerExceedsPeakCapacity {
        job: String,
        power: f64,
        peak: f64,
    },
    #[error("random-walk rejection rate above 99% after {attempts} attempts")]
    SamplingExhausted { attempts: usize },
    #[error("training set needs at least {min} samples, got {got}")]
    TooFewSamples { got: usize, min: usize },
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
}

/// Linear power-to-capacity map: `capacity(p) = max(a*p + b, 0)` processors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityModel {
    /// Processors per np; must be positive.
    pub slope: f64,
    pub intercept: f64,
}

impl CapacityModel {
    pub fn new(slope: f64, intercept: f64) -> Self {
        assert!(slope > 0.0, "capacity slope must be positive");
        Self { slope, intercept }
    }
}

impl Default for CapacityModel {
    fn default() -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

pub fn capacity_from_power(power: &[f64], m: &CapacityModel) -> Vec<f64> {
    power
        .iter()
        .map(|&p| (m.slope * p + m.intercept).max(0.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job_id: String,
    pub start_hour: usize,
    pub completion_hour: usize,
    /// Flow time: completion minus arrival.
    pub waiting_hours: f64,
    /// Waiting beyond what the SLO tolerates.
    pub tardiness_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub per_job: Vec<JobOutcome>,
    pub total_waiting: f64,
    pub total_tardiness: f64,
}

/// Non-preemptive hour-granular earliest-due-date simulation.
///
/// Each hour, pending jobs are considered in (due, arrival, id) order; a job
/// is admitted if its power fits the remaining capacity of every hour it
/// would occupy, otherwise it is skipped and the next candidate is tried.
/// Jobs that never start within the horizon are charged as if started at
/// horizon end.
pub fn edd_schedule(
    jobs: &JobTrace,
    hourly_capacity: &[f64],
) -> Result<ScheduleResult, SchedulerError> {
    let n = hourly_capacity.len();
    let peak = hourly_capacity.iter().cloned().fold(0.0, f64::max);
    for job in jobs.jobs() {
        if job.power_np > peak {
            return Err(SchedulerError::JobPowerExceedsPeakCapacity {
                job: job.id.clone(),
                power: job.power_np,
                peak,
            });
        }
    }
    let mut order: Vec<&Job> = jobs.jobs().iter().collect();
    order.sort_by(|a, b| {
        (a.due(), a.arrival_hour, &a.id).cmp(&(b.due(), b.arrival_hour, &b.id))
    });

    let mut remaining = hourly_capacity.to_vec();
    let mut start_of: Vec<Option<usize>> = vec![None; order.len()];
    for hour in 0..n {
        for (slot, job) in order.iter().enumerate() {
            if start_of[slot].is_some() || job.arrival_hour > hour {
                continue;
            }
            let end = (hour + job.duration_hours).min(n);
            if (hour..end).all(|h| job.power_np <= remaining[h] + 1e-12) {
                for h in hour..end {
                    remaining[h] -= job.power_np;
                }
                start_of[slot] = Some(hour);
            }
        }
    }

    let mut per_job = Vec::with_capacity(order.len());
    let mut total_waiting = 0.0;
    let mut total_tardiness = 0.0;
    for (slot, job) in order.iter().enumerate() {
        let start_hour = start_of[slot].unwrap_or(n);
        let completion_hour = start_hour + job.duration_hours;
        let waiting_hours = (completion_hour - job.arrival_hour) as f64;
        let tardiness_hours = match job.slo_hours {
            Some(slo) => (waiting_hours - slo as f64).max(0.0),
            None => 0.0,
        };
        total_waiting += waiting_hours;
        total_tardiness += tardiness_hours;
        per_job.push(JobOutcome {
            job_id: job.id.clone(),
            start_hour,
            completion_hour,
            waiting_hours,
            tardiness_hours,
        });
    }
    Ok(ScheduleResult {
        per_job,
        total_waiting,
        total_tardiness,
    })
}

/// Gaussian-increment random walks clipped per hour to
/// `[-0.5 E, min(0.5 E, U_t)]`; walks with negative mean are rejected and
/// resampled so every kept sample is net-curtailing.
pub fn random_walk_adjustments(
    base: &PowerTrace,
    n: usize,
    step_sigma: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SchedulerError> {
    assert!(n > 0);
    let entitlement = base.workload.entitlement_np;
    let usage = base.usage();
    let normal = Normal::new(0.0, step_sigma.max(0.0)).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while samples.len() < n {
        attempts += 1;
        if attempts > 100 * n.max(10) && samples.len() * 100 < attempts {
            return Err(SchedulerError::SamplingExhausted { attempts });
        }
        let mut walk = Vec::with_capacity(usage.len());
        let mut level = 0.0;
        for &u in usage {
            level += if step_sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            level = level.clamp(-0.5 * entitlement, (0.5 * entitlement).min(u));
            walk.push(level);
        }
        let mean = walk.iter().sum::<f64>() / walk.len() as f64;
        if mean >= 0.0 {
            samples.push(walk);
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub adjustment: Vec<f64>,
    pub features: FeatureVector,
    /// Added job-hours relative to the unadjusted schedule: tardiness for
    /// deadline workloads, waiting otherwise.
    pub target: f64,
}

/// Samples curtailment walks, reschedules under the reduced power, and emits
/// baseline-relative targets (clamped at zero: the linear-plus-positive-part
/// penalty form cannot represent improvements, and boosting hours above the
/// baseline occasionally speeds the schedule up).
pub fn generate_training_set(
    jobs: &JobTrace,
    base: &PowerTrace,
    m: &CapacityModel,
    n: usize,
    step_sigma: f64,
    seed: u64,
) -> Result<Vec<TrainingSample>, SchedulerError> {
    const MIN_SAMPLES: usize = 50;
    if n < MIN_SAMPLES {
        return Err(SchedulerError::TooFewSamples {
            got: n,
            min: MIN_SAMPLES,
        });
    }
    let usage = base.usage();
    let n_hours = usage.len();
    let jobs_per_hour = jobs.jobs_per_hour(n_hours);
    let slo_hours = match base.workload.kind {
        WorkloadKind::BatchSlo => jobs.min_slo_hours(),
        _ => None,
    };
    let use_tardiness = base.workload.kind == WorkloadKind::BatchSlo;

    let baseline = edd_schedule(jobs, &capacity_from_power(usage, m))?;
    let baseline_metric = if use_tardiness {
        baseline.total_tardiness
    } else {
        baseline.total_waiting
    };

    // First sample is the all-zero adjustment so the fit is anchored at the
    // baseline.
    let mut walks = vec![vec![0.0; n_hours]];
    walks.extend(random_walk_adjustments(base, n - 1, step_sigma, seed)?);

    let ctx = BatchContext {
        usage,
        jobs_per_hour: &jobs_per_hour,
        slo_hours,
    };
    let mut out = Vec::with_capacity(n);
    for d in walks {
        let adjusted: Vec<f64> = usage.iter().zip(&d).map(|(u, dt)| u - dt).collect();
        let result = edd_schedule(jobs, &capacity_from_power(&adjusted, m))?;
        let metric = if use_tardiness {
            result.total_tardiness
        } else {
            result.total_waiting
        };
        let features = compute_features(&d, &ctx)?;
        out.push(TrainingSample {
            adjustment: d,
            features,
            target: (metric - baseline_metric).max(0.0),
        });
    }
    Ok(out)
}
