//! Operational-carbon accounting: baseline footprint, reduction from an
//! adjustment matrix, and projection of a fixed adjustment onto alternative
//! grid scenarios.
//!
//! Reductions are priced with *marginal* intensity (the correct signal for
//! demand deltas); the baseline total uses *average* intensity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traces::{CarbonTrace, PowerTrace};

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("horizon mismatch: adjustments cover {got} hours, carbon trace {expected}")]
    HorizonMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonReport {
    pub baseline_kg: f64,
    /// May be negative when adjustments increase carbon; never clamped.
    pub reduction_kg: f64,
    pub reduction_pct: f64,
    pub per_workload_reduction_kg: BTreeMap<String, f64>,
}

/// `reduction_kg = sum_t marginal_t * np_to_mw * sum_i d_{i,t}`, decomposed
/// per workload. `adjustments` maps workload name to its hourly vector.
pub fn carbon_reduction(
    adjustments: &BTreeMap<String, Vec<f64>>,
    carbon: &CarbonTrace,
    baseline_kg: f64,
) -> Result<CarbonReport, CarbonError> {
    let n = carbon.n_hours();
    let mut per_workload = BTreeMap::new();
    let mut reduction_kg = 0.0;
    for (name, d) in adjustments {
        if d.len() != n {
            return Err(CarbonError::HorizonMismatch {
                got: d.len(),
                expected: n,
            });
        }
        let r: f64 = d
            .iter()
            .zip(&carbon.marginal)
            .map(|(&dt, &m)| m * carbon.np_to_mw * dt)
            .sum();
        reduction_kg += r;
        per_workload.insert(name.clone(), r);
    }
    let reduction_pct = if baseline_kg != 0.0 {
        100.0 * reduction_kg / baseline_kg
    } else {
        0.0
    };
    Ok(CarbonReport {
        baseline_kg,
        reduction_kg,
        reduction_pct,
        per_workload_reduction_kg: per_workload,
    })
}

/// `sum_t average_t * np_to_mw * sum_i U_{i,t}` — the unadjusted footprint.
pub fn baseline_carbon(
    traces: &[PowerTrace],
    carbon: &CarbonTrace,
) -> Result<f64, CarbonError> {
    let n = carbon.n_hours();
    let mut total = 0.0;
    for trace in traces {
        if trace.n_hours() != n {
            return Err(CarbonError::HorizonMismatch {
                got: trace.n_hours(),
                expected: n,
            });
        }
        total += trace
            .usage()
            .iter()
            .zip(&carbon.average)
            .map(|(&u, &a)| a * carbon.np_to_mw * u)
            .sum::<f64>();
    }
    Ok(total)
}

/// Holds the adjustment matrix fixed and reprices it under each scenario's
/// intensities, normalizing by that scenario's own baseline. No
/// re-optimization happens here.
pub fn project_scenarios(
    adjustments: &BTreeMap<String, Vec<f64>>,
    traces: &[PowerTrace],
    scenarios: &[(String, CarbonTrace)],
) -> Result<Vec<(String, f64)>, CarbonError> {
    let mut out = Vec::with_capacity(scenarios.len());
    for (name, carbon) in scenarios {
        let baseline = baseline_carbon(traces, carbon)?;
        let report = carbon_reduction(adjustments, carbon, baseline)?;
        out.push((name.clone(), report.reduction_pct));
    }
    Ok(out)
}
