//! Fairness entropy, Pareto-frontier sweeps, and per-workload breakdown
//! tables.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policies::{solve_policy, PolicyContext, PolicyOutcome, PolicySpec};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("all values are zero; entropy undefined")]
    AllZero,
    #[error("negative value for workload {0}")]
    NegativeValue(String),
    #[error("workload {0} missing an entitlement")]
    MissingEntitlement(String),
    #[error("empty hyperparameter grid")]
    EmptyGrid,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Shannon entropy (bits) of the entitlement-scaled distribution
/// `p_i = (values_i / E_i) / sum_j (values_j / E_j)`. Log base 2, so four
/// workloads sharing proportionally to entitlement score exactly 2.
pub fn fairness_entropy(
    values: &BTreeMap<String, f64>,
    entitlements: &BTreeMap<String, f64>,
) -> Result<f64, MetricsError> {
    let mut q = Vec::with_capacity(values.len());
    for (name, &v) in values {
        if v < 0.0 {
            return Err(MetricsError::NegativeValue(name.clone()));
        }
        let e = entitlements
            .get(name)
            .ok_or_else(|| MetricsError::MissingEntitlement(name.clone()))?;
        q.push(v / e);
    }
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(q.iter()
        .map(|&qi| {
            let p = qi / total;
            if p > 0.0 {
                -p * p.log2()
            } else {
                0.0
            }
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub policy: String,
    pub hyperparameter: f64,
    /// May be negative; never clamped.
    pub carbon_reduction_pct: f64,
    pub total_penalty_pct: f64,
    pub feasible: bool,
}

impl FrontierPoint {
    fn from_outcome(o: &PolicyOutcome) -> Self {
        Self {
            policy: o.policy.clone(),
            hyperparameter: o.hyperparameter,
            carbon_reduction_pct: o.carbon.reduction_pct,
            total_penalty_pct: o.total_penalty_pct,
            feasible: o.feasible,
        }
    }
}

/// `a` dominates `b` when it has at least the carbon reduction for at most
/// the penalty, strictly better in one.
fn dominates(a: &FrontierPoint, b: &FrontierPoint) -> bool {
    a.carbon_reduction_pct >= b.carbon_reduction_pct
        && a.total_penalty_pct <= b.total_penalty_pct
        && (a.carbon_reduction_pct > b.carbon_reduction_pct
            || a.total_penalty_pct < b.total_penalty_pct)
}

/// Feasible points not dominated by any other feasible point, in input order.
pub fn nondominated(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    points
        .iter()
        .filter(|p| {
            p.feasible
                && !points
                    .iter()
                    .any(|q| q.feasible && !std::ptr::eq(*p, q) && dominates(q, p))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Default, Serialize)]
pub struct SweepResult {
    pub points: Vec<FrontierPoint>,
    pub outcomes: Vec<PolicyOutcome>,
    /// (grid index, error message) for solves that failed outright; the
    /// sweep continues past them.
    pub errors: Vec<(usize, String)>,
}

/// One solve per spec; failures are recorded, not fatal.
pub fn pareto_sweep(ctx: &PolicyContext, grid: &[PolicySpec]) -> Result<SweepResult, MetricsError> {
    if grid.is_empty() {
        return Err(MetricsError::EmptyGrid);
    }
    let mut result = SweepResult::default();
    for (idx, spec) in grid.iter().enumerate() {
        match solve_policy(ctx, spec) {
            Ok(outcome) => {
                result.points.push(FrontierPoint::from_outcome(&outcome));
                result.outcomes.push(outcome);
            }
            Err(e) => result.errors.push((idx, e.to_string())),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOn {
    CarbonPct,
    PenaltyPct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub hyperparameter: f64,
    pub matched_value_pct: f64,
    pub per_workload_penalty: BTreeMap<String, f64>,
    pub per_workload_carbon_kg: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub policy: String,
    pub level_pct: f64,
    /// None when no sweep point lands within 10% relative of the level —
    /// the policy cannot reach it.
    pub cell: Option<BreakdownCell>,
}

/// Per-workload penalty and carbon columns at matched levels. A policy/level
/// cell is filled from the sweep outcome whose matched metric is nearest the
/// level and within 10% relative; otherwise the cell is explicitly absent.
pub fn breakdown(
    outcomes: &[PolicyOutcome],
    match_on: MatchOn,
    levels: &[f64],
) -> Vec<BreakdownRow> {
    let mut policies: Vec<String> = Vec::new();
    for o in outcomes {
        if !policies.contains(&o.policy) {
            policies.push(o.policy.clone());
        }
    }
    let metric = |o: &PolicyOutcome| match match_on {
        MatchOn::CarbonPct => o.carbon.reduction_pct,
        MatchOn::PenaltyPct => o.total_penalty_pct,
    };
    let mut rows = Vec::new();
    for policy in &policies {
        for &level in levels {
            let best = outcomes
                .iter()
                .filter(|o| &o.policy == policy && o.feasible)
                .map(|o| (o, (metric(o) - level).abs()))
                .filter(|(_, gap)| *gap <= 0.10 * level)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let cell = best.map(|(o, _)| BreakdownCell {
                hyperparameter: o.hyperparameter,
                matched_value_pct: metric(o),
                per_workload_penalty: o.per_workload_penalty.clone(),
                per_workload_carbon_kg: o.carbon.per_workload_reduction_kg.clone(),
            });
            rows.push(BreakdownRow {
                policy: policy.clone(),
                level_pct: level,
                cell,
            });
        }
    }
    rows
}

/// Plot-ready frontier CSV: one row per sweep point.
pub fn write_frontier_csv(path: impl AsRef<Path>, points: &[FrontierPoint]) -> Result<(), MetricsError> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(
        f,
        "policy,hyperparameter,carbon_reduction_pct,total_penalty_pct,feasible"
    )?;
    for p in points {
        writeln!(
            f,
            "{},{},{},{},{}",
            p.policy, p.hyperparameter, p.carbon_reduction_pct, p.total_penalty_pct, p.feasible
        )?;
    }
    Ok(())
}

/// Breakdown CSV: one row per (policy, level, workload); absent cells emit a
/// single row with empty value columns.
pub fn write_breakdown_csv(path: impl AsRef<Path>, rows: &[BreakdownRow]) -> Result<(), MetricsError> {
    let mut f = std::fs::File::create(path.as_ref())?;
    writeln!(
        f,
        "policy,level_pct,workload,penalty_np,carbon_reduction_kg,matched_value_pct"
    )?;
    for row in rows {
        match &row.cell {
            Some(cell) => {
                for (workload, penalty) in &cell.per_workload_penalty {
                    let carbon = cell.per_workload_carbon_kg.get(workload).unwrap_or(&0.0);
                    writeln!(
                        f,
                        "{},{},{},{},{},{}",
                        row.policy, row.level_pct, workload, penalty, carbon, cell.matched_value_pct
                    )?;
                }
            }
            None => {
                writeln!(f, "{},{},,,,", row.policy, row.level_pct)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn entropy_examples() {
        let e = map(&[("a", 10.0), ("b", 20.0), ("c", 30.0), ("d", 40.0)]);
        // Values proportional to entitlements -> uniform p -> exactly 2 bits.
        let v = map(&[("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 4.0)]);
        assert!((fairness_entropy(&v, &e).unwrap() - 2.0).abs() <= 1e-12);
        // One workload bears everything -> 0.
        let v = map(&[("a", 5.0), ("b", 0.0), ("c", 0.0), ("d", 0.0)]);
        assert_eq!(fairness_entropy(&v, &e).unwrap(), 0.0);
        // Half-half over equal entitlements -> 1 bit.
        let e4 = map(&[("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]);
        let v = map(&[("a", 2.0), ("b", 2.0), ("c", 0.0), ("d", 0.0)]);
        assert_relative_eq!(fairness_entropy(&v, &e4).unwrap(), 1.0);
        // All-zero is an error, not 0.
        let v = map(&[("a", 0.0), ("b", 0.0)]);
        assert!(matches!(
            fairness_entropy(&v, &e),
            Err(MetricsError::AllZero)
        ));
    }

    proptest! {
        #[test]
        fn entropy_scale_invariant(
            vals in proptest::collection::vec(0.0f64..10.0, 4),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(vals.iter().sum::<f64>() > 0.0);
            let names = ["a", "b", "c", "d"];
            let e = map(&[("a", 3.0), ("b", 1.0), ("c", 7.0), ("d", 2.0)]);
            let v: BTreeMap<String, f64> = names
                .iter()
                .zip(&vals)
                .map(|(n, &x)| (n.to_string(), x))
                .collect();
            let scaled: BTreeMap<String, f64> =
                v.iter().map(|(k, &x)| (k.clone(), x * scale)).collect();
            let h1 = fairness_entropy(&v, &e).unwrap();
            let h2 = fairness_entropy(&scaled, &e).unwrap();
            prop_assert!((h1 - h2).abs() < 1e-9);
            prop_assert!(h1 >= 0.0 && h1 <= 2.0 + 1e-12);
        }
    }

    fn point(policy: &str, carbon: f64, penalty: f64, feasible: bool) -> FrontierPoint {
        FrontierPoint {
            policy: policy.into(),
            hyperparameter: 1.0,
            carbon_reduction_pct: carbon,
            total_penalty_pct: penalty,
            feasible,
        }
    }

    #[test]
    fn nondominated_filter() {
        // Single point is trivially nondominated.
        let single = vec![point("p", 1.0, 1.0, true)];
        assert_eq!(nondominated(&single).len(), 1);
        // Dominated point (less carbon, more penalty) is dropped.
        let pts = vec![
            point("p", 5.0, 1.0, true),
            point("p", 4.0, 2.0, true),
            point("p", 6.0, 3.0, true),
        ];
        let nd = nondominated(&pts);
        assert_eq!(nd.len(), 2);
        assert!(nd.iter().all(|p| p.carbon_reduction_pct != 4.0));
        // Infeasible points never appear and never dominate.
        let pts = vec![point("p", 10.0, 0.0, false), point("p", 1.0, 1.0, true)];
        let nd = nondominated(&pts);
        assert_eq!(nd.len(), 1);
        assert!(nd[0].feasible);
        // The result is mutually nondominated.
        for a in &nd {
            for b in &nd {
                assert!(std::ptr::eq(a, b) || !dominates(a, b));
            }
        }
    }

    #[test]
    fn breakdown_matching_and_absence() {
        use crate::carbon::CarbonReport;
        use crate::policies::{AdjustmentMatrix, SolveDiagnostics};
        let outcome = |policy: &str, hyper: f64, penalty_pct: f64| PolicyOutcome {
            policy: policy.into(),
            hyperparameter: hyper,
            adjustments: AdjustmentMatrix {
                workloads: vec!["w".into()],
                d: vec![vec![0.0]],
            },
            per_workload_penalty: map(&[("w", penalty_pct)]),
            total_penalty_pct: penalty_pct,
            carbon: CarbonReport {
                baseline_kg: 100.0,
                reduction_kg: 1.0,
                reduction_pct: 1.0,
                per_workload_reduction_kg: map(&[("w", 1.0)]),
            },
            feasible: true,
            diagnostics: SolveDiagnostics::default(),
        };
        let outcomes = vec![
            outcome("b1", 0.9, 2.05),
            outcome("b1", 0.8, 4.0),
            outcome("cr1", 1.0, 1.99),
        ];
        let rows = breakdown(&outcomes, MatchOn::PenaltyPct, &[2.0, 8.0]);
        // b1 matches 2% via the 2.05 point; 8% is absent (4.0 is 50% off).
        let b1_2 = rows
            .iter()
            .find(|r| r.policy == "b1" && r.level_pct == 2.0)
            .unwrap();
        assert_eq!(b1_2.cell.as_ref().unwrap().hyperparameter, 0.9);
        let b1_8 = rows
            .iter()
            .find(|r| r.policy == "b1" && r.level_pct == 8.0)
            .unwrap();
        assert!(b1_8.cell.is_none());
        // cr1 matches 2% with its nearest point.
        let cr1_2 = rows
            .iter()
            .find(|r| r.policy == "cr1" && r.level_pct == 2.0)
            .unwrap();
        assert_relative_eq!(cr1_2.cell.as_ref().unwrap().matched_value_pct, 1.99);
    }

    #[test]
    fn empty_grid_is_an_error() {
        use crate::solver::SolverOptions;
        use crate::traces::CarbonTrace;
        let ctx = PolicyContext::new(
            vec![],
            CarbonTrace::new(vec![100.0], vec![100.0], 1.0).unwrap(),
            SolverOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            pareto_sweep(&ctx, &[]),
            Err(MetricsError::EmptyGrid)
        ));
    }
}
