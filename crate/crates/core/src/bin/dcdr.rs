//! `dcdr` — datacenter demand-response policy engine CLI.
//!
//! Commands: `ingest`, `fit`, `run`, `sweep`, `report`, `project`.
//! Exit codes: 0 success, 2 infeasible, 1 error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use dcdr::config::{
    build_policy_context, fit_all, materialize, resolve_carbon_source, write_training_set_csv,
    ConfigError, FittedModel, Materialized, PolicyGrid, RunConfig,
};
use dcdr::carbon::project_scenarios;
use dcdr::metrics::{breakdown, nondominated, pareto_sweep, write_breakdown_csv, write_frontier_csv};
use dcdr::policies::{check_adjustment, solve_policy, PolicyContext, PolicyOutcome, PolicySpec};
use dcdr::traces::{write_carbon_trace, write_job_trace, write_power_trace};

#[derive(Parser)]
#[command(name = "dcdr", version, about = "Datacenter demand-response policy engine")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve every trace (file or synthetic) and write normalized CSVs.
    Ingest,
    /// Fit penalty models and write model JSONs plus training-set CSVs.
    Fit,
    /// Solve one policy at one hyperparameter; write the outcome JSON and
    /// adjustment CSV. Exit 0 only when the outcome is feasible.
    Run {
        #[arg(long)]
        policy: String,
        #[arg(long)]
        hyperparameter: f64,
    },
    /// Solve every policy over its hyperparameter grid; write the frontier
    /// CSVs.
    Sweep,
    /// Sweep, then emit the per-workload breakdown table at matched levels.
    Report,
    /// Solve one configured policy and reprice its adjustments under
    /// alternative carbon scenarios.
    Project,
}

#[derive(Debug, Serialize)]
struct ErrorReport {
    error: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            let report = ErrorReport {
                error: e.to_string(),
            };
            eprintln!(
                "{}",
                serde_json::to_string(&report).unwrap_or_else(|_| report.error.clone())
            );
            ExitCode::from(1)
        }
    }
}

struct Session {
    config: RunConfig,
    out: PathBuf,
    seed: u64,
}

fn open_session(cli: &Cli) -> Result<Session, ConfigError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError::BadConfig("--config <path> is required".into()))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let seed = config.seed;
    Ok(Session { config, out, seed })
}

fn dispatch(cli: &Cli) -> Result<ExitCode, ConfigError> {
    let session = open_session(cli)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&session),
        Command::Fit => cmd_fit(&session),
        Command::Run {
            policy,
            hyperparameter,
        } => cmd_run(&session, policy, *hyperparameter),
        Command::Sweep => cmd_sweep(&session),
        Command::Report => cmd_report(&session),
        Command::Project => cmd_project(&session),
    }
}

fn cmd_ingest(s: &Session) -> Result<ExitCode, ConfigError> {
    let data = materialize(&s.config, s.seed)?;
    write_power_trace(s.out.join("power.csv"), &data.power)?;
    if !data.jobs.is_empty() {
        let traces: Vec<_> = data.jobs.values().cloned().collect();
        write_job_trace(s.out.join("jobs.csv"), &traces)?;
    }
    write_carbon_trace(s.out.join("carbon.csv"), &data.carbon)?;
    println!(
        "{}",
        serde_json::json!({
            "workloads": data.power.len(),
            "jobs": data.jobs.values().map(|t| t.jobs().len()).sum::<usize>(),
            "hours": data.horizon.n_hours(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(s: &Session) -> Result<ExitCode, ConfigError> {
    let data = materialize(&s.config, s.seed)?;
    let fits = fit_all(&s.config, &data, s.seed)?;
    let models_dir = s.out.join("models");
    let training_dir = s.out.join("training");
    std::fs::create_dir_all(&models_dir)?;
    std::fs::create_dir_all(&training_dir)?;
    for fit in &fits {
        fit.model
            .save(models_dir.join(format!("{}.json", fit.model.workload)))?;
        if !fit.samples.is_empty() {
            write_training_set_csv(&training_dir, &fit.model.workload, &fit.samples)?;
        }
        println!("{}", serde_json::to_string(&fit.model)?);
    }
    Ok(ExitCode::SUCCESS)
}

/// Models for every workload: fitted inline from the config, which is
/// deterministic in (config, seed).
fn resolve_models(s: &Session, data: &Materialized) -> Result<Vec<FittedModel>, ConfigError> {
    Ok(fit_all(&s.config, data, s.seed)?
        .into_iter()
        .map(|f| f.model)
        .collect())
}

fn spec_for(s: &Session, policy: &str, hyperparameter: f64) -> Result<PolicySpec, ConfigError> {
    dcdr::config::spec_for(&s.config, policy, hyperparameter)
}

fn write_adjustment_csv(path: &Path, outcome: &PolicyOutcome) -> Result<(), ConfigError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "workload,hour,adjustment_np")?;
    for (workload, row) in outcome
        .adjustments
        .workloads
        .iter()
        .zip(&outcome.adjustments.d)
    {
        for (hour, d) in row.iter().enumerate() {
            writeln!(f, "{workload},{hour},{d}")?;
        }
    }
    Ok(())
}

fn solve_checked(
    ctx: &PolicyContext,
    spec: &PolicySpec,
) -> Result<PolicyOutcome, ConfigError> {
    let outcome = solve_policy(ctx, spec)?;
    // Re-validate against the adjustment invariants before anything is
    // written; a checker failure is a bug, not an infeasible instance.
    let violations = check_adjustment(ctx, &outcome.adjustments, ctx.solver.feas_tol * 10.0);
    if !violations.is_empty() {
        return Err(ConfigError::BadConfig(format!(
            "solved adjustments violate invariants: {}",
            violations.join("; ")
        )));
    }
    Ok(outcome)
}

fn cmd_run(s: &Session, policy: &str, hyperparameter: f64) -> Result<ExitCode, ConfigError> {
    let data = materialize(&s.config, s.seed)?;
    let models = resolve_models(s, &data)?;
    let ctx = build_policy_context(&s.config, &data, &models)?;
    let spec = spec_for(s, policy, hyperparameter)?;
    let outcome = solve_checked(&ctx, &spec)?;
    let stem = format!("run_{policy}");
    std::fs::write(
        s.out.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    write_adjustment_csv(&s.out.join(format!("{stem}_adjustments.csv")), &outcome)?;
    println!("{}", serde_json::to_string(&outcome)?);
    Ok(if outcome.feasible {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run_sweep(s: &Session) -> Result<(dcdr::metrics::SweepResult, Vec<PolicySpec>), ConfigError> {
    let data = materialize(&s.config, s.seed)?;
    let models = resolve_models(s, &data)?;
    let ctx = build_policy_context(&s.config, &data, &models)?;
    let grid: Vec<PolicySpec> = s
        .config
        .policies
        .iter()
        .flat_map(PolicyGrid::specs)
        .collect();
    let result = pareto_sweep(&ctx, &grid).map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    // Every point that solved must satisfy the independent checker.
    for outcome in &result.outcomes {
        let violations =
            check_adjustment(&ctx, &outcome.adjustments, ctx.solver.feas_tol * 10.0);
        if !violations.is_empty() {
            return Err(ConfigError::BadConfig(format!(
                "{} at {} violates invariants: {}",
                outcome.policy,
                outcome.hyperparameter,
                violations.join("; ")
            )));
        }
    }
    Ok((result, grid))
}

fn write_sweep_outputs(
    s: &Session,
    result: &dcdr::metrics::SweepResult,
    grid: &[PolicySpec],
) -> Result<(), ConfigError> {
    write_frontier_csv(s.out.join("frontier.csv"), &result.points)
        .map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    write_frontier_csv(
        s.out.join("frontier_nondominated.csv"),
        &nondominated(&result.points),
    )
    .map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    let mut errs = std::fs::File::create(s.out.join("sweep_errors.csv"))?;
    writeln!(errs, "policy,hyperparameter,error")?;
    for (idx, msg) in &result.errors {
        writeln!(
            errs,
            "{},{},{}",
            grid[*idx].name(),
            grid[*idx].hyperparameter(),
            msg.replace(',', ";")
        )?;
    }
    std::fs::write(
        s.out.join("sweep_outcomes.json"),
        serde_json::to_string_pretty(&result.outcomes)?,
    )?;
    Ok(())
}

fn cmd_sweep(s: &Session) -> Result<ExitCode, ConfigError> {
    let (result, grid) = run_sweep(s)?;
    write_sweep_outputs(s, &result, &grid)?;
    println!(
        "{}",
        serde_json::json!({
            "points": result.points.len(),
            "errors": result.errors.len(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(s: &Session) -> Result<ExitCode, ConfigError> {
    let (result, grid) = run_sweep(s)?;
    write_sweep_outputs(s, &result, &grid)?;
    let rows = breakdown(
        &result.outcomes,
        s.config.report_match_on,
        &s.config.report_levels,
    );
    write_breakdown_csv(s.out.join("breakdown.csv"), &rows)
        .map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    println!(
        "{}",
        serde_json::json!({
            "points": result.points.len(),
            "breakdown_rows": rows.len(),
            "filled_cells": rows.iter().filter(|r| r.cell.is_some()).count(),
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_project(s: &Session) -> Result<ExitCode, ConfigError> {
    let project = s.config.project.clone().ok_or_else(|| {
        ConfigError::BadConfig("project command needs a \"project\" config section".into())
    })?;
    let data = materialize(&s.config, s.seed)?;
    let models = resolve_models(s, &data)?;
    let ctx = build_policy_context(&s.config, &data, &models)?;
    let spec = spec_for(s, &project.policy, project.hyperparameter)?;
    let outcome = solve_checked(&ctx, &spec)?;
    // The run's own trace goes first so the identity projection is visible.
    let mut scenarios = vec![("base".to_string(), data.carbon.clone())];
    for (name, source) in &project.scenarios {
        scenarios.push((name.clone(), resolve_carbon_source(source, &s.config, s.seed)?));
    }
    let projected = project_scenarios(&outcome.adjustments.as_map(), &data.power, &scenarios)
        .map_err(|e| ConfigError::BadConfig(e.to_string()))?;
    let mut f = std::fs::File::create(s.out.join("projections.csv"))?;
    writeln!(f, "scenario,reduction_pct")?;
    for (name, pct) in &projected {
        writeln!(f, "{name},{pct}")?;
    }
    println!("{}", serde_json::to_string(&projected)?);
    Ok(if outcome.feasible {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
