//! Orchestration of the benchmark commands over the solver library:
//! `solve` (one method, one problem), `landscape` (initial-guess loss
//! sweep), `bench` (paired deep-GA / deep-BSDE traces on one problem)
//! and `oracle` (reference value only).

use serde::Serialize;

use crate::config::{Method, ProblemKind, ReferenceSpec, ResolvedConfig, RunConfig};
use crate::deep_bsde::{initial_loss_sweep, train_deep_bsde, SweepTable};
use crate::deep_ga::{run_deep_ga, GaPopRow};
use crate::error::{Result, SolverError};
use crate::oracles::{bs_linear_closed_form, fixture, hjb_exact_mc, OracleResult};
use crate::problems::ProblemSpec;
use crate::report::{Reference, RunClock, RunReport, TraceRow};
use crate::rollout::SolverParams;

/// Output of a `solve` run.
pub struct SolveArtifacts {
    pub report: RunReport,
    /// Per-population trace, present for deep-GA runs.
    pub ga_rows: Option<Vec<GaPopRow>>,
    pub params: SolverParams,
    pub resolved: ResolvedConfig,
}

/// Output of a `landscape` run.
pub struct LandscapeArtifacts {
    pub report: RunReport,
    pub table: SweepTable,
    pub resolved: ResolvedConfig,
}

/// Time-matched comparison of the two methods in a `bench` run.
#[derive(Clone, Debug, Serialize)]
pub struct BenchComparison {
    /// The common horizon: the smaller of the two total run times.
    pub shared_horizon_seconds: f64,
    pub ga_loss_at_horizon: f64,
    pub bsde_loss_at_horizon: f64,
    pub ga_final_u0: f64,
    pub bsde_final_u0: f64,
}

/// Output of a `bench` run: paired traces plus the comparison summary.
pub struct BenchArtifacts {
    pub ga: RunReport,
    pub bsde: RunReport,
    pub ga_rows: Vec<GaPopRow>,
    pub comparison: BenchComparison,
    pub resolved: ResolvedConfig,
}

fn resolve_reference(
    spec: &Option<ReferenceSpec>,
    problem: &ProblemSpec,
    resolved: &ResolvedConfig,
) -> Result<Option<Reference>> {
    let Some(spec) = spec else { return Ok(None) };
    let r = match spec {
        ReferenceSpec::Fixture { label } => Reference {
            value: fixture(label).ok_or_else(|| {
                SolverError::Config(format!("unknown fixture label: {label}"))
            })?,
            source: format!("fixture:{label}"),
        },
        ReferenceSpec::HjbMc { n_samples } => {
            let params = resolved
                .hjb
                .clone()
                .ok_or_else(|| SolverError::Config("hjb-mc reference on a non-HJB problem".into()))?;
            let o = hjb_exact_mc(
                &params,
                problem.dim,
                problem.horizon,
                &problem.x0,
                *n_samples,
                resolved.seed,
            )?;
            Reference {
                value: o.value,
                source: format!("hjb-mc:n={},se={:.2e}", o.n_samples, o.std_error),
            }
        }
        ReferenceSpec::BsClosedForm => {
            let params = resolved.bs.clone().ok_or_else(|| {
                SolverError::Config("bs-closed-form reference on a non-BS problem".into())
            })?;
            Reference {
                value: bs_linear_closed_form(&params, problem.horizon, resolved.x0)?,
                source: "bs-linear-closed-form".into(),
            }
        }
        ReferenceSpec::Value { value, source } => Reference {
            value: *value,
            source: source.clone().unwrap_or_else(|| "config".into()),
        },
    };
    Ok(Some(r))
}

fn make_report(
    resolved: &ResolvedConfig,
    rows: Vec<TraceRow>,
    final_u0: f64,
    reference: Option<Reference>,
    total_wall_seconds: f64,
    negative_coords: usize,
) -> Result<RunReport> {
    let mut report = RunReport {
        config_echo: serde_json::to_value(resolved)?,
        rows,
        final_u0,
        reference: None,
        abs_pct_error: None,
        total_wall_seconds,
        seed: resolved.seed,
        negative_coords,
    };
    report.set_reference(reference);
    Ok(report)
}

/// Dispatches to the configured solver.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveArtifacts> {
    let mut resolved = cfg.resolve("solve", true)?;
    let method = resolved.method.ok_or_else(|| {
        SolverError::Config("solve needs `method`: \"deep-bsde\" or \"deep-ga\"".into())
    })?;
    let problem = resolved.build_problem()?;

    match method {
        Method::DeepBsde => {
            resolved.retain_sections(true, false, false, false);
            let bcfg = resolved.deep_bsde.clone().expect("retained");
            let mut clock = RunClock::start(resolved.timing);
            let out = train_deep_bsde(&problem, &bcfg, &resolved.network, &mut clock)?;
            let total = clock.now();
            let reference = resolve_reference(&resolved.reference, &problem, &resolved)?;
            let report = make_report(
                &resolved,
                out.rows,
                out.final_u0,
                reference,
                total,
                out.negative_coords,
            )?;
            Ok(SolveArtifacts {
                report,
                ga_rows: None,
                params: out.params,
                resolved,
            })
        }
        Method::DeepGa => {
            resolved.retain_sections(false, true, false, false);
            let gcfg = resolved.deep_ga.clone().expect("retained");
            let mut clock = RunClock::start(resolved.timing);
            let out = run_deep_ga(&problem, &gcfg, &resolved.network, &mut clock)?;
            let total = clock.now();
            let reference = resolve_reference(&resolved.reference, &problem, &resolved)?;
            let report = make_report(
                &resolved,
                out.rows,
                out.final_u0,
                reference,
                total,
                out.negative_coords,
            )?;
            Ok(SolveArtifacts {
                report,
                ga_rows: Some(out.pop_rows),
                params: out.params,
                resolved,
            })
        }
        Method::Oracle | Method::Landscape => Err(SolverError::Config(
            "solve dispatches to deep-bsde or deep-ga; use the oracle/landscape commands".into(),
        )),
    }
}

/// Runs the initial-guess loss sweep and reports one row per
/// (guess, run) cell; the final estimate is the argmin guess.
pub fn run_landscape(cfg: &RunConfig) -> Result<LandscapeArtifacts> {
    let mut resolved = cfg.resolve("landscape", false)?;
    resolved.retain_sections(false, false, true, false);
    let problem = resolved.build_problem()?;
    let lcfg = resolved.landscape.clone().expect("retained");

    let mut clock = RunClock::start(resolved.timing);
    let table = initial_loss_sweep(
        &problem,
        &lcfg.guesses,
        lcfg.runs,
        resolved.seed,
        lcfg.eval_batch,
        &resolved.network,
    )?;
    let cell_work = (lcfg.eval_batch * problem.n_steps) as f64;

    let mut rows = Vec::with_capacity(lcfg.guesses.len() * lcfg.runs);
    for (gi, guess) in table.guesses.iter().enumerate() {
        for run in 0..lcfg.runs {
            clock.add_work(cell_work);
            rows.push(TraceRow {
                phase: "sweep".into(),
                iteration: run as u64,
                wall_seconds: clock.row_time(),
                u0_estimate: *guess,
                loss: table.losses[[gi, run]],
            });
        }
    }

    let best = table.guesses[table.argmin_mean()];
    let total = clock.now();
    let reference = resolve_reference(&resolved.reference, &problem, &resolved)?;
    let report = make_report(&resolved, rows, best, reference, total, 0)?;
    Ok(LandscapeArtifacts {
        report,
        table,
        resolved,
    })
}

fn loss_at_or_before(rows: &[TraceRow], t: f64) -> f64 {
    rows.iter()
        .take_while(|r| r.wall_seconds <= t)
        .last()
        .or_else(|| rows.first())
        .map(|r| r.loss)
        .unwrap_or(f64::NAN)
}

/// Runs both methods on the same problem with the same seed and emits
/// paired traces plus a loss comparison at the shared time horizon.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchArtifacts> {
    let mut resolved = cfg.resolve("bench", true)?;
    resolved.retain_sections(true, true, false, false);
    let problem = resolved.build_problem()?;
    let reference = resolve_reference(&resolved.reference, &problem, &resolved)?;

    let gcfg = resolved.deep_ga.clone().expect("retained");
    let mut ga_clock = RunClock::start(resolved.timing);
    let ga_out = run_deep_ga(&problem, &gcfg, &resolved.network, &mut ga_clock)?;
    let ga_total = ga_clock.now();

    let bcfg = resolved.deep_bsde.clone().expect("retained");
    let mut bsde_clock = RunClock::start(resolved.timing);
    let bsde_out = train_deep_bsde(&problem, &bcfg, &resolved.network, &mut bsde_clock)?;
    let bsde_total = bsde_clock.now();

    let relabel = |mut rows: Vec<TraceRow>, phase: &str| -> Vec<TraceRow> {
        for r in rows.iter_mut() {
            r.phase = phase.to_string();
        }
        rows
    };
    let ga_rows_trace = relabel(ga_out.rows, "deep-ga");
    let bsde_rows_trace = relabel(bsde_out.rows, "deep-bsde");

    let horizon = ga_total.min(bsde_total);
    let comparison = BenchComparison {
        shared_horizon_seconds: horizon,
        ga_loss_at_horizon: loss_at_or_before(&ga_rows_trace, horizon),
        bsde_loss_at_horizon: loss_at_or_before(&bsde_rows_trace, horizon),
        ga_final_u0: ga_out.final_u0,
        bsde_final_u0: bsde_out.final_u0,
    };

    let ga_report = make_report(
        &resolved,
        ga_rows_trace,
        ga_out.final_u0,
        reference.clone(),
        ga_total,
        ga_out.negative_coords,
    )?;
    let bsde_report = make_report(
        &resolved,
        bsde_rows_trace,
        bsde_out.final_u0,
        reference,
        bsde_total,
        bsde_out.negative_coords,
    )?;

    Ok(BenchArtifacts {
        ga: ga_report,
        bsde: bsde_report,
        ga_rows: ga_out.pop_rows,
        comparison,
        resolved,
    })
}

/// Evaluates the reference oracle for the configured problem.
pub fn run_oracle(cfg: &RunConfig) -> Result<(OracleResult, ResolvedConfig)> {
    let mut resolved = cfg.resolve("oracle", false)?;
    resolved.retain_sections(false, false, false, true);
    let problem = resolved.build_problem()?;
    let ocfg = resolved.oracle.clone().expect("retained");

    let result = match resolved.problem_kind {
        ProblemKind::Hjb => hjb_exact_mc(
            &resolved.hjb.clone().expect("hjb params"),
            problem.dim,
            problem.horizon,
            &problem.x0,
            ocfg.n_samples,
            resolved.seed,
        )?,
        ProblemKind::Bs => {
            let params = resolved.bs.clone().expect("bs params");
            let value = bs_linear_closed_form(&params, problem.horizon, resolved.x0)
                .map_err(|_| {
                    SolverError::Config(
                        "no independent oracle for the nonlinear default-risk equation; \
                         use a fixture reference, or set gamma_high = gamma_low for the \
                         linearized closed form"
                            .into(),
                    )
                })?;
            OracleResult {
                value,
                std_error: 0.0,
                n_samples: 0,
                method: "bs-linear-closed-form".into(),
            }
        }
    };
    Ok((result, resolved))
}
