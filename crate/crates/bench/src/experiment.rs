//! Runs the solver blocks of a config against shared-noise references.

use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;

use mlem::em::{em_solve, em_solve_truth};
use mlem::mlem::{
    batch_mse, expected_cost, match_expected_cost, mlem_solve_batch, theorem_parameters,
    LevelSchedule, TheoremInputs,
};
use mlem::sde::ou::exact_ou_solution;
use mlem::{BrownianPath, CostMode, NoiseDriver, SdeProblem, Trajectory};

use crate::config::{
    load_schedule_file, ExperimentConfig, Method, ProblemSpec, ReferenceKind, ScheduleSpec,
    SolverSpec,
};
use crate::output::ResultRow;

/// `run` takes the config literally; `sweep` fills unspecified grids with
/// the defaults below.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Run,
    Sweep,
}

/// `delta in {-3.0, -2.5, ..., 3.0}`.
pub fn default_shifts() -> Vec<f64> {
    (-6..=6).map(|i| 0.5 * i as f64).collect()
}

/// `C` multipliers `2^{j/2}`, `j = -6..=6`.
pub fn default_scales() -> Vec<f64> {
    (-6..=6).map(|j| (0.5 * j as f64).exp2()).collect()
}

/// Problem, noise paths and reference endpoints shared by all blocks.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub problem: SdeProblem,
    pub paths: Vec<BrownianPath>,
    pub references: Vec<Vec<f64>>,
}

impl Workbench {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let problem = config.build_problem()?;
        let members = config.solver.iter().map(|s| s.batch).max().unwrap_or(1);
        let driver = NoiseDriver::new(config.seed, problem.dim())?;
        let paths = (0..members as u64)
            .map(|m| BrownianPath::new(driver, m, problem.base_steps))
            .collect::<mlem::Result<Vec<_>>>()?;
        let references = paths
            .par_iter()
            .map(|p| reference_endpoint(config, &problem, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            problem,
            paths,
            references,
        })
    }
}

fn reference_endpoint(
    config: &ExperimentConfig,
    problem: &SdeProblem,
    path: &BrownianPath,
) -> Result<Vec<f64>> {
    let n = config.reference.n_steps;
    Ok(match config.reference.kind {
        ReferenceKind::TopLevel => em_solve(problem, problem.ladder.top().k, n, path)?
            .final_state()
            .to_vec(),
        ReferenceKind::Truth => em_solve_truth(problem, n, path)?.final_state().to_vec(),
        ReferenceKind::ExactOu => {
            let ProblemSpec::Ou {
                rate,
                sigma,
                horizon,
                ..
            } = &config.problem
            else {
                bail!("exact_ou reference needs an OU problem");
            };
            let x0 = problem.initial_state(path);
            let eta = problem.horizon / problem.base_steps as f64;
            exact_ou_solution(&x0, *rate, *sigma, *horizon, path, eta)?
        }
    })
}

fn mean_ledger(trajs: &[Trajectory]) -> f64 {
    trajs.iter().map(|t| t.ledger.total()).sum::<f64>() / trajs.len() as f64
}

fn em_rows(bench: &Workbench, spec: &SolverSpec, mode: RunMode) -> Result<Vec<ResultRow>> {
    let problem = &bench.problem;
    let levels: Vec<i64> = match (spec.levels.is_empty(), mode) {
        (false, _) => spec.levels.clone(),
        (true, RunMode::Run) => vec![problem.ladder.top().k],
        (true, RunMode::Sweep) => problem.ladder.levels().iter().map(|l| l.k).collect(),
    };
    let paths = &bench.paths[..spec.batch];
    let refs = &bench.references[..spec.batch];
    let mut rows = Vec::new();
    for &k in &levels {
        let cost = problem.ladder.cost_units(k)?;
        for &n in &spec.n_steps {
            let start = Instant::now();
            let trajs = paths
                .par_iter()
                .map(|p| em_solve(problem, k, n, p))
                .collect::<mlem::Result<Vec<_>>>()?;
            rows.push(ResultRow {
                method: "em".into(),
                schedule: format!("level:{k}"),
                eps_target: spec.eps_target,
                mse: batch_mse(&trajs, refs),
                expected_cost: n as f64 * cost,
                ledger_cost: mean_ledger(&trajs),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                n_steps: n,
                trial: 0,
                plan_seed: None,
            });
        }
    }
    Ok(rows)
}

/// A concrete ML-EM schedule with its label and (possibly reduced) problem.
pub struct ResolvedSchedule {
    pub label: String,
    pub schedule: LevelSchedule,
    pub problem: SdeProblem,
}

/// Expands a schedule spec into one entry per scale or shift for step count
/// `n`, or one entry per schedule of the block named by `match_solver`.
pub fn resolve_schedules(
    bench: &Workbench,
    spec: &SolverSpec,
    n: usize,
    mode: RunMode,
) -> Result<Vec<ResolvedSchedule>> {
    let (label, base, problem) = base_schedule(bench, spec, n)?;
    if let Some(j) = spec.match_solver {
        let other = bench
            .config
            .solver
            .get(j)
            .context("match_solver index out of range")?;
        let other_mode: CostMode = other.cost_mode.into();
        let mode_here: CostMode = spec.cost_mode.into();
        return resolve_schedules(bench, other, n, mode)?
            .into_iter()
            .map(|target| {
                let cost = expected_cost(&target.problem, &target.schedule, n, other_mode);
                let schedule = match_expected_cost(&problem, &base, n, mode_here, cost)
                    .with_context(|| format!("matching {label} to {}", target.label))?;
                Ok(ResolvedSchedule {
                    label: format!("{label}@{}", target.label),
                    schedule,
                    problem: problem.clone(),
                })
            })
            .collect();
    }
    if let LevelSchedule::Learned(params) = &base {
        let shifts = match (spec.shifts.is_empty(), mode) {
            (false, _) => spec.shifts.clone(),
            (true, RunMode::Run) => vec![0.0],
            (true, RunMode::Sweep) => default_shifts(),
        };
        return Ok(shifts
            .iter()
            .map(|&d| ResolvedSchedule {
                label: if d == 0.0 {
                    label.clone()
                } else {
                    format!("{label}:{d:+}")
                },
                schedule: LevelSchedule::Learned(params.shifted(d)),
                problem: problem.clone(),
            })
            .collect());
    }
    let scales = match (spec.scales.is_empty(), mode) {
        (false, _) => spec.scales.clone(),
        (true, RunMode::Run) => vec![1.0],
        (true, RunMode::Sweep) => default_scales(),
    };
    Ok(scales
        .iter()
        .map(|&s| ResolvedSchedule {
            label: if s == 1.0 {
                label.clone()
            } else {
                format!("{label}:x{s}")
            },
            schedule: base.scaled(s),
            problem: problem.clone(),
        })
        .collect())
}

fn base_schedule(
    bench: &Workbench,
    spec: &SolverSpec,
    n: usize,
) -> Result<(String, LevelSchedule, SdeProblem)> {
    let problem = &bench.problem;
    let sched = spec.schedule.as_ref().context("ML-EM needs a schedule")?;
    Ok(match sched {
        ScheduleSpec::Theorem { kmax_rule } => {
            let ladder = &problem.ladder;
            let inputs = TheoremInputs {
                epsilon: spec
                    .eps_target
                    .context("theorem schedule needs eps_target")?,
                lipschitz: ladder.lipschitz_bound(),
                horizon: problem.horizon,
                eta: problem.step_size(n),
                prefactor: ladder.prefactor(),
                gamma: ladder.gamma(),
            };
            let params = theorem_parameters(&inputs, (*kmax_rule).into())?;
            let sub = ladder.subset(&params.levels()).with_context(|| {
                format!(
                    "ladder does not cover theorem levels {}..={}",
                    params.k_min, params.k_max
                )
            })?;
            (
                "theorem".into(),
                params.schedule(),
                problem.with_ladder(std::sync::Arc::new(sub)),
            )
        }
        ScheduleSpec::InverseCost { constant } => (
            "inverse_cost".into(),
            LevelSchedule::inverse_cost(*constant, &problem.ladder),
            problem.clone(),
        ),
        ScheduleSpec::PowerLaw { constant, exponent } => (
            "power_law".into(),
            LevelSchedule::PowerLaw {
                constant: *constant,
                exponent: *exponent,
            },
            problem.clone(),
        ),
        ScheduleSpec::Learned { file } => {
            let params = load_schedule_file(file)?;
            let ladder_levels: Vec<i64> = problem.ladder.levels().iter().map(|l| l.k).collect();
            ensure!(
                params.levels == ladder_levels,
                "schedule file levels {:?} differ from ladder {:?}",
                params.levels,
                ladder_levels
            );
            (
                "learned".into(),
                LevelSchedule::Learned(params),
                problem.clone(),
            )
        }
    })
}

fn mlem_rows(bench: &Workbench, spec: &SolverSpec, mode: RunMode) -> Result<Vec<ResultRow>> {
    let paths = &bench.paths[..spec.batch];
    let refs = &bench.references[..spec.batch];
    let cost_mode: CostMode = spec.cost_mode.into();
    let mut rows = Vec::new();
    for &n in &spec.n_steps {
        for resolved in resolve_schedules(bench, spec, n, mode)? {
            let expected = expected_cost(&resolved.problem, &resolved.schedule, n, cost_mode);
            for trial in 0..spec.trials {
                let seed = spec.plan_seed + trial as u64;
                let start = Instant::now();
                let trajs = mlem_solve_batch(
                    &resolved.problem,
                    &resolved.schedule,
                    n,
                    paths,
                    seed,
                    spec.shared_bernoulli,
                    cost_mode,
                )?;
                rows.push(ResultRow {
                    method: "mlem".into(),
                    schedule: resolved.label.clone(),
                    eps_target: spec.eps_target,
                    mse: batch_mse(&trajs, refs),
                    expected_cost: expected,
                    ledger_cost: mean_ledger(&trajs),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                    n_steps: n,
                    trial,
                    plan_seed: Some(seed),
                });
            }
        }
    }
    Ok(rows)
}

/// Rows for every solver block in config order; deterministic given seeds
/// apart from `wall_ms`.
pub fn run_experiment(config: &ExperimentConfig, mode: RunMode) -> Result<Vec<ResultRow>> {
    ensure!(!config.solver.is_empty(), "config has no [[solver]] blocks");
    let bench = Workbench::new(config)?;
    let mut rows = Vec::new();
    for spec in &config.solver {
        rows.extend(match spec.method {
            Method::Em => em_rows(&bench, spec, mode)?,
            Method::Mlem => mlem_rows(&bench, spec, mode)?,
        });
    }
    Ok(rows)
}
