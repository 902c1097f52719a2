//! Multilevel Euler-Maruyama.
//!
//! Each step replaces the drift by the randomized telescoping sum
//!
//! ```text
//! y_{t+eta} = y_t + eta * sum_k (B^k / p_k) [f^k(y_t) - f^{k-1}(y_t)] + sqrt(eta) sigma_t Z_t
//! ```
//!
//! with independent `B^k ~ Bernoulli(p_k(t))`, so that only a few steps pay
//! for the expensive top levels while the conditional mean is still the
//! Euler-Maruyama step with `f^{k_max}`.

pub mod plan;
pub mod schedule;
pub mod theorem;

use rayon::prelude::*;

use crate::autodiff::{Dual, Scalar};
use crate::error::{invalid, Error, Result};
use crate::sde::drift::Drift;
use crate::sde::ladder::DriftLadder;
use crate::sde::noise::{hash_words, BrownianPath};
use crate::sde::{squared_distance, CostLedger, CostMode, NoiseSchedule, SdeProblem, Trajectory};

pub use plan::BernoulliPlan;
pub use schedule::LevelSchedule;
pub use theorem::{theorem_parameters, KmaxRule, TheoremInputs, TheoremParameters};

/// Scalars a drift can be evaluated on.
pub(crate) trait FieldScalar: Scalar {
    fn eval_field(field: &dyn Drift, t: f64, x: &[Self], out: &mut [Self]);
}

impl FieldScalar for f64 {
    #[inline]
    fn eval_field(field: &dyn Drift, t: f64, x: &[f64], out: &mut [f64]) {
        field.eval(t, x, out)
    }
}

impl FieldScalar for Dual {
    #[inline]
    fn eval_field(field: &dyn Drift, t: f64, x: &[Dual], out: &mut [Dual]) {
        field.eval_dual(t, x, out)
    }
}

/// Multilevel drift estimate at one step.
///
/// `weights[i]` is `Some(1 / p_i)` for active levels. Consecutive active
/// levels with identical weights are summed as one telescoped difference,
/// so with every level active at weight one the result is exactly
/// `f^{k_max}(y)`. Returns ladder positions that were evaluated (the
/// implicit zero level is never evaluated).
pub(crate) fn multilevel_drift<S: FieldScalar>(
    ladder: &DriftLadder,
    t: f64,
    y: &[S],
    weights: &[Option<S>],
    out: &mut [S],
) -> Vec<usize> {
    let nl = ladder.len();
    let dim = y.len();
    // slot 0 is the zero field, slot i + 1 is ladder level i
    let mut cache: Vec<Option<Vec<S>>> = vec![None; nl + 1];
    let mut evaluated = Vec::new();
    let mut fetch = |slot: usize, cache: &mut Vec<Option<Vec<S>>>| {
        if cache[slot].is_none() {
            let mut v = vec![S::zero(); dim];
            if slot > 0 {
                let field = &ladder.levels()[slot - 1].field;
                S::eval_field(field.as_ref(), t, y, &mut v);
                evaluated.push(slot - 1);
            }
            cache[slot] = Some(v);
        }
    };
    let mut started = false;
    let mut i = 0;
    while i < nl {
        let Some(w) = weights[i] else {
            i += 1;
            continue;
        };
        let lo = i;
        while i + 1 < nl && weights[i + 1] == Some(w) {
            i += 1;
        }
        let hi = i;
        fetch(hi + 1, &mut cache);
        fetch(lo, &mut cache);
        let upper = cache[hi + 1].as_ref().unwrap();
        let lower = cache[lo].as_ref().unwrap();
        for j in 0..dim {
            let term = (upper[j] - lower[j]) * w;
            if started {
                out[j] += term;
            } else {
                out[j] = term;
            }
        }
        started = true;
        i += 1;
    }
    if !started {
        out.iter_mut().for_each(|v| *v = S::zero());
    }
    evaluated.sort_unstable();
    evaluated
}

#[inline]
pub(crate) fn assemble<S: Scalar>(y: &[S], eta: f64, drift: &[S], noise: f64, z: &[f64]) -> Vec<S> {
    y.iter()
        .zip(drift)
        .zip(z)
        .map(|((&yi, &fi), &zi)| yi + fi * eta + noise * zi)
        .collect()
}

fn weights_for(
    ladder: &DriftLadder,
    probs: &[f64],
    active: &[bool],
    step: usize,
) -> Result<Vec<Option<f64>>> {
    ladder
        .levels()
        .iter()
        .zip(probs.iter().zip(active))
        .map(|(l, (&p, &b))| match (b, p > 0.0) {
            (false, _) => Ok(None),
            (true, true) => Ok(Some(1.0 / p)),
            (true, false) => Err(Error::ZeroProbability { level: l.k, step }),
        })
        .collect()
}

fn charge(
    ledger: &mut CostLedger,
    ladder: &DriftLadder,
    step: usize,
    active: &[bool],
    evaluated: &[usize],
    mode: CostMode,
) {
    match mode {
        CostMode::Paper => {
            for (l, _) in ladder.levels().iter().zip(active).filter(|(_, &b)| b) {
                ledger.record(step, l.k, l.cost);
            }
        }
        CostMode::Full => {
            for &i in evaluated {
                let l = &ladder.levels()[i];
                ledger.record(step, l.k, l.cost);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    /// Level indices `k` whose estimator was evaluated.
    pub evaluated: Vec<i64>,
}

/// One multilevel step with explicit activations, one per ladder level.
#[allow(clippy::too_many_arguments)]
pub fn mlem_step(
    y: &[f64],
    t: f64,
    eta: f64,
    ladder: &DriftLadder,
    schedule: &LevelSchedule,
    active: &[bool],
    sigma: &NoiseSchedule,
    z: &[f64],
) -> Result<StepOutcome> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    if active.len() != ladder.len() {
        return Err(Error::DimensionMismatch {
            expected: ladder.len(),
            got: active.len(),
        });
    }
    for len in [y.len(), z.len()] {
        if len != ladder.dim() {
            return Err(Error::DimensionMismatch {
                expected: ladder.dim(),
                got: len,
            });
        }
    }
    let probs: Vec<f64> = ladder
        .levels()
        .iter()
        .map(|l| schedule.prob(l.k, t))
        .collect();
    let weights = weights_for(ladder, &probs, active, 0)?;
    let mut drift = vec![0.0; y.len()];
    let evaluated = multilevel_drift(ladder, t, y, &weights, &mut drift);
    Ok(StepOutcome {
        state: assemble(y, eta, &drift, eta.sqrt() * sigma.sigma(t), z),
        evaluated: evaluated.iter().map(|&i| ladder.levels()[i].k).collect(),
    })
}

pub fn draw_plan(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    plan_seed: u64,
) -> BernoulliPlan {
    let times = problem.times(n_steps);
    let levels: Vec<i64> = problem.ladder.levels().iter().map(|l| l.k).collect();
    BernoulliPlan::draw(plan_seed, &levels, schedule, &times[..n_steps])
}

/// Full trajectory under fixed activations. Weights `1 / p_k(t)` come from
/// `schedule`, which need not be the schedule the plan was drawn from.
pub fn mlem_solve_with_plan(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    plan: &BernoulliPlan,
    path: &BrownianPath,
    mode: CostMode,
) -> Result<Trajectory> {
    let n_steps = plan.n_steps();
    problem.check_path(path, n_steps)?;
    let ladder = problem.ladder.as_ref();
    if plan.levels().len() != ladder.len() {
        return Err(Error::DimensionMismatch {
            expected: ladder.len(),
            got: plan.levels().len(),
        });
    }
    let eta = problem.step_size(n_steps);
    let mut y = problem.initial_state(path);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(y.clone());
    let mut ledger = CostLedger::new();
    let mut z = vec![0.0; problem.dim()];
    let mut drift = vec![0.0; problem.dim()];
    let mut probs = vec![0.0; ladder.len()];
    for step in 0..n_steps {
        let t = problem.time_at(step, n_steps);
        for (p, l) in probs.iter_mut().zip(ladder.levels()) {
            *p = schedule.prob(l.k, t);
        }
        let active = plan.step(step);
        let weights = weights_for(ladder, &probs, active, step)?;
        let evaluated = multilevel_drift(ladder, t, &y, &weights, &mut drift);
        charge(&mut ledger, ladder, step, active, &evaluated, mode);
        path.increment(step, n_steps, &mut z)?;
        y = assemble(&y, eta, &drift, eta.sqrt() * problem.noise.sigma(t), &z);
        states.push(y.clone());
    }
    Ok(Trajectory {
        times: problem.times(n_steps),
        states,
        ledger,
    })
}

pub fn mlem_solve(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    path: &BrownianPath,
    plan_seed: u64,
    mode: CostMode,
) -> Result<Trajectory> {
    let plan = draw_plan(problem, schedule, n_steps, plan_seed);
    mlem_solve_with_plan(problem, schedule, &plan, path, mode)
}

/// Plan seed used by batch member `member` when plans are not shared.
pub fn member_plan_seed(plan_seed: u64, member: usize) -> u64 {
    hash_words(&[plan_seed, member as u64, 0x5EED])
}

/// One trajectory per path. With `shared` set, a single plan drives every
/// member (only the noise differs); otherwise each member draws its own.
pub fn mlem_solve_batch(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    paths: &[BrownianPath],
    plan_seed: u64,
    shared: bool,
    mode: CostMode,
) -> Result<Vec<Trajectory>> {
    let shared_plan = shared.then(|| draw_plan(problem, schedule, n_steps, plan_seed));
    paths
        .par_iter()
        .enumerate()
        .map(|(member, path)| match &shared_plan {
            Some(plan) => mlem_solve_with_plan(problem, schedule, plan, path, mode),
            None => mlem_solve(
                problem,
                schedule,
                n_steps,
                path,
                member_plan_seed(plan_seed, member),
                mode,
            ),
        })
        .collect()
}

/// Probability that each ladder position is evaluated at a step, given the
/// level probabilities at that step.
pub fn evaluation_probabilities(probs: &[f64]) -> Vec<f64> {
    let nl = probs.len();
    (0..nl)
        .map(|j| {
            let p = probs[j];
            let q = if j + 1 < nl { probs[j + 1] } else { 0.0 };
            let merged = q > 0.0 && p > 0.0 && 1.0 / p == 1.0 / q;
            if merged {
                p * (1.0 - q) + q * (1.0 - p)
            } else {
                1.0 - (1.0 - p) * (1.0 - q)
            }
        })
        .collect()
}

/// Expected ledger total over plans.
pub fn expected_cost(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    mode: CostMode,
) -> f64 {
    let ladder = problem.ladder.as_ref();
    let mut total = 0.0;
    let mut probs = vec![0.0; ladder.len()];
    for step in 0..n_steps {
        let t = problem.time_at(step, n_steps);
        for (p, l) in probs.iter_mut().zip(ladder.levels()) {
            *p = schedule.prob(l.k, t);
        }
        let weights = match mode {
            CostMode::Paper => probs.clone(),
            CostMode::Full => evaluation_probabilities(&probs),
        };
        total += weights
            .iter()
            .zip(ladder.levels())
            .map(|(w, l)| w * l.cost)
            .sum::<f64>();
    }
    total
}

/// `schedule.scaled(s)` with `s` found by bisection on `log2 s` so that
/// its expected cost equals `target`.
pub fn match_expected_cost(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    mode: CostMode,
    target: f64,
) -> Result<LevelSchedule> {
    const RANGE: f64 = 60.0;
    let cost = |e: f64| expected_cost(problem, &schedule.scaled(e.exp2()), n_steps, mode);
    let (lo_cost, hi_cost) = (cost(-RANGE), cost(RANGE));
    if !(target >= lo_cost && target <= hi_cost) {
        return Err(invalid(
            "target",
            format!("expected cost {target} outside reachable [{lo_cost}, {hi_cost}]"),
        ));
    }
    let (mut lo, mut hi) = (-RANGE, RANGE);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if cost(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(schedule.scaled((0.5 * (lo + hi)).exp2()))
}

/// Expected number of steps at which each level is active.
pub fn expected_level_counts(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
) -> Vec<(i64, f64)> {
    problem
        .ladder
        .levels()
        .iter()
        .map(|l| {
            let c = (0..n_steps)
                .map(|s| schedule.prob(l.k, problem.time_at(s, n_steps)))
                .sum();
            (l.k, c)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BestOfN {
    pub best_trial: usize,
    pub plan_seed: u64,
    pub trajectories: Vec<Trajectory>,
    /// Batch-mean squared error of each trial.
    pub mse: Vec<f64>,
}

/// Runs `n_trials` plans on fixed noise and keeps the one with the smallest
/// mean final squared error against `references` (one per path). Trial `i`
/// uses plan seed `first_plan_seed + i`, so the winner can be replayed.
#[allow(clippy::too_many_arguments)]
pub fn best_of_n(
    problem: &SdeProblem,
    schedule: &LevelSchedule,
    n_steps: usize,
    paths: &[BrownianPath],
    references: &[Vec<f64>],
    n_trials: usize,
    first_plan_seed: u64,
    mode: CostMode,
) -> Result<BestOfN> {
    if n_trials == 0 {
        return Err(invalid("n_trials", "must be at least 1"));
    }
    if paths.len() != references.len() || paths.is_empty() {
        return Err(invalid("references", "need exactly one reference per path"));
    }
    let mut best: Option<(usize, Vec<Trajectory>)> = None;
    let mut mse = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let seed = first_plan_seed + trial as u64;
        let trajs = mlem_solve_batch(problem, schedule, n_steps, paths, seed, true, mode)?;
        let err = batch_mse(&trajs, references);
        if best.is_none() || err < mse[best.as_ref().unwrap().0] {
            best = Some((trial, trajs));
        }
        mse.push(err);
    }
    let (best_trial, trajectories) = best.unwrap();
    Ok(BestOfN {
        best_trial,
        plan_seed: first_plan_seed + best_trial as u64,
        trajectories,
        mse,
    })
}

pub fn batch_mse(trajs: &[Trajectory], references: &[Vec<f64>]) -> f64 {
    trajs
        .iter()
        .zip(references)
        .map(|(t, r)| squared_distance(t.final_state(), r))
        .sum::<f64>()
        / trajs.len() as f64
}
