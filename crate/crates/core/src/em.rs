//! Fixed-level Euler-Maruyama, the single-estimator baseline.

use crate::error::{invalid, Error, Result};
use crate::sde::drift::Drift;
use crate::sde::noise::BrownianPath;
use crate::sde::{CostLedger, NoiseSchedule, SdeProblem, Trajectory};

/// `y + eta * f_t(y) + sqrt(eta) * sigma_t * z`.
pub fn em_step(
    y: &[f64],
    t: f64,
    eta: f64,
    drift: &dyn Drift,
    sigma: &NoiseSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    for len in [y.len(), z.len()] {
        if len != drift.dim() {
            return Err(Error::DimensionMismatch {
                expected: drift.dim(),
                got: len,
            });
        }
    }
    let mut f = vec![0.0; y.len()];
    drift.eval(t, y, &mut f);
    let noise = eta.sqrt() * sigma.sigma(t);
    Ok(apply_increment(y, eta, &f, noise, z))
}

/// Shared final assembly so that all solvers round identically.
#[inline]
pub(crate) fn apply_increment(
    y: &[f64],
    eta: f64,
    drift: &[f64],
    noise: f64,
    z: &[f64],
) -> Vec<f64> {
    y.iter()
        .zip(drift)
        .zip(z)
        .map(|((&yi, &fi), &zi)| yi + eta * fi + noise * zi)
        .collect()
}

/// Euler-Maruyama with any drift on the problem's grid and noise path.
pub fn em_solve_with(
    problem: &SdeProblem,
    drift: &dyn Drift,
    cost_per_step: Option<(i64, f64)>,
    n_steps: usize,
    path: &BrownianPath,
) -> Result<Trajectory> {
    problem.check_path(path, n_steps)?;
    let eta = problem.step_size(n_steps);
    let mut y = problem.initial_state(path);
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(y.clone());
    let mut ledger = CostLedger::new();
    let mut z = vec![0.0; problem.dim()];
    let mut f = vec![0.0; problem.dim()];
    for step in 0..n_steps {
        let t = problem.time_at(step, n_steps);
        path.increment(step, n_steps, &mut z)?;
        drift.eval(t, &y, &mut f);
        y = apply_increment(&y, eta, &f, eta.sqrt() * problem.noise.sigma(t), &z);
        if let Some((level, cost)) = cost_per_step {
            ledger.record(step, level, cost);
        }
        states.push(y.clone());
    }
    Ok(Trajectory {
        times: problem.times(n_steps),
        states,
        ledger,
    })
}

/// Euler-Maruyama at a fixed ladder level.
pub fn em_solve(
    problem: &SdeProblem,
    level: i64,
    n_steps: usize,
    path: &BrownianPath,
) -> Result<Trajectory> {
    let l = problem.ladder.level(level)?;
    em_solve_with(
        problem,
        l.field.as_ref(),
        Some((l.k, l.cost)),
        n_steps,
        path,
    )
}

/// Euler-Maruyama with the ladder's ground-truth drift; no cost is charged.
pub fn em_solve_truth(
    problem: &SdeProblem,
    n_steps: usize,
    path: &BrownianPath,
) -> Result<Trajectory> {
    let truth = problem
        .ladder
        .truth()
        .ok_or_else(|| invalid("ladder", "no ground-truth drift attached"))?;
    em_solve_with(problem, truth.as_ref(), None, n_steps, path)
}
