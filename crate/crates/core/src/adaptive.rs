//! Learned time-dependent level probabilities
//! `p_k(t) = sigmoid(alpha_k log(t + delta) + beta_k)`, trained by SGD on
//!
//! ```text
//! L(alpha, beta) = E ||x_T - y_T||^2 + lambda * sum_i sum_k p_k(t_i) T_k
//! ```
//!
//! The gradient of the expectation is split into a score-function part for
//! the Bernoulli draws, `loss * (B - p) * [log(t + delta), 1]`, and a
//! pathwise part through the `1/p_k` weights that is estimated with one
//! forward-mode directional derivative along a Gaussian direction `v`,
//! `(grad . v) v`. The regularizer is differentiated exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, Scalar};
use crate::em::{em_solve, em_solve_truth};
use crate::error::{invalid, Error, Result};
use crate::mlem::{assemble, draw_plan, multilevel_drift, BernoulliPlan, LevelSchedule};
use crate::sde::noise::{hash_words, keyed_rng, BrownianPath, NoiseDriver};
use crate::sde::SdeProblem;

pub const DEFAULT_DELTA: f64 = 0.1;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub levels: Vec<i64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: f64,
}

impl AdaptiveParams {
    pub fn new(levels: Vec<i64>, alpha: Vec<f64>, beta: Vec<f64>, delta: f64) -> Result<Self> {
        if alpha.len() != levels.len() || beta.len() != levels.len() {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                got: alpha.len().max(beta.len()),
            });
        }
        if !(delta > 0.0) {
            return Err(invalid("delta", "must be positive"));
        }
        Ok(Self {
            levels,
            alpha,
            beta,
            delta,
        })
    }

    /// Time-constant probabilities `p_k`.
    pub fn constant(levels: Vec<i64>, probs: &[f64], delta: f64) -> Result<Self> {
        let beta = probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
        Self::new(levels.clone(), vec![0.0; levels.len()], beta, delta)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn position(&self, k: i64) -> Option<usize> {
        self.levels.iter().position(|&l| l == k)
    }

    fn logit(&self, i: usize, t: f64) -> f64 {
        self.alpha[i] * (t + self.delta).ln() + self.beta[i]
    }

    pub fn prob_at(&self, k: i64, t: f64) -> Result<f64> {
        let i = self.position(k).ok_or(Error::LevelOutOfRange {
            level: k,
            min: self.levels.first().copied().unwrap_or(0),
            max: self.levels.last().copied().unwrap_or(0),
        })?;
        Ok(sigmoid(self.logit(i, t)))
    }

    /// `p_k(t)` with tangent along `(v_alpha, v_beta)`.
    fn prob_dual(&self, i: usize, t: f64, v_alpha: f64, v_beta: f64) -> Dual {
        let p = sigmoid(self.logit(i, t));
        let dlogit = v_alpha * (t + self.delta).ln() + v_beta;
        Dual::new(p, p * (1.0 - p) * dlogit)
    }

    /// Copy with `beta_k <- beta_k + shift` for every level.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            beta: self.beta.iter().map(|b| b + shift).collect(),
            ..self.clone()
        }
    }

    /// Flattened `(alpha..., beta...)`.
    pub fn to_vector(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    /// Writes `delta = ...` then one `level.<k> = <alpha> <beta>` line per level.
    pub fn to_kv_string(&self) -> String {
        let mut s = format!("delta = {}\n", self.delta);
        for ((k, a), b) in self.levels.iter().zip(&self.alpha).zip(&self.beta) {
            s.push_str(&format!("level.{k} = {a} {b}\n"));
        }
        s
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let bad = |line: &str| invalid("schedule file", format!("cannot parse line `{line}`"));
        let mut delta = None;
        let mut rows = Vec::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad(raw))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "delta" {
                delta = Some(value.parse::<f64>().map_err(|_| bad(raw))?);
            } else if let Some(k) = key.strip_prefix("level.") {
                let k: i64 = k.parse().map_err(|_| bad(raw))?;
                let mut parts = value.split_whitespace().map(str::parse::<f64>);
                let (Some(Ok(a)), Some(Ok(b)), None) = (parts.next(), parts.next(), parts.next())
                else {
                    return Err(bad(raw));
                };
                rows.push((k, a, b));
            } else {
                return Err(bad(raw));
            }
        }
        rows.sort_by_key(|r| r.0);
        Self::new(
            rows.iter().map(|r| r.0).collect(),
            rows.iter().map(|r| r.1).collect(),
            rows.iter().map(|r| r.2).collect(),
            delta.unwrap_or(DEFAULT_DELTA),
        )
    }
}

/// One shifted copy of `params` per entry of `deltas`.
pub fn beta_shift_sweep(params: &AdaptiveParams, deltas: &[f64]) -> Vec<AdaptiveParams> {
    deltas.iter().map(|&d| params.shifted(d)).collect()
}

/// Per-coordinate gradient pieces over `(alpha_k, beta_k)`.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct GradParts {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GradParts {
    pub fn zeros(n: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            beta: vec![0.0; n],
        }
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += s * b;
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += s * b;
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct GradEstimate {
    pub d_alpha: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub score: GradParts,
    pub pathwise: GradParts,
    pub regularizer: GradParts,
}

impl GradEstimate {
    fn from_parts(score: GradParts, pathwise: GradParts, regularizer: GradParts) -> Self {
        let n = score.alpha.len();
        let total = |f: fn(&GradParts) -> &Vec<f64>| -> Vec<f64> {
            (0..n)
                .map(|i| f(&score)[i] + f(&pathwise)[i] + f(&regularizer)[i])
                .collect()
        };
        Self {
            d_alpha: total(|p| &p.alpha),
            d_beta: total(|p| &p.beta),
            score,
            pathwise,
            regularizer,
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.d_alpha.iter().chain(&self.d_beta).copied().collect()
    }
}

fn check_levels(problem: &SdeProblem, params: &AdaptiveParams) -> Result<()> {
    let ladder_levels: Vec<i64> = problem.ladder.levels().iter().map(|l| l.k).collect();
    if ladder_levels != params.levels {
        return Err(invalid("params", "levels must match the ladder"));
    }
    Ok(())
}

/// `loss * sum_i (B_k(t_i) - p_k(t_i)) [log(t_i + delta), 1]`.
pub fn score_function_grad(
    loss: f64,
    plan: &BernoulliPlan,
    params: &AdaptiveParams,
    step_times: &[f64],
) -> Result<GradParts> {
    if plan.levels() != params.levels.as_slice() || plan.n_steps() != step_times.len() {
        return Err(invalid(
            "plan",
            "plan must cover the parameter levels and every step",
        ));
    }
    let n = params.n_levels();
    let mut out = GradParts::zeros(n);
    if loss == 0.0 {
        return Ok(out);
    }
    for (step, &t) in step_times.iter().enumerate() {
        let log_t = (t + params.delta).ln();
        for i in 0..n {
            let p = sigmoid(params.logit(i, t));
            let b = if plan.is_active(step, i) { 1.0 } else { 0.0 };
            out.alpha[i] += loss * (b - p) * log_t;
            out.beta[i] += loss * (b - p);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Directional {
    pub loss: f64,
    /// `grad(loss) . v` with the draws held fixed.
    pub derivative: f64,
}

/// Forward-mode derivative of `||y_T - reference||^2` along `direction`,
/// treating the realized draws as constants. Memory does not grow with the
/// number of steps.
pub fn forward_directional_grad(
    problem: &SdeProblem,
    params: &AdaptiveParams,
    direction: &[f64],
    plan: &BernoulliPlan,
    path: &BrownianPath,
    reference: &[f64],
) -> Result<Directional> {
    check_levels(problem, params)?;
    let nl = params.n_levels();
    if direction.len() != 2 * nl {
        return Err(Error::DimensionMismatch {
            expected: 2 * nl,
            got: direction.len(),
        });
    }
    let n_steps = plan.n_steps();
    problem.check_path(path, n_steps)?;
    let (v_alpha, v_beta) = direction.split_at(nl);
    let ladder = problem.ladder.as_ref();
    let eta = problem.step_size(n_steps);
    let mut y: Vec<Dual> = problem
        .initial_state(path)
        .into_iter()
        .map(Dual::constant)
        .collect();
    let mut z = vec![0.0; problem.dim()];
    let mut drift = vec![Dual::default(); problem.dim()];
    let mut weights = vec![None; nl];
    for step in 0..n_steps {
        let t = problem.time_at(step, n_steps);
        for i in 0..nl {
            weights[i] = if plan.is_active(step, i) {
                let p = params.prob_dual(i, t, v_alpha[i], v_beta[i]);
                if p.re <= 0.0 {
                    return Err(Error::ZeroProbability {
                        level: params.levels[i],
                        step,
                    });
                }
                Some(p.recip())
            } else {
                None
            };
        }
        multilevel_drift(ladder, t, &y, &weights, &mut drift);
        path.increment(step, n_steps, &mut z)?;
        y = assemble(&y, eta, &drift, eta.sqrt() * problem.noise.sigma(t), &z);
    }
    let loss = y
        .iter()
        .zip(reference)
        .fold(Dual::default(), |acc, (&yi, &ri)| {
            let d = yi + (-ri);
            acc + d * d
        });
    Ok(Directional {
        loss: loss.re,
        derivative: loss.du,
    })
}

/// Target trajectory the training loss compares against.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceKind {
    /// Euler-Maruyama with the ladder's top level on `n_steps` steps.
    TopLevel { n_steps: usize },
    /// Euler-Maruyama with the ground-truth drift on `n_steps` steps.
    Truth { n_steps: usize },
}

impl ReferenceKind {
    pub fn final_state(&self, problem: &SdeProblem, path: &BrownianPath) -> Result<Vec<f64>> {
        let tr = match *self {
            Self::TopLevel { n_steps } => em_solve(problem, problem.ladder.top().k, n_steps, path)?,
            Self::Truth { n_steps } => em_solve_truth(problem, n_steps, path)?,
        };
        Ok(tr.final_state().to_vec())
    }
}

/// Everything the gradient estimator needs besides the parameters.
#[derive(Clone, Debug)]
pub struct TrainingProblem {
    pub problem: SdeProblem,
    pub n_steps: usize,
    pub reference: ReferenceKind,
    pub lambda: f64,
    /// `T_k`, one per ladder level.
    pub cost_table: Vec<f64>,
    pub batch_size: usize,
    pub noise_seed: u64,
}

impl TrainingProblem {
    pub fn validate(&self, params: &AdaptiveParams) -> Result<()> {
        check_levels(&self.problem, params)?;
        if self.cost_table.len() != params.n_levels() {
            return Err(Error::DimensionMismatch {
                expected: params.n_levels(),
                got: self.cost_table.len(),
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda", "must be nonnegative"));
        }
        if self.batch_size == 0 || self.n_steps == 0 {
            return Err(invalid(
                "batch_size",
                "batch size and step count must be positive",
            ));
        }
        Ok(())
    }

    pub fn step_times(&self) -> Vec<f64> {
        (0..self.n_steps)
            .map(|i| self.problem.time_at(i, self.n_steps))
            .collect()
    }

    /// `lambda * sum_i sum_k p_k(t_i) T_k`.
    pub fn regularizer(&self, params: &AdaptiveParams) -> f64 {
        let mut total = 0.0;
        for t in self.step_times() {
            for i in 0..params.n_levels() {
                total += sigmoid(params.logit(i, t)) * self.cost_table[i];
            }
        }
        self.lambda * total
    }

    pub fn regularizer_grad(&self, params: &AdaptiveParams) -> GradParts {
        let n = params.n_levels();
        let mut out = GradParts::zeros(n);
        for t in self.step_times() {
            let log_t = (t + params.delta).ln();
            for i in 0..n {
                let p = sigmoid(params.logit(i, t));
                let g = self.lambda * self.cost_table[i] * p * (1.0 - p);
                out.alpha[i] += g * log_t;
                out.beta[i] += g;
            }
        }
        out
    }

    fn member_path(&self, seed: u64, member: usize) -> Result<BrownianPath> {
        let driver = NoiseDriver::new(self.noise_seed, self.problem.dim())?;
        BrownianPath::new(
            driver,
            hash_words(&[seed, member as u64, 0x4015E]),
            self.problem.base_steps,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradSample {
    pub estimate: GradEstimate,
    /// Batch mean of `||x_T - y_T||^2`.
    pub loss: f64,
    /// `loss + regularizer`.
    pub objective: f64,
}

/// Batch-averaged three-term gradient estimate. Each member draws its own
/// noise path, plan and direction from `seed`.
pub fn estimate_gradient(
    ctx: &TrainingProblem,
    params: &AdaptiveParams,
    seed: u64,
) -> Result<GradSample> {
    ctx.validate(params)?;
    let nl = params.n_levels();
    let schedule = LevelSchedule::Learned(params.clone());
    let times = ctx.step_times();
    let members: Vec<(f64, GradParts, GradParts)> = (0..ctx.batch_size)
        .into_par_iter()
        .map(|member| {
            let path = ctx.member_path(seed, member)?;
            let reference = ctx.reference.final_state(&ctx.problem, &path)?;
            let plan_seed = hash_words(&[seed, member as u64, 0x91A2]);
            let plan = draw_plan(&ctx.problem, &schedule, ctx.n_steps, plan_seed);
            let mut rng = keyed_rng(&[seed, member as u64, 0xD12]);
            let v: Vec<f64> = (0..2 * nl).map(|_| rng.sample(StandardNormal)).collect();
            let dir = forward_directional_grad(&ctx.problem, params, &v, &plan, &path, &reference)?;
            let score = score_function_grad(dir.loss, &plan, params, &times)?;
            let pathwise = GradParts {
                alpha: v[..nl].iter().map(|vi| dir.derivative * vi).collect(),
                beta: v[nl..].iter().map(|vi| dir.derivative * vi).collect(),
            };
            Ok((dir.loss, score, pathwise))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / ctx.batch_size as f64;
    let mut score = GradParts::zeros(nl);
    let mut pathwise = GradParts::zeros(nl);
    let mut loss = 0.0;
    for (l, s, p) in &members {
        loss += scale * l;
        score.add_scaled(s, scale);
        pathwise.add_scaled(p, scale);
    }
    let regularizer = ctx.regularizer_grad(params);
    Ok(GradSample {
        estimate: GradEstimate::from_parts(score, pathwise, regularizer),
        loss,
        objective: loss + ctx.regularizer(params),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Abort once the objective exceeds this multiple of its first value.
    pub divergence_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            learning_rate: 0.5,
            seed: 0,
            divergence_factor: 1e3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: AdaptiveParams,
    /// Estimated objective before each update.
    pub trace: Vec<f64>,
}

/// Plain SGD on `(alpha, beta)`.
pub fn sgd_train(
    ctx: &TrainingProblem,
    params0: &AdaptiveParams,
    config: &SgdConfig,
) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    let mut params = params0.clone();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let sample = estimate_gradient(ctx, &params, hash_words(&[config.seed, step as u64]))?;
        let limit = trace.first().copied().unwrap_or(f64::INFINITY) * config.divergence_factor;
        if !sample.objective.is_finite() || sample.objective > limit {
            return Err(Error::Diverged {
                step,
                loss: sample.objective,
                limit,
            });
        }
        trace.push(sample.objective);
        let g = &sample.estimate;
        for i in 0..params.n_levels() {
            params.alpha[i] -= config.learning_rate * g.d_alpha[i];
            params.beta[i] -= config.learning_rate * g.d_beta[i];
        }
    }
    Ok(TrainOutcome { params, trace })
}

#[cfg(test)]
mod tests;
