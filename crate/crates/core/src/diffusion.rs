//! Gaussian-mixture diffusion testbed.
//!
//! Data `x_0 ~ sum_i w_i N(mu_i, v_i I)` diffused by the Ornstein-Uhlenbeck
//! forward process stays a mixture with means `e^{-t/2} mu_i` and variances
//! `e^{-t} v_i + 1 - e^{-t}`, so the score `grad log rho_t` is exact. The
//! backward SDE `-dx = (x/2 + s_t(x)) dt + dW` and the probability-flow ODE
//! `-dx/dt = x/2 + s_t(x)/2` are exposed as [`Drift`] fields, together with
//! the discrete DDPM and DDIM updates.

use std::sync::Arc;

use crate::autodiff::{Dual, Scalar};
use crate::error::{invalid, Error, Result};
use crate::sde::drift::Drift;
use crate::sde::ladder::DriftLadder;
use crate::sde::{Direction, InitialState, NoiseSchedule, SdeProblem};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(invalid("weights", "need at least one component"));
        }
        if means.len() != n || variances.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: means.len().min(variances.len()),
            });
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(invalid("weights", "must be positive and sum to one"));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("variances", "must be positive"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(invalid("means", "dimension must be positive"));
        }
        if let Some(m) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.len(),
            });
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
        })
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![1.0])
    }

    /// Parses lines `component <weight> <variance> <mean_1> ... <mean_d>`.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut w, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            if it.next() != Some("component") {
                return Err(invalid(
                    "mixture",
                    format!("expected `component`, got `{line}`"),
                ));
            }
            let nums: Vec<f64> = it
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| invalid("mixture", format!("bad number in `{line}`")))?;
            if nums.len() < 3 {
                return Err(invalid(
                    "mixture",
                    format!("component needs weight, variance and a mean: `{line}`"),
                ));
            }
            w.push(nums[0]);
            v.push(nums[1]);
            m.push(nums[2..].to_vec());
        }
        Self::new(w, m, v)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Component means and variances of `rho_t`.
    fn diffused(&self, i: usize, t: f64) -> (f64, f64) {
        let decay = (-t).exp();
        (decay.sqrt(), decay * self.variances[i] + 1.0 - decay)
    }

    pub fn log_density(&self, t: f64, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.n_components())
            .map(|i| self.component_log(i, t, x))
            .collect();
        log_sum_exp(&logs)
    }

    fn component_log<S: Scalar>(&self, i: usize, t: f64, x: &[S]) -> S {
        let (scale, var) = self.diffused(i, t);
        let mut sq = S::zero();
        for (&xi, &mi) in x.iter().zip(&self.means[i]) {
            let d = xi + (-scale * mi);
            sq += d * d;
        }
        let c = self.weights[i].ln() - 0.5 * self.dim as f64 * (std::f64::consts::TAU * var).ln();
        sq * (-0.5 / var) + c
    }

    /// `grad log rho_t(x)` evaluated with log-space responsibilities.
    pub fn score(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.score_into(t, x, &mut out);
        out
    }

    fn score_into<S: Scalar>(&self, t: f64, x: &[S], out: &mut [S]) {
        let n = self.n_components();
        let logs: Vec<S> = (0..n).map(|i| self.component_log(i, t, x)).collect();
        let top = logs
            .iter()
            .map(|l| l.value())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = S::zero();
        let shifted: Vec<S> = logs.iter().map(|&l| (l + (-top)).exp()).collect();
        for &e in &shifted {
            total += e;
        }
        out.iter_mut().for_each(|o| *o = S::zero());
        for (i, &w) in shifted.iter().enumerate() {
            let r = w / total;
            let (scale, var) = self.diffused(i, t);
            for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(&self.means[i]) {
                *o += r * (xi + (-scale * mi)) * (-1.0 / var);
            }
        }
    }

    /// Lipschitz bound on `s_t` over `t >= 0`: `1 / v_min + D^2 / v_min^2`
    /// for equal variances (`D` the largest mean separation), infinite
    /// otherwise.
    pub fn score_lipschitz_bound(&self) -> f64 {
        let v0 = self.variances[0];
        if self.variances.iter().any(|&v| v != v0) {
            return f64::INFINITY;
        }
        let vmin = v0.min(1.0);
        let mut spread: f64 = 0.0;
        for a in &self.means {
            for b in &self.means {
                spread = spread.max(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
            }
        }
        1.0 / vmin + spread / (vmin * vmin)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Drift `x/2 + s_t(x)` of the backward SDE.
#[derive(Clone, Debug)]
pub struct BackwardSdeDrift {
    mix: Arc<GaussianMixture>,
    score_weight: f64,
}

/// Right-hand side `x/2 + s_t(x)/2` of the probability-flow ODE.
#[derive(Clone, Debug)]
pub struct BackwardOdeDrift {
    inner: BackwardSdeDrift,
}

impl BackwardSdeDrift {
    pub fn new(mix: Arc<GaussianMixture>) -> Self {
        Self {
            mix,
            score_weight: 1.0,
        }
    }

    fn apply<S: Scalar>(&self, t: f64, x: &[S], out: &mut [S]) {
        self.mix.score_into(t, x, out);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = *o * self.score_weight + xi * 0.5;
        }
    }
}

impl BackwardOdeDrift {
    pub fn new(mix: Arc<GaussianMixture>) -> Self {
        Self {
            inner: BackwardSdeDrift {
                mix,
                score_weight: 0.5,
            },
        }
    }
}

impl Drift for BackwardSdeDrift {
    fn dim(&self) -> usize {
        self.mix.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.apply(t, x, out)
    }
    fn eval_dual(&self, t: f64, x: &[Dual], out: &mut [Dual]) {
        self.apply(t, x, out)
    }
    fn lipschitz_bound(&self) -> f64 {
        0.5 + self.score_weight * self.mix.score_lipschitz_bound()
    }
}

impl Drift for BackwardOdeDrift {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.eval(t, x, out)
    }
    fn eval_dual(&self, t: f64, x: &[Dual], out: &mut [Dual]) {
        self.inner.eval_dual(t, x, out)
    }
    fn lipschitz_bound(&self) -> f64 {
        self.inner.lipschitz_bound()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    Sde,
    Ode,
}

/// Backward sampling problem from `t_start` down to `t_min`, started at
/// `N(0, I)`. The ladder should be built over the matching drift.
pub fn backward_problem(
    ladder: Arc<DriftLadder>,
    kind: FlowKind,
    t_start: f64,
    t_min: f64,
    base_steps: usize,
) -> Result<SdeProblem> {
    if !(t_min >= 0.0 && t_start > t_min) {
        return Err(invalid("t_min", "need 0 <= t_min < t_start"));
    }
    let problem = SdeProblem {
        ladder,
        noise: NoiseSchedule::Constant(if kind == FlowKind::Sde { 1.0 } else { 0.0 }),
        start_time: t_start,
        horizon: t_start - t_min,
        direction: Direction::Backward,
        initial: InitialState::Gaussian { scale: 1.0 },
        base_steps,
    };
    problem.validate()?;
    Ok(problem)
}

/// `beta_1..beta_M` with `alpha_m = 1 - beta_m`, `abar_m = alpha_1...alpha_m`
/// and `sigma_m = sqrt(1 - abar_m)`; index 0 means `abar_0 = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiscreteSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(invalid("betas", "need a nonempty list in (0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        for b in &betas {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn uniform(beta: f64, steps: usize) -> Result<Self> {
        Self::new(vec![beta; steps])
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.len() {
            return Err(invalid("m", format!("step {m} outside 1..={}", self.len())));
        }
        Ok(())
    }

    pub fn beta(&self, m: usize) -> f64 {
        self.betas[m - 1]
    }

    pub fn alpha(&self, m: usize) -> f64 {
        1.0 - self.betas[m - 1]
    }

    pub fn alpha_bar(&self, m: usize) -> f64 {
        self.alpha_bar[m]
    }

    pub fn sigma(&self, m: usize) -> f64 {
        (1.0 - self.alpha_bar[m]).sqrt()
    }

    /// Diffusion time whose marginal matches `y_m` exactly: `-log abar_m`.
    pub fn matched_time(&self, m: usize) -> f64 {
        -self.alpha_bar[m].ln()
    }

    /// Accumulated `beta_1 + ... + beta_m`.
    pub fn accumulated_time(&self, m: usize) -> f64 {
        self.betas[..m].iter().sum()
    }

    /// `y_m = sqrt(alpha_m) y_{m-1} + sqrt(beta_m) z`.
    pub fn forward_step(&self, y: &[f64], m: usize, z: &[f64]) -> Result<Vec<f64>> {
        self.check(m)?;
        let (a, b) = (self.alpha(m).sqrt(), self.beta(m).sqrt());
        Ok(y.iter().zip(z).map(|(yi, zi)| a * yi + b * zi).collect())
    }
}

/// `eps_m(y) = -sigma_m s(y)` from the exact score of `y_m`.
pub fn mixture_eps(
    mix: &GaussianMixture,
    schedule: &DiscreteSchedule,
    m: usize,
    y: &[f64],
) -> Vec<f64> {
    let s = schedule.sigma(m);
    mix.score(schedule.matched_time(m), y)
        .into_iter()
        .map(|v| -s * v)
        .collect()
}

fn check_dims(y: &[f64], other: &[f64]) -> Result<()> {
    if y.len() != other.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: other.len(),
        });
    }
    Ok(())
}

/// `y_{m-1} = y_m / sqrt(alpha_m) - beta_m / (sqrt(alpha_m) sigma_m) eps
/// + sqrt(beta_m) sigma_{m-1} / sigma_m z`.
pub fn ddpm_backward_step(
    y: &[f64],
    m: usize,
    schedule: &DiscreteSchedule,
    eps: &[f64],
    z: &[f64],
) -> Result<Vec<f64>> {
    schedule.check(m)?;
    check_dims(y, eps)?;
    check_dims(y, z)?;
    let sa = schedule.alpha(m).sqrt();
    let (beta, s) = (schedule.beta(m), schedule.sigma(m));
    let eps_coef = beta / (sa * s);
    let z_coef = beta.sqrt() * schedule.sigma(m - 1) / s;
    Ok(y.iter()
        .zip(eps)
        .zip(z)
        .map(|((yi, ei), zi)| yi / sa - eps_coef * ei + z_coef * zi)
        .collect())
}

/// `y_{m-1} / sqrt(abar_{m-1}) = y_m / sqrt(abar_m)
/// + (sigma_{m-1} / sqrt(abar_{m-1}) - sigma_m / sqrt(abar_m)) eps`.
pub fn ddim_backward_step(
    y: &[f64],
    m: usize,
    schedule: &DiscreteSchedule,
    eps: &[f64],
) -> Result<Vec<f64>> {
    schedule.check(m)?;
    check_dims(y, eps)?;
    let (ab, ab_prev) = (schedule.alpha_bar(m), schedule.alpha_bar(m - 1));
    let coef = schedule.sigma(m - 1) / ab_prev.sqrt() - schedule.sigma(m) / ab.sqrt();
    let rescale = ab_prev.sqrt();
    Ok(y.iter()
        .zip(eps)
        .map(|(yi, ei)| rescale * (yi / ab.sqrt() + coef * ei))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapStats {
    pub beta: f64,
    /// Discrete step index at which states were matched.
    pub m: usize,
    /// Mean `||DDPM - EM||` with the noise switched off.
    pub ddpm_drift_gap: f64,
    /// Mean `||DDPM - EM||` with the supplied noise.
    pub ddpm_noisy_gap: f64,
    /// Mean `||DDIM - Euler||`.
    pub ddim_gap: f64,
}

/// Per-step mismatch between the discrete updates and Euler(-Maruyama)
/// steps of size `beta` for the continuous backward drifts, at diffusion
/// time `t_match` (rounded to the grid) and the given states. The score is
/// taken at the time whose marginal equals the law of `y_m`.
pub fn discretization_gap_check(
    mix: &GaussianMixture,
    beta: f64,
    t_match: f64,
    states: &[Vec<f64>],
    noises: &[Vec<f64>],
) -> Result<GapStats> {
    if states.is_empty() || states.len() != noises.len() {
        return Err(invalid("states", "need one noise vector per state"));
    }
    let m = ((t_match / beta).round() as usize).max(1);
    let schedule = DiscreteSchedule::uniform(beta, m)?;
    let tau = schedule.matched_time(m);
    let zero = vec![0.0; mix.dim()];
    let (mut drift_gap, mut noisy_gap, mut ddim_gap) = (0.0, 0.0, 0.0);
    for (y, z) in states.iter().zip(noises) {
        check_dims(y, z)?;
        let s = mix.score(tau, y);
        let eps = mixture_eps(mix, &schedule, m, y);
        let em = |score_weight: f64, z: &[f64]| -> Vec<f64> {
            y.iter()
                .zip(&s)
                .zip(z)
                .map(|((yi, si), zi)| yi + beta * (0.5 * yi + score_weight * si) + beta.sqrt() * zi)
                .collect()
        };
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        drift_gap += dist(
            &ddpm_backward_step(y, m, &schedule, &eps, &zero)?,
            &em(1.0, &zero),
        );
        noisy_gap += dist(&ddpm_backward_step(y, m, &schedule, &eps, z)?, &em(1.0, z));
        ddim_gap += dist(&ddim_backward_step(y, m, &schedule, &eps)?, &em(0.5, &zero));
    }
    let n = states.len() as f64;
    Ok(GapStats {
        beta,
        m,
        ddpm_drift_gap: drift_gap / n,
        ddpm_noisy_gap: noisy_gap / n,
        ddim_gap: ddim_gap / n,
    })
}
