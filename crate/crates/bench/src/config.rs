//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use mlem::adaptive::AdaptiveParams;
use mlem::diffusion::{
    backward_problem, BackwardOdeDrift, BackwardSdeDrift, FlowKind, GaussianMixture,
};
use mlem::mlem::KmaxRule;
use mlem::sde::drift::{DriftField, LinearDrift};
use mlem::sde::ladder::{PerturbationShape, SyntheticLadder};
use mlem::{CostMode, Direction, DriftLadder, InitialState, NoiseSchedule, SdeProblem};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed of the Brownian noise.
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub problem: ProblemSpec,
    pub ladder: LadderSpec,
    #[serde(default)]
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub solver: Vec<SolverSpec>,
    #[serde(default)]
    pub training: Option<TrainingSpec>,
    #[serde(default)]
    pub ddpm_check: Option<DdpmCheckSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Ou {
        dim: usize,
        rate: f64,
        sigma: f64,
        horizon: f64,
        /// Defaults to all ones.
        #[serde(default)]
        x0: Option<Vec<f64>>,
        base_steps: usize,
    },
    MixtureDdpm(MixtureProblem),
    MixtureDdim(MixtureProblem),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureProblem {
    pub mixture: MixtureSpec,
    pub t_start: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    pub base_steps: usize,
}

fn default_t_min() -> f64 {
    1e-2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    /// Plain-text mixture file, resolved against the config's directory.
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub variance: f64,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    pub c: f64,
    pub gamma: f64,
    pub k_min: i64,
    pub k_max: i64,
    pub seed: u64,
    /// Subset of `k_min..=k_max` to keep; all levels when empty.
    #[serde(default)]
    pub levels: Vec<i64>,
    #[serde(default = "default_max_freq")]
    pub max_freq: f64,
    #[serde(default)]
    pub shape: ShapeSpec,
    #[serde(default)]
    pub time_decay: f64,
}

fn default_max_freq() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSpec {
    #[default]
    Random,
    Coherent,
}

impl From<ShapeSpec> for PerturbationShape {
    fn from(s: ShapeSpec) -> Self {
        match s {
            ShapeSpec::Random => PerturbationShape::Random,
            ShapeSpec::Coherent => PerturbationShape::Coherent,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    TopLevel,
    Truth,
    /// Exact Ornstein-Uhlenbeck solution on the base grid (OU only).
    ExactOu,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default)]
    pub kind: ReferenceKind,
    #[serde(default = "default_reference_steps")]
    pub n_steps: usize,
}

fn default_reference_steps() -> usize {
    1000
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::TopLevel,
            n_steps: default_reference_steps(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Em,
    Mlem,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostModeSpec {
    Paper,
    #[default]
    Full,
}

impl From<CostModeSpec> for CostMode {
    fn from(m: CostModeSpec) -> Self {
        match m {
            CostModeSpec::Paper => CostMode::Paper,
            CostModeSpec::Full => CostMode::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum KmaxRuleSpec {
    #[default]
    Statement,
    Proof,
}

impl From<KmaxRuleSpec> for KmaxRule {
    fn from(r: KmaxRuleSpec) -> Self {
        match r {
            KmaxRuleSpec::Statement => KmaxRule::Statement,
            KmaxRuleSpec::Proof => KmaxRule::Proof,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Theorem parameters for `solver.eps_target`; the ladder must cover
    /// the resulting level range.
    Theorem {
        #[serde(default)]
        kmax_rule: KmaxRuleSpec,
    },
    InverseCost {
        constant: f64,
    },
    PowerLaw {
        constant: f64,
        exponent: f64,
    },
    /// Key-value schedule file written by `train-probs`.
    Learned {
        file: PathBuf,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub method: Method,
    pub n_steps: Vec<usize>,
    /// Euler-Maruyama levels; the top level when empty.
    #[serde(default)]
    pub levels: Vec<i64>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    /// Multipliers of the schedule constant `C`.
    #[serde(default)]
    pub scales: Vec<f64>,
    /// Shifts `beta_k += delta` for learned schedules.
    #[serde(default)]
    pub shifts: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_true")]
    pub shared_bernoulli: bool,
    #[serde(default)]
    pub cost_mode: CostModeSpec,
    #[serde(default)]
    pub plan_seed: u64,
    #[serde(default)]
    pub eps_target: Option<f64>,
    /// Index of an earlier ML-EM block; this block's schedule constant is
    /// then fitted to each of that block's expected costs instead of using
    /// `scales`.
    #[serde(default)]
    pub match_solver: Option<usize>,
}

fn default_trials() -> usize {
    15
}

fn default_batch() -> usize {
    200
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub n_steps: usize,
    #[serde(default = "default_sgd_steps")]
    pub steps: usize,
    #[serde(default = "default_training_batch")]
    pub batch: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub learning_rate: f64,
    /// Seed of the SGD minibatches (plans and directions).
    pub seed: u64,
    /// Seed of the training noise paths; `seed` when absent.
    #[serde(default)]
    pub noise_seed: Option<u64>,
    /// Initial time-constant probability per level (same order as the ladder).
    pub init_probs: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub output: PathBuf,
}

fn default_sgd_steps() -> usize {
    50
}

fn default_training_batch() -> usize {
    300
}

fn default_lambda() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    mlem::adaptive::DEFAULT_DELTA
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpmCheckSpec {
    pub betas: Vec<f64>,
    #[serde(default = "default_t_match")]
    pub t_match: f64,
    #[serde(default = "default_states")]
    pub n_states: usize,
    pub seed: u64,
}

fn default_t_match() -> f64 {
    1.0
}

fn default_states() -> usize {
    256
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config and resolves relative file paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let ProblemSpec::MixtureDdpm(m) | ProblemSpec::MixtureDdim(m) = &mut self.problem {
            if let Some(f) = m.mixture.file.as_mut() {
                fix(f);
            }
        }
        for s in &mut self.solver {
            if let Some(ScheduleSpec::Learned { file }) = s.schedule.as_mut() {
                fix(file);
            }
        }
        if let Some(t) = self.training.as_mut() {
            fix(&mut t.output);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let base = self.base_steps();
        ensure!(base > 0, "problem.base_steps must be positive");
        match &self.problem {
            ProblemSpec::Ou {
                dim,
                sigma,
                horizon,
                x0,
                ..
            } => {
                ensure!(*dim > 0, "problem.dim must be positive");
                ensure!(
                    *sigma >= 0.0 && *horizon > 0.0,
                    "problem.sigma must be >= 0 and horizon > 0"
                );
                if let Some(x0) = x0 {
                    ensure!(x0.len() == *dim, "problem.x0 must have {dim} entries");
                }
            }
            ProblemSpec::MixtureDdpm(m) | ProblemSpec::MixtureDdim(m) => {
                ensure!(
                    m.t_start > m.t_min && m.t_min >= 0.0,
                    "need 0 <= t_min < t_start"
                );
                ensure!(
                    m.mixture.file.is_some() != !m.mixture.components.is_empty(),
                    "mixture needs exactly one of `file` or `components`"
                );
                if self.reference.kind == ReferenceKind::ExactOu {
                    bail!("reference kind exact_ou needs an OU problem");
                }
            }
        }
        let l = &self.ladder;
        ensure!(
            l.c > 0.0 && l.gamma > 0.0,
            "ladder.c and ladder.gamma must be positive"
        );
        ensure!(l.k_min <= l.k_max, "ladder level range is empty");
        ensure!(
            l.max_freq > 0.0 && l.time_decay >= 0.0,
            "ladder.max_freq must be > 0 and time_decay >= 0"
        );
        for k in &l.levels {
            ensure!(
                (l.k_min..=l.k_max).contains(k),
                "ladder.levels entry {k} outside [k_min, k_max]"
            );
        }
        ensure!(
            self.reference.n_steps > 0 && base.is_multiple_of(self.reference.n_steps),
            "reference.n_steps = {} does not divide base_steps = {base}",
            self.reference.n_steps
        );
        for (i, s) in self.solver.iter().enumerate() {
            ensure!(!s.n_steps.is_empty(), "solver[{i}].n_steps is empty");
            for &n in &s.n_steps {
                ensure!(
                    n > 0 && base.is_multiple_of(n),
                    "solver[{i}]: n_steps {n} does not divide base_steps {base}"
                );
            }
            ensure!(
                s.batch > 0 && s.trials > 0,
                "solver[{i}]: batch and trials must be positive"
            );
            match s.method {
                Method::Em => ensure!(s.schedule.is_none(), "solver[{i}]: EM takes no schedule"),
                Method::Mlem => {
                    let Some(sched) = &s.schedule else {
                        bail!("solver[{i}]: ML-EM needs a schedule")
                    };
                    if matches!(sched, ScheduleSpec::Theorem { .. }) {
                        ensure!(
                            s.eps_target.is_some_and(|e| e > 0.0),
                            "solver[{i}]: theorem schedule needs eps_target > 0"
                        );
                    }
                    ensure!(
                        s.shifts.is_empty() || matches!(sched, ScheduleSpec::Learned { .. }),
                        "solver[{i}]: shifts apply to learned schedules only"
                    );
                }
            }
            ensure!(
                s.scales.iter().all(|&c| c > 0.0),
                "solver[{i}]: scales must be positive"
            );
            if let Some(j) = s.match_solver {
                ensure!(
                    j < i && self.solver[j].method == Method::Mlem && s.method == Method::Mlem,
                    "solver[{i}]: match_solver must name an earlier ML-EM block"
                );
                ensure!(
                    s.scales.is_empty() && s.shifts.is_empty(),
                    "solver[{i}]: match_solver replaces scales and shifts"
                );
            }
        }
        if let Some(t) = &self.training {
            ensure!(
                t.steps > 0 && t.batch > 0,
                "training.steps and training.batch must be positive"
            );
            ensure!(
                t.n_steps > 0 && base.is_multiple_of(t.n_steps),
                "training.n_steps must divide base_steps"
            );
            ensure!(t.lambda >= 0.0, "training.lambda must be >= 0");
            ensure!(
                t.init_probs.iter().all(|&p| p > 0.0 && p < 1.0),
                "training.init_probs must lie in (0, 1)"
            );
        }
        if let Some(d) = &self.ddpm_check {
            ensure!(
                d.betas.iter().all(|&b| b > 0.0 && b < 1.0),
                "ddpm_check.betas must lie in (0, 1)"
            );
            ensure!(d.n_states > 0, "ddpm_check.n_states must be positive");
        }
        Ok(())
    }

    pub fn base_steps(&self) -> usize {
        match &self.problem {
            ProblemSpec::Ou { base_steps, .. } => *base_steps,
            ProblemSpec::MixtureDdpm(m) | ProblemSpec::MixtureDdim(m) => m.base_steps,
        }
    }

    pub fn mixture(&self) -> Result<Option<GaussianMixture>> {
        let (ProblemSpec::MixtureDdpm(m) | ProblemSpec::MixtureDdim(m)) = &self.problem else {
            return Ok(None);
        };
        let mix = match &m.mixture.file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                GaussianMixture::parse(&text)?
            }
            None => {
                let c = &m.mixture.components;
                GaussianMixture::new(
                    c.iter().map(|c| c.weight).collect(),
                    c.iter().map(|c| c.mean.clone()).collect(),
                    c.iter().map(|c| c.variance).collect(),
                )?
            }
        };
        Ok(Some(mix))
    }

    pub fn build_ladder(&self) -> Result<DriftLadder> {
        let truth: DriftField = match &self.problem {
            ProblemSpec::Ou { dim, rate, .. } => Arc::new(LinearDrift::new(*rate, *dim)),
            ProblemSpec::MixtureDdpm(_) => {
                Arc::new(BackwardSdeDrift::new(Arc::new(self.mixture()?.unwrap())))
            }
            ProblemSpec::MixtureDdim(_) => {
                Arc::new(BackwardOdeDrift::new(Arc::new(self.mixture()?.unwrap())))
            }
        };
        let l = &self.ladder;
        let full = SyntheticLadder {
            prefactor: l.c,
            gamma: l.gamma,
            k_min: l.k_min,
            k_max: l.k_max,
            seed: l.seed,
            max_freq: l.max_freq,
            shape: l.shape.into(),
            time_decay: l.time_decay,
        }
        .build(truth)?;
        Ok(if l.levels.is_empty() {
            full
        } else {
            full.subset(&l.levels)?
        })
    }

    pub fn build_problem(&self) -> Result<SdeProblem> {
        let ladder = Arc::new(self.build_ladder()?);
        let problem = match &self.problem {
            ProblemSpec::Ou {
                dim,
                sigma,
                horizon,
                x0,
                base_steps,
                ..
            } => SdeProblem {
                ladder,
                noise: NoiseSchedule::Constant(*sigma),
                start_time: 0.0,
                horizon: *horizon,
                direction: Direction::Forward,
                initial: InitialState::Fixed(x0.clone().unwrap_or_else(|| vec![1.0; *dim])),
                base_steps: *base_steps,
            },
            ProblemSpec::MixtureDdpm(m) => {
                backward_problem(ladder, FlowKind::Sde, m.t_start, m.t_min, m.base_steps)?
            }
            ProblemSpec::MixtureDdim(m) => {
                backward_problem(ladder, FlowKind::Ode, m.t_start, m.t_min, m.base_steps)?
            }
        };
        problem.validate()?;
        Ok(problem)
    }
}

pub fn load_schedule_file(path: &Path) -> Result<AdaptiveParams> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(AdaptiveParams::parse_kv(&text)?)
}
