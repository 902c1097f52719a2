//! Schedule training and the discrete-vs-continuous diffusion check.

use anyhow::{bail, Context, Result};
use rand::Rng;
use rand_distr::StandardNormal;

use mlem::adaptive::{
    sgd_train, AdaptiveParams, ReferenceKind as TrainReference, SgdConfig, TrainOutcome,
    TrainingProblem,
};
use mlem::diffusion::{discretization_gap_check, GapStats};
use mlem::sde::noise::keyed_rng;
use mlem::{DriftLadder, SdeProblem};

use crate::config::{ExperimentConfig, ReferenceKind};

/// `T_k = C(f^k) / (n_steps C(f^{k_max}))`, so the regularizer is the
/// expected cost relative to running the top level at every step.
pub fn normalized_cost_table(ladder: &DriftLadder, n_steps: usize) -> Vec<f64> {
    let top = ladder.top().cost;
    ladder
        .levels()
        .iter()
        .map(|l| l.cost / (n_steps as f64 * top))
        .collect()
}

pub fn training_problem(
    config: &ExperimentConfig,
    problem: &SdeProblem,
) -> Result<TrainingProblem> {
    let t = config
        .training
        .as_ref()
        .context("config has no [training] section")?;
    let n = config.reference.n_steps;
    let reference = match config.reference.kind {
        ReferenceKind::TopLevel => TrainReference::TopLevel { n_steps: n },
        ReferenceKind::Truth => TrainReference::Truth { n_steps: n },
        ReferenceKind::ExactOu => bail!("training supports top_level or truth references"),
    };
    Ok(TrainingProblem {
        problem: problem.clone(),
        n_steps: t.n_steps,
        reference,
        lambda: t.lambda,
        cost_table: normalized_cost_table(&problem.ladder, t.n_steps),
        batch_size: t.batch,
        noise_seed: t.noise_seed.unwrap_or(t.seed),
    })
}

/// Trains from time-constant initial probabilities and writes the schedule file.
pub fn train_probs(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let t = config
        .training
        .as_ref()
        .context("config has no [training] section")?;
    let problem = config.build_problem()?;
    let levels: Vec<i64> = problem.ladder.levels().iter().map(|l| l.k).collect();
    if t.init_probs.len() != levels.len() {
        bail!(
            "training.init_probs has {} entries for {} ladder levels",
            t.init_probs.len(),
            levels.len()
        );
    }
    let params0 = AdaptiveParams::constant(levels, &t.init_probs, t.delta)?;
    let ctx = training_problem(config, &problem)?;
    let sgd = SgdConfig {
        steps: t.steps,
        learning_rate: t.learning_rate,
        seed: t.seed,
        ..SgdConfig::default()
    };
    let outcome = sgd_train(&ctx, &params0, &sgd)?;
    std::fs::write(&t.output, outcome.params.to_kv_string())
        .with_context(|| format!("writing {}", t.output.display()))?;
    Ok(outcome)
}

pub fn ddpm_check(config: &ExperimentConfig) -> Result<Vec<GapStats>> {
    let spec = config
        .ddpm_check
        .as_ref()
        .context("config has no [ddpm_check] section")?;
    let mix = config
        .mixture()?
        .context("ddpm-check needs a mixture problem")?;
    let mut rng = keyed_rng(&[spec.seed, 0x9A9]);
    let mut normals = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..mix.dim()).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    };
    let states = normals(spec.n_states);
    let noises = normals(spec.n_states);
    spec.betas
        .iter()
        .map(|&b| {
            Ok(discretization_gap_check(
                &mix,
                b,
                spec.t_match,
                &states,
                &noises,
            )?)
        })
        .collect()
}
