use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::mlem::mlem_solve_with_plan;
use crate::sde::drift::{ConstantDrift, DriftField, LinearDrift, ZeroDrift};
use crate::sde::ladder::{make_synthetic_ladder, DriftLadder, Level};
use crate::sde::noise::keyed_uniform;
use crate::sde::{CostMode, Direction, InitialState, NoiseSchedule};

fn toy_problem(sigma: f64, n_steps: usize) -> SdeProblem {
    let truth: DriftField = Arc::new(LinearDrift::new(1.0, 1));
    let ladder = make_synthetic_ladder(truth, 1.0, 3.0, 0, 1, 4).unwrap();
    SdeProblem {
        ladder: Arc::new(ladder),
        noise: NoiseSchedule::Constant(sigma),
        start_time: 0.0,
        horizon: 1.0,
        direction: Direction::Forward,
        initial: InitialState::Fixed(vec![1.0]),
        base_steps: n_steps,
    }
}

fn toy_params() -> AdaptiveParams {
    AdaptiveParams::new(vec![0, 1], vec![0.3, -0.4], vec![0.2, -0.5], DEFAULT_DELTA).unwrap()
}

fn zero_path(problem: &SdeProblem) -> BrownianPath {
    BrownianPath::new(
        NoiseDriver::new(1, problem.dim()).unwrap(),
        0,
        problem.base_steps,
    )
    .unwrap()
}

#[test]
fn prob_at_examples() {
    let p = AdaptiveParams::new(vec![1], vec![0.0], vec![0.0], 0.1).unwrap();
    assert_eq!(p.prob_at(1, 3.0).unwrap(), 0.5);
    let sat = AdaptiveParams::new(vec![1], vec![0.0], vec![800.0], 0.1).unwrap();
    assert_eq!(sat.prob_at(1, 0.0).unwrap(), 1.0);
    let log_one = AdaptiveParams::new(vec![1], vec![1.0], vec![0.0], 0.1).unwrap();
    assert_eq!(log_one.prob_at(1, 0.9).unwrap(), 0.5);
    assert!(p.prob_at(2, 0.0).is_err());
    assert!(AdaptiveParams::new(vec![1], vec![0.0], vec![0.0], 0.0).is_err());
}

proptest! {
    #[test]
    fn prob_is_monotone_in_both_coefficients(
        a in -3.0f64..3.0, b in -5.0f64..5.0, d in 0.01f64..1.0, t in 1.0f64..5.0,
    ) {
        let base = AdaptiveParams::new(vec![0], vec![a], vec![b], 0.1).unwrap();
        let up_b = AdaptiveParams::new(vec![0], vec![a], vec![b + d], 0.1).unwrap();
        let up_a = AdaptiveParams::new(vec![0], vec![a + d], vec![b], 0.1).unwrap();
        let p = base.prob_at(0, t).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!(up_b.prob_at(0, t).unwrap() > p);
        prop_assert!(up_a.prob_at(0, t).unwrap() > p);
    }
}

#[test]
fn shift_sweep_moves_beta_only() {
    let p = toy_params();
    let sweep = beta_shift_sweep(&p, &[0.0, 3.0]);
    assert_eq!(sweep[0], p);
    assert_eq!(sweep[1].alpha, p.alpha);
    for k in [0, 1] {
        assert!(sweep[1].prob_at(k, 0.5).unwrap() > p.prob_at(k, 0.5).unwrap());
    }
}

#[test]
fn kv_text_round_trips() {
    let p = AdaptiveParams::new(
        vec![1, 3, 5],
        vec![0.1, -1.0 / 3.0, 2.5e-9],
        vec![1.0, 0.0, -7.25],
        0.1,
    )
    .unwrap();
    let text = p.to_kv_string();
    assert_eq!(AdaptiveParams::parse_kv(&text).unwrap(), p);
    assert!(AdaptiveParams::parse_kv("level.1 = 1.0\n").is_err());
    assert!(AdaptiveParams::parse_kv("gamma = 1.0\n").is_err());
}

#[test]
fn two_point_score_estimator_is_exact_in_expectation() {
    let f = |b: f64| 3.0 * b + 1.0;
    for p in [0.1, 0.5, 0.9] {
        let est = |b: f64| f(b) * (b - p) / (p * (1.0 - p));
        let mean = p * est(1.0) + (1.0 - p) * est(0.0);
        assert!((mean - 3.0).abs() < 1e-12);
    }
}

#[test]
fn sigmoid_beta_estimator_matches_chain_rule() {
    let params = AdaptiveParams::new(vec![0], vec![0.0], vec![0.0], 0.1).unwrap();
    let n = 100_000u64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let b = keyed_uniform(&[i, 77]) < 0.5;
        let plan = BernoulliPlan::from_draws(&[0], 1, vec![b]);
        let loss = 3.0 * if b { 1.0 } else { 0.0 } + 1.0;
        let g = score_function_grad(loss, &plan, &params, &[0.0])
            .unwrap()
            .beta[0];
        s1 += g;
        s2 += g * g;
    }
    let mean = s1 / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - 0.75).abs() < 4.0 * se, "{mean} +- {se}");
}

#[test]
fn zero_loss_gives_zero_score_term() {
    let plan = BernoulliPlan::from_draws(&[0, 1], 1, vec![true, false]);
    let g = score_function_grad(0.0, &plan, &toy_params(), &[0.0]).unwrap();
    assert_eq!(g, GradParts::zeros(2));
}

#[test]
fn directional_derivative_vanishes_for_trivial_inputs() {
    let problem = toy_problem(0.0, 1);
    let path = zero_path(&problem);
    let params = toy_params();
    let active = BernoulliPlan::from_draws(&[0, 1], 1, vec![true, true]);
    let d = forward_directional_grad(&problem, &params, &[0.0; 4], &active, &path, &[0.0]).unwrap();
    assert_eq!(d.derivative, 0.0);
    let idle = BernoulliPlan::from_draws(&[0, 1], 1, vec![false, false]);
    let d = forward_directional_grad(
        &problem,
        &params,
        &[1.0, -2.0, 0.5, 1.0],
        &idle,
        &path,
        &[0.0],
    )
    .unwrap();
    assert_eq!(d.derivative, 0.0);
    assert!(forward_directional_grad(&problem, &params, &[0.0; 3], &idle, &path, &[0.0]).is_err());
}

fn frozen_loss(
    problem: &SdeProblem,
    params: &AdaptiveParams,
    plan: &BernoulliPlan,
    path: &BrownianPath,
    r: f64,
) -> f64 {
    let sched = LevelSchedule::Learned(params.clone());
    let tr = mlem_solve_with_plan(problem, &sched, plan, path, CostMode::Full).unwrap();
    (tr.final_state()[0] - r).powi(2)
}

fn perturb(params: &AdaptiveParams, v: &[f64], h: f64) -> AdaptiveParams {
    let n = params.n_levels();
    let mut out = params.clone();
    for i in 0..n {
        out.alpha[i] += h * v[i];
        out.beta[i] += h * v[n + i];
    }
    out
}

#[test]
fn directional_derivative_matches_finite_differences() {
    let problem = toy_problem(0.0, 1);
    let path = zero_path(&problem);
    let params = toy_params();
    let plan = BernoulliPlan::from_draws(&[0, 1], 1, vec![true, true]);
    let v = [0.4, -1.1, 0.7, 0.3];
    let r = 0.25;
    let d = forward_directional_grad(&problem, &params, &v, &plan, &path, &[r]).unwrap();
    let h = 1e-5;
    let fd = (frozen_loss(&problem, &perturb(&params, &v, h), &plan, &path, r)
        - frozen_loss(&problem, &perturb(&params, &v, -h), &plan, &path, r))
        / (2.0 * h);
    assert!(
        (d.derivative - fd).abs() <= 1e-4 * fd.abs(),
        "{} vs {fd}",
        d.derivative
    );
    assert!((d.loss - frozen_loss(&problem, &params, &plan, &path, r)).abs() < 1e-14);
}

#[test]
fn gaussian_direction_projection_is_unbiased() {
    let g = [1.5, -0.5, 2.0];
    let n = 200_000;
    let mut rng = keyed_rng(&[3]);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let v: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let dot: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        for i in 0..3 {
            sum[i] += dot * v[i];
            sq[i] += (dot * v[i]).powi(2);
        }
    }
    for i in 0..3 {
        let mean = sum[i] / n as f64;
        let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - g[i]).abs() < 4.0 * se);
    }
}

fn lossless_context(lambda: f64) -> TrainingProblem {
    let zero: DriftField = Arc::new(ZeroDrift::new(1));
    let flat = |k| Level {
        k,
        field: Arc::new(ConstantDrift::new(vec![0.0])) as DriftField,
        cost: 1.0,
    };
    let ladder = DriftLadder::new(vec![flat(0), flat(1)], 1.0, 2.0)
        .unwrap()
        .with_truth(zero);
    TrainingProblem {
        problem: SdeProblem {
            ladder: Arc::new(ladder),
            noise: NoiseSchedule::Constant(1.0),
            start_time: 0.0,
            horizon: 1.0,
            direction: Direction::Forward,
            initial: InitialState::Gaussian { scale: 1.0 },
            base_steps: 4,
        },
        n_steps: 4,
        reference: ReferenceKind::TopLevel { n_steps: 4 },
        lambda,
        cost_table: vec![0.25, 1.0],
        batch_size: 8,
        noise_seed: 5,
    }
}

#[test]
fn regularizer_alone_gives_the_closed_form_gradient() {
    let ctx = lossless_context(0.7);
    let params = toy_params();
    let sample = estimate_gradient(&ctx, &params, 1).unwrap();
    assert_eq!(sample.loss, 0.0);
    let mut expect_a = [0.0; 2];
    let mut expect_b = [0.0; 2];
    for s in 0..4 {
        let t = 0.25 * s as f64;
        for i in 0..2 {
            let p = params.prob_at(i as i64, t).unwrap();
            let g = 0.7 * ctx.cost_table[i] * p * (1.0 - p);
            expect_a[i] += g * (t + 0.1).ln();
            expect_b[i] += g;
        }
    }
    for i in 0..2 {
        assert!((sample.estimate.d_alpha[i] - expect_a[i]).abs() < 1e-14);
        assert!((sample.estimate.d_beta[i] - expect_b[i]).abs() < 1e-14);
    }
    let saturated = params.shifted(60.0);
    let g = ctx.regularizer_grad(&saturated);
    assert!(g.beta.iter().all(|v| v.abs() < 1e-20));
}

#[test]
fn estimate_is_the_sum_of_its_parts() {
    let problem = toy_problem(0.5, 2);
    let ctx = TrainingProblem {
        problem,
        n_steps: 2,
        reference: ReferenceKind::Truth { n_steps: 2 },
        lambda: 0.1,
        cost_table: vec![0.1, 0.4],
        batch_size: 16,
        noise_seed: 2,
    };
    let s = estimate_gradient(&ctx, &toy_params(), 3).unwrap();
    let e = &s.estimate;
    for i in 0..2 {
        let a = e.score.alpha[i] + e.pathwise.alpha[i] + e.regularizer.alpha[i];
        assert_eq!(e.d_alpha[i], a);
    }
    assert_eq!(s, estimate_gradient(&ctx, &toy_params(), 3).unwrap());
    assert!((s.objective - s.loss - ctx.regularizer(&toy_params())).abs() < 1e-14);
}

#[test]
fn sgd_with_zero_rate_keeps_params() {
    let ctx = lossless_context(0.1);
    let cfg = SgdConfig {
        steps: 3,
        learning_rate: 0.0,
        ..SgdConfig::default()
    };
    let out = sgd_train(&ctx, &toy_params(), &cfg).unwrap();
    assert_eq!(out.params, toy_params());
    assert_eq!(out.trace.len(), 3);
}

#[test]
fn pure_cost_pressure_lowers_every_beta() {
    let ctx = lossless_context(50.0);
    let mut params = toy_params();
    let cfg = SgdConfig {
        steps: 1,
        learning_rate: 0.01,
        ..SgdConfig::default()
    };
    for _ in 0..10 {
        let next = sgd_train(&ctx, &params, &cfg).unwrap().params;
        for i in 0..2 {
            assert!(next.beta[i] < params.beta[i]);
        }
        params = next;
    }
}

#[test]
fn divergence_is_reported() {
    let ctx = lossless_context(1.0);
    let cfg = SgdConfig {
        steps: 3,
        learning_rate: 0.0,
        seed: 0,
        divergence_factor: 0.5,
    };
    let err = sgd_train(&ctx, &toy_params(), &cfg).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 1, .. }));
}
