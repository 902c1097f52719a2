//! Ladders of drift estimators with geometrically shrinking error and
//! geometrically growing cost.

use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::sde::drift::{Drift, DriftField, PerturbedDrift, SinusoidPerturbation, ZeroDrift};
use crate::sde::noise::keyed_rng;

#[derive(Clone, Debug)]
pub struct Level {
    pub k: i64,
    pub field: DriftField,
    pub cost: f64,
}

/// Estimators `f^k` for increasing `k`, preceded by an implicit zero field
/// standing in for level `k_min - 1`.
///
/// Levels need not be consecutive: a subset such as `{1, 3, 5}` telescopes
/// over its own predecessors.
#[derive(Clone, Debug)]
pub struct DriftLadder {
    levels: Vec<Level>,
    zero: DriftField,
    truth: Option<DriftField>,
    prefactor: f64,
    gamma: f64,
}

/// `c^gamma * 2^(gamma * k)`.
pub fn scaling_cost(prefactor: f64, gamma: f64, k: i64) -> f64 {
    prefactor.powf(gamma) * (gamma * k as f64).exp2()
}

/// `2^-k`.
pub fn error_bound(k: i64) -> f64 {
    (-(k as f64)).exp2()
}

impl DriftLadder {
    pub fn new(levels: Vec<Level>, prefactor: f64, gamma: f64) -> Result<Self> {
        let first = levels
            .first()
            .ok_or_else(|| invalid("levels", "ladder is empty"))?;
        let dim = first.field.dim();
        if levels.windows(2).any(|w| w[0].k >= w[1].k) {
            return Err(invalid(
                "levels",
                "level indices must be strictly increasing",
            ));
        }
        if let Some(l) = levels.iter().find(|l| l.field.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: l.field.dim(),
            });
        }
        if levels.iter().any(|l| !(l.cost >= 0.0)) {
            return Err(invalid("cost", "costs must be nonnegative"));
        }
        Ok(Self {
            levels,
            zero: Arc::new(ZeroDrift::new(dim)),
            truth: None,
            prefactor,
            gamma,
        })
    }

    pub fn with_truth(mut self, truth: DriftField) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn truth(&self) -> Option<&DriftField> {
        self.truth.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].field.dim()
    }

    pub fn prefactor(&self) -> f64 {
        self.prefactor
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn k_min(&self) -> i64 {
        self.levels[0].k
    }

    pub fn k_max(&self) -> i64 {
        self.levels[self.levels.len() - 1].k
    }

    pub fn position(&self, k: i64) -> Result<usize> {
        self.levels
            .iter()
            .position(|l| l.k == k)
            .ok_or(Error::LevelOutOfRange {
                level: k,
                min: self.k_min(),
                max: self.k_max(),
            })
    }

    pub fn level(&self, k: i64) -> Result<&Level> {
        self.position(k).map(|i| &self.levels[i])
    }

    /// The field telescoped against `levels()[index]`.
    pub fn predecessor(&self, index: usize) -> &DriftField {
        if index == 0 {
            &self.zero
        } else {
            &self.levels[index - 1].field
        }
    }

    pub fn zero_field(&self) -> &DriftField {
        &self.zero
    }

    pub fn cost_units(&self, k: i64) -> Result<f64> {
        self.level(k).map(|l| l.cost)
    }

    pub fn top(&self) -> &Level {
        &self.levels[self.levels.len() - 1]
    }

    /// Largest Lipschitz bound over all levels and the attached truth.
    pub fn lipschitz_bound(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.field.lipschitz_bound())
            .chain(self.truth.iter().map(|t| t.lipschitz_bound()))
            .fold(0.0, f64::max)
    }

    /// Whether the scaling law prices level `k_min - 1` below one unit, so
    /// that it may be taken as the zero estimator.
    pub fn zero_level_is_free(&self) -> bool {
        scaling_cost(self.prefactor, self.gamma, self.k_min() - 1) < 1.0
    }

    /// Restriction to the listed levels, in increasing order.
    pub fn subset(&self, ks: &[i64]) -> Result<Self> {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let levels = ks
            .iter()
            .map(|&k| self.level(k).cloned())
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(levels, self.prefactor, self.gamma)?;
        out.truth = self.truth.clone();
        Ok(out)
    }
}

/// How the seed-derived perturbations `u_k` are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PerturbationShape {
    /// Random directions, temporal frequencies and phases per level.
    #[default]
    Random,
    /// See [`SinusoidPerturbation::coherent`].
    Coherent,
}

/// Planted-error ladder over a known drift.
#[derive(Clone, Debug)]
pub struct SyntheticLadder {
    pub prefactor: f64,
    pub gamma: f64,
    pub k_min: i64,
    pub k_max: i64,
    pub seed: u64,
    /// Bound on each spatial frequency of the perturbations.
    pub max_freq: f64,
    pub shape: PerturbationShape,
    /// Perturbations are damped by `exp(-time_decay * t)`; zero keeps them
    /// uniform in time.
    pub time_decay: f64,
}

impl SyntheticLadder {
    pub fn build(&self, truth: DriftField) -> Result<DriftLadder> {
        if !(self.gamma > 0.0) {
            return Err(invalid("gamma", "must be positive"));
        }
        if !(self.prefactor > 0.0) {
            return Err(invalid("c", "must be positive"));
        }
        if !(self.time_decay >= 0.0) {
            return Err(invalid("time_decay", "must be nonnegative"));
        }
        if self.k_min > self.k_max {
            return Err(invalid("k_min", "level range is empty"));
        }
        let dim = truth.dim();
        let levels = (self.k_min..=self.k_max)
            .map(|k| {
                let u = match self.shape {
                    PerturbationShape::Random => {
                        SinusoidPerturbation::from_seed(self.seed, k, dim, self.max_freq)
                    }
                    PerturbationShape::Coherent => {
                        SinusoidPerturbation::coherent(self.seed, k, dim, self.max_freq)
                    }
                };
                let field: DriftField = Arc::new(
                    PerturbedDrift::new(truth.clone(), error_bound(k), u)
                        .with_time_decay(self.time_decay),
                );
                Level {
                    k,
                    field,
                    cost: scaling_cost(self.prefactor, self.gamma, k),
                }
            })
            .collect();
        Ok(DriftLadder::new(levels, self.prefactor, self.gamma)?.with_truth(truth))
    }
}

/// `f^k = truth + 2^-k u_k` for `k_min..=k_max`, costs `c^gamma 2^(gamma k)`.
pub fn make_synthetic_ladder(
    truth: DriftField,
    c: f64,
    gamma: f64,
    k_min: i64,
    k_max: i64,
    perturb_seed: u64,
) -> Result<DriftLadder> {
    SyntheticLadder {
        prefactor: c,
        gamma,
        k_min,
        k_max,
        seed: perturb_seed,
        max_freq: 1.0,
        shape: PerturbationShape::Random,
        time_decay: 0.0,
    }
    .build(truth)
}

/// Box of `(t, x)` inputs for sampled sup-norm checks.
#[derive(Clone, Debug)]
pub struct SampleDomain {
    pub t_range: (f64, f64),
    pub radius: f64,
    pub seed: u64,
}

impl SampleDomain {
    pub fn sample(&self, dim: usize, n: usize) -> Vec<(f64, Vec<f64>)> {
        let mut rng = keyed_rng(&[self.seed, 0xD0_3A17]);
        (0..n)
            .map(|_| {
                let t = if self.t_range.0 < self.t_range.1 {
                    rng.gen_range(self.t_range.0..self.t_range.1)
                } else {
                    self.t_range.0
                };
                let x = (0..dim)
                    .map(|_| rng.gen_range(-self.radius..=self.radius))
                    .collect();
                (t, x)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelErrorRow {
    pub k: i64,
    pub sup_error: f64,
    pub cost: f64,
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Largest observed `||f^k - truth||` per level over sampled inputs.
pub fn ladder_error_report(
    ladder: &DriftLadder,
    truth: &dyn Drift,
    n_samples: usize,
    domain: &SampleDomain,
) -> Result<Vec<LevelErrorRow>> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let dim = ladder.dim();
    let points = domain.sample(dim, n_samples);
    let mut fk = vec![0.0; dim];
    let mut ft = vec![0.0; dim];
    Ok(ladder
        .levels()
        .iter()
        .map(|level| {
            let sup_error = points.iter().fold(0.0_f64, |acc, (t, x)| {
                level.field.eval(*t, x, &mut fk);
                truth.eval(*t, x, &mut ft);
                acc.max(euclid_dist(&fk, &ft))
            });
            LevelErrorRow {
                k: level.k,
                sup_error,
                cost: level.cost,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::drift::{eval_vec, LinearDrift};

    fn domain() -> SampleDomain {
        SampleDomain {
            t_range: (0.0, 2.0),
            radius: 3.0,
            seed: 11,
        }
    }

    #[test]
    fn cost_follows_scaling_law() {
        let truth: DriftField = Arc::new(ZeroDrift::new(1));
        let ladder = make_synthetic_ladder(truth, 1.0, 3.0, 0, 4, 1).unwrap();
        assert_eq!(ladder.cost_units(2).unwrap(), 64.0);
        assert!(ladder.zero_level_is_free());
    }

    #[test]
    fn zero_truth_levels_are_bounded_by_error() {
        let truth: DriftField = Arc::new(ZeroDrift::new(2));
        let ladder = make_synthetic_ladder(truth, 1.0, 3.0, 0, 5, 42).unwrap();
        for (t, x) in domain().sample(2, 2_000) {
            for l in ladder.levels() {
                let v = eval_vec(l.field.as_ref(), t, &x);
                assert!(v.iter().map(|a| a * a).sum::<f64>().sqrt() <= error_bound(l.k) + 1e-15);
            }
        }
    }

    #[test]
    fn dense_sampling_respects_level_three_bound() {
        let truth: DriftField = Arc::new(LinearDrift::new(1.0, 2));
        let ladder = make_synthetic_ladder(truth.clone(), 1.0, 3.0, 0, 5, 7).unwrap();
        let report = ladder_error_report(&ladder, truth.as_ref(), 10_000, &domain()).unwrap();
        let row = report.iter().find(|r| r.k == 3).unwrap();
        assert!(row.sup_error <= 0.125 + 1e-15);
        assert!(row.sup_error > 0.1);
        assert!(report.windows(2).all(|w| w[1].sup_error <= w[0].sup_error));
    }

    #[test]
    fn consecutive_levels_are_sandwiched() {
        let truth: DriftField = Arc::new(LinearDrift::new(0.5, 2));
        let ladder = make_synthetic_ladder(truth, 1.0, 2.5, 1, 6, 3).unwrap();
        for (t, x) in domain().sample(2, 2_000) {
            for (i, l) in ladder.levels().iter().enumerate().skip(1) {
                let a = eval_vec(l.field.as_ref(), t, &x);
                let b = eval_vec(ladder.predecessor(i).as_ref(), t, &x);
                assert!(euclid_dist(&a, &b) <= 3.0 * error_bound(l.k) + 1e-15);
            }
        }
    }

    #[test]
    fn subset_keeps_selected_levels() {
        let truth: DriftField = Arc::new(ZeroDrift::new(1));
        let ladder = make_synthetic_ladder(truth, 1.0, 2.0, 1, 5, 0).unwrap();
        let sub = ladder.subset(&[5, 1, 3]).unwrap();
        assert_eq!(
            sub.levels().iter().map(|l| l.k).collect::<Vec<_>>(),
            vec![1, 3, 5]
        );
        assert_eq!(sub.cost_units(3).unwrap(), 64.0);
        assert!(sub.level(2).is_err());
        assert!(ladder.subset(&[9]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let truth: DriftField = Arc::new(ZeroDrift::new(1));
        assert!(make_synthetic_ladder(truth.clone(), 1.0, 0.0, 0, 2, 0).is_err());
        assert!(make_synthetic_ladder(truth.clone(), 1.0, 2.0, 3, 2, 0).is_err());
        assert!(make_synthetic_ladder(truth, -1.0, 2.0, 0, 2, 0).is_err());
    }

    #[test]
    fn time_decay_damps_the_planted_error() {
        let truth: DriftField = Arc::new(LinearDrift::new(1.0, 2));
        let spec = |time_decay| SyntheticLadder {
            prefactor: 1.0,
            gamma: 2.0,
            k_min: 0,
            k_max: 2,
            seed: 3,
            max_freq: 1.0,
            shape: PerturbationShape::Random,
            time_decay,
        };
        let flat = spec(0.0).build(truth.clone()).unwrap();
        let damped = spec(2.0).build(truth.clone()).unwrap();
        let x = [0.3, -0.8];
        for t in [0.0, 0.5, 1.5] {
            let base = eval_vec(truth.as_ref(), t, &x);
            for (a, b) in flat.levels().iter().zip(damped.levels()) {
                let (fa, fb) = (eval_vec(a.field.as_ref(), t, &x), eval_vec(b.field.as_ref(), t, &x));
                for j in 0..2 {
                    let expected = (fa[j] - base[j]) * (-2.0 * t).exp();
                    assert!((fb[j] - base[j] - expected).abs() < 1e-14);
                }
            }
        }
        assert!(spec(-1.0).build(truth).is_err());
    }
}
