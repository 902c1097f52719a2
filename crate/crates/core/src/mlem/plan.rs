use crate::mlem::schedule::LevelSchedule;
use crate::sde::noise::keyed_uniform;

const PLAN_TAG: u64 = 0xB3E7_0011;

/// Realized activations `B^k` for every step and level.
///
/// Draws are `u(plan_seed, step, k) < p_k(t_step)` with counter-based
/// uniforms, so plans for different schedules sharing a seed are coupled.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliPlan {
    pub plan_seed: u64,
    levels: Vec<i64>,
    n_steps: usize,
    draws: Vec<bool>,
    probs: Vec<f64>,
}

impl BernoulliPlan {
    pub fn draw(
        plan_seed: u64,
        levels: &[i64],
        schedule: &LevelSchedule,
        step_times: &[f64],
    ) -> Self {
        let nl = levels.len();
        let mut draws = Vec::with_capacity(step_times.len() * nl);
        let mut probs = Vec::with_capacity(step_times.len() * nl);
        for (step, &t) in step_times.iter().enumerate() {
            for &k in levels {
                let p = schedule.prob(k, t);
                let u = keyed_uniform(&[plan_seed, step as u64, k as u64, PLAN_TAG]);
                draws.push(u < p);
                probs.push(p);
            }
        }
        Self {
            plan_seed,
            levels: levels.to_vec(),
            n_steps: step_times.len(),
            draws,
            probs,
        }
    }

    /// Explicit draws, row-major by step; probabilities are left unknown.
    pub fn from_draws(levels: &[i64], n_steps: usize, draws: Vec<bool>) -> Self {
        assert_eq!(draws.len(), n_steps * levels.len(), "draw matrix shape");
        Self {
            plan_seed: 0,
            levels: levels.to_vec(),
            n_steps,
            probs: vec![f64::NAN; draws.len()],
            draws,
        }
    }

    pub fn all_active(levels: &[i64], n_steps: usize) -> Self {
        Self::from_draws(levels, n_steps, vec![true; n_steps * levels.len()])
    }

    pub fn levels(&self) -> &[i64] {
        &self.levels
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self, step: usize) -> &[bool] {
        let nl = self.levels.len();
        &self.draws[step * nl..(step + 1) * nl]
    }

    pub fn probabilities(&self, step: usize) -> &[f64] {
        let nl = self.levels.len();
        &self.probs[step * nl..(step + 1) * nl]
    }

    pub fn is_active(&self, step: usize, level_pos: usize) -> bool {
        self.draws[step * self.levels.len() + level_pos]
    }

    pub fn active_count(&self, level_pos: usize) -> usize {
        (0..self.n_steps)
            .filter(|&s| self.is_active(s, level_pos))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_are_reproducible_and_cover_all_cells() {
        let s = LevelSchedule::PowerLaw {
            constant: 0.6,
            exponent: 0.5,
        };
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
        let a = BernoulliPlan::draw(9, &[0, 1, 2], &s, &times);
        let b = BernoulliPlan::draw(9, &[0, 1, 2], &s, &times);
        assert_eq!(a, b);
        assert_eq!(a.n_steps(), 50);
        assert_eq!(a.step(49).len(), 3);
        assert_ne!(a, BernoulliPlan::draw(10, &[0, 1, 2], &s, &times));
    }

    #[test]
    fn larger_probabilities_dominate_coupled_draws() {
        let times = vec![0.0; 200];
        let lo = BernoulliPlan::draw(
            1,
            &[2],
            &LevelSchedule::PowerLaw {
                constant: 0.2,
                exponent: 0.0,
            },
            &times,
        );
        let hi = BernoulliPlan::draw(
            1,
            &[2],
            &LevelSchedule::PowerLaw {
                constant: 0.7,
                exponent: 0.0,
            },
            &times,
        );
        for s in 0..200 {
            assert!(!lo.is_active(s, 0) || hi.is_active(s, 0));
        }
    }
}
