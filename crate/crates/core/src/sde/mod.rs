//! Shared SDE abstractions: drift ladders, noise, problems, trajectories and
//! cost accounting.

pub mod drift;
pub mod ladder;
pub mod noise;
pub mod ou;

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use ladder::DriftLadder;
use noise::BrownianPath;

/// Isotropic noise level `sigma(t)`; identically zero gives an ODE.
#[derive(Clone)]
pub enum NoiseSchedule {
    Constant(f64),
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl NoiseSchedule {
    pub fn sigma(&self, t: f64) -> f64 {
        match self {
            Self::Constant(s) => *s,
            Self::Custom(f) => f(t),
        }
    }

    pub fn is_ode(&self) -> bool {
        matches!(self, Self::Constant(s) if *s == 0.0)
    }
}

impl fmt::Debug for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(s) => write!(f, "Constant({s})"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Whether solver time runs with or against the ladder's time coordinate.
///
/// Backward problems integrate `-dx = f_t(x) dt + sigma dW` from
/// `start_time` down to `start_time - horizon`, which is the forward SDE
/// `dx = f_{start - s}(x) ds + sigma dW_s` in the reversed clock `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    Fixed(Vec<f64>),
    /// `scale * Z` with `Z` drawn from the path's initial channel.
    Gaussian {
        scale: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SdeProblem {
    pub ladder: Arc<DriftLadder>,
    pub noise: NoiseSchedule,
    pub start_time: f64,
    pub horizon: f64,
    pub direction: Direction,
    pub initial: InitialState,
    /// Resolution of the Brownian grid; solver step counts must divide it.
    pub base_steps: usize,
}

impl SdeProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(invalid("horizon", "must be positive"));
        }
        if self.base_steps == 0 {
            return Err(invalid("base_steps", "must be positive"));
        }
        if let InitialState::Fixed(x0) = &self.initial {
            if x0.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: x0.len(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.ladder.dim()
    }

    pub fn step_size(&self, n_steps: usize) -> f64 {
        self.horizon / n_steps as f64
    }

    /// Ladder time at the start of step `step`.
    pub fn time_at(&self, step: usize, n_steps: usize) -> f64 {
        let s = self.horizon * step as f64 / n_steps as f64;
        match self.direction {
            Direction::Forward => self.start_time + s,
            Direction::Backward => self.start_time - s,
        }
    }

    pub fn times(&self, n_steps: usize) -> Vec<f64> {
        (0..=n_steps).map(|i| self.time_at(i, n_steps)).collect()
    }

    pub fn initial_state(&self, path: &BrownianPath) -> Vec<f64> {
        match &self.initial {
            InitialState::Fixed(x0) => x0.clone(),
            InitialState::Gaussian { scale } => {
                path.initial_normal().iter().map(|z| scale * z).collect()
            }
        }
    }

    pub fn check_path(&self, path: &BrownianPath, n_steps: usize) -> Result<()> {
        if path.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: path.dim(),
            });
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be at least 1"));
        }
        path.block_size(n_steps).map(|_| ())
    }

    /// Same problem over a different ladder.
    pub fn with_ladder(&self, ladder: Arc<DriftLadder>) -> Self {
        Self {
            ladder,
            ..self.clone()
        }
    }
}

/// Which ladder evaluations a multilevel step is charged for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CostMode {
    /// One charge `C(f^k)` per active level `k`, ignoring `f^(k-1)`.
    Paper,
    /// Every distinct estimator evaluation actually performed.
    #[default]
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostRecord {
    pub step: usize,
    pub level: i64,
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostLedger {
    records: Vec<CostRecord>,
    total: f64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, step: usize, level: i64, cost: f64) {
        self.records.push(CostRecord { step, level, cost });
        self.total += cost;
    }

    pub fn records(&self) -> &[CostRecord] {
        &self.records
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn count_level(&self, level: i64) -> usize {
        self.records.iter().filter(|r| r.level == level).count()
    }

    pub fn step_total(&self, step: usize) -> f64 {
        self.records
            .iter()
            .filter(|r| r.step == step)
            .map(|r| r.cost)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub ledger: CostLedger,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_total_is_sum_of_records() {
        let mut l = CostLedger::new();
        l.record(0, 1, 8.0);
        l.record(0, 2, 64.0);
        l.record(1, 1, 8.0);
        assert_eq!(l.total(), 80.0);
        assert_eq!(l.step_total(0) + l.step_total(1), l.total());
        assert_eq!(l.count_level(1), 2);
    }
}
