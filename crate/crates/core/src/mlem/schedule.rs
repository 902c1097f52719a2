use serde::{Deserialize, Serialize};

use crate::adaptive::AdaptiveParams;
use crate::sde::ladder::DriftLadder;

/// Rule assigning each level `k` and time `t` an activation probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum LevelSchedule {
    /// `min(C 2^{-(1 + gamma/2) k}, 1)`.
    Theorem { constant: f64, gamma: f64 },
    /// `min(C / T_k, 1)` for per-level costs `T_k`.
    InverseCost {
        constant: f64,
        costs: Vec<(i64, f64)>,
    },
    /// `min(C 2^{-exponent k}, 1)`.
    PowerLaw { constant: f64, exponent: f64 },
    /// `sigmoid(alpha_k log(t + delta) + beta_k)`.
    Learned(AdaptiveParams),
}

impl LevelSchedule {
    pub fn inverse_cost(constant: f64, ladder: &DriftLadder) -> Self {
        Self::InverseCost {
            constant,
            costs: ladder.levels().iter().map(|l| (l.k, l.cost)).collect(),
        }
    }

    /// Every level active at every step.
    pub fn always() -> Self {
        Self::PowerLaw {
            constant: 1.0,
            exponent: 0.0,
        }
    }

    pub fn prob(&self, k: i64, t: f64) -> f64 {
        match self {
            Self::Theorem { constant, gamma } => {
                (constant * (-(1.0 + gamma / 2.0) * k as f64).exp2()).min(1.0)
            }
            Self::PowerLaw { constant, exponent } => {
                (constant * (-exponent * k as f64).exp2()).min(1.0)
            }
            Self::InverseCost { constant, costs } => match costs.iter().find(|(kk, _)| *kk == k) {
                Some(&(_, c)) if c > 0.0 => (constant / c).min(1.0),
                Some(_) => 1.0,
                None => 0.0,
            },
            Self::Learned(params) => params.prob_at(k, t).unwrap_or(0.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Theorem { .. } => "theorem",
            Self::InverseCost { .. } => "inverse_cost",
            Self::PowerLaw { .. } => "power_law",
            Self::Learned(_) => "learned",
        }
    }

    /// Scales the constant `C` (or shifts every `beta_k` by `log(factor)`
    /// for learned schedules, which has the same effect when `p` is small).
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Self::Theorem { constant, gamma } => Self::Theorem {
                constant: constant * factor,
                gamma: *gamma,
            },
            Self::PowerLaw { constant, exponent } => Self::PowerLaw {
                constant: constant * factor,
                exponent: *exponent,
            },
            Self::InverseCost { constant, costs } => Self::InverseCost {
                constant: constant * factor,
                costs: costs.clone(),
            },
            Self::Learned(p) => Self::Learned(p.shifted(factor.ln())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theorem_probability_clamps_at_one() {
        let s = LevelSchedule::Theorem {
            constant: 4.0,
            gamma: 2.0,
        };
        assert_eq!(s.prob(1, 0.0), 1.0);
        assert_eq!(s.prob(2, 0.0), 0.25);
        let probs: Vec<f64> = (0..8).map(|k| s.prob(k, 0.0)).collect();
        assert!(probs.windows(2).all(|w| w[1] <= w[0]));
        assert!(probs.iter().all(|&p| p > 0.0 && p <= 1.0));
    }

    #[test]
    fn inverse_cost_uses_level_costs() {
        let s = LevelSchedule::InverseCost {
            constant: 2.0,
            costs: vec![(1, 8.0), (3, 512.0)],
        };
        assert_eq!(s.prob(1, 0.0), 0.25);
        assert_eq!(s.prob(3, 0.0), 2.0 / 512.0);
        assert_eq!(s.prob(2, 0.0), 0.0);
    }
}
