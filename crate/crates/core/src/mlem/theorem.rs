//! Parameter choices that guarantee `E ||x_T - y_T||^2 <= eps^2`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mlem::schedule::LevelSchedule;
use crate::theory::{geometric_sum, predicted_cost_bound, BoundForm};

/// Two published forms of the top-level cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
pub enum KmaxRule {
    /// `-floor(log2((2/L) e^{L(T+eta)} eps))`.
    #[default]
    Statement,
    /// `-floor(log2((L/2) e^{-L(T+eta)} eps))`, which makes the truncation
    /// bias `e^{L(T+eta)} 2^{-k_max} / L` at most `eps / 2`.
    Proof,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremInputs {
    pub epsilon: f64,
    pub lipschitz: f64,
    pub horizon: f64,
    pub eta: f64,
    pub prefactor: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremParameters {
    pub k_min: i64,
    /// Cutoff selected by `rule`.
    pub k_max: i64,
    pub k_max_statement: i64,
    pub k_max_proof: i64,
    pub rule: KmaxRule,
    pub constant: f64,
    pub gamma: f64,
    /// `(k, p_k)` for `k_min..=k_max`.
    pub probabilities: Vec<(i64, f64)>,
    pub predicted_cost_bound: f64,
    /// The same bound with `c` rather than `c^{1/gamma}` inside `E_gamma`.
    pub predicted_cost_bound_quoted: f64,
}

impl TheoremParameters {
    pub fn schedule(&self) -> LevelSchedule {
        LevelSchedule::Theorem {
            constant: self.constant,
            gamma: self.gamma,
        }
    }

    pub fn levels(&self) -> Vec<i64> {
        (self.k_min..=self.k_max).collect()
    }
}

/// `-floor(log2 c)`: the lowest level whose predecessor costs under one unit.
pub fn k_min_from_prefactor(c: f64) -> i64 {
    -(c.log2().floor() as i64)
}

/// `-ceil(log2 ||f_t||_inf)`: the lowest level for which the zero field is
/// a valid `2^{-(k-1)}` estimator at time `t`.
pub fn k_min_from_sup_norm(sup: f64) -> i64 {
    -(sup.log2().ceil() as i64)
}

fn floor_log2_cutoff(log2_arg: f64) -> i64 {
    -(log2_arg.floor() as i64)
}

pub fn theorem_parameters(inputs: &TheoremInputs, rule: KmaxRule) -> Result<TheoremParameters> {
    let TheoremInputs {
        epsilon,
        lipschitz: l,
        horizon: t,
        eta,
        prefactor: c,
        gamma,
    } = *inputs;
    for (name, v) in [
        ("epsilon", epsilon),
        ("lipschitz", l),
        ("horizon", t),
        ("eta", eta),
        ("c", c),
        ("gamma", gamma),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(name, "must be positive and finite"));
        }
    }
    let growth = l * (t + eta) / std::f64::consts::LN_2;
    let k_min = k_min_from_prefactor(c);
    let k_max_statement = floor_log2_cutoff((2.0 / l).log2() + growth + epsilon.log2());
    let k_max_proof = floor_log2_cutoff((l / 2.0).log2() - growth + epsilon.log2());
    let k_max = match rule {
        KmaxRule::Statement => k_max_statement,
        KmaxRule::Proof => k_max_proof,
    };
    if k_max < k_min {
        return Err(Error::ToleranceTooLoose { k_min, k_max });
    }
    let sum = geometric_sum(gamma, k_min, k_max);
    let constant = 18.0 * eta * (l * t * t + 1.0 / (2.0 * l)) * (2.0 * l * (t + eta)).exp() * sum
        / (epsilon * epsilon);
    let schedule = LevelSchedule::Theorem { constant, gamma };
    let probabilities = (k_min..=k_max)
        .map(|k| (k, schedule.prob(k, 0.0)))
        .collect();
    Ok(TheoremParameters {
        k_min,
        k_max,
        k_max_statement,
        k_max_proof,
        rule,
        constant,
        gamma,
        probabilities,
        predicted_cost_bound: predicted_cost_bound(
            epsilon,
            l,
            t,
            eta,
            c,
            gamma,
            BoundForm::Derived,
        ),
        predicted_cost_bound_quoted: predicted_cost_bound(
            epsilon,
            l,
            t,
            eta,
            c,
            gamma,
            BoundForm::Quoted,
        ),
    })
}
