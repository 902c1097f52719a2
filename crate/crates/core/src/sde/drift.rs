//! Drift fields `f_t(x)`.

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Dual, Scalar};
use crate::sde::noise::keyed_rng;

/// A time-dependent vector field with a known Lipschitz constant.
///
/// `eval_dual` must agree with `eval` on the real part and propagate
/// tangents exactly; implementors write the arithmetic once, generic over
/// [`Scalar`], and forward both methods to it.
pub trait Drift: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn eval_dual(&self, t: f64, x: &[Dual], out: &mut [Dual]);
    /// Bound on the Lipschitz constant in `x`, uniform in `t`.
    fn lipschitz_bound(&self) -> f64;
    /// Bound on the Euclidean norm of the field; infinite when unbounded.
    fn sup_bound(&self) -> f64 {
        f64::INFINITY
    }
    fn is_zero(&self) -> bool {
        false
    }
}

pub type DriftField = Arc<dyn Drift>;

pub fn eval_vec(field: &dyn Drift, t: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; field.dim()];
    field.eval(t, x, &mut out);
    out
}

#[derive(Clone, Debug)]
pub struct ZeroDrift {
    dim: usize,
}

impl ZeroDrift {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Drift for ZeroDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn eval_dual(&self, _t: f64, _x: &[Dual], out: &mut [Dual]) {
        out.iter_mut().for_each(|v| *v = Dual::default());
    }
    fn lipschitz_bound(&self) -> f64 {
        0.0
    }
    fn sup_bound(&self) -> f64 {
        0.0
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `f(t, x) = -rate * x`, the Ornstein-Uhlenbeck drift. A negative rate
/// gives exponential growth.
#[derive(Clone, Debug)]
pub struct LinearDrift {
    pub rate: f64,
    dim: usize,
}

impl LinearDrift {
    pub fn new(rate: f64, dim: usize) -> Self {
        Self { rate, dim }
    }

    fn apply<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = xi * -self.rate;
        }
    }
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.apply(x, out)
    }
    fn eval_dual(&self, _t: f64, x: &[Dual], out: &mut [Dual]) {
        self.apply(x, out)
    }
    fn lipschitz_bound(&self) -> f64 {
        self.rate.abs()
    }
    fn is_zero(&self) -> bool {
        self.rate == 0.0
    }
}

#[derive(Clone, Debug)]
pub struct ConstantDrift {
    value: Vec<f64>,
}

impl ConstantDrift {
    pub fn new(value: Vec<f64>) -> Self {
        Self { value }
    }
}

impl Drift for ConstantDrift {
    fn dim(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
    fn eval_dual(&self, _t: f64, _x: &[Dual], out: &mut [Dual]) {
        for (o, &v) in out.iter_mut().zip(&self.value) {
            *o = Dual::constant(v);
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        0.0
    }
    fn sup_bound(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
struct Wave {
    weight: f64,
    freq: Vec<f64>,
    time_freq: f64,
    phase: f64,
}

/// `u(t, x) = d * sum_j a_j sin(w_j . x + v_j t + phi_j)` with a unit
/// direction `d` and weights summing to one.
///
/// With two waves whose `(w_j, v_j)` are linearly independent both phases
/// can be aligned at once, so `sup |u| = 1` is attained exactly.
#[derive(Clone, Debug)]
pub struct SinusoidPerturbation {
    direction: Vec<f64>,
    waves: Vec<Wave>,
}

impl SinusoidPerturbation {
    pub const WAVES: usize = 2;

    /// `max_freq` bounds each spatial frequency component; temporal
    /// frequencies lie in `[-2, 2]`.
    pub fn from_seed(seed: u64, level: i64, dim: usize, max_freq: f64) -> Self {
        let mut rng = keyed_rng(&[seed, level as u64, 0x5151_7A11]);
        let mut direction: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = direction
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        direction.iter_mut().for_each(|v| *v /= norm);
        let raw: Vec<f64> = (0..Self::WAVES).map(|_| rng.gen_range(0.25..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let waves = raw
            .into_iter()
            .map(|w| Wave {
                weight: w / total,
                freq: (0..dim)
                    .map(|_| rng.gen_range(-max_freq..=max_freq))
                    .collect(),
                time_freq: rng.gen_range(-2.0..2.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        Self { direction, waves }
    }

    /// Waves with zero temporal frequency and phase `pi/2` along a direction
    /// shared by every level of `seed`, so `u(t, 0) = d` and the sign of `u`
    /// is stable near the origin. Level errors then add up coherently along
    /// trajectories instead of averaging out.
    pub fn coherent(seed: u64, level: i64, dim: usize, max_freq: f64) -> Self {
        let mut shared = keyed_rng(&[seed, 0xC0_4E7E]);
        let mut direction: Vec<f64> = (0..dim).map(|_| shared.gen_range(-1.0..1.0)).collect();
        let norm = direction
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        direction.iter_mut().for_each(|v| *v /= norm);
        let mut rng = keyed_rng(&[seed, level as u64, 0xC0_4E7F]);
        let raw: Vec<f64> = (0..Self::WAVES).map(|_| rng.gen_range(0.25..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let waves = raw
            .into_iter()
            .map(|w| Wave {
                weight: w / total,
                freq: (0..dim)
                    .map(|_| rng.gen_range(-max_freq..=max_freq))
                    .collect(),
                time_freq: 0.0,
                phase: std::f64::consts::FRAC_PI_2,
            })
            .collect();
        Self { direction, waves }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.waves
            .iter()
            .map(|w| w.weight * w.freq.iter().map(|f| f * f).sum::<f64>().sqrt())
            .sum()
    }

    fn amplitude<S: Scalar>(&self, t: f64, x: &[S]) -> S {
        let mut g = S::zero();
        for w in &self.waves {
            let mut arg = S::constant(w.time_freq * t + w.phase);
            for (&xi, &fi) in x.iter().zip(&w.freq) {
                arg += xi * fi;
            }
            g += arg.sin() * w.weight;
        }
        g
    }
}

/// `base(t, x) + scale * u(t, x)`.
#[derive(Clone, Debug)]
pub struct PerturbedDrift {
    base: DriftField,
    scale: f64,
    perturbation: SinusoidPerturbation,
    time_decay: f64,
}

impl PerturbedDrift {
    pub fn new(base: DriftField, scale: f64, perturbation: SinusoidPerturbation) -> Self {
        Self {
            base,
            scale,
            perturbation,
            time_decay: 0.0,
        }
    }

    /// Multiplies the perturbation by `exp(-rate * t)`.
    pub fn with_time_decay(mut self, rate: f64) -> Self {
        self.time_decay = rate;
        self
    }

    fn envelope(&self, t: f64) -> f64 {
        if self.time_decay == 0.0 {
            self.scale
        } else {
            self.scale * (-self.time_decay * t).exp()
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Drift for PerturbedDrift {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.eval(t, x, out);
        let g = self.perturbation.amplitude(t, x) * self.envelope(t);
        for (o, d) in out.iter_mut().zip(&self.perturbation.direction) {
            *o += g * d;
        }
    }
    fn eval_dual(&self, t: f64, x: &[Dual], out: &mut [Dual]) {
        self.base.eval_dual(t, x, out);
        let g = self.perturbation.amplitude(t, x) * self.envelope(t);
        for (o, &d) in out.iter_mut().zip(&self.perturbation.direction) {
            *o += g * d;
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        self.base.lipschitz_bound() + self.scale.abs() * self.perturbation.lipschitz_bound()
    }
    fn sup_bound(&self) -> f64 {
        self.base.sup_bound() + self.scale.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_is_unit_bounded_and_nearly_attains_it() {
        let u = SinusoidPerturbation::from_seed(3, 2, 2, 1.5);
        let mut rng = keyed_rng(&[1]);
        let mut max: f64 = 0.0;
        for _ in 0..20_000 {
            let t = rng.gen_range(0.0..10.0);
            let x = [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)];
            let g: f64 = u.amplitude(t, &x);
            assert!(g.abs() <= 1.0);
            max = max.max(g.abs());
        }
        assert!(max > 0.95, "max {max}");
    }

    #[test]
    fn coherent_perturbation_peaks_at_the_origin() {
        let a = SinusoidPerturbation::coherent(3, 1, 2, 0.5);
        let b = SinusoidPerturbation::coherent(3, 4, 2, 0.5);
        assert_eq!(a.direction, b.direction);
        for t in [0.0, 0.7, 3.0] {
            let g: f64 = a.amplitude(t, &[0.0, 0.0]);
            assert!((g - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn perturbed_drift_respects_lipschitz_bound() {
        let base: DriftField = Arc::new(LinearDrift::new(1.0, 2));
        let f = PerturbedDrift::new(base, 0.5, SinusoidPerturbation::from_seed(8, 0, 2, 1.0));
        let lip = f.lipschitz_bound();
        let mut rng = keyed_rng(&[2]);
        for _ in 0..5_000 {
            let t = rng.gen_range(0.0..1.0);
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let y = [
                x[0] + rng.gen_range(-0.1..0.1),
                x[1] + rng.gen_range(-0.1..0.1),
            ];
            let (fx, fy) = (eval_vec(&f, t, &x), eval_vec(&f, t, &y));
            let df = ((fx[0] - fy[0]).powi(2) + (fx[1] - fy[1]).powi(2)).sqrt();
            let dx = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            assert!(df <= lip * dx * (1.0 + 1e-12));
        }
    }

    #[test]
    fn dual_eval_is_a_jvp() {
        let base: DriftField = Arc::new(LinearDrift::new(0.7, 2));
        let f = PerturbedDrift::new(base, 0.3, SinusoidPerturbation::from_seed(5, 1, 2, 1.5));
        let (x, v) = ([0.4, -1.2], [0.6, 0.8]);
        let xd = [Dual::new(x[0], v[0]), Dual::new(x[1], v[1])];
        let mut out = [Dual::default(); 2];
        f.eval_dual(0.3, &xd, &mut out);
        let h = 1e-6;
        let plus = eval_vec(&f, 0.3, &[x[0] + h * v[0], x[1] + h * v[1]]);
        let minus = eval_vec(&f, 0.3, &[x[0] - h * v[0], x[1] - h * v[1]]);
        let base_val = eval_vec(&f, 0.3, &x);
        for i in 0..2 {
            assert_eq!(out[i].re, base_val[i]);
            assert!((out[i].du - (plus[i] - minus[i]) / (2.0 * h)).abs() < 1e-8);
        }
    }
}
