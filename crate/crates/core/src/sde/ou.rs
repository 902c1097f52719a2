//! Exact Ornstein-Uhlenbeck transitions on a shared Brownian path.

use crate::error::{invalid, Error, Result};
use crate::sde::noise::BrownianPath;

/// Solution at time `t` of `dx = -a x dt + sigma dW`, `x(0) = x0`, driven by
/// the path's base-grid increments.
///
/// Over each base interval of length `h` the stochastic convolution
/// `J = int e^{-a(h-s)} dW_s` is sampled jointly with the increment
/// `dW = sqrt(h) Z`: `J = (cov / h) dW + sqrt(var_J - cov^2 / h) Z'`, with `Z'`
/// from the auxiliary channel. Coarser solvers consuming block sums of the
/// same `Z` therefore share this exact path.
pub fn exact_ou_solution(
    x0: &[f64],
    rate: f64,
    sigma: f64,
    t: f64,
    path: &BrownianPath,
    eta: f64,
) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(invalid("eta", "must be positive"));
    }
    if rate < 0.0 {
        return Err(invalid("rate", "must be nonnegative"));
    }
    if x0.len() != path.dim() {
        return Err(Error::DimensionMismatch {
            expected: path.dim(),
            got: x0.len(),
        });
    }
    let steps_f = t / eta;
    let steps = steps_f.round();
    if t < 0.0 || (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::OffGrid { time: t, step: eta });
    }
    let steps = steps as usize;
    if steps > path.base_steps() {
        return Err(Error::OffGrid { time: t, step: eta });
    }
    let h = eta;
    let decay = (-rate * h).exp();
    let (cov, var_j) = if rate == 0.0 {
        (h, h)
    } else {
        (
            -(-rate * h).exp_m1() / rate,
            -(-2.0 * rate * h).exp_m1() / (2.0 * rate),
        )
    };
    let resid = (var_j - cov * cov / h).max(0.0).sqrt();
    let sqrt_h = h.sqrt();
    let mut x = x0.to_vec();
    let mut aux = vec![0.0; x.len()];
    for j in 0..steps {
        let z = path.base_normal(j);
        if sigma != 0.0 {
            path.auxiliary(j, &mut aux);
        }
        for i in 0..x.len() {
            let mut next = decay * x[i];
            if sigma != 0.0 {
                let dw = sqrt_h * z[i];
                next += sigma * (cov / h * dw + resid * aux[i]);
            }
            x[i] = next;
        }
    }
    Ok(x)
}
