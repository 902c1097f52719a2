//! Scaling exponent from (cost, error) pairs.

use anyhow::{bail, ensure, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GammaFit {
    pub gamma_hat: f64,
    /// Slope of `log(error - floor)` against `log(cost)`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Least-squares fit of `log(error - floor) = a + slope * log(cost)`;
/// `gamma_hat = -1 / slope`.
pub fn fit_gamma(points: &[(f64, f64)], error_floor: f64) -> Result<GammaFit> {
    ensure!(
        points.len() >= 3,
        "need at least 3 points, got {}",
        points.len()
    );
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for (i, &(cost, err)) in points.iter().enumerate() {
        let adjusted = err - error_floor;
        if !(cost > 0.0) || !(adjusted > 0.0) {
            bail!("point {i}: cost {cost} and error - floor {adjusted} must both be positive");
        }
        xs.push(cost.ln());
        ys.push(adjusted.ln());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    ensure!(sxx > 0.0, "costs must not all be equal");
    let slope = sxy / sxx;
    ensure!(
        slope < 0.0,
        "error does not decrease with cost (slope {slope})"
    );
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    Ok(GammaFit {
        gamma_hat: -1.0 / slope,
        slope,
        intercept,
        r_squared,
        n_points: points.len(),
    })
}

/// Points not dominated by a cheaper point with smaller or equal error,
/// sorted by cost.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut front: Vec<(f64, f64)> = Vec::new();
    for p in sorted {
        if front.last().is_none_or(|q| p.1 < q.1) {
            front.push(p);
        }
    }
    front
}
