//! Counter-based Gaussian noise.
//!
//! Every draw is a pure function of `(master_seed, stream, step, channel)`, so
//! solvers that visit steps in different orders, or at different
//! resolutions, still see the same Brownian path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Independent sub-sequences derived from one `(seed, stream)` pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Channel {
    Brownian = 0,
    /// Extra normals needed by exact transition samplers.
    Auxiliary = 1,
    Initial = 2,
    Direction = 3,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one 64-bit key.
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x6A09_E667_F3BC_C908_u64, |acc, &w| {
        splitmix64(acc ^ splitmix64(w))
    })
}

/// A ChaCha generator positioned by key rather than by history.
pub fn keyed_rng(words: &[u64]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let mut h = hash_words(words);
    for chunk in seed.chunks_exact_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn keyed_uniform(words: &[u64]) -> f64 {
    (hash_words(words) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseDriver {
    pub master_seed: u64,
    pub dim: usize,
}

impl NoiseDriver {
    pub fn new(master_seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        Ok(Self { master_seed, dim })
    }

    pub fn fill(&self, stream: u64, step: u64, channel: Channel, out: &mut [f64]) {
        let mut rng = keyed_rng(&[self.master_seed, stream, step, channel as u64]);
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    /// Standard-normal increment for `(stream, step_index)`.
    pub fn noise_increment(&self, stream: u64, step_index: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill(stream, step_index, Channel::Brownian, &mut out);
        out
    }
}

/// One stream's Brownian path, materialized on a base grid of `base_steps`
/// equal intervals. Solvers with `n` steps (`n` dividing `base_steps`) see
/// block-summed increments of the same path.
#[derive(Clone, Debug)]
pub struct BrownianPath {
    driver: NoiseDriver,
    stream: u64,
    base_steps: usize,
    normals: Vec<f64>,
    initial: Vec<f64>,
}

impl BrownianPath {
    pub fn new(driver: NoiseDriver, stream: u64, base_steps: usize) -> Result<Self> {
        if base_steps == 0 {
            return Err(invalid("base_steps", "must be positive"));
        }
        let d = driver.dim;
        let mut normals = vec![0.0; base_steps * d];
        for (j, chunk) in normals.chunks_exact_mut(d).enumerate() {
            driver.fill(stream, j as u64, Channel::Brownian, chunk);
        }
        let mut initial = vec![0.0; d];
        driver.fill(stream, 0, Channel::Initial, &mut initial);
        Ok(Self {
            driver,
            stream,
            base_steps,
            normals,
            initial,
        })
    }

    pub fn driver(&self) -> &NoiseDriver {
        &self.driver
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn dim(&self) -> usize {
        self.driver.dim
    }

    /// Standard-normal draw used as a random starting point.
    pub fn initial_normal(&self) -> &[f64] {
        &self.initial
    }

    pub fn base_normal(&self, j: usize) -> &[f64] {
        let d = self.driver.dim;
        &self.normals[j * d..(j + 1) * d]
    }

    pub fn block_size(&self, n_steps: usize) -> Result<usize> {
        if n_steps == 0 || !self.base_steps.is_multiple_of(n_steps) {
            return Err(Error::GridMismatch {
                n_steps,
                base_steps: self.base_steps,
            });
        }
        Ok(self.base_steps / n_steps)
    }

    /// Standard normal `Z` for step `step` of an `n_steps` grid, such that
    /// `sqrt(eta) * Z` is the Brownian increment over that step.
    pub fn increment(&self, step: usize, n_steps: usize, out: &mut [f64]) -> Result<()> {
        let m = self.block_size(n_steps)?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        if m == 1 {
            out.copy_from_slice(self.base_normal(step));
            return Ok(());
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in step * m..(step + 1) * m {
            for (o, z) in out.iter_mut().zip(self.base_normal(j)) {
                *o += z;
            }
        }
        let scale = 1.0 / (m as f64).sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    pub fn auxiliary(&self, j: usize, out: &mut [f64]) {
        self.driver
            .fill(self.stream, j as u64, Channel::Auxiliary, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_are_repeatable() {
        let d = NoiseDriver::new(7, 3).unwrap();
        assert_eq!(d.noise_increment(2, 11), d.noise_increment(2, 11));
        assert_ne!(d.noise_increment(2, 11), d.noise_increment(3, 11));
        assert_ne!(d.noise_increment(2, 11), d.noise_increment(2, 12));
    }

    #[test]
    fn moments_of_many_draws() {
        let d = NoiseDriver::new(2024, 2).unwrap();
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for step in 0..n {
            let z = d.noise_increment(5, step);
            for i in 0..2 {
                sum[i] += z[i];
                sq[i] += z[i] * z[i];
            }
        }
        let tol = 4.0 / (n as f64).sqrt();
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < tol, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn coarse_increment_is_block_sum() {
        let d = NoiseDriver::new(1, 2).unwrap();
        let path = BrownianPath::new(d, 4, 12).unwrap();
        let mut z = [0.0; 2];
        path.increment(1, 3, &mut z).unwrap();
        let mut expect = [0.0; 2];
        for j in 4..8 {
            let b = path.base_normal(j);
            expect[0] += b[0];
            expect[1] += b[1];
        }
        assert!((z[0] - expect[0] / 2.0).abs() < 1e-15);
        assert!((z[1] - expect[1] / 2.0).abs() < 1e-15);
        path.increment(5, 12, &mut z).unwrap();
        assert_eq!(z.to_vec(), d.noise_increment(4, 5));
        assert!(path.increment(0, 5, &mut z).is_err());
    }

    #[test]
    fn uniforms_cover_unit_interval() {
        let n = 20_000;
        let mean: f64 = (0..n).map(|i| keyed_uniform(&[9, i])).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 4.0 * (1.0 / 12.0f64).sqrt() / (n as f64).sqrt());
    }
}
