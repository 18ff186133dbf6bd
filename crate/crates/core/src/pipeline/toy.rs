use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One series of the antiphase sine problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub input: Vec<f64>,
    pub label: u8,
    pub phase: f64,
    /// Position of the minimum of the series.
    pub trough: usize,
}

/// `n` series on `t ∈ [0, 1]`: class 0 is `sin(2π(t + φ))`, class 1 its
/// negation, with `φ ~ U(-1/8, 1/8)`. Classes alternate.
pub fn sine_toy(n: usize, length: usize, seed: u64) -> Result<Vec<ToySample>> {
    if length < 2 {
        return Err(Error::Argument("toy series need at least two points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = (length - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let phase = rng.random_range(-0.125..0.125);
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let input = (0..length)
                .map(|j| sign * (std::f64::consts::TAU * (j as f64 / last + phase)).sin())
                .collect();
            let trough_t = if label == 0 { 0.75 - phase } else { 0.25 - phase };
            ToySample {
                input,
                label,
                phase,
                trough: (trough_t * last).round() as usize,
            }
        })
        .collect())
}
