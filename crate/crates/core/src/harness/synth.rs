//! Synthetic score families.

use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal, StudentT};

use super::io::LogitMatrix;
use super::HarnessError;
use crate::sampling::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFamily {
    /// Gaussian noise with one token lifted by `peakedness`.
    Peaked,
    /// Gaussian noise scaled by `1 / peakedness`.
    Flat,
    /// Student-t (2 dof) noise scaled by `peakedness`.
    HeavyTail,
}

impl FromStr for ScoreFamily {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "peaked" => Ok(Self::Peaked),
            "flat" => Ok(Self::Flat),
            "heavy-tail" | "heavy_tail" | "heavytail" => Ok(Self::HeavyTail),
            other => Err(HarnessError::Malformed(format!("unknown score family `{other}`"))),
        }
    }
}

/// One row of `n` logits. The peak of [`ScoreFamily::Peaked`] sits at a
/// uniformly drawn position.
pub fn generate_row(family: ScoreFamily, n: usize, peakedness: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut noise: Vec<f64> = match family {
        ScoreFamily::HeavyTail => {
            let t = StudentT::new(2.0).expect("positive dof");
            (0..n).map(|_| peakedness * t.sample(rng)).collect()
        }
        _ => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
    };
    match family {
        ScoreFamily::Peaked => {
            let at = (rng.next_f64() * n as f64) as usize;
            noise[at.min(n - 1)] += peakedness;
        }
        ScoreFamily::Flat => noise.iter_mut().for_each(|v| *v /= peakedness),
        ScoreFamily::HeavyTail => {}
    }
    noise
}

/// `rows` independent rows; row `r` draws from stream `r` of `seed`.
pub fn generate_matrix(
    family: ScoreFamily,
    rows: usize,
    n: usize,
    peakedness: f64,
    seed: u64,
) -> Result<LogitMatrix, HarnessError> {
    if n == 0 || rows == 0 {
        return Err(HarnessError::Malformed("rows and vocabulary size must be positive".into()));
    }
    if !(peakedness > 0.0) || !peakedness.is_finite() {
        return Err(HarnessError::Malformed(format!("peakedness must be positive, got {peakedness}")));
    }
    let data = (0..rows).map(|r| generate_row(family, n, peakedness, &mut RngStream::new(seed, r as u64))).collect();
    LogitMatrix::new(data)
}
