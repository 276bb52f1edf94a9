use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A second reader who misses each lesion with probability `1 - keep` and
/// reports `Poisson(add_rate)` spurious ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaterNoise {
    pub keep: f64,
    pub add_rate: f64,
}

impl RaterNoise {
    pub fn none() -> Self {
        Self {
            keep: 1.0,
            add_rate: 0.0,
        }
    }
}

pub fn simulate_second_rater(scores: &[usize], seed: u64, noise: RaterNoise) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&noise.keep) || !(noise.add_rate >= 0.0 && noise.add_rate.is_finite()) {
        return Err(Error::Config(format!("invalid rater noise {noise:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = (noise.add_rate > 0.0).then(|| Poisson::new(noise.add_rate).expect("positive rate"));
    Ok(scores
        .iter()
        .map(|&n| {
            let kept = if noise.keep < 1.0 && n > 0 {
                Binomial::new(n as u64, noise.keep).expect("valid binomial").sample(&mut rng) as usize
            } else {
                n
            };
            kept + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as usize)
        })
        .collect())
}
