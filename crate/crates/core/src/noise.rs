//! Integer noise for the geometric mechanism, budget splitting and reproducible RNG streams.

use std::f64::consts::SQRT_2;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hist::{SizeBound, UnattributedHistogram};

/// Budget spent on a private estimate of the size bound when none is supplied.
pub const DEFAULT_BOUND_EPSILON: f64 = 1e-4;

/// Privacy-loss parameter epsilon.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PrivacyBudget {
    type Error = Error;

    fn try_from(e: f64) -> Result<Self> {
        Self::new(e)
    }
}

impl From<PrivacyBudget> for f64 {
    fn from(b: PrivacyBudget) -> f64 {
        b.0
    }
}

/// Scale `sensitivity / epsilon` of the double-geometric distribution.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseScale(f64);

impl NoiseScale {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || scale.is_nan() {
            return Err(Error::Config(format!("noise scale must be positive, got {scale}")));
        }
        Ok(Self(scale))
    }

    pub fn for_sensitivity(sensitivity: f64, eps: PrivacyBudget) -> Self {
        Self(sensitivity / eps.epsilon())
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Decay `alpha = exp(-1 / scale)`; `P(X = k)` is proportional to `alpha^|k|`.
    pub fn alpha(self) -> f64 {
        (-1.0 / self.0).exp()
    }

    /// Exact variance `2 alpha / (1 - alpha)^2`.
    pub fn variance(self) -> f64 {
        let a = self.alpha();
        2.0 * a / ((1.0 - a) * (1.0 - a))
    }
}

/// Seeded ChaCha stream. Child streams are derived from the seed alone, so a node's
/// noise does not depend on how many draws other nodes consumed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `id`.
    pub fn derive(&self, id: u64) -> SeededRng {
        let mut keyed = ChaCha20Rng::seed_from_u64(self.seed);
        keyed.set_stream(id.wrapping_add(1));
        SeededRng::new(keyed.next_u64())
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Sampler for the two-sided geometric law with `P(X = k) = (1-a)/(1+a) a^|k|`.
///
/// A draw is the difference of two geometric failure counts with success probability
/// `1 - a`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleGeometric {
    geometric: Geometric,
}

impl DoubleGeometric {
    pub fn new(scale: NoiseScale) -> Self {
        // 1 - exp(-1/scale), exactly 1 when the scale underflows
        let p = -(-1.0 / scale.get()).exp_m1();
        let geometric = Geometric::new(p.clamp(0.0, 1.0)).expect("probability in [0, 1]");
        Self { geometric }
    }
}

impl Distribution<i64> for DoubleGeometric {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let a = self.geometric.sample(rng) as i64;
        let b = self.geometric.sample(rng) as i64;
        a - b
    }
}

pub fn sample_double_geometric<R: Rng + ?Sized>(scale: NoiseScale, rng: &mut R) -> i64 {
    DoubleGeometric::new(scale).sample(rng)
}

/// Adds an independent double-geometric draw to every entry.
pub fn add_noise<R: Rng + ?Sized>(values: &[u64], scale: NoiseScale, rng: &mut R) -> Vec<i64> {
    let dist = DoubleGeometric::new(scale);
    values.iter().map(|&v| v as i64 + dist.sample(rng)).collect()
}

/// Even split of `total` across `levels` levels of a hierarchy.
pub fn split_budget(total: PrivacyBudget, levels: usize) -> Result<Vec<PrivacyBudget>> {
    if levels == 0 {
        return Err(Error::NonPositiveLevels);
    }
    let share = PrivacyBudget::new(total.epsilon() / levels as f64)?;
    Ok(vec![share; levels])
}

/// Continuous Laplace draw with the given scale.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let a: f64 = Exp1.sample(rng);
    let b: f64 = Exp1.sample(rng);
    scale * (a - b)
}

/// `ceil(max + noise + 5 sqrt(2) / eps)`, at least 1.
pub fn size_bound_from_noisy_max(max: u64, noise: f64, eps: PrivacyBudget) -> SizeBound {
    let k = (max as f64 + noise + 5.0 * SQRT_2 / eps.epsilon()).ceil();
    let k = if k.is_finite() && k >= 1.0 { k.min(u64::MAX as f64) as u64 } else { 1 };
    SizeBound::new(k.max(1)).expect("k >= 1")
}

/// Private upper bound on the largest group: noisy max plus five standard deviations.
pub fn estimate_size_bound<R: Rng + ?Sized>(
    hg: &UnattributedHistogram,
    eps: PrivacyBudget,
    rng: &mut R,
) -> Result<SizeBound> {
    let max = hg.max().ok_or(Error::EmptyHistogram)?;
    let noise = sample_laplace(1.0 / eps.epsilon(), rng);
    Ok(size_bound_from_noisy_max(max, noise, eps))
}
