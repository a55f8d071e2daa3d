//! Special functions, seeded randomness and sampling primitives.
//!
//! [`RandomSource`] wraps a ChaCha20 stream keyed by a 256-bit key. Child
//! sources are derived by hashing the parent key together with a label, so a
//! child's stream depends only on the parent seed and the label, never on how
//! many values the parent has already produced. Gaussian variates use the
//! ziggurat sampler from `rand_distr` over that stream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Deterministic, splittable random stream.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    key: [u8; 32],
    rng: ChaCha20Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"pmsvm.root");
        hasher.update(seed.to_le_bytes());
        Self::from_key(seed, digest_key(hasher))
    }

    fn from_key(seed: u64, key: [u8; 32]) -> Self {
        Self {
            seed,
            key,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// The seed of the root this source descends from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `label`.
    pub fn split(&self, label: &str) -> RandomSource {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(self.seed, digest_key(hasher))
    }

    /// Child stream identified by `label` and an integer index.
    pub fn split_indexed(&self, label: &str, index: u64) -> RandomSource {
        self.split(&format!("{label}#{index}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..upper`.
    pub fn below(&mut self, upper: usize) -> usize {
        self.rng.random_range(0..upper)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn digest_key(hasher: Sha256) -> [u8; 32] {
    let out = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out[..32]);
    key
}

/// Standard normal CDF, `Φ(x) = erfc(-x/√2) / 2`.
///
/// `erfc` is the fdlibm rational approximation (via `libm`), accurate to about
/// one ulp over the whole real line.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("std_normal_cdf of non-finite value {x}")));
    }
    Ok(phi(x))
}

pub(crate) fn phi(x: f64) -> f64 {
    (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

/// `ln Φ(x)`, accurate in the far lower tail where `Φ` underflows.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x > -20.0 {
        return phi(x).ln();
    }
    // Asymptotic expansion of the Mills ratio; the truncation error at x = -20
    // is below 1e-10 relative.
    let x2 = x * x;
    let inv = 1.0 / x2;
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `dim` i.i.d. draws from `N(0, sigma²)`.
///
/// `sigma = 0` returns zeros without consuming the stream.
pub fn sample_gaussian(rng: &mut RandomSource, sigma: f64, dim: usize) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!(
            "gaussian sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    Ok((0..dim).map(|_| sigma * rng.standard_normal()).collect())
}

/// Poisson subsampling: each index in `0..n` is kept independently with
/// probability `q`. The result is sorted and may be empty.
pub fn poisson_subsample(rng: &mut RandomSource, n: usize, q: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!(
            "sampling probability must lie in [0, 1], got {q}"
        )));
    }
    if q == 0.0 {
        return Ok(Vec::new());
    }
    if q == 1.0 {
        return Ok((0..n).collect());
    }
    Ok((0..n).filter(|_| rng.uniform() < q).collect())
}

/// Sum with Neumaier compensation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Φ via the all-positive series erf(z) = 2/√π e^{-z²} Σ 2ⁿ z^{2n+1} / (2n+1)!!,
    /// which has no cancellation and so serves as an independent reference.
    fn phi_series(x: f64) -> f64 {
        let z = x.abs() / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        while term > 1e-18 * sum {
            n += 1.0;
            term *= 2.0 * z * z / (2.0 * n + 1.0);
            sum += term;
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum;
        if x >= 0.0 {
            0.5 * (1.0 + erf)
        } else {
            0.5 * (1.0 - erf)
        }
    }

    #[test]
    fn cdf_known_values() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        // 40-digit reference: 0.9750000009035575956975...
        let v = std_normal_cdf(1.959964).unwrap();
        assert!((v - 0.975_000_000_903_557_6).abs() < 1e-14, "{v}");
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_matches_series_oracle_and_symmetry() {
        let mut prev = 0.0;
        let mut x = -8.0;
        while x <= 8.0 {
            let v = std_normal_cdf(x).unwrap();
            assert!((v - phi_series(x)).abs() <= 1e-12, "x={x}");
            assert!((v + std_normal_cdf(-x).unwrap() - 1.0).abs() <= 1e-12, "x={x}");
            assert!(v >= prev, "monotonicity at x={x}");
            prev = v;
            x += 0.001;
        }
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let below = log_std_normal_cdf(-20.0 - 1e-9);
        let above = log_std_normal_cdf(-20.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
        assert!((log_std_normal_cdf(-1.0) - phi(-1.0).ln()).abs() < 1e-15);
        assert!(log_std_normal_cdf(-1e3).is_finite());
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mut rng = RandomSource::new(1);
        assert_eq!(sample_gaussian(&mut rng, 0.0, 3).unwrap(), vec![0.0; 3]);
        let a = sample_gaussian(&mut RandomSource::new(9), 1.0, 16).unwrap();
        let b = sample_gaussian(&mut RandomSource::new(9), 1.0, 16).unwrap();
        assert_eq!(a, b);
        assert!(sample_gaussian(&mut rng, -1.0, 3).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let n = 1_000_000;
        let v = sample_gaussian(&mut RandomSource::new(2024), 1.0, n).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn gaussian_kolmogorov_smirnov() {
        let n = 100_000;
        let mut v = sample_gaussian(&mut RandomSource::new(77), 1.0, n).unwrap();
        v.sort_by(f64::total_cmp);
        let ks = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = phi(x);
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn split_streams_are_label_dependent_only() {
        let root = RandomSource::new(5);
        let mut drained = root.clone();
        for _ in 0..100 {
            drained.next_u64();
        }
        let a: Vec<u64> = (0..4)
            .map({
                let mut c = root.split("trainer");
                move |_| c.next_u64()
            })
            .collect();
        let b: Vec<u64> = (0..4)
            .map({
                let mut c = drained.split("trainer");
                move |_| c.next_u64()
            })
            .collect();
        assert_eq!(a, b);
        let mut other = root.split("baseline");
        assert_ne!(a[0], other.next_u64());
        assert_ne!(
            root.split_indexed("x", 1).next_u64(),
            root.split_indexed("x", 2).next_u64()
        );
    }

    #[test]
    fn poisson_edges() {
        let mut rng = RandomSource::new(3);
        assert!(poisson_subsample(&mut rng, 10, 0.0).unwrap().is_empty());
        assert_eq!(poisson_subsample(&mut rng, 5, 1.0).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(poisson_subsample(&mut rng, 5, 1.5).is_err());
        assert!(poisson_subsample(&mut rng, 5, -0.1).is_err());
    }

    #[test]
    fn poisson_mean_size() {
        let mut rng = RandomSource::new(11);
        let n = 100_000;
        let total: usize = (0..100)
            .map(|_| poisson_subsample(&mut rng, n, 0.1).unwrap().len())
            .sum();
        let mean = total as f64 / 100.0;
        assert!((mean - 10_000.0).abs() < 500.0, "mean {mean}");
    }

    #[test]
    fn poisson_membership_frequency() {
        let mut rng = RandomSource::new(12);
        let (n, q, draws) = (50, 0.3, 10_000);
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            for i in poisson_subsample(&mut rng, n, q).unwrap() {
                counts[i] += 1;
            }
        }
        let sd = (draws as f64 * q * (1.0 - q)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * q).abs() <= 3.0 * sd + 1.0);
        }
    }

    #[test]
    fn compensated_sum_is_exact_on_repeated_shares() {
        assert_eq!(compensated_sum(std::iter::repeat_n(0.4, 10)), 4.0);
        assert_eq!(compensated_sum([1e100, 1.0, -1e100]), 1.0);
    }
}
