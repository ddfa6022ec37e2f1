//! Band-limited white noise: Gaussian samples held over fixed intervals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Zero-mean Gaussian noise, constant on each `[k Ts, (k+1) Ts)`, with
/// variance `power_density / Ts`. Queries must be non-decreasing in time.
#[derive(Debug, Clone)]
pub struct BandLimitedNoise {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    sample_time: f64,
    index: Option<i64>,
    value: f64,
}

impl BandLimitedNoise {
    pub fn new(power_density: f64, sample_time: f64, seed: u64) -> Self {
        let std = (power_density / sample_time).sqrt();
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("standard deviation is finite and >= 0"),
            sample_time,
            index: None,
            value: 0.0,
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.normal.std_dev()
    }

    pub fn sample(&mut self, t: f64) -> f64 {
        // guard against t = k Ts landing one ulp below the boundary
        let k = (t / self.sample_time + 1e-9).floor() as i64;
        while self.index.is_none_or(|i| i < k) {
            self.value = self.normal.sample(&mut self.rng);
            self.index = Some(self.index.map_or(k, |i| i + 1));
        }
        self.value
    }
}

/// Noisy copy of a sampled channel; a disabled generator returns the input.
pub fn add_noise(times: &[f64], y: &[f64], noise: Option<&mut BandLimitedNoise>) -> Vec<f64> {
    match noise {
        None => y.to_vec(),
        Some(n) => times
            .iter()
            .zip(y)
            .map(|(&t, &v)| v + n.sample(t))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_between_sample_instants() {
        let mut n = BandLimitedNoise::new(1e-9, 1e-5, 7);
        let a = n.sample(0.0);
        assert_eq!(n.sample(0.5e-5), a);
        let b = n.sample(1e-5);
        assert_ne!(a, b);
        assert_eq!(n.sample(1.9e-5), b);
    }

    #[test]
    fn deterministic_per_seed() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 1e-5).collect();
        let y = vec![0.0; times.len()];
        let a = add_noise(&times, &y, Some(&mut BandLimitedNoise::new(1e-9, 1e-5, 3)));
        let b = add_noise(&times, &y, Some(&mut BandLimitedNoise::new(1e-9, 1e-5, 3)));
        let c = add_noise(&times, &y, Some(&mut BandLimitedNoise::new(1e-9, 1e-5, 4)));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn disabled_is_identity() {
        let times = [0.0, 1.0, 2.0];
        let y = [1.0, -2.0, 3.5];
        assert_eq!(add_noise(&times, &y, None), y.to_vec());
    }

    #[test]
    fn variance_follows_density_over_sample_time() {
        let mut n = BandLimitedNoise::new(1e-9, 1e-5, 11);
        assert!((n.std_dev() - 0.01).abs() < 1e-15);
        let count = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for k in 0..count {
            let v = n.sample(k as f64 * 1e-5);
            s += v;
            s2 += v * v;
        }
        let mean = s / count as f64;
        let var = s2 / count as f64 - mean * mean;
        assert!((var - 1e-4).abs() < 0.03e-4, "variance {var}");
        assert!(mean.abs() < 5.0 * 0.01 / (count as f64).sqrt());
    }
}
