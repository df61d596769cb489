/// Streaming mean and standard deviation (Welford).
///
/// `std` is the population deviation, so a single observation has `std = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Denominator `max(std, floor) + eps` used for both the value and the
    /// gradient of the standardized score.
    pub fn scale(&self, eps: f64, floor: f64) -> f64 {
        self.std().max(floor) + eps
    }

    /// Pushes `raw`, then standardizes it against the updated statistics.
    pub fn standardize(&mut self, raw: f64, eps: f64, floor: f64) -> f64 {
        self.push(raw);
        (raw - self.mean) / self.scale(eps, floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const EPS: f64 = 1e-6;

    #[test]
    fn first_observation_standardizes_to_zero() {
        let mut s = RunningStats::new();
        assert_eq!(s.standardize(3.7, EPS, 0.0), 0.0);
        assert_eq!(s.mean(), 3.7);
        assert_eq!(s.std(), 0.0);
    }

    #[test]
    fn constant_stream_stays_at_zero() {
        let mut s = RunningStats::new();
        for _ in 0..50 {
            assert_eq!(s.standardize(-0.25, EPS, 0.0), 0.0);
        }
    }

    #[test]
    fn matches_two_pass_batch_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dist = Normal::new(-3.0, 0.7).unwrap();
        let xs: Vec<f64> = (0..1000).map(|_| dist.sample(&mut rng)).collect();
        let mut s = RunningStats::new();
        xs.iter().for_each(|x| s.push(*x));
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((s.mean() - mean).abs() < 1e-9);
        assert!((s.std() - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn converges_on_a_long_gaussian_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = Normal::new(5.0, 2.0).unwrap();
        let mut s = RunningStats::new();
        for _ in 0..10_000 {
            s.standardize(dist.sample(&mut rng), EPS, 0.0);
        }
        assert!((s.mean() - 5.0).abs() < 0.1);
        assert!((s.std() - 2.0).abs() < 0.1);
    }

    #[test]
    fn floor_only_affects_the_denominator() {
        let mut a = RunningStats::new();
        let mut b = RunningStats::new();
        for x in [1.0, 1.001, 0.999] {
            a.standardize(x, EPS, 0.0);
            b.standardize(x, EPS, 0.5);
        }
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.std(), b.std());
        assert!(b.scale(EPS, 0.5) > a.scale(EPS, 0.0));
    }
}
