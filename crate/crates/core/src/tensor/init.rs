use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Xavier (Glorot) normal initialization: draws from N(0, 2 / (fan_in + fan_out)).
pub fn xavier_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    assert!(fan_in > 0 && fan_out > 0, "xavier_normal: fans must be positive");
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite positive std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = normal.sample(rng);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_tensor() {
        let a = xavier_normal(&[4, 3, 3, 3], 27, 36, &mut ChaCha8Rng::seed_from_u64(5));
        let b = xavier_normal(&[4, 3, 3, 3], 27, 36, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_moments() {
        let (fan_in, fan_out) = (7, 13);
        let n = 100_000;
        let t = xavier_normal(&[n], fan_in, fan_out, &mut ChaCha8Rng::seed_from_u64(11));
        let mean = t.sum() / n as f64;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 2.0 / (fan_in + fan_out) as f64;
        assert!((var - expected).abs() / expected < 0.05, "var {var} vs {expected}");
        let se = (expected / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} beyond 3 standard errors ({se})");
    }
}
