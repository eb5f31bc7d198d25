use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NumericError, Tensor};

/// I.i.d. zero-mean Gaussian samples with standard deviation `std`.
pub fn init_gaussian(shape: &[usize], std: f64, seed: u64) -> Result<Tensor, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_gaussian_with(shape, std, &mut rng)
}

pub fn init_gaussian_with(
    shape: &[usize],
    std: f64,
    rng: &mut impl rand::Rng,
) -> Result<Tensor, NumericError> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(NumericError::Contract(format!(
            "initialization std must be positive, got {std}"
        )));
    }
    let normal = Normal::new(0.0, std)
        .map_err(|e| NumericError::Contract(format!("bad normal distribution: {e}")))?;
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a = init_gaussian(&[4, 3], 0.01, 9).unwrap();
        let b = init_gaussian(&[4, 3], 0.01, 9).unwrap();
        assert_eq!(a, b);
        let c = init_gaussian(&[4, 3], 0.01, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let n = 100_000;
        let t = init_gaussian(&[n], 0.01, 1234).unwrap();
        let mean = t.data().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * 0.01 / (n as f64).sqrt(), "mean {mean}");
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var.sqrt() - 0.01).abs() < 1e-4);
    }

    #[test]
    fn zero_std_is_rejected() {
        assert!(init_gaussian(&[3], 0.0, 1).is_err());
        assert!(init_gaussian(&[3], -1.0, 1).is_err());
    }
}
