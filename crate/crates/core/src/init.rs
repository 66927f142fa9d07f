//! Parameter initializers.

use rand::Rng;
use rand_distr::StandardNormal;

/// Normal samples with standard deviation `std`, redrawn outside ±2σ.
pub(crate) fn trunc_normal(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break (z * std) as f32;
            }
        })
        .collect()
}

/// Uniform on `±1/sqrt(fan_in)`.
pub(crate) fn fan_in_uniform(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
}

/// Normal with variance `2/fan_in`, for layers followed by ReLU.
pub(crate) fn he_normal(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32).collect()
}
