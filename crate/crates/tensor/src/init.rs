use rand::Rng;

use crate::{Real, Tensor};

/// Parameter initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    GlorotUniform { fan_in: usize, fan_out: usize },
}

impl Init {
    pub fn sample<T: Real, R: Rng + ?Sized>(self, shape: Vec<usize>, rng: &mut R) -> Tensor<T> {
        match self {
            Init::Zeros => Tensor::zeros(shape),
            Init::GlorotUniform { fan_in, fan_out } => glorot_uniform(shape, fan_in, fan_out, rng),
        }
    }
}

/// Uniform on `[-l, l]` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
}
