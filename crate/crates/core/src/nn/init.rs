use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{lit, Scalar, Tensor};

/// Glorot/Xavier uniform `fan_in x fan_out` matrix.
pub fn xavier_uniform<T: Scalar>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| lit(rng.random_range(-limit..=limit)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

pub fn normal<T: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| lit(dist.sample(rng))).collect()).expect("normal shape")
}
