use rand::Rng;

use crate::tensor::Tensor;

/// He-style fan-in scaled uniform initialization: U(-b, b) with
/// b = sqrt(6 / fan_in). Suited to leaky-relu stacks.
pub fn he_uniform(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    scaled_uniform(rng, shape, fan_in, 1.0)
}

/// He-style init with an extra gain factor; the semantic-head layers use
/// a small gain so class scores start near zero and margins can grow
/// without an initial scale collapse.
pub fn scaled_uniform(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize, gain: f32) -> Tensor {
    let bound = gain * (6.0 / fan_in as f32).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("consistent shape").with_grad()
}

pub fn zeros_param(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).with_grad()
}
