//! Parameter initializers.

use rand::Rng;

use crate::tensor::Tensor;

/// `[rows × cols]` drawn from `U(-1/√cols, 1/√cols)`.
pub fn uniform_fan_in(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (cols as f64).sqrt();
    uniform(&[rows, cols], bound, rng)
}

/// Tensor drawn from `U(-bound, bound)`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform: positive extents")
}
