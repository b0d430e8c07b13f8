#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use nestadmm::generators::{generate_instance, GeneratorSpec};
use nestadmm::problem::ProblemInstance;

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Small finite-sum quadratic instance with nontrivial noise.
pub fn small_instance(seed: u64) -> ProblemInstance {
    let mut spec = GeneratorSpec::quadratic(5, 4, Some(30), Some(20), seed);
    spec.noise = 0.3;
    spec.condition = 10.0;
    generate_instance(&spec).unwrap()
}
