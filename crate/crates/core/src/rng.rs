//! Seeded randomness.
//!
//! Every random draw in training, splitting and fixture generation comes from
//! xoshiro256** seeded through SplitMix64 (`seed_from_u64`). Shuffles are
//! Fisher-Yates as implemented by `rand` 0.8, normals come from `rand_distr`'s
//! ziggurat sampler. Both are pure functions of the generator stream, so a
//! seed reproduces the same run on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;

use crate::numgrad::Tensor;

pub type Generator = Xoshiro256StarStar;

pub fn generator(seed: u64) -> Generator {
    Xoshiro256StarStar::seed_from_u64(seed)
}

pub fn permutation(rng: &mut Generator, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

pub fn normal_tensor(rng: &mut Generator, shape: &[usize], mean: f64, std: f64) -> Tensor {
    let dist = Normal::new(mean, std).expect("std is finite and non-negative");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
        .expect("length matches shape")
}

/// 0/1 keep-mask with `P(1) = 1 - rate`.
pub fn bernoulli_mask(rng: &mut Generator, shape: &[usize], rate: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 })
            .collect(),
    )
    .expect("length matches shape")
}
