#![allow(dead_code)]

pub mod oracles;

use dpe_nmt::alignment::TargetKeyVector;
use dpe_nmt::autodiff::{Scalar, Tensor};
use dpe_nmt::model::{ModelConfig, Transformer, RESERVED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale]`.
pub fn random_tensor<F: Scalar>(shape: &[usize], seed: u64, scale: f64) -> Tensor<F> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| F::of(r.gen_range(-scale..=scale)))
}

/// The tiny model of the gradient-fidelity checks: d=8, one encoder and one
/// decoder layer, vocabulary 11.
pub fn tiny_config(dpe_layers: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        ff_dim: 16,
        vocab_src: 11,
        vocab_tgt: 11,
        max_len: 16,
        dpe_layers,
        ..ModelConfig::default()
    }
}

pub fn tiny_model<F: Scalar>(dpe_layers: usize, seed: u64) -> Transformer<F> {
    Transformer::new(tiny_config(dpe_layers), seed).unwrap()
}

/// Random content-token sentence of length `len` over `vocab` ids.
pub fn sentence(r: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| r.gen_range(RESERVED as u32..vocab as u32)).collect()
}

/// Random key vector: each token aligned to a random position below `len`,
/// or unaligned with probability 1/5.
pub fn random_keys(r: &mut ChaCha8Rng, len: usize) -> TargetKeyVector {
    use dpe_nmt::alignment::TargetKey;
    TargetKeyVector(
        (0..len)
            .map(|_| {
                if r.gen_ratio(1, 5) {
                    TargetKey::Unaligned
                } else {
                    TargetKey::Aligned(r.gen_range(0..len))
                }
            })
            .collect(),
    )
}

/// Straightforward triple-loop matrix product.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}
