#![allow(dead_code)]

use statetune::model::{HybridModel, LayerKind, ModelConfig, Token};
use statetune::numerics::{Prng, Tensor};
use statetune::tuning::{
    AdaptationBundle, LoraAdapters, LoraTarget, OffsetBank, PrefixParams, StateBank, TrainExample,
};
use statetune::Scalar;

/// Four layers mixing both recurrence kinds with one attention layer.
pub fn mixed_config(d: usize) -> ModelConfig {
    ModelConfig::interleaved(4, d, 2, d / 4).with_pattern(vec![
        LayerKind::Gdn,
        LayerKind::Ssd,
        LayerKind::Gdn,
        LayerKind::Attn,
    ])
}

/// A model whose weights are rescaled so every block contributes visibly.
pub fn model<T: Scalar>(config: ModelConfig, seed: u64, gain: f64) -> HybridModel<T> {
    let mut m = HybridModel::<T>::init(config, seed).unwrap();
    let names: Vec<(String, Tensor<T>)> = m
        .named_params()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    for (n, t) in names {
        if n.contains("b_decay")
            || n.contains("b_write")
            || n.ends_with("b_in")
            || n.ends_with("b_out")
        {
            continue;
        }
        m.set_param(&n, t.scale(T::of(gain))).unwrap();
    }
    m.freeze();
    m
}

pub fn prompt(rng: &mut Prng, vocab: usize, len: usize) -> Vec<Token> {
    (0..len).map(|_| rng.below(vocab as u64) as usize).collect()
}

pub fn examples(rng: &mut Prng, vocab: usize, n: usize) -> Vec<TrainExample> {
    (0..n)
        .map(|_| {
            let p = 2 + rng.below(5) as usize;
            let c = 1 + rng.below(4) as usize;
            TrainExample::new(prompt(rng, vocab, p), prompt(rng, vocab, c)).unwrap()
        })
        .collect()
}

pub fn random_bank<T: Scalar>(config: &ModelConfig, rng: &mut Prng, std: f64) -> StateBank<T> {
    let alpha = 0.05 + 1.5 * rng.uniform();
    let mut b = StateBank::zeros_all(config, alpha);
    for t in b.states.values_mut() {
        *t = Tensor::randn(t.shape(), std, rng);
    }
    b
}

pub fn random_offset<T: Scalar>(config: &ModelConfig, rng: &mut Prng, std: f64) -> OffsetBank<T> {
    let mut b = OffsetBank::zeros(config, &config.recurrent_layers()).unwrap();
    for t in b.offsets.values_mut() {
        *t = Tensor::randn(t.shape(), std, rng);
    }
    b
}

pub fn random_lora<T: Scalar>(
    config: &ModelConfig,
    rng: &mut Prng,
    rank: usize,
) -> LoraAdapters<T> {
    let mut l = LoraAdapters::init(config, rank, &LoraTarget::ALL, rng).unwrap();
    for p in l.pairs.values_mut() {
        p.b = Tensor::randn(p.b.shape(), 0.3, rng);
    }
    l
}

pub fn random_prefix<T: Scalar>(config: &ModelConfig, rng: &mut Prng, n: usize) -> PrefixParams<T> {
    let mut p = PrefixParams::init(config, n, rng).unwrap();
    for pair in p.layers.values_mut() {
        pair.values = Tensor::randn(pair.values.shape(), 0.5, rng);
    }
    p
}

pub fn bundles<T: Scalar>(config: &ModelConfig, rng: &mut Prng) -> Vec<AdaptationBundle<T>> {
    vec![
        AdaptationBundle::with_state(random_bank(config, rng, 0.5)),
        AdaptationBundle::with_offset(random_offset(config, rng, 0.05)),
        AdaptationBundle::with_lora(random_lora(config, rng, 2)),
        AdaptationBundle::with_prefix(random_prefix(config, rng, 3)),
    ]
}

pub fn max_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64_lossless() - y.to_f64_lossless()).abs())
        .fold(0.0, f64::max)
}

pub fn bits<T: Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.data()
        .iter()
        .map(|x| x.to_f64_lossless().to_bits())
        .collect()
}
