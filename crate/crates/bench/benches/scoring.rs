use criterion::{criterion_group, criterion_main, Criterion};
use pictsum_core::alignment::{AlignmentConfig, AlignmentModel};
use pictsum_core::mat::Mat;
use pictsum_core::rouge::{rouge_l, rouge_n};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn random_tokens(len: usize, vocab: usize, rng: &mut impl Rng) -> Vec<String> {
    (0..len).map(|_| format!("w{:03}", rng.gen_range(0..vocab))).collect()
}

fn bench_rouge(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cand = random_tokens(60, 80, &mut rng);
    let reference = random_tokens(70, 80, &mut rng);
    c.bench_function("rouge_l_60x70", |b| {
        b.iter(|| rouge_l(black_box(&cand), black_box(&reference)))
    });
    c.bench_function("rouge_2_60x70", |b| {
        b.iter(|| rouge_n(black_box(&cand), black_box(&reference), 2))
    });
}

fn bench_cross_attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = AlignmentModel::new(32, &AlignmentConfig::default());
    let sentences = Mat::randn(12, 32, 1.0, &mut rng);
    let images = Mat::randn(6, 32, 1.0, &mut rng);
    c.bench_function("cross_attention_12x6_d32", |b| {
        b.iter(|| model.cross.forward(black_box(&sentences), black_box(&images)).unwrap())
    });
}

criterion_group!(benches, bench_rouge, bench_cross_attention);
criterion_main!(benches);
