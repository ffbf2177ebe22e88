//! Microbenchmarks for the paths that run once per comment or once per
//! scored matrix: text normalization, prompt rendering and hashing,
//! response parsing, and the metric suite.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modgate_core::corpus::normalize_text;
use modgate_core::evalkit::{metrics_report, multiclass_mcc, ConfusionMatrix};
use modgate_core::outparse::parse_response;
use modgate_core::promptkit::{bundled_spec, prompt_hash, render_prompt};
use modgate_core::taxonomy::{Category, Taxonomy};

fn fixture_matrix(rng: &mut ChaCha8Rng) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::zeros(Category::COUNT);
    for g in 0..Category::COUNT {
        for p in 0..Category::COUNT {
            for _ in 0..rng.gen_range(0..=50u64) {
                m.add(g, p);
            }
        }
    }
    m
}

fn bench_normalize(c: &mut Criterion) {
    let messy = "  “Smart quotes” and   runs!!!!! of\u{0007} punctuation\r\n repeated    spaces — em-dash text  ".repeat(8);
    c.bench_function("normalize_text/640b", |b| {
        b.iter(|| normalize_text(black_box(&messy)))
    });
}

fn bench_render(c: &mut Criterion) {
    let taxonomy = Taxonomy::bundled();
    let p19 = bundled_spec("P19", &taxonomy).unwrap();
    let comment = "Do you even understand how async works? Let a real engineer handle this.";
    c.bench_function("render_prompt/P19", |b| {
        b.iter(|| render_prompt(black_box(&p19), black_box(comment)))
    });
    c.bench_function("prompt_hash/P19", |b| {
        b.iter(|| prompt_hash(black_box(&p19), black_box(comment)))
    });
}

fn bench_parse(c: &mut Criterion) {
    let taxonomy = Taxonomy::bundled();
    let response = "label: Stereotyping; confidence: 0.92; reason: Gendered trope.\nlabel: Discredit; confidence: 0.64; reason: Belittles ability.";
    c.bench_function("parse_response/two_labels", |b| {
        b.iter(|| parse_response(black_box(response), black_box(&taxonomy)).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = fixture_matrix(&mut rng);
    c.bench_function("multiclass_mcc/12x12", |b| {
        b.iter(|| multiclass_mcc(black_box(&m)))
    });
    c.bench_function("metrics_report/12x12", |b| {
        b.iter(|| metrics_report(black_box(&m)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_normalize,
    bench_render,
    bench_parse,
    bench_metrics
);
criterion_main!(benches);
