//! The same workloads on the rayon route and the forced sequential route.

#[path = "../tests/common/mod.rs"]
mod common;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use refdial_core::coord::{serialize_box, Precision};
use refdial_core::dataset::{build_records, SourceAnnotation};
use refdial_core::eval::{cider, eval_rec, PredictionRecord};
use refdial_core::fuzz::{self, FuzzConfig};
use refdial_core::{par, TaskKind, TemplateRegistry};

fn routes<F: Fn()>(c: &mut Criterion, group: &str, f: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::from_parameter("parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(|| par::with_sequential(&f)));
    g.finish();
}

fn rec(c: &mut Criterion) {
    let mut rng = common::rng(1);
    let gts: Vec<(String, _)> = (0..20_000).map(|i| (i.to_string(), common::sized_box(&mut rng, 0.1))).collect();
    let preds: Vec<PredictionRecord> = gts
        .iter()
        .map(|(id, b)| PredictionRecord::new(id.clone(), format!("It is here: {}.", serialize_box(*b, Precision::default()))))
        .collect();
    routes(c, "eval_rec_20k", || {
        black_box(eval_rec(&preds, &gts, 0.5));
    });
}

fn fuzz_roundtrip(c: &mut Criterion) {
    let cfg = FuzzConfig { cases: 20_000, ..Default::default() };
    routes(c, "fuzz_roundtrip_20k", || {
        black_box(fuzz::run(&cfg));
    });
}

fn build(c: &mut Criterion) {
    let registry = TemplateRegistry::with_starter_sets();
    let anns: Vec<SourceAnnotation> = (0..5_000)
        .map(|i| common::annotation_for(TaskKind::SpottingCaption, i, &mut common::rng(i as u64)))
        .collect();
    routes(c, "build_spotting_caption_5k", || {
        black_box(build_records(&anns, TaskKind::SpottingCaption, &registry, Precision::default(), 3).unwrap());
    });
}

fn captions(c: &mut Criterion) {
    let words = ["a", "dog", "runs", "on", "the", "grass", "near", "red", "bench", "kite"];
    let mut rng = common::rng(4);
    let mut sentence = |n: usize| -> String {
        use rand::seq::SliceRandom;
        (0..n).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let cands: Vec<String> = (0..2_000).map(|_| sentence(9)).collect();
    let refs: Vec<Vec<String>> = (0..2_000).map(|_| (0..5).map(|_| sentence(10)).collect()).collect();
    routes(c, "cider_2k", || {
        black_box(cider::cider(&cands, &refs, 4, 6.0).unwrap());
    });
}

criterion_group!(benches, rec, fuzz_roundtrip, build, captions);
criterion_main!(benches);
