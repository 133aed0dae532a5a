use criterion::{black_box, criterion_group, criterion_main, Criterion};
use parley_bench::{annotated_texts, dense_graph, game, sbirl_threads, trust_observations};
use parley_core::sbirl::{fit_and_evaluate, fit_threads};
use parley_core::socialgraph::{centralities, centrality_trace};
use parley_core::strategyclf::train_logistic;
use parley_core::textfeat::{FeatureSpace, LexiconSpec};
use parley_core::trustmodel::fit_fixed_effects;
use parley_core::FeatureSet;

fn graphs(c: &mut Criterion) {
    let g = dense_graph();
    c.bench_function("centralities/7 nodes", |b| b.iter(|| centralities(black_box(&g)).unwrap()));
    let game = game(300);
    c.bench_function("centrality_trace/300 messages", |b| {
        b.iter(|| centrality_trace(black_box(&game)).unwrap())
    });
}

fn rewards(c: &mut Criterion) {
    let threads = sbirl_threads(500);
    c.bench_function("fit_reward/500 threads d=8", |b| {
        b.iter(|| fit_threads(black_box(&threads), 0.9, 0.0).unwrap())
    });
    c.bench_function("fit_and_evaluate/500 threads d=8", |b| {
        b.iter(|| fit_and_evaluate(black_box(&threads), 0.9, 0.0).unwrap())
    });
}

fn models(c: &mut Criterion) {
    let obs = trust_observations(10_000);
    c.bench_function("fixed_effects/10k observations", |b| {
        b.iter(|| fit_fixed_effects(black_box(&obs)).unwrap())
    });

    let texts = annotated_texts(2_000);
    let docs: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
    let space = FeatureSpace::fit(&docs, 2, LexiconSpec::starter());
    let xs: Vec<_> = docs.iter().map(|d| space.vectorize(FeatureSet::TfidfDiscursive, d)).collect();
    let ys: Vec<u8> = texts.iter().map(|t| u8::from(t.labels[4] == Some(true))).collect();
    let mut group = c.benchmark_group("logistic");
    group.sample_size(20);
    group.bench_function("tfidf_discursive/2k texts", |b| {
        b.iter(|| train_logistic(black_box(&xs), black_box(&ys), 1.0, true).unwrap())
    });
    group.finish();
}

criterion_group!(benches, graphs, rewards, models);
criterion_main!(benches);
