use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sparsepose::autodiff::Tape;
use sparsepose::nn::Ctx;
use sparsepose::posenet::PointSource;
use sparsepose::{TrainConfig, Trainer};
use sparsepose_bench::{model, scene};

fn render(c: &mut Criterion) {
    let cfg = TrainConfig::preset("smoke").unwrap();
    c.bench_function("render_scene_c5_64px", |b| b.iter(|| scene(&cfg, 5, 3).unwrap()));
}

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_smoke_f32");
    group.sample_size(10);
    let cfg = TrainConfig::preset("smoke").unwrap();
    let (net, store) = model::<f32>(&cfg.model, 0).unwrap();
    for views in [3, 9] {
        let s = scene(&cfg, views, 1).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(views), &s, |b, s| {
            b.iter(|| {
                let tape = Tape::<f32>::new();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let out = net
                    .forward(Ctx::new(&tape, &store), &s.views, PointSource::Sample(&mut rng))
                    .unwrap();
                out.trajectory().unwrap()
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for preset in ["tiny", "smoke"] {
        let mut trainer = Trainer::<f32>::new(TrainConfig::preset(preset).unwrap()).unwrap();
        group.bench_function(preset, |b| b.iter(|| trainer.train_step().unwrap().row.loss));
    }
    group.finish();
}

criterion_group!(benches, render, forward, train_step);
criterion_main!(benches);
