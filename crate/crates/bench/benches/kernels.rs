use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use auglstm::mc::draw_samples;
use auglstm::model::{cell_step, CellState, CellWeights, Classifier, Direction, DropoutMasks, Mode, ModelConfig, OutputGate, ResidualMode};
use auglstm::Rng;

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32usize, 128, 300] {
        let mut rng = Rng::new(1, 0);
        let a = rng.uniform_tensor(&[n, n], 1.0);
        let b = rng.uniform_tensor(&[n, 4 * n], 1.0);
        group.throughput(Throughput::Elements((n * n * 4 * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn lstm_cell(c: &mut Criterion) {
    let mut group = c.benchmark_group("cell_step");
    for hidden in [32usize, 170, 800] {
        let mut rng = Rng::new(2, 0);
        let w = CellWeights::random(300, hidden, &mut rng, 0.08);
        let x = rng.uniform_tensor(&[300], 1.0);
        let state = CellState::zeros(hidden);
        group.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |bench, _| {
            bench.iter(|| cell_step(&w, black_box(&x), &state, 1.0, OutputGate::Sigmoid).unwrap())
        });
    }
    group.finish();
}

fn small_model(direction: Direction, pooling: bool) -> Classifier {
    let cfg = ModelConfig {
        direction,
        pooling,
        pooling_dim: 64,
        residual_mode: ResidualMode::VerticalAndLateral,
        input_keep_prob: 0.5,
        forget_bias: 1.0,
        ..ModelConfig::baseline(2, 64, 64, 5)
    };
    Classifier::random(cfg, 1000, &mut Rng::new(3, 0)).unwrap()
}

fn classifier(c: &mut Criterion) {
    let tokens: Vec<usize> = (0..20).map(|i| 2 + (i * 37) % 990).collect();
    let mut group = c.benchmark_group("classifier");
    for (name, direction, pooling) in [
        ("uni", Direction::Unidirectional, false),
        ("shared_bi_pool", Direction::SharedBidirectional, true),
    ] {
        let model = small_model(direction, pooling);
        group.bench_function(BenchmarkId::new("forward", name), |bench| {
            let mut rng = Rng::new(4, 0);
            bench.iter(|| model.forward(black_box(&tokens), Mode::McSample, &mut rng).unwrap())
        });
        let masks = DropoutMasks::sample(&model.config, tokens.len(), &mut Rng::new(5, 0)).unwrap();
        group.bench_function(BenchmarkId::new("loss_and_grads", name), |bench| {
            bench.iter(|| model.loss_and_grads(black_box(&tokens), 3, &masks).unwrap())
        });
    }
    group.finish();
}

fn mc_sampling(c: &mut Criterion) {
    let model = small_model(Direction::Unidirectional, false);
    let tokens: Vec<usize> = (0..20).map(|i| 2 + i).collect();
    let mut group = c.benchmark_group("mc");
    group.sample_size(20);
    group.bench_function("draw_60_samples", |bench| {
        bench.iter(|| draw_samples(&model, black_box(&tokens), 60, 7).unwrap())
    });
    group.finish();
}

criterion_group!(benches, matmul, lstm_cell, classifier, mc_sampling);
criterion_main!(benches);
