//! Hot-path benchmarks: sparse propagation, the encoder forward pass, one
//! loss build with gradients, and a full training epoch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gmi_bench::{bench_graph, bench_params};
use gmi_core::diffmath::{Matrix, Tape};
use gmi_core::encoder::{encode, EncoderConfig};
use gmi_core::graph::normalized_adjacency;
use gmi_core::objective::{build_loss, draw_step_samples, Discriminator, GmiConfig, LossInputs};
use gmi_core::seeding::stream_rng;
use gmi_core::trainer::{train, TrainConfig};
use rand::Rng;

const NODES_PER_CLASS: usize = 75;
const HIDDEN: usize = 32;

fn spmm(c: &mut Criterion) {
    let graph = bench_graph(NODES_PER_CLASS);
    let a_hat = normalized_adjacency(&graph);
    let mut rng = stream_rng(3, "bench-spmm");
    let mut h = Matrix::zeros(graph.n_nodes(), HIDDEN);
    for v in h.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    c.bench_function("spmm 300x300 by 300x32", |b| {
        b.iter(|| a_hat.mul_dense(black_box(&h)).unwrap())
    });
}

fn forward_pass(c: &mut Criterion) {
    let graph = bench_graph(NODES_PER_CLASS);
    let params = bench_params(&graph, HIDDEN);
    c.bench_function("encode 300 nodes depth 2", |b| {
        b.iter(|| encode(black_box(&graph), &params).unwrap())
    });
}

fn loss_with_gradients(c: &mut Criterion) {
    let graph = bench_graph(NODES_PER_CLASS);
    let inputs = LossInputs::new(&graph);
    let params = bench_params(&graph, HIDDEN);
    let config = GmiConfig::default();
    let mut rng = stream_rng(3, "bench-loss");
    let disc = Discriminator::init(HIDDEN, HIDDEN, &mut rng);
    let samples = draw_step_samples(&inputs, &config, &mut rng).unwrap();
    c.bench_function("loss build and backward 300 nodes", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let handles = build_loss(
                &mut tape,
                black_box(&inputs),
                &params,
                std::slice::from_ref(&disc),
                &config,
                &samples,
            )
            .unwrap();
            tape.backward(handles.loss).unwrap()
        })
    });
}

fn training_epoch(c: &mut Criterion) {
    let graph = bench_graph(NODES_PER_CLASS);
    let encoder_config = EncoderConfig { hidden_dim: HIDDEN, ..EncoderConfig::default() };
    let train_config = TrainConfig { fixed_epochs: Some(1), ..TrainConfig::default() };
    c.bench_function("one training epoch 300 nodes", |b| {
        b.iter(|| {
            train(black_box(&graph), &encoder_config, &GmiConfig::default(), &train_config)
                .unwrap()
        })
    });
}

criterion_group!(benches, spmm, forward_pass, loss_with_gradients, training_epoch);
criterion_main!(benches);
