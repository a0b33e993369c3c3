//! Parallel versus sequential execution of the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dapnet_core::config::ExperimentConfig;
use dapnet_core::data::{Domain, DomainBatch, DomainSample};
use dapnet_core::evaluation::sliding_window_infer;
use dapnet_core::exec::set_parallel;
use dapnet_core::networks::SegmentationNetwork;
use dapnet_core::nn::conv::conv2d_forward;
use dapnet_core::nn::ConvGeom;
use dapnet_core::rng::derive_rng;
use dapnet_core::training::{train_step, TrainState};
use dapnet_core::Tensor;
use rand::Rng;

const MODES: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = derive_rng(seed, 0);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = random(&[8, 64, 32, 32], 1);
    let w = random(&[64, 64, 3, 3], 2);
    let geom = ConvGeom::new(3, 1, 1, 1);
    let mut group = c.benchmark_group("conv3x3_8x64x32x32");
    for (name, parallel) in MODES {
        set_parallel(parallel);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conv2d_forward(&x, &w, None, &geom))
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let cfg = ExperimentConfig {
        crop_size: 64,
        channel_width_scale: 0.25,
        ..ExperimentConfig::default()
    };
    let masks = random(&[4, 64, 64], 3).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let source = DomainBatch {
        images: random(&[4, 3, 64, 64], 4),
        masks: Some(masks),
        domain: Domain::Source,
    };
    let target = DomainBatch {
        images: random(&[4, 3, 64, 64], 5),
        masks: None,
        domain: Domain::Target,
    };
    let mut group = c.benchmark_group("train_step_full_s64_quarter");
    group.sample_size(10);
    for (name, parallel) in MODES {
        set_parallel(parallel);
        let mut state = TrainState::new(&cfg);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_step(&mut state, &source, &target, &cfg).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let net = SegmentationNetwork::new(0, 0.25);
    let sample = DomainSample::new(random(&[3, 160, 160], 6), None, Domain::Target).unwrap();
    let mut group = c.benchmark_group("sliding_window_160_w64_s32");
    group.sample_size(10);
    for (name, parallel) in MODES {
        set_parallel(parallel);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sliding_window_infer(&net, &sample.image, Domain::Target, 64, 32).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, step, inference);
criterion_main!(benches);
