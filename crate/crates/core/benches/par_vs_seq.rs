//! Parallel vs sequential throughput on the hot kernels.
//!
//! With the default `parallel` feature the same binary measures both paths
//! by toggling the runtime switch; built with `--no-default-features` only
//! the sequential path exists and is benchmarked alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cmsc::layers::{conv_backward, conv_forward, ConvLayer};
use cmsc::net::{micro_competitive_spec, preset, Network, PresetName, WidthProfile};
use cmsc::parallel::set_parallel;
use cmsc::rng::SplitMix64;
use cmsc::tensor::Tensor4;

fn modes() -> Vec<(&'static str, bool)> {
    if cfg!(feature = "parallel") {
        vec![("parallel", true), ("sequential", false)]
    } else {
        vec![("sequential", false)]
    }
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = SplitMix64::new(1);
    let x = Tensor4::<f32>::gaussian((8, 16, 32, 32), 1.0, &mut rng).unwrap();
    for k in [3usize, 7] {
        let layer = ConvLayer::<f32>::new(16, 16, k, 0.05, &mut rng).unwrap();
        let gout = Tensor4::<f32>::gaussian((8, 16, 32, 32), 1.0, &mut rng).unwrap();
        let mut group = c.benchmark_group(format!("conv{k}x{k}"));
        for (name, par) in modes() {
            set_parallel(par);
            group.bench_with_input(BenchmarkId::new("forward", name), &layer, |b, l| {
                b.iter(|| conv_forward(l, &x).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("backward", name), &layer, |b, l| {
                b.iter(|| conv_backward(l, &x, &gout).unwrap())
            });
        }
        set_parallel(true);
        group.finish();
    }
}

fn bench_module_forward(c: &mut Criterion) {
    let spec = preset(
        PresetName::CompetitiveMultiscale,
        &WidthProfile::desk(),
        (3, 32, 32),
        10,
    )
    .unwrap();
    let mut rng = SplitMix64::new(2);
    let net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let x = Tensor4::<f32>::gaussian((16, 3, 32, 32), 1.0, &mut rng).unwrap();
    let mut group = c.benchmark_group("multiscale_net_eval");
    group.sample_size(10);
    for (name, par) in modes() {
        set_parallel(par);
        group.bench_function(name, |b| b.iter(|| net.forward_eval(&x).unwrap()));
    }
    set_parallel(true);
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    use cmsc::layers::softmax_xent;
    let spec = micro_competitive_spec();
    let mut rng = SplitMix64::new(3);
    let net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let x = Tensor4::<f32>::gaussian((32, 2, 8, 8), 1.0, &mut rng).unwrap();
    let labels: Vec<u8> = (0..32).map(|i| (i % 3) as u8).collect();
    let masks = net.empty_masks();
    let mut group = c.benchmark_group("micro_train_step");
    for (name, par) in modes() {
        set_parallel(par);
        group.bench_function(name, |b| {
            b.iter(|| {
                let (logits, cache) = net.forward_train(&x, &masks).unwrap();
                let (_, gl) = softmax_xent(&logits, &labels).unwrap();
                net.backward(&cache, &masks, &gl).unwrap()
            })
        });
    }
    set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench_conv, bench_module_forward, bench_train_step);
criterion_main!(benches);
