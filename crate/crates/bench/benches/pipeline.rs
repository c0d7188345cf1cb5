use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use spiralcine::nufft::GriddingPlan;
use spiralcine::recon::{cg_sense, frame_data};
use spiralcine::xsdnet::{conv2d, random_weights, Manifest, ModelConfig, XsdNet};
use spiralcine_bench::{random_image, random_tensor, trajectory, Acquisition};

fn bench_nufft(c: &mut Criterion) {
    let traj = trajectory();
    let positions = traj.orientation_positions(0, 1.29);
    let plan = GriddingPlan::with_defaults(&positions, 128).unwrap();
    let image = random_image(128, 1);
    let samples = plan.forward(image.view()).unwrap();
    let mut group = c.benchmark_group("nufft_128_13_arms");
    group.bench_function("plan", |b| {
        b.iter(|| GriddingPlan::with_defaults(black_box(&positions), 128).unwrap())
    });
    group.bench_function("forward", |b| b.iter(|| plan.forward(black_box(image.view())).unwrap()));
    group.bench_function("adjoint", |b| {
        b.iter(|| plan.adjoint(black_box(&samples), None).unwrap())
    });
    group.finish();
}

fn bench_cg_sense(c: &mut Criterion) {
    let acq = Acquisition::new();
    let ops = acq.operators();
    let data = frame_data(&acq.raw, 0);
    let mut group = c.benchmark_group("cg_sense_128_8_coils");
    group.sample_size(10);
    for iters in [1, 10] {
        group.bench_with_input(BenchmarkId::from_parameter(iters), &iters, |b, &iters| {
            b.iter(|| cg_sense(black_box(&data), &ops[0], iters).unwrap())
        });
    }
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for (channels, size) in [(16, 128), (64, 32)] {
        let x = random_tensor(vec![channels, size, size], 2);
        let w = random_tensor(vec![channels, channels, 3, 3], 3);
        let bias = random_tensor(vec![channels], 4);
        group.bench_function(format!("{channels}ch_{size}px"), |b| {
            b.iter(|| conv2d("bench", black_box(&x), &w, &bias, 1, 1).unwrap())
        });
    }
    group.finish();
}

fn bench_inference(c: &mut Criterion) {
    let store = random_weights(&Manifest::standard(&ModelConfig::default()), 0).unwrap();
    let net = XsdNet::from_store(store).unwrap();
    let image = Array2::from_shape_fn((128, 128), |(r, c)| ((r * 7 + c * 3) % 17) as f32 / 17.0);
    let mut group = c.benchmark_group("xsdnet");
    group.sample_size(10);
    group.bench_function("infer_128", |b| b.iter(|| net.infer(black_box(&image)).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_nufft, bench_cg_sense, bench_conv, bench_inference);
criterion_main!(benches);
