//! Hot-path benchmarks: convolution, the full forward pass, label
//! generation, post-processing and the polygon kernels under it.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use spotlight_bench::{bench_model, image_tensor, kernel_map, ring_polygon};
use spotlight_core::eval::polygon_iou;
use spotlight_core::labels::{make_kernel_label, shrink_distance};
use spotlight_core::offset::offset_polygon;
use spotlight_core::postprocess::{detect, expand_kernel, DetectParams};
use spotlight_core::tensor::{conv2d, no_grad, BnMode, ConvSpec, Shape, Tensor};
use spotlight_core::Polygon;

fn det_data(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 37 + 11) % 1000) as f64 / 1000.0 - 0.5).collect()
}

fn conv2d_3x3(c: &mut Criterion) {
    let spec = ConvSpec::new(16, 16, 3, 3).same().bias(false);
    let input = Tensor::from_data(Shape([1, 16, 64, 64]), det_data(16 * 64 * 64)).detach();
    let Shape([oc, ic, kh, kw]) = spec.weight_shape();
    let weights = Tensor::from_data(spec.weight_shape(), det_data(oc * ic * kh * kw)).detach();
    c.bench_function("conv2d_3x3_c16_64px", |b| {
        b.iter(|| no_grad(|| black_box(conv2d(black_box(&input), &spec, &weights, None))))
    });
}

fn forward_pass(c: &mut Criterion) {
    let model = bench_model(1);
    let input = image_tensor(128, 128);
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    group.bench_function("forward_eval_c8_128px", |b| {
        b.iter(|| no_grad(|| black_box(model.forward(black_box(&input), BnMode::Eval))))
    });
    group.finish();
}

fn label_generation(c: &mut Criterion) {
    let polys: Vec<Polygon> = (0..8)
        .map(|i| {
            let x = 20.0 + 60.0 * (i % 4) as f64;
            let y = 30.0 + 120.0 * (i / 4) as f64;
            Polygon::rect(x, y, x + 48.0, y + 90.0)
        })
        .collect();
    c.bench_function("make_kernel_label_8x_256px", |b| {
        b.iter(|| black_box(make_kernel_label(black_box(&polys), 0.4, (256, 256))))
    });
}

fn postprocess_detect(c: &mut Criterion) {
    let map = kernel_map(256, 256);
    let params = DetectParams::default();
    c.bench_function("detect_2_kernels_256px", |b| {
        b.iter(|| black_box(detect(black_box(&map), &params)))
    });
}

fn polygon_kernels(c: &mut Criterion) {
    let a = ring_polygon(12, 50.0, 50.0, 40.0);
    let b_poly = ring_polygon(12, 65.0, 58.0, 40.0);
    c.bench_function("polygon_iou_24gon", |b| {
        b.iter(|| black_box(polygon_iou(black_box(&a), black_box(&b_poly))))
    });

    let rect = Polygon::rect(0.0, 0.0, 120.0, 40.0);
    let shrink = shrink_distance(&rect, 0.4).unwrap();
    c.bench_function("shrink_expand_round_trip", |b| {
        b.iter(|| {
            let pieces = offset_polygon(black_box(&rect), -shrink);
            let kernel = pieces
                .into_iter()
                .max_by(|p, q| p.area().total_cmp(&q.area()))
                .expect("rectangle shrink keeps a piece");
            black_box(expand_kernel(&kernel, 1.5).expect("expansion succeeds"))
        })
    });
}

criterion_group!(
    benches,
    conv2d_3x3,
    forward_pass,
    label_generation,
    postprocess_detect,
    polygon_kernels
);
criterion_main!(benches);
