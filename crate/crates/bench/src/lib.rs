//! Deterministic fixtures shared by the criterion benches.

use spotlight_core::imageio::{to_tensor, Normalization, TargetSize};
use spotlight_core::labels::make_kernel_label;
use spotlight_core::tensor::{Shape, Tensor};
use spotlight_core::trainer::synth_dataset;
use spotlight_core::{Point, Polygon, StdConfig, StdModel};

/// Desk-scale widths: large enough to exercise every block, small enough
/// for stable timings.
pub fn bench_config() -> StdConfig {
    StdConfig {
        base_channels: 8,
        fpn_channels: 16,
        fused_channels: 16,
        head_hidden: 8,
        cpfsm_hidden: 16,
        ..StdConfig::default()
    }
}

pub fn bench_model(seed: u64) -> StdModel {
    StdModel::new(&bench_config(), seed)
}

/// A normalized (1,3,h,w) input built from the synthetic dataset.
pub fn image_tensor(h: usize, w: usize) -> Tensor {
    let ds = synth_dataset(9, 1, (h, w), 2);
    let (tensor, _) = to_tensor(
        &ds[0].image,
        TargetSize::Exact { width: w, height: h },
        &Normalization::default(),
    );
    tensor
}

/// A probability map with two shrunk rectangular kernels at 0.9 over a
/// 0.05 background.
pub fn kernel_map(h: usize, w: usize) -> Tensor {
    let (hf, wf) = (h as f64, w as f64);
    let polys = [
        Polygon::rect(0.10 * wf, 0.15 * hf, 0.45 * wf, 0.40 * hf),
        Polygon::rect(0.55 * wf, 0.55 * hf, 0.90 * wf, 0.85 * hf),
    ];
    let label = make_kernel_label(&polys, 0.4, (h, w));
    let data: Vec<f64> =
        label.mask.data.iter().map(|&v| if v == 1 { 0.9 } else { 0.05 }).collect();
    Tensor::from_data(Shape([1, 1, h, w]), data).detach()
}

/// A wavy 2n-gon around (cx, cy): radius alternates r and 0.8 r.
pub fn ring_polygon(n: usize, cx: f64, cy: f64, r: f64) -> Polygon {
    let vertices = (0..2 * n)
        .map(|i| {
            let angle = std::f64::consts::PI * i as f64 / n as f64;
            let radius = if i % 2 == 0 { r } else { 0.8 * r };
            Point::new(cx + radius * angle.cos(), cy + radius * angle.sin())
        })
        .collect();
    Polygon::new(vertices).expect("ring is simple")
}
