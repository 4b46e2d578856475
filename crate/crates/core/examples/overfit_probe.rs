//! Transient probe: how many steps until the toy overfit reaches F = 1.0.

use std::time::Instant;

use spotlight_core::eval::{match_detections, EvalReport};
use spotlight_core::imageio::{to_tensor, Normalization, TargetSize};
use spotlight_core::losses::{LossConfig, LossKind};
use spotlight_core::postprocess::{detect, DetectParams};
use spotlight_core::tensor::{no_grad, BnMode};
use spotlight_core::trainer::{prepare_samples, synth_dataset, train, TrainConfig};
use spotlight_core::{StdConfig, StdModel};

fn map_stats(t: &spotlight_core::tensor::Tensor) -> String {
    let d = t.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sat_lo = d.iter().filter(|&&x| x <= 1e-7).count() as f64 / n;
    let sat_hi = d.iter().filter(|&&x| x >= 1.0 - 1e-7).count() as f64 / n;
    format!("mean={mean:.4} min={min:.3e} max={max:.6} sat_lo={sat_lo:.3} sat_hi={sat_hi:.3}")
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args[1].parse().unwrap();
    let coarse: LossKind = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(LossKind::Bce);
    let refined: LossKind = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(LossKind::Bce);
    let cfg = StdConfig::new(16);
    let ds = synth_dataset(42, 5, (256, 256), 2);
    let samples = prepare_samples(&ds, 0.4);
    let model = StdModel::new(&cfg, 42);
    let tcfg = TrainConfig { epochs, seed: 42, ..Default::default() };
    let lcfg = LossConfig { coarse, refined, ..Default::default() };
    let norm = Normalization::default();
    {
        let (tensor, _) = to_tensor(
            &ds[0].image,
            TargetSize::Exact { width: 256, height: 256 },
            &norm,
        );
        let (m_cs, m_rs) = no_grad(|| model.forward(&tensor, BnMode::Train));
        println!("init coarse: {}", map_stats(&m_cs));
        println!("init refined: {}", map_stats(&m_rs));
    }
    let t0 = Instant::now();
    let report = train(&model, &samples, &tcfg, &lcfg, None).unwrap();
    let train_time = t0.elapsed();
    for (i, step) in report.losses.iter().enumerate() {
        if i % 25 == 0 || i + 1 == report.losses.len() {
            println!("step {} total={:.4} coarse={:.4} refined={:.4}", i, step.total, step.coarse, step.refined);
        }
    }
    let last = report.losses.last().unwrap();
    let params = DetectParams::default();
    let mut matches = Vec::new();
    for s in &ds {
        let (tensor, _) = to_tensor(
            &s.image,
            TargetSize::Exact { width: 256, height: 256 },
            &norm,
        );
        let (_, m_rs) = no_grad(|| model.forward(&tensor, BnMode::Eval));
        let dets = detect(&m_rs, &params);
        let m = match_detections(&dets, &s.polygons, &[], 0.5);
        println!("image: tp={} fp={} fn={}", m.tp, m.fp, m.fn_);
        matches.push(m);
    }
    let rep = EvalReport::from_images(matches);
    println!(
        "epochs={epochs} steps={} loss={:.4} F={:.4} P={:.4} R={:.4} alpha={:.6} train_time={:.1}s",
        report.losses.len(),
        last.total,
        rep.f_measure,
        rep.precision,
        rep.recall,
        model.alpha.data()[0],
        train_time.as_secs_f64()
    );
}
