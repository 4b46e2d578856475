//! Toy-scale optimizer loop: SGD with momentum, weight decay, poly learning
//! rate, deterministic synthetic data, and checkpointing.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imageio::{to_tensor, write_atomic, Image, Normalization, TargetSize};
use crate::labels::{make_training_target, Instance, Mask, TrainingTarget};
use crate::losses::{total_loss, LossConfig};
use crate::nn::{save_weights, ParamEntry, StdModel};
use crate::tensor::{BnMode, Shape, Tensor};
use crate::{CoreError, Polygon, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub poly_power: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.007,
            momentum: 0.9,
            weight_decay: 0.0001,
            epochs: 1,
            poly_power: 0.9,
            seed: 0,
            batch_size: 1,
        }
    }
}

/// base_lr * (1 - step/total)^power; non-increasing, zero at step = total.
pub fn poly_lr(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
    assert!(total > 0, "schedule needs at least one step");
    assert!(step <= total, "step beyond schedule");
    cfg.base_lr * (1.0 - step as f64 / total as f64).powf(cfg.poly_power)
}

/// v <- momentum*v + grad + decay*param (decay on conv weights only);
/// param <- param - lr*v. A non-finite gradient aborts before any update.
pub fn sgd_step(
    params: &[ParamEntry],
    velocity: &mut [Vec<f64>],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    assert_eq!(params.len(), velocity.len(), "velocity state mismatch");
    for entry in params {
        if let Some(grad) = entry.tensor.grad() {
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(CoreError::Diverged {
                    step: 0,
                    detail: format!("non-finite gradient {bad} in {}", entry.name),
                });
            }
        }
    }
    for (entry, v) in params.iter().zip(velocity.iter_mut()) {
        let grad = entry.tensor.grad();
        let mut data = entry.tensor.data_mut();
        assert_eq!(v.len(), data.len(), "velocity shape mismatch for {}", entry.name);
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[i]);
            let decay = if entry.decay { cfg.weight_decay * data[i] } else { 0.0 };
            v[i] = cfg.momentum * v[i] + g + decay;
            data[i] -= lr * v[i];
        }
    }
    Ok(())
}

/// One synthetic image with its ground-truth polygons.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: Image,
    pub polygons: Vec<Polygon>,
}

/// Deterministic textured backgrounds with high-contrast filled rectangles.
/// Instances are placed in disjoint vertical strips so every image holds
/// exactly `instances_per_image` polygons.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    size: (usize, usize),
    instances_per_image: usize,
) -> Vec<SynthSample> {
    let (h, w) = size;
    assert!(h % 32 == 0 && w % 32 == 0 && h > 0 && w > 0, "size must be divisible by 32");
    assert!(instances_per_image >= 1, "need at least one instance");
    let strip = w / instances_per_image;
    assert!(strip >= 12, "strips too narrow for visible instances");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let base: [u8; 3] = [rng.gen_range(30..80), rng.gen_range(30..80), rng.gen_range(30..80)];
        let mut image = Image::fill(w, h, 3, 0);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let noise: i16 = rng.gen_range(-15..=15);
                    image.set_sample(y, x, c, (base[c] as i16 + noise).clamp(0, 255) as u8);
                }
            }
        }
        let mut polygons = Vec::with_capacity(instances_per_image);
        for k in 0..instances_per_image {
            let left = k * strip;
            let bw = rng.gen_range(strip / 3..strip - 6).max(4);
            let bh = rng.gen_range(h / 4..(3 * h) / 4).max(4);
            let x0 = left + rng.gen_range(2..=(strip - bw - 2).max(3));
            let y0 = rng.gen_range(2..=(h - bh - 2).max(3));
            let bright: [u8; 3] =
                [rng.gen_range(170..=255), rng.gen_range(170..=255), rng.gen_range(170..=255)];
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    for c in 0..3 {
                        let noise: i16 = rng.gen_range(-10..=10);
                        image.set_sample(y, x, c, (bright[c] as i16 + noise).clamp(0, 255) as u8);
                    }
                }
            }
            polygons.push(Polygon::rect(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64));
        }
        out.push(SynthSample { image, polygons });
    }
    out
}

/// A training-ready pair: normalized image tensor and full-resolution target.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: Tensor,
    pub target: TrainingTarget,
}

pub fn prepare_samples(dataset: &[SynthSample], gamma: f64) -> Vec<TrainSample> {
    dataset
        .iter()
        .map(|s| {
            let (image, _) = to_tensor(
                &s.image,
                TargetSize::Exact { width: s.image.width, height: s.image.height },
                &Normalization::default(),
            );
            let instances: Vec<Instance> = s
                .polygons
                .iter()
                .map(|p| Instance { polygon: p.clone(), ignore: false })
                .collect();
            let target = make_training_target(&instances, gamma, (s.image.height, s.image.width));
            TrainSample { image, target }
        })
        .collect()
}

fn flip_mask_h(m: &Mask) -> Mask {
    let mut out = Mask::zeros(m.h, m.w);
    for y in 0..m.h {
        for x in 0..m.w {
            out.set(y, m.w - 1 - x, m.get(y, x));
        }
    }
    out
}

fn flip_target_h(t: &TrainingTarget) -> TrainingTarget {
    TrainingTarget {
        kernel: flip_mask_h(&t.kernel),
        ignore: flip_mask_h(&t.ignore),
        collapsed: t.collapsed,
    }
}

/// Stacks a chunk into one (B,3,H,W) tensor, flipping selected samples
/// horizontally together with their targets.
fn assemble_batch(chunk: &[TrainSample], flips: &[bool]) -> (Tensor, Vec<TrainingTarget>) {
    let shape = chunk[0].image.shape();
    let (c, h, w) = (shape.c(), shape.h(), shape.w());
    let mut data = Vec::with_capacity(chunk.len() * c * h * w);
    let mut targets = Vec::with_capacity(chunk.len());
    for (sample, &flip) in chunk.iter().zip(flips) {
        assert_eq!(sample.image.shape(), shape, "mixed sample sizes in one batch");
        let src = sample.image.data();
        if flip {
            for ch in 0..c {
                for y in 0..h {
                    let row = &src[(ch * h + y) * w..][..w];
                    data.extend(row.iter().rev());
                }
            }
            targets.push(flip_target_h(&sample.target));
        } else {
            data.extend_from_slice(&src);
            targets.push(sample.target.clone());
        }
    }
    (Tensor::from_data(Shape([chunk.len(), c, h, w]), data), targets)
}

/// One optimizer step's loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub coarse: f64,
    pub refined: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub losses: Vec<StepLoss>,
}

/// Sidecar checkpoint metadata stored next to the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainManifest {
    pub config: TrainConfig,
    pub steps: usize,
    pub losses: Vec<StepLoss>,
}

pub fn checkpoint_manifest_path(weights: &Path) -> PathBuf {
    let mut os = weights.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

pub fn save_checkpoint(
    path: &Path,
    model: &StdModel,
    cfg: &TrainConfig,
    report: &TrainReport,
) -> Result<()> {
    save_weights(model, path)?;
    let manifest = TrainManifest {
        config: cfg.clone(),
        steps: report.losses.len(),
        losses: report.losses.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&checkpoint_manifest_path(path), &bytes)
}

pub fn load_train_manifest(path: &Path) -> Result<TrainManifest> {
    let bytes = std::fs::read(checkpoint_manifest_path(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CoreError::Format(format!("manifest: {e}")))
}

fn panic_text(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        String::from("opaque panic")
    }
}

/// Runs the seeded loop: poly schedule, random horizontal flips, SGD with
/// momentum. A non-finite loss halts with the step number, leaving any
/// previously written checkpoint in place.
pub fn train(
    model: &StdModel,
    samples: &[TrainSample],
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    assert!(!samples.is_empty(), "empty dataset");
    assert!(tcfg.batch_size >= 1, "batch size must be positive");
    let params = model.parameters();
    let mut velocity: Vec<Vec<f64>> =
        params.iter().map(|p| vec![0.0; p.tensor.data().len()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let batches = samples.len().div_ceil(tcfg.batch_size);
    let total_steps = tcfg.epochs * batches;
    assert!(total_steps > 0, "epochs must be positive");
    let mut losses = Vec::with_capacity(total_steps);
    let mut step = 0;
    for _ in 0..tcfg.epochs {
        for chunk in samples.chunks(tcfg.batch_size) {
            let lr = poly_lr(step, total_steps, tcfg);
            let flips: Vec<bool> = chunk.iter().map(|_| rng.gen_bool(0.5)).collect();
            let (batch, targets) = assemble_batch(chunk, &flips);
            // Debug builds of the tensor engine treat non-finite op outputs
            // as fatal; surface that as divergence so the run halts cleanly.
            let caught = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                let (m_cs, m_rs) = model.forward(&batch, BnMode::Train);
                total_loss(&m_cs, &m_rs, &targets, lcfg)
            }));
            let out = match caught {
                Ok(out) => out,
                Err(payload) => {
                    let detail = panic_text(payload.as_ref());
                    if detail.contains("non-finite") {
                        return Err(CoreError::Diverged { step, detail });
                    }
                    std::panic::resume_unwind(payload);
                }
            };
            let total = out.total.item();
            if !total.is_finite() {
                return Err(CoreError::Diverged { step, detail: format!("loss {total}") });
            }
            for p in &params {
                p.tensor.zero_grad();
            }
            out.total.backward();
            sgd_step(&params, &mut velocity, lr, tcfg).map_err(|e| match e {
                CoreError::Diverged { detail, .. } => CoreError::Diverged { step, detail },
                other => other,
            })?;
            losses.push(StepLoss { step, lr, total, coarse: out.coarse, refined: out.refined });
            step += 1;
        }
    }
    let report = TrainReport { losses };
    if let Some(path) = checkpoint {
        save_checkpoint(path, model, tcfg, &report)?;
    }
    Ok(report)
}
