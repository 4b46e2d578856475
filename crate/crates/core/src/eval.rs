//! Detection evaluation: IoU matching with precision/recall/F-measure,
//! multiply-accumulate and parameter accounting, and a timing harness.

use std::time::Instant;

use geo::{Area, BooleanOps, LineString};
use serde::Serialize;

use crate::nn::StdModel;
use crate::postprocess::{detect, DetectParams, Detection};
use crate::tensor::{no_grad, BnMode, ConvSpec, Tensor};
use crate::Polygon;

fn to_geo(p: &Polygon) -> geo::Polygon<f64> {
    let ring: Vec<(f64, f64)> = p.vertices().iter().map(|v| (v.x, v.y)).collect();
    geo::Polygon::new(LineString::from(ring), vec![])
}

/// area(a ∩ b) / area(a ∪ b) via polygon clipping.
pub fn polygon_iou(a: &Polygon, b: &Polygon) -> f64 {
    let (ga, gb) = (to_geo(a), to_geo(b));
    let inter = ga.intersection(&gb).unsigned_area();
    let union = ga.unsigned_area() + gb.unsigned_area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// area(det ∩ region) / area(det), the don't-care overlap fraction.
fn intersection_over_det(det: &Polygon, region: &Polygon) -> f64 {
    let gd = to_geo(det);
    let area = gd.unsigned_area();
    if area <= 0.0 {
        return 0.0;
    }
    gd.intersection(&to_geo(region)).unsigned_area() / area
}

/// One matched detection-ground-truth pair.
#[derive(Clone, Debug, Serialize)]
pub struct MatchRecord {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

/// Per-image matching outcome.
#[derive(Clone, Debug, Serialize)]
pub struct ImageMatches {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<MatchRecord>,
    /// Detection indices discarded by don't-care overlap.
    pub discarded: Vec<usize>,
}

/// Greedy one-to-one matching in descending IoU order with deterministic
/// tie-breaks (lower detection index, then lower ground-truth index). A
/// detection overlapping a don't-care region by at least half of its own
/// area is discarded before matching.
pub fn match_detections(
    dets: &[Detection],
    gts: &[Polygon],
    dont_care: &[Polygon],
    iou_threshold: f64,
) -> ImageMatches {
    assert!(0.0 < iou_threshold && iou_threshold < 1.0, "IoU threshold must lie in (0,1)");
    let mut discarded = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        if dont_care.iter().any(|dc| intersection_over_det(&d.polygon, dc) >= 0.5) {
            discarded.push(i);
        } else {
            live.push(i);
        }
    }

    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for &i in &live {
        for (j, gt) in gts.iter().enumerate() {
            let iou = polygon_iou(&dets[i].polygon, gt);
            if iou >= iou_threshold {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut det_taken = vec![false; dets.len()];
    let mut gt_taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    for (iou, i, j) in pairs {
        if !det_taken[i] && !gt_taken[j] {
            det_taken[i] = true;
            gt_taken[j] = true;
            matches.push(MatchRecord { det: i, gt: j, iou });
        }
    }
    let tp = matches.len();
    ImageMatches {
        tp,
        fp: live.iter().filter(|&&i| !det_taken[i]).count(),
        fn_: gts.len() - tp,
        matches,
        discarded,
    }
}

/// Aggregated evaluation over a dataset.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub images: Vec<ImageMatches>,
}

/// precision = tp/(tp+fp), recall = tp/(tp+fn), F = 2PR/(P+R), each 0 when
/// its denominator is 0.
pub fn precision_recall_f(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

impl EvalReport {
    pub fn from_images(images: Vec<ImageMatches>) -> EvalReport {
        let tp = images.iter().map(|m| m.tp).sum();
        let fp = images.iter().map(|m| m.fp).sum();
        let fn_ = images.iter().map(|m| m.fn_).sum();
        let (precision, recall, f_measure) = precision_recall_f(tp, fp, fn_);
        EvalReport { tp, fp, fn_, precision, recall, f_measure, images }
    }

    /// Structured text form: one "key: value" per line, reals to 4 decimals.
    pub fn to_text(&self) -> String {
        format!(
            "tp: {}\nfp: {}\nfn: {}\nprecision: {:.4}\nrecall: {:.4}\nf_measure: {:.4}\n",
            self.tp, self.fp, self.fn_, self.precision, self.recall, self.f_measure
        )
    }

    /// Machine-readable JSON document including per-image match lists.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Multiply-accumulates of a convolution: output elements times taps.
pub fn conv_macs(spec: &ConvSpec, out_h: usize, out_w: usize) -> u64 {
    (out_h * out_w * spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w) as u64
}

fn conv_params(spec: &ConvSpec) -> u64 {
    (spec.out_channels * spec.in_channels * spec.kernel_h * spec.kernel_w
        + if spec.has_bias { spec.out_channels } else { 0 }) as u64
}

/// Transposed convolution: every input element scatters taps for each output
/// channel.
fn tconv_macs(spec: &ConvSpec, in_h: usize, in_w: usize) -> u64 {
    (in_h * in_w * spec.in_channels * spec.out_channels * spec.kernel_h * spec.kernel_w) as u64
}

/// Batch-norm parameter convention: gain, shift, and both running statistics.
fn bn_params(channels: usize) -> u64 {
    4 * channels as u64
}

/// Cost of one named block.
#[derive(Clone, Debug, Serialize)]
pub struct BlockCost {
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

/// MAC and parameter accounting per block. MACs count convolutions only
/// (element-wise ops, BN, and activations are excluded); parameters count
/// weights, biases, BN gains/shifts plus running statistics, and alpha.
#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub input: (usize, usize),
    pub blocks: Vec<BlockCost>,
}

impl CostReport {
    pub fn total_macs(&self) -> u64 {
        self.blocks.iter().map(|b| b.macs).sum()
    }

    pub fn total_params(&self) -> u64 {
        self.blocks.iter().map(|b| b.params).sum()
    }

    pub fn block(&self, name: &str) -> &BlockCost {
        self.blocks.iter().find(|b| b.name == name).expect("unknown block name")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("input: {}x{}\n", self.input.0, self.input.1);
        for b in &self.blocks {
            out.push_str(&format!("{}.macs: {}\n{}.params: {}\n", b.name, b.macs, b.name, b.params));
        }
        out.push_str(&format!("total.macs: {}\ntotal.params: {}\n", self.total_macs(), self.total_params()));
        out
    }
}

/// Walks the architecture at the given input size and accounts every layer.
pub fn count_flops_params(model: &StdModel, input: (usize, usize)) -> CostReport {
    let (h, w) = input;
    assert!(h % 32 == 0 && w % 32 == 0 && h > 0 && w > 0, "input must be divisible by 32");
    let mut blocks = Vec::new();

    let mut backbone = BlockCost { name: "backbone".into(), macs: 0, params: 0 };
    let stem = &model.backbone.stem;
    backbone.macs += conv_macs(&stem.conv.spec, h / 2, w / 2);
    backbone.params += conv_params(&stem.conv.spec) + bn_params(stem.bn.channels);
    for (i, (down, keep)) in model.backbone.stages.iter().enumerate() {
        let (sh, sw) = (h >> (2 + i), w >> (2 + i));
        backbone.macs += conv_macs(&down.conv.spec, sh, sw) + conv_macs(&keep.conv.spec, sh, sw);
        backbone.params += conv_params(&down.conv.spec) + bn_params(down.bn.channels);
        backbone.params += conv_params(&keep.conv.spec) + bn_params(keep.bn.channels);
    }
    blocks.push(backbone);

    for (i, miem) in model.miem.iter().enumerate() {
        let (sh, sw) = (h >> (2 + i), w >> (2 + i));
        let mut cost = BlockCost { name: format!("miem{i}"), macs: 0, params: 0 };
        cost.macs += conv_macs(&miem.standardize.spec, sh, sw);
        cost.params += conv_params(&miem.standardize.spec);
        for (conv, bn) in &miem.reduce {
            cost.macs += conv_macs(&conv.spec, sh, sw);
            cost.params += conv_params(&conv.spec) + bn_params(bn.channels);
        }
        for branch in &miem.branches {
            cost.macs += conv_macs(&branch.spec, sh, sw);
            cost.params += conv_params(&branch.spec);
        }
        cost.macs += conv_macs(&miem.merge.spec, sh, sw);
        cost.params += conv_params(&miem.merge.spec);
        blocks.push(cost);
    }

    let mut fpn = BlockCost { name: "fpn".into(), macs: 0, params: 0 };
    for (i, (lateral, smooth)) in model.fpn.lateral.iter().zip(&model.fpn.smooth).enumerate() {
        let (sh, sw) = (h >> (2 + i), w >> (2 + i));
        fpn.macs += conv_macs(&lateral.spec, sh, sw) + conv_macs(&smooth.spec, sh, sw);
        fpn.params += conv_params(&lateral.spec) + conv_params(&smooth.spec);
    }
    fpn.macs += conv_macs(&model.fpn.reduce.spec, h / 4, w / 4);
    fpn.params += conv_params(&model.fpn.reduce.spec);
    blocks.push(fpn);

    let mut coarse = BlockCost { name: "coarse_head".into(), macs: 0, params: 0 };
    for conv in [&model.coarse.c1, &model.coarse.c2] {
        coarse.macs += conv_macs(&conv.spec, h / 4, w / 4);
        coarse.params += conv_params(&conv.spec);
    }
    blocks.push(coarse);

    let mut cpfsm = BlockCost { name: "cpfsm".into(), macs: 0, params: 0 };
    for conv in model.cpfsm.lift.iter().chain(&model.cpfsm.steer).chain([&model.cpfsm.merge]) {
        cpfsm.macs += conv_macs(&conv.spec, h / 4, w / 4);
        cpfsm.params += conv_params(&conv.spec);
    }
    blocks.push(cpfsm);

    let mut refined = BlockCost { name: "refined_head".into(), macs: 0, params: 0 };
    refined.macs += conv_macs(&model.refined.c1.spec, h / 4, w / 4);
    refined.params += conv_params(&model.refined.c1.spec);
    refined.macs += tconv_macs(&model.refined.up1.spec, h / 4, w / 4);
    refined.params += conv_params(&model.refined.up1.spec);
    refined.macs += tconv_macs(&model.refined.up2.spec, h / 2, w / 2);
    refined.params += conv_params(&model.refined.up2.spec);
    blocks.push(refined);

    blocks.push(BlockCost { name: "alpha".into(), macs: 0, params: 1 });
    CostReport { input, blocks }
}

/// Timing result for forward + post-processing, file I/O excluded.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Timing {
    pub mean_ms: f64,
    pub fps: f64,
}

/// Mean wall-clock per image over `iters` passes after `warmup` unmeasured
/// passes.
pub fn timing_harness(
    model: &StdModel,
    images: &[Tensor],
    warmup: usize,
    iters: usize,
    params: &DetectParams,
) -> Timing {
    assert!(iters >= 1, "iters must be at least 1");
    assert!(!images.is_empty(), "timing needs at least one image");
    let run = || {
        for img in images {
            let (_, m_rs) = no_grad(|| model.forward(img, BnMode::Eval));
            detect(&m_rs, params);
        }
    };
    for _ in 0..warmup {
        run();
    }
    let start = Instant::now();
    for _ in 0..iters {
        run();
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1000.0 / (iters * images.len()) as f64;
    Timing { mean_ms, fps: 1000.0 / mean_ms }
}
