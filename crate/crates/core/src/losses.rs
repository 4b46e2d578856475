//! Dual-supervision losses: OHEM-balanced binary cross-entropy and dice
//! loss over mask maps, combined as total = λ1·L_cm + λ2·L_rm. The printed
//! second BCE term −(1−y)·log(x) is corrected to −(1−y)·log(1−x); the dice
//! loss optimizes the complement 1 − D of the dice coefficient.

use crate::labels::{Mask, TrainingTarget};
use crate::tensor::{add, scale, upsample_nearest, OpKind, Shape, Tensor};

/// Predictions are clamped to [margin, 1−margin] before the logs.
const CLAMP: f64 = 1e-7;
/// Negative cap when an image has no positive pixels.
const NO_POS_CAP: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Dice,
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            other => Err(format!("unknown loss kind {other:?}; use bce or dice")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
        })
    }
}

/// Loss weighting and pairing configuration; the default is the best
/// scheme (BCE for both maps, weights 6 and 1, OHEM ratio 3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub coarse: LossKind,
    pub refined: LossKind,
    pub ohem_ratio: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 6.0,
            lambda2: 1.0,
            coarse: LossKind::Bce,
            refined: LossKind::Bce,
            ohem_ratio: 3.0,
        }
    }
}

fn check_pred(pred: &Tensor, targets: &[(&Mask, &Mask)]) -> (usize, usize, usize) {
    let s = pred.shape();
    assert_eq!(s.c(), 1, "mask maps are single-channel");
    assert_eq!(s.n(), targets.len(), "batch size mismatch");
    for (t, ig) in targets {
        assert_eq!((t.h, t.w), (s.h(), s.w()), "target size mismatch");
        assert_eq!((ig.h, ig.w), (s.h(), s.w()), "ignore size mismatch");
    }
    assert!(
        pred.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
        "predictions outside [0,1]"
    );
    (s.n(), s.h(), s.w())
}

fn pixel_loss(x: f64, positive: bool) -> f64 {
    if positive {
        -x.ln()
    } else {
        -(1.0 - x).ln()
    }
}

/// OHEM-balanced BCE over a batch of single-channel maps: per image, the
/// selected set S holds every positive plus the ratio·|positives| negatives
/// of highest loss (ties to the lower flat index); with no positives, the
/// top min(negatives, 1000) negatives. Returns the mean over images of the
/// mean loss over S; gradients flow only through S.
pub fn bce_ohem_batch(pred: &Tensor, targets: &[(&Mask, &Mask)], ratio: f64) -> Tensor {
    assert!(ratio > 0.0, "ohem ratio must be positive");
    let (n, h, w) = check_pred(pred, targets);
    let hw = h * w;
    let data = pred.data();
    // Per image: selected flat indices with positivity, and |S|.
    let mut selected: Vec<(Vec<(u32, bool)>, usize)> = Vec::with_capacity(n);
    let mut total = 0.0;
    for (ni, (target, ignore)) in targets.iter().enumerate() {
        let px = &data[ni * hw..][..hw];
        let mut sel: Vec<(u32, bool)> = Vec::new();
        let mut neg: Vec<(f64, u32)> = Vec::new();
        for p in 0..hw {
            if ignore.data[p] == 1 {
                continue;
            }
            let x = px[p].clamp(CLAMP, 1.0 - CLAMP);
            if target.data[p] == 1 {
                sel.push((p as u32, true));
            } else {
                neg.push((pixel_loss(x, false), p as u32));
            }
        }
        let k = if sel.is_empty() {
            neg.len().min(NO_POS_CAP)
        } else {
            ((ratio * sel.len() as f64) as usize).min(neg.len())
        };
        neg.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite loss").then(a.1.cmp(&b.1)));
        sel.extend(neg[..k].iter().map(|&(_, p)| (p, false)));
        let count = sel.len();
        if count > 0 {
            let sum: f64 = sel
                .iter()
                .map(|&(p, pos)| pixel_loss(px[p as usize].clamp(CLAMP, 1.0 - CLAMP), pos))
                .sum();
            total += sum / count as f64;
        }
        selected.push((sel, count));
    }
    drop(data);
    let out = total / n as f64;
    let p_pred = pred.clone();
    let numel = pred.numel();
    Tensor::from_op(
        Shape::scalar(),
        vec![out],
        vec![pred.clone()],
        OpKind::BceOhem,
        Box::new(move |gout| {
            let data = p_pred.data();
            let mut g = vec![0.0; numel];
            for (ni, (sel, count)) in selected.iter().enumerate() {
                if *count == 0 {
                    continue;
                }
                let px = &data[ni * hw..][..hw];
                let gp = &mut g[ni * hw..][..hw];
                let coeff = gout[0] / (*count as f64 * n as f64);
                for &(p, pos) in sel {
                    let raw = px[p as usize];
                    // Zero slope through the clamp at saturation.
                    if !(CLAMP..=1.0 - CLAMP).contains(&raw) {
                        continue;
                    }
                    gp[p as usize] = coeff
                        * if pos {
                            -1.0 / raw
                        } else {
                            1.0 / (1.0 - raw)
                        };
                }
            }
            vec![Some(g)]
        }),
    )
}

/// Dice loss over a batch: per image, 1 − (2Σxy + 1)/(Σx² + Σy² + 1) with
/// the sums over non-ignored pixels; returns the mean over images.
pub fn dice_loss_batch(pred: &Tensor, targets: &[(&Mask, &Mask)]) -> Tensor {
    let (n, h, w) = check_pred(pred, targets);
    let hw = h * w;
    let data = pred.data();
    let mut per_image: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut total = 0.0;
    for (ni, (target, ignore)) in targets.iter().enumerate() {
        let px = &data[ni * hw..][..hw];
        let mut inter = 0.0;
        let mut den = 0.0;
        for p in 0..hw {
            if ignore.data[p] == 1 {
                continue;
            }
            let (x, y) = (px[p], target.data[p] as f64);
            inter += x * y;
            den += x * x + y * y;
        }
        let num = 2.0 * inter + 1.0;
        let den = den + 1.0;
        total += 1.0 - num / den;
        per_image.push((num, den));
    }
    drop(data);
    let out = total / n as f64;
    let p_pred = pred.clone();
    let numel = pred.numel();
    let owned_targets: Vec<(Mask, Mask)> = targets
        .iter()
        .map(|(t, ig)| ((*t).clone(), (*ig).clone()))
        .collect();
    Tensor::from_op(
        Shape::scalar(),
        vec![out],
        vec![pred.clone()],
        OpKind::Dice,
        Box::new(move |gout| {
            let data = p_pred.data();
            let mut g = vec![0.0; numel];
            for (ni, (target, ignore)) in owned_targets.iter().enumerate() {
                let (num, den) = per_image[ni];
                let px = &data[ni * hw..][..hw];
                let gp = &mut g[ni * hw..][..hw];
                let coeff = gout[0] / n as f64;
                for p in 0..hw {
                    if ignore.data[p] == 1 {
                        continue;
                    }
                    let (x, y) = (px[p], target.data[p] as f64);
                    // d(1 - num/den)/dx = (num·2x - den·2y) / den².
                    gp[p] = coeff * (num * 2.0 * x - den * 2.0 * y) / (den * den);
                }
            }
            vec![Some(g)]
        }),
    )
}

/// Single-map BCE with OHEM (batch of one).
pub fn bce_ohem(pred: &Tensor, target: &Mask, ignore: &Mask, ratio: f64) -> Tensor {
    bce_ohem_batch(pred, &[(target, ignore)], ratio)
}

/// Single-map dice loss (batch of one).
pub fn dice_loss(pred: &Tensor, target: &Mask, ignore: &Mask) -> Tensor {
    dice_loss_batch(pred, &[(target, ignore)])
}

/// Total loss plus per-component values for logging.
pub struct LossOutput {
    pub total: Tensor,
    pub coarse: f64,
    pub refined: f64,
}

fn map_loss(pred: &Tensor, targets: &[(&Mask, &Mask)], kind: LossKind, ratio: f64) -> Tensor {
    match kind {
        LossKind::Bce => bce_ohem_batch(pred, targets, ratio),
        LossKind::Dice => dice_loss_batch(pred, targets),
    }
}

/// Dual-supervised total: the coarse map (stride 4) is upsampled ×4 with
/// nearest-neighbor before its loss, then total = λ1·L_cm + λ2·L_rm. Both
/// maps are supervised by the same kernel label.
pub fn total_loss(
    m_cs: &Tensor,
    m_rs: &Tensor,
    targets: &[TrainingTarget],
    cfg: &LossConfig,
) -> LossOutput {
    let sc = m_cs.shape();
    let sr = m_rs.shape();
    assert_eq!(sc.n(), sr.n(), "batch size mismatch");
    assert_eq!(
        (sr.h(), sr.w()),
        (sc.h() * 4, sc.w() * 4),
        "coarse map must sit at stride 4 relative to the refined map"
    );
    assert_eq!(targets.len(), sr.n(), "targets per image");
    let pairs: Vec<(&Mask, &Mask)> = targets.iter().map(|t| (&t.kernel, &t.ignore)).collect();
    let up = upsample_nearest(m_cs, 4);
    let l_cm = map_loss(&up, &pairs, cfg.coarse, cfg.ohem_ratio);
    let l_rm = map_loss(m_rs, &pairs, cfg.refined, cfg.ohem_ratio);
    let coarse = l_cm.item();
    let refined = l_rm.item();
    let total = add(&scale(&l_cm, cfg.lambda1), &scale(&l_rm, cfg.lambda2));
    LossOutput {
        total,
        coarse,
        refined,
    }
}
