//! Network blocks: toy backbone, mixed information extraction (MIEM),
//! feature pyramid fusion, coarse head, mapping filter, cascaded parallel
//! feature steering (CPFSM), alpha calibration, refined head.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{
    add, broadcast_channels, concat_channels, mul, mul_scalar_param, relu, sigmoid,
    slice_channels, upsample_nearest, BnMode, ConvSpec, Tensor,
};

use super::layers::{BnLayer, BufferEntry, ConvBnRelu, ConvLayer, ParamEntry, TConvLayer};

/// Stride-2 stem plus four two-conv stages; stage i outputs base*2^i channels
/// at stride 4*2^i for i in 0..4.
pub struct Backbone {
    pub stem: ConvBnRelu,
    pub stages: Vec<(ConvBnRelu, ConvBnRelu)>,
}

impl Backbone {
    pub fn new(base: usize, momentum: f64, epsilon: f64, rng: &mut ChaCha8Rng) -> Backbone {
        let stem = ConvBnRelu::new(
            ConvSpec::new(3, base, 3, 3).stride(2).padding(1, 1, 1, 1).bias(false),
            momentum,
            epsilon,
            rng,
        );
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = base;
        for i in 0..4 {
            let out_ch = base << i;
            let down = ConvBnRelu::new(
                ConvSpec::new(in_ch, out_ch, 3, 3).stride(2).padding(1, 1, 1, 1).bias(false),
                momentum,
                epsilon,
                rng,
            );
            let keep = ConvBnRelu::new(ConvSpec::new(out_ch, out_ch, 3, 3).same().bias(false), momentum, epsilon, rng);
            stages.push((down, keep));
            in_ch = out_ch;
        }
        Backbone { stem, stages }
    }

    /// Input height and width must be divisible by 32 so every stage divides
    /// evenly; returns the four stage outputs at strides 4, 8, 16, 32.
    pub fn forward(&self, image: &Tensor, mode: BnMode) -> [Tensor; 4] {
        let shape = image.shape();
        assert_eq!(shape.c(), 3, "backbone expects 3-channel input");
        assert!(
            shape.h() % 32 == 0 && shape.w() % 32 == 0 && shape.h() > 0 && shape.w() > 0,
            "input size {}x{} not divisible by 32",
            shape.h(),
            shape.w()
        );
        let mut x = self.stem.forward(image, mode);
        let mut out = Vec::with_capacity(4);
        for (down, keep) in &self.stages {
            x = keep.forward(&down.forward(&x, mode), mode);
            out.push(x.clone());
        }
        out.try_into().unwrap_or_else(|_| unreachable!())
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>, buffers: &mut Vec<BufferEntry>) {
        self.stem.collect(&format!("{prefix}.stem"), params, buffers);
        for (i, (down, keep)) in self.stages.iter().enumerate() {
            down.collect(&format!("{prefix}.stage{i}.down"), params, buffers);
            keep.collect(&format!("{prefix}.stage{i}.keep"), params, buffers);
        }
    }
}

/// Mixed information extraction over one scale. A 1x1 standardize feeds four
/// reduction branches (1x1 conv + BN + ReLU down to width/4 channels), each
/// followed by one linear geometric conv (1x9, 9x1, 3x3, 3x3 dilation 2, all
/// same-padded). Branch outputs concatenate to F_hat, a 1x1 merge produces
/// F_bar, and the block returns F + F_bar + F_hat.
pub struct Miem {
    pub width: usize,
    pub standardize: ConvLayer,
    pub reduce: Vec<(ConvLayer, BnLayer)>,
    pub branches: Vec<ConvLayer>,
    pub merge: ConvLayer,
}

impl Miem {
    pub fn new(width: usize, momentum: f64, epsilon: f64, rng: &mut ChaCha8Rng) -> Miem {
        assert!(width % 4 == 0, "MIEM width {width} not divisible by 4");
        let quarter = width / 4;
        let standardize = ConvLayer::new(ConvSpec::new(width, width, 1, 1), rng);
        let mut reduce = Vec::with_capacity(4);
        for _ in 0..4 {
            reduce.push((
                ConvLayer::new(ConvSpec::new(width, quarter, 1, 1).bias(false), rng),
                BnLayer::new(quarter, momentum, epsilon),
            ));
        }
        let branch_specs = [
            ConvSpec::new(quarter, quarter, 1, 9).same().bias(false),
            ConvSpec::new(quarter, quarter, 9, 1).same().bias(false),
            ConvSpec::new(quarter, quarter, 3, 3).same().bias(false),
            ConvSpec::new(quarter, quarter, 3, 3).dilation(2).same().bias(false),
        ];
        let branches = branch_specs.into_iter().map(|s| ConvLayer::new(s, rng)).collect();
        let merge = ConvLayer::new(ConvSpec::new(width, width, 1, 1), rng);
        Miem { width, standardize, reduce, branches, merge }
    }

    pub fn forward(&self, f: &Tensor, mode: BnMode) -> Tensor {
        assert_eq!(f.shape().c(), self.width, "MIEM width mismatch");
        let s = self.standardize.forward(f);
        let mut parts = Vec::with_capacity(4);
        for ((conv, bn), branch) in self.reduce.iter().zip(&self.branches) {
            let r = relu(&bn.forward(&conv.forward(&s), mode));
            parts.push(branch.forward(&r));
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        let f_hat = concat_channels(&refs);
        let f_bar = self.merge.forward(&f_hat);
        add(&add(f, &f_bar), &f_hat)
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>, buffers: &mut Vec<BufferEntry>) {
        self.standardize.collect(&format!("{prefix}.standardize"), params);
        for (i, (conv, bn)) in self.reduce.iter().enumerate() {
            conv.collect(&format!("{prefix}.reduce{i}.conv"), params);
            bn.collect(&format!("{prefix}.reduce{i}.bn"), params, buffers);
        }
        for (i, branch) in self.branches.iter().enumerate() {
            branch.collect(&format!("{prefix}.branch{i}"), params);
        }
        self.merge.collect(&format!("{prefix}.merge"), params);
    }
}

/// Feature pyramid fusion. Bias-free throughout: lateral 1x1 projections,
/// top-down nearest-neighbor doubling with addition, 3x3 smoothing, upsample
/// of every level to stride 4, channel concat, and a 1x1 reduction to the
/// fused width.
pub struct Fpn {
    pub lateral: Vec<ConvLayer>,
    pub smooth: Vec<ConvLayer>,
    pub reduce: ConvLayer,
}

impl Fpn {
    pub fn new(scale_channels: [usize; 4], level: usize, fused: usize, rng: &mut ChaCha8Rng) -> Fpn {
        let lateral = scale_channels
            .iter()
            .map(|&c| ConvLayer::new(ConvSpec::new(c, level, 1, 1).bias(false), rng))
            .collect();
        let smooth = (0..4)
            .map(|_| ConvLayer::new(ConvSpec::new(level, level, 3, 3).same().bias(false), rng))
            .collect();
        let reduce = ConvLayer::new(ConvSpec::new(4 * level, fused, 1, 1).bias(false), rng);
        Fpn { lateral, smooth, reduce }
    }

    pub fn forward(&self, scales: &[Tensor; 4]) -> Tensor {
        let l: Vec<Tensor> = self.lateral.iter().zip(scales).map(|(c, s)| c.forward(s)).collect();
        let p3 = l[3].clone();
        let p2 = add(&l[2], &upsample_nearest(&p3, 2));
        let p1 = add(&l[1], &upsample_nearest(&p2, 2));
        let p0 = add(&l[0], &upsample_nearest(&p1, 2));
        let pyramid = [p0, p1, p2, p3];
        let mut smoothed = Vec::with_capacity(4);
        for (i, (conv, p)) in self.smooth.iter().zip(&pyramid).enumerate() {
            let s = conv.forward(p);
            smoothed.push(if i == 0 { s } else { upsample_nearest(&s, 1 << i) });
        }
        let refs: Vec<&Tensor> = smoothed.iter().collect();
        self.reduce.forward(&concat_channels(&refs))
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        for (i, c) in self.lateral.iter().enumerate() {
            c.collect(&format!("{prefix}.lateral{i}"), params);
        }
        for (i, c) in self.smooth.iter().enumerate() {
            c.collect(&format!("{prefix}.smooth{i}"), params);
        }
        self.reduce.collect(&format!("{prefix}.reduce"), params);
    }
}

/// Coarse head: two 3x3 convs then sigmoid, one output channel at stride 4.
pub struct CoarseHead {
    pub c1: ConvLayer,
    pub c2: ConvLayer,
}

impl CoarseHead {
    pub fn new(fused: usize, hidden: usize, rng: &mut ChaCha8Rng) -> CoarseHead {
        CoarseHead {
            c1: ConvLayer::new(ConvSpec::new(fused, hidden, 3, 3).same(), rng),
            c2: ConvLayer::new(ConvSpec::new(hidden, 1, 3, 3).same(), rng),
        }
    }

    pub fn forward(&self, f_fuse: &Tensor) -> Tensor {
        sigmoid(&self.c2.forward(&self.c1.forward(f_fuse)))
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        self.c1.collect(&format!("{prefix}.c1"), params);
        self.c2.collect(&format!("{prefix}.c2"), params);
    }
}

/// Soft spatial attention: multiply every fused channel by the coarse map.
pub fn mapping_filter(f_fuse: &Tensor, m_cs: &Tensor) -> Tensor {
    assert_eq!(m_cs.shape().c(), 1, "coarse map must be single-channel");
    mul(f_fuse, &broadcast_channels(m_cs, f_fuse.shape().c()))
}

/// Cascaded parallel feature steering. The input splits into four channel
/// groups in order. Group i lifts to the hidden width by a 1x1 conv; from the
/// second group on, the previous cascade output is added before a 3x3 conv
/// with dilation i (padding i). The four cascade outputs concatenate and a
/// 1x1 conv returns to the fused width.
pub struct Cpfsm {
    pub fused: usize,
    pub hidden: usize,
    pub lift: Vec<ConvLayer>,
    pub steer: Vec<ConvLayer>,
    pub merge: ConvLayer,
}

impl Cpfsm {
    pub fn new(fused: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Cpfsm {
        assert!(fused % 4 == 0, "CPFSM input width {fused} not divisible by 4");
        let group = fused / 4;
        let lift = (0..4)
            .map(|_| ConvLayer::new(ConvSpec::new(group, hidden, 1, 1), rng))
            .collect();
        let steer = (1..=4)
            .map(|d| ConvLayer::new(ConvSpec::new(hidden, hidden, 3, 3).dilation(d).same(), rng))
            .collect();
        let merge = ConvLayer::new(ConvSpec::new(4 * hidden, fused, 1, 1), rng);
        Cpfsm { fused, hidden, lift, steer, merge }
    }

    /// The four cascade outputs H2_1..H2_4 before the final merge.
    pub fn cascades(&self, f_mf: &Tensor) -> [Tensor; 4] {
        assert_eq!(f_mf.shape().c(), self.fused, "CPFSM width mismatch");
        let group = self.fused / 4;
        let mut out: Vec<Tensor> = Vec::with_capacity(4);
        for i in 0..4 {
            let g = slice_channels(f_mf, i * group, (i + 1) * group);
            let mut h1 = self.lift[i].forward(&g);
            if i > 0 {
                h1 = add(&h1, &out[i - 1]);
            }
            out.push(self.steer[i].forward(&h1));
        }
        out.try_into().unwrap_or_else(|_| unreachable!())
    }

    pub fn forward(&self, f_mf: &Tensor) -> Tensor {
        let cascades = self.cascades(f_mf);
        let refs: Vec<&Tensor> = cascades.iter().collect();
        self.merge.forward(&concat_channels(&refs))
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        for (i, c) in self.lift.iter().enumerate() {
            c.collect(&format!("{prefix}.lift{i}"), params);
        }
        for (i, c) in self.steer.iter().enumerate() {
            c.collect(&format!("{prefix}.steer{i}"), params);
        }
        self.merge.collect(&format!("{prefix}.merge"), params);
    }
}

/// Calibrated fusion F_c = F_fuse + alpha * F_fp with a trainable scalar.
pub fn scm_calibrate(f_fuse: &Tensor, f_fp: &Tensor, alpha: &Tensor) -> Tensor {
    add(f_fuse, &mul_scalar_param(f_fp, alpha))
}

/// Refined head: 3x3 conv, two stride-2 2x2 transposed convs, sigmoid. Takes
/// stride-4 features to a full-resolution single-channel map.
pub struct RefinedHead {
    pub c1: ConvLayer,
    pub up1: TConvLayer,
    pub up2: TConvLayer,
}

impl RefinedHead {
    pub fn new(fused: usize, hidden: usize, rng: &mut ChaCha8Rng) -> RefinedHead {
        RefinedHead {
            c1: ConvLayer::new(ConvSpec::new(fused, hidden, 3, 3).same(), rng),
            up1: TConvLayer::new(hidden, hidden, 2, 2, rng),
            up2: TConvLayer::new(hidden, 1, 2, 2, rng),
        }
    }

    pub fn forward(&self, f_c: &Tensor) -> Tensor {
        sigmoid(&self.up2.forward(&self.up1.forward(&self.c1.forward(f_c))))
    }

    pub fn collect(&self, prefix: &str, params: &mut Vec<ParamEntry>) {
        self.c1.collect(&format!("{prefix}.c1"), params);
        self.up1.collect(&format!("{prefix}.up1"), params);
        self.up2.collect(&format!("{prefix}.up2"), params);
    }
}
