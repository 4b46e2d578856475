//! Differentiable operators: each constructor runs the forward kernel and
//! registers a backward closure on the tape. Parent order in the closure's
//! output always matches the `parents` vector passed to `from_op`.

use super::kernels::{self, ConvGeom, TConvGeom};
use super::{mutation::OpKind, Shape, Tensor};

/// Convolution configuration. Padding is (top, bottom, left, right).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: (usize, usize, usize, usize),
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            dilation: 1,
            padding: (0, 0, 0, 0),
            has_bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, top: usize, bottom: usize, left: usize, right: usize) -> Self {
        self.padding = (top, bottom, left, right);
        self
    }

    /// Symmetric "same" padding for odd kernels: dilation·(k−1)/2 per side,
    /// e.g. (0,4)/(4,0) for the 1×9 and 9×1 kernels.
    pub fn same(mut self) -> Self {
        assert!(
            self.kernel_h % 2 == 1 && self.kernel_w % 2 == 1,
            "same padding requires odd kernels"
        );
        let ph = self.dilation * (self.kernel_h - 1) / 2;
        let pw = self.dilation * (self.kernel_w - 1) / 2;
        self.padding = (ph, ph, pw, pw);
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn weight_shape(&self) -> Shape {
        Shape([
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ])
    }

    fn out_axis(&self, input: usize, pad_a: usize, pad_b: usize, k: usize) -> usize {
        let span = input as i64 + (pad_a + pad_b) as i64
            - (self.dilation * (k - 1)) as i64
            - 1;
        assert!(
            span >= 0,
            "non-positive output size: input {input}, kernel {k}, dilation {}",
            self.dilation
        );
        (span / self.stride as i64) as usize + 1
    }

    pub fn output_shape(&self, input: Shape) -> Shape {
        assert_eq!(
            input.c(),
            self.in_channels,
            "input channels {} do not match spec {}",
            input.c(),
            self.in_channels
        );
        let (pt, pb, pl, pr) = self.padding;
        Shape([
            input.n(),
            self.out_channels,
            self.out_axis(input.h(), pt, pb, self.kernel_h),
            self.out_axis(input.w(), pl, pr, self.kernel_w),
        ])
    }
}

fn check_bias(spec: &ConvSpec, bias: Option<&Tensor>) {
    match bias {
        Some(b) => {
            assert!(spec.has_bias, "bias supplied to a bias-free spec");
            assert_eq!(
                b.shape(),
                Shape([1, spec.out_channels, 1, 1]),
                "bias shape mismatch"
            );
        }
        None => assert!(!spec.has_bias, "spec declares a bias but none supplied"),
    }
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Tensor {
    assert_eq!(weights.shape(), spec.weight_shape(), "weight shape mismatch");
    check_bias(spec, bias);
    let in_shape = input.shape();
    let out_shape = spec.output_shape(in_shape);
    let g = ConvGeom {
        n: in_shape.n(),
        ic: in_shape.c(),
        ih: in_shape.h(),
        iw: in_shape.w(),
        oc: out_shape.c(),
        oh: out_shape.h(),
        ow: out_shape.w(),
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        dilation: spec.dilation,
        pad_top: spec.padding.0,
        pad_left: spec.padding.2,
    };
    let mut out = vec![0.0; out_shape.numel()];
    kernels::conv_forward(
        &input.data(),
        &weights.data(),
        bias.map(|b| b.to_vec()).as_deref(),
        &g,
        &mut out,
    );
    let mut parents = vec![input.clone(), weights.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (p_in, p_w) = (input.clone(), weights.clone());
    let needs = parent_needs(&parents);
    Tensor::from_op(out_shape, out, parents, OpKind::Conv2d, Box::new(move |gout| {
        let mut grads = Vec::with_capacity(3);
        grads.push(needs[0].then(|| {
            let mut gin = vec![0.0; p_in.numel()];
            kernels::conv_backward_input(gout, &p_w.data(), &g, &mut gin);
            gin
        }));
        grads.push(needs[1].then(|| {
            let mut gw = vec![0.0; p_w.numel()];
            kernels::conv_backward_weights(&p_in.data(), gout, &g, &mut gw);
            gw
        }));
        if needs.len() > 2 {
            grads.push(needs[2].then(|| {
                let mut gb = vec![0.0; g.oc];
                kernels::conv_backward_bias(gout, &g, &mut gb);
                gb
            }));
        }
        grads
    }))
}

pub fn conv_transpose2d(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: Option<&Tensor>,
) -> Tensor {
    assert_eq!(spec.dilation, 1, "transposed conv supports dilation 1 only");
    assert_eq!(spec.padding, (0, 0, 0, 0), "transposed conv is unpadded");
    assert_eq!(
        weights.shape(),
        Shape([spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w]),
        "transposed-conv weight shape mismatch"
    );
    check_bias(spec, bias);
    let in_shape = input.shape();
    assert_eq!(in_shape.c(), spec.in_channels, "input channel mismatch");
    let out_shape = Shape([
        in_shape.n(),
        spec.out_channels,
        (in_shape.h() - 1) * spec.stride + spec.kernel_h,
        (in_shape.w() - 1) * spec.stride + spec.kernel_w,
    ]);
    let g = TConvGeom {
        n: in_shape.n(),
        ic: in_shape.c(),
        ih: in_shape.h(),
        iw: in_shape.w(),
        oc: out_shape.c(),
        oh: out_shape.h(),
        ow: out_shape.w(),
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
    };
    let mut out = vec![0.0; out_shape.numel()];
    kernels::tconv_forward(
        &input.data(),
        &weights.data(),
        bias.map(|b| b.to_vec()).as_deref(),
        &g,
        &mut out,
    );
    let mut parents = vec![input.clone(), weights.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (p_in, p_w) = (input.clone(), weights.clone());
    let needs = parent_needs(&parents);
    Tensor::from_op(
        out_shape,
        out,
        parents,
        OpKind::ConvTranspose2d,
        Box::new(move |gout| {
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| {
                let mut gin = vec![0.0; p_in.numel()];
                kernels::tconv_backward_input(gout, &p_w.data(), &g, &mut gin);
                gin
            }));
            grads.push(needs[1].then(|| {
                let mut gw = vec![0.0; p_w.numel()];
                kernels::tconv_backward_weights(&p_in.data(), gout, &g, &mut gw);
                gw
            }));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let mut gb = vec![0.0; g.oc];
                    kernels::tconv_backward_bias(gout, &g, &mut gb);
                    gb
                }));
            }
            grads
        }),
    )
}

fn parent_needs(parents: &[Tensor]) -> Vec<bool> {
    parents.iter().map(|p| p.requires_grad()).collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BnMode {
    Train,
    Eval,
}

/// Batch normalization over (N, H, W) per channel. Train mode normalizes by
/// biased batch statistics and updates the running stats in place with
/// r ← (1−momentum)·r + momentum·batch. Eval mode uses the running stats.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut [f64],
    running_var: &mut [f64],
    mode: BnMode,
    momentum: f64,
    epsilon: f64,
) -> Tensor {
    let shape = input.shape();
    let (n, c, h, w) = (shape.n(), shape.c(), shape.h(), shape.w());
    assert_eq!(gamma.shape(), Shape([1, c, 1, 1]), "gamma shape mismatch");
    assert_eq!(beta.shape(), Shape([1, c, 1, 1]), "beta shape mismatch");
    assert_eq!(running_mean.len(), c, "running mean length mismatch");
    assert_eq!(running_var.len(), c, "running var length mismatch");
    let hw = h * w;
    let m = (n * hw) as f64;
    let x = input.data();
    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * hw..][..hw];
                    s += plane.iter().sum::<f64>();
                }
                mean[ci] = s / m;
                let mu = mean[ci];
                let mut v = 0.0;
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * hw..][..hw];
                    v += plane.iter().map(|&e| (e - mu) * (e - mu)).sum::<f64>();
                }
                var[ci] = v / m;
            }
            for ci in 0..c {
                running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
                running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * var[ci];
            }
            (mean, var)
        }
        BnMode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let istd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + epsilon).sqrt()).collect();
    let gm = gamma.data();
    let bt = beta.data();
    let mut out = vec![0.0; shape.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * hw;
            let (g, b, mu, is) = (gm[ci], bt[ci], mean[ci], istd[ci]);
            for (o, &e) in out[base..][..hw].iter_mut().zip(&x[base..][..hw]) {
                *o = (e - mu) * is * g + b;
            }
        }
    }
    drop(x);
    drop(gm);
    drop(bt);
    let parents = vec![input.clone(), gamma.clone(), beta.clone()];
    let needs = parent_needs(&parents);
    let (p_in, p_gamma) = (input.clone(), gamma.clone());
    Tensor::from_op(shape, out, parents, OpKind::BatchNorm, Box::new(move |gout| {
        let x = p_in.data();
        let gm = p_gamma.data();
        // Per-channel reductions of dy and dy·x̂.
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let (mu, is) = (mean[ci], istd[ci]);
                let mut sd = 0.0;
                let mut sx = 0.0;
                for (&dy, &e) in gout[base..][..hw].iter().zip(&x[base..][..hw]) {
                    sd += dy;
                    sx += dy * (e - mu) * is;
                }
                sum_dy[ci] += sd;
                sum_dy_xhat[ci] += sx;
            }
        }
        let gin = needs[0].then(|| {
            let mut gin = vec![0.0; x.len()];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * hw;
                    let (mu, is, g) = (mean[ci], istd[ci], gm[ci]);
                    match mode {
                        BnMode::Train => {
                            let k1 = sum_dy[ci] / m;
                            let k2 = sum_dy_xhat[ci] / m;
                            for ((gi, &dy), &e) in gin[base..][..hw]
                                .iter_mut()
                                .zip(&gout[base..][..hw])
                                .zip(&x[base..][..hw])
                            {
                                let xhat = (e - mu) * is;
                                *gi = g * is * (dy - k1 - xhat * k2);
                            }
                        }
                        BnMode::Eval => {
                            for (gi, &dy) in
                                gin[base..][..hw].iter_mut().zip(&gout[base..][..hw])
                            {
                                *gi = g * is * dy;
                            }
                        }
                    }
                }
            }
            gin
        });
        vec![gin, needs[1].then(|| sum_dy_xhat.clone()), needs[2].then(|| sum_dy.clone())]
    }))
}

pub fn relu(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let out: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
    let p = input.clone();
    Tensor::from_op(
        shape,
        out,
        vec![input.clone()],
        OpKind::Relu,
        Box::new(move |gout| {
            let x = p.data();
            vec![Some(
                gout.iter()
                    .zip(x.iter())
                    .map(|(&dy, &xv)| if xv > 0.0 { dy } else { 0.0 })
                    .collect(),
            )]
        }),
    )
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let out: Vec<f64> = input
        .data()
        .iter()
        .map(|&v| 1.0 / (1.0 + (-v).exp()))
        .collect();
    let saved = out.clone();
    Tensor::from_op(
        shape,
        out,
        vec![input.clone()],
        OpKind::Sigmoid,
        Box::new(move |gout| {
            vec![Some(
                gout.iter()
                    .zip(&saved)
                    .map(|(&dy, &y)| dy * y * (1.0 - y))
                    .collect(),
            )]
        }),
    )
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add shape mismatch");
    let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let parents = vec![a.clone(), b.clone()];
    let needs = parent_needs(&parents);
    Tensor::from_op(
        a.shape(),
        out,
        parents,
        OpKind::Add,
        Box::new(move |gout| {
            vec![
                needs[0].then(|| gout.to_vec()),
                needs[1].then(|| gout.to_vec()),
            ]
        }),
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
    let out: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let parents = vec![a.clone(), b.clone()];
    let needs = parent_needs(&parents);
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape(),
        out,
        parents,
        OpKind::Mul,
        Box::new(move |gout| {
            vec![
                needs[0].then(|| gout.iter().zip(pb.data().iter()).map(|(d, v)| d * v).collect()),
                needs[1].then(|| gout.iter().zip(pa.data().iter()).map(|(d, v)| d * v).collect()),
            ]
        }),
    )
}

/// Multiplication by a trainable scalar parameter (the calibration α).
pub fn mul_scalar_param(input: &Tensor, alpha: &Tensor) -> Tensor {
    assert_eq!(alpha.shape(), Shape::scalar(), "alpha must be scalar");
    let a = alpha.item();
    let out: Vec<f64> = input.data().iter().map(|&v| v * a).collect();
    let parents = vec![input.clone(), alpha.clone()];
    let needs = parent_needs(&parents);
    let p_in = input.clone();
    Tensor::from_op(
        input.shape(),
        out,
        parents,
        OpKind::MulScalarParam,
        Box::new(move |gout| {
            vec![
                needs[0].then(|| gout.iter().map(|&d| d * a).collect()),
                needs[1].then(|| {
                    vec![gout
                        .iter()
                        .zip(p_in.data().iter())
                        .map(|(d, v)| d * v)
                        .sum()]
                }),
            ]
        }),
    )
}

/// Multiplication by a compile-time constant (loss weights).
pub fn scale(input: &Tensor, c: f64) -> Tensor {
    let out: Vec<f64> = input.data().iter().map(|&v| v * c).collect();
    Tensor::from_op(
        input.shape(),
        out,
        vec![input.clone()],
        OpKind::Scale,
        Box::new(move |gout| vec![Some(gout.iter().map(|&d| d * c).collect())]),
    )
}

pub fn concat_channels(inputs: &[&Tensor]) -> Tensor {
    assert!(!inputs.is_empty(), "concat of zero tensors");
    let first = inputs[0].shape();
    let (n, h, w) = (first.n(), first.h(), first.w());
    let mut c_total = 0;
    for t in inputs {
        let s = t.shape();
        assert_eq!((s.n(), s.h(), s.w()), (n, h, w), "concat non-channel dims differ");
        c_total += s.c();
    }
    let hw = h * w;
    let mut out = vec![0.0; n * c_total * hw];
    let mut c_off = 0;
    for t in inputs {
        let c = t.shape().c();
        let data = t.data();
        for ni in 0..n {
            let src = &data[ni * c * hw..][..c * hw];
            let dst = &mut out[(ni * c_total + c_off) * hw..][..c * hw];
            dst.copy_from_slice(src);
        }
        c_off += c;
    }
    let parents: Vec<Tensor> = inputs.iter().map(|&t| t.clone()).collect();
    let needs = parent_needs(&parents);
    let channels: Vec<usize> = inputs.iter().map(|t| t.shape().c()).collect();
    Tensor::from_op(
        Shape([n, c_total, h, w]),
        out,
        parents,
        OpKind::Concat,
        Box::new(move |gout| {
            let mut grads = Vec::with_capacity(channels.len());
            let mut c_off = 0;
            for (i, &c) in channels.iter().enumerate() {
                grads.push(needs[i].then(|| {
                    let mut g = vec![0.0; n * c * hw];
                    for ni in 0..n {
                        let src = &gout[(ni * c_total + c_off) * hw..][..c * hw];
                        g[ni * c * hw..][..c * hw].copy_from_slice(src);
                    }
                    g
                }));
                c_off += c;
            }
            grads
        }),
    )
}

/// Channel slice [c0, c1) as a copied tensor.
pub fn slice_channels(input: &Tensor, c0: usize, c1: usize) -> Tensor {
    let s = input.shape();
    assert!(c0 < c1 && c1 <= s.c(), "bad channel slice {c0}..{c1} of {}", s.c());
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let cs = c1 - c0;
    let hw = h * w;
    let data = input.data();
    let mut out = vec![0.0; n * cs * hw];
    for ni in 0..n {
        let src = &data[(ni * c + c0) * hw..][..cs * hw];
        out[ni * cs * hw..][..cs * hw].copy_from_slice(src);
    }
    drop(data);
    Tensor::from_op(
        Shape([n, cs, h, w]),
        out,
        vec![input.clone()],
        OpKind::SliceChannels,
        Box::new(move |gout| {
            let mut g = vec![0.0; n * c * hw];
            for ni in 0..n {
                let dst = &mut g[(ni * c + c0) * hw..][..cs * hw];
                dst.copy_from_slice(&gout[ni * cs * hw..][..cs * hw]);
            }
            vec![Some(g)]
        }),
    )
}

/// Replicates a single-channel map across `c` channels.
pub fn broadcast_channels(input: &Tensor, c: usize) -> Tensor {
    let s = input.shape();
    assert_eq!(s.c(), 1, "broadcast_channels expects a single-channel input");
    let (n, h, w) = (s.n(), s.h(), s.w());
    let hw = h * w;
    let data = input.data();
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        let src = &data[ni * hw..][..hw];
        for ci in 0..c {
            out[(ni * c + ci) * hw..][..hw].copy_from_slice(src);
        }
    }
    drop(data);
    Tensor::from_op(
        Shape([n, c, h, w]),
        out,
        vec![input.clone()],
        OpKind::BroadcastChannels,
        Box::new(move |gout| {
            let mut g = vec![0.0; n * hw];
            for ni in 0..n {
                let dst = &mut g[ni * hw..][..hw];
                for ci in 0..c {
                    let src = &gout[(ni * c + ci) * hw..][..hw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            vec![Some(g)]
        }),
    )
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Tensor {
    assert!(factor >= 1, "upsample factor must be positive");
    let s = input.shape();
    let (n, c, h, w) = (s.n(), s.c(), s.h(), s.w());
    let (oh, ow) = (h * factor, w * factor);
    let data = input.data();
    let mut out = vec![0.0; n * c * oh * ow];
    for plane in 0..n * c {
        let src = &data[plane * h * w..][..h * w];
        let dst = &mut out[plane * oh * ow..][..oh * ow];
        for y in 0..oh {
            let src_row = &src[(y / factor) * w..][..w];
            let dst_row = &mut dst[y * ow..][..ow];
            for x in 0..ow {
                dst_row[x] = src_row[x / factor];
            }
        }
    }
    drop(data);
    Tensor::from_op(
        Shape([n, c, oh, ow]),
        out,
        vec![input.clone()],
        OpKind::UpsampleNearest,
        Box::new(move |gout| {
            let mut g = vec![0.0; n * c * h * w];
            for plane in 0..n * c {
                let src = &gout[plane * oh * ow..][..oh * ow];
                let dst = &mut g[plane * h * w..][..h * w];
                for y in 0..oh {
                    let dst_row = &mut dst[(y / factor) * w..][..w];
                    let src_row = &src[y * ow..][..ow];
                    for x in 0..ow {
                        dst_row[x / factor] += src_row[x];
                    }
                }
            }
            vec![Some(g)]
        }),
    )
}

/// Sum of all elements as a scalar tensor.
pub fn sum(input: &Tensor) -> Tensor {
    let total: f64 = input.data().iter().sum();
    let n = input.numel();
    Tensor::from_op(
        Shape::scalar(),
        vec![total],
        vec![input.clone()],
        OpKind::Sum,
        Box::new(move |gout| vec![Some(vec![gout[0]; n])]),
    )
}
