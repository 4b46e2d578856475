//! Raw convolution kernels on flat f64 slices. The stride-1 paths reduce to
//! contiguous axpy/dot inner loops over output rows so LLVM vectorizes
//! them; strided paths fall back to scalar loops. All loops use a fixed
//! iteration order, keeping reductions deterministic.

/// Geometry of a direct convolution. Padding is given for the top/left
/// sides; bottom/right padding only influences the output size, which the
/// caller computes.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub oc: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
    }
}

#[inline]
fn dotp(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Valid output range [lo, hi) for a kernel tap whose input offset is
/// `k_off` (= k·dilation − pad): positions where 0 ≤ o·stride + k_off < limit.
#[inline]
fn tap_range(out_size: usize, in_size: usize, k_off: i64, stride: usize) -> (usize, usize) {
    let s = stride as i64;
    let lo = if k_off >= 0 { 0 } else { (-k_off + s - 1) / s };
    let last = in_size as i64 - 1 - k_off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last / s + 1).min(out_size as i64);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

pub fn conv_forward(
    input: &[f64],
    weights: &[f64],
    bias: Option<&[f64]>,
    g: &ConvGeom,
    out: &mut [f64],
) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for oc in 0..g.oc {
            let out_plane = &mut out[(n * g.oc + oc) * ohw..][..ohw];
            let b = bias.map_or(0.0, |b| b[oc]);
            out_plane.fill(b);
            for ic in 0..g.ic {
                let in_plane = &input[(n * g.ic + ic) * ihw..][..ihw];
                let w_tap = &weights[(oc * g.ic + ic) * ksz..][..ksz];
                for kh in 0..g.kh {
                    let roff = (kh * g.dilation) as i64 - g.pad_top as i64;
                    let (oh_lo, oh_hi) = tap_range(g.oh, g.ih, roff, g.stride);
                    for kw in 0..g.kw {
                        let w = w_tap[kh * g.kw + kw];
                        let coff = (kw * g.dilation) as i64 - g.pad_left as i64;
                        let (ow_lo, ow_hi) = tap_range(g.ow, g.iw, coff, g.stride);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ihr = (oh * g.stride) as i64 + roff;
                            let in_row = &in_plane[ihr as usize * g.iw..][..g.iw];
                            let out_row = &mut out_plane[oh * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let src = &in_row[(ow_lo as i64 + coff) as usize
                                    ..(ow_hi as i64 + coff) as usize];
                                axpy(&mut out_row[ow_lo..ow_hi], src, w);
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * g.stride) as i64 + coff;
                                    out_row[ow] += w * in_row[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates d(loss)/d(input) into `gin` (caller zeroes it).
pub fn conv_backward_input(gout: &[f64], weights: &[f64], g: &ConvGeom, gin: &mut [f64]) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for ic in 0..g.ic {
            let gin_plane = &mut gin[(n * g.ic + ic) * ihw..][..ihw];
            for oc in 0..g.oc {
                let gout_plane = &gout[(n * g.oc + oc) * ohw..][..ohw];
                let w_tap = &weights[(oc * g.ic + ic) * ksz..][..ksz];
                for kh in 0..g.kh {
                    let roff = (kh * g.dilation) as i64 - g.pad_top as i64;
                    let (oh_lo, oh_hi) = tap_range(g.oh, g.ih, roff, g.stride);
                    for kw in 0..g.kw {
                        let w = w_tap[kh * g.kw + kw];
                        let coff = (kw * g.dilation) as i64 - g.pad_left as i64;
                        let (ow_lo, ow_hi) = tap_range(g.ow, g.iw, coff, g.stride);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ihr = (oh * g.stride) as i64 + roff;
                            let gin_row = &mut gin_plane[ihr as usize * g.iw..][..g.iw];
                            let gout_row = &gout_plane[oh * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let dst = &mut gin_row[(ow_lo as i64 + coff) as usize
                                    ..(ow_hi as i64 + coff) as usize];
                                axpy(dst, &gout_row[ow_lo..ow_hi], w);
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * g.stride) as i64 + coff;
                                    gin_row[iw as usize] += w * gout_row[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates d(loss)/d(weights) into `gw` (caller zeroes it).
pub fn conv_backward_weights(input: &[f64], gout: &[f64], g: &ConvGeom, gw: &mut [f64]) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for oc in 0..g.oc {
            let gout_plane = &gout[(n * g.oc + oc) * ohw..][..ohw];
            for ic in 0..g.ic {
                let in_plane = &input[(n * g.ic + ic) * ihw..][..ihw];
                let gw_tap = &mut gw[(oc * g.ic + ic) * ksz..][..ksz];
                for kh in 0..g.kh {
                    let roff = (kh * g.dilation) as i64 - g.pad_top as i64;
                    let (oh_lo, oh_hi) = tap_range(g.oh, g.ih, roff, g.stride);
                    for kw in 0..g.kw {
                        let coff = (kw * g.dilation) as i64 - g.pad_left as i64;
                        let (ow_lo, ow_hi) = tap_range(g.ow, g.iw, coff, g.stride);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ihr = (oh * g.stride) as i64 + roff;
                            let in_row = &in_plane[ihr as usize * g.iw..][..g.iw];
                            let gout_row = &gout_plane[oh * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let src = &in_row[(ow_lo as i64 + coff) as usize
                                    ..(ow_hi as i64 + coff) as usize];
                                acc += dotp(&gout_row[ow_lo..ow_hi], src);
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * g.stride) as i64 + coff;
                                    acc += gout_row[ow] * in_row[iw as usize];
                                }
                            }
                        }
                        gw_tap[kh * g.kw + kw] += acc;
                    }
                }
            }
        }
    }
}

pub fn conv_backward_bias(gout: &[f64], g: &ConvGeom, gb: &mut [f64]) {
    let ohw = g.oh * g.ow;
    for n in 0..g.n {
        for oc in 0..g.oc {
            let plane = &gout[(n * g.oc + oc) * ohw..][..ohw];
            gb[oc] += plane.iter().sum::<f64>();
        }
    }
}

/// Geometry of a transposed convolution (dilation 1, no padding):
/// out = (in − 1)·stride + kernel.
#[derive(Clone, Copy, Debug)]
pub struct TConvGeom {
    pub n: usize,
    pub ic: usize,
    pub ih: usize,
    pub iw: usize,
    pub oc: usize,
    pub oh: usize,
    pub ow: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

pub fn tconv_forward(
    input: &[f64],
    weights: &[f64],
    bias: Option<&[f64]>,
    g: &TConvGeom,
    out: &mut [f64],
) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    if let Some(b) = bias {
        for n in 0..g.n {
            for oc in 0..g.oc {
                out[(n * g.oc + oc) * ohw..][..ohw].fill(b[oc]);
            }
        }
    }
    for n in 0..g.n {
        for ic in 0..g.ic {
            let in_plane = &input[(n * g.ic + ic) * ihw..][..ihw];
            for oc in 0..g.oc {
                let out_plane = &mut out[(n * g.oc + oc) * ohw..][..ohw];
                let w_tap = &weights[(ic * g.oc + oc) * ksz..][..ksz];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let w = w_tap[kh * g.kw + kw];
                        for ih in 0..g.ih {
                            let in_row = &in_plane[ih * g.iw..][..g.iw];
                            let orow = ih * g.stride + kh;
                            let out_row = &mut out_plane[orow * g.ow..][..g.ow];
                            for iw in 0..g.iw {
                                out_row[iw * g.stride + kw] += w * in_row[iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn tconv_backward_input(gout: &[f64], weights: &[f64], g: &TConvGeom, gin: &mut [f64]) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for ic in 0..g.ic {
            let gin_plane = &mut gin[(n * g.ic + ic) * ihw..][..ihw];
            for oc in 0..g.oc {
                let gout_plane = &gout[(n * g.oc + oc) * ohw..][..ohw];
                let w_tap = &weights[(ic * g.oc + oc) * ksz..][..ksz];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let w = w_tap[kh * g.kw + kw];
                        for ih in 0..g.ih {
                            let gin_row = &mut gin_plane[ih * g.iw..][..g.iw];
                            let orow = ih * g.stride + kh;
                            let gout_row = &gout_plane[orow * g.ow..][..g.ow];
                            for iw in 0..g.iw {
                                gin_row[iw] += w * gout_row[iw * g.stride + kw];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn tconv_backward_weights(input: &[f64], gout: &[f64], g: &TConvGeom, gw: &mut [f64]) {
    let (ihw, ohw) = (g.ih * g.iw, g.oh * g.ow);
    let ksz = g.kh * g.kw;
    for n in 0..g.n {
        for ic in 0..g.ic {
            let in_plane = &input[(n * g.ic + ic) * ihw..][..ihw];
            for oc in 0..g.oc {
                let gout_plane = &gout[(n * g.oc + oc) * ohw..][..ohw];
                let gw_tap = &mut gw[(ic * g.oc + oc) * ksz..][..ksz];
                for kh in 0..g.kh {
                    for kw in 0..g.kw {
                        let mut acc = 0.0;
                        for ih in 0..g.ih {
                            let in_row = &in_plane[ih * g.iw..][..g.iw];
                            let orow = ih * g.stride + kh;
                            let gout_row = &gout_plane[orow * g.ow..][..g.ow];
                            for iw in 0..g.iw {
                                acc += in_row[iw] * gout_row[iw * g.stride + kw];
                            }
                        }
                        gw_tap[kh * g.kw + kw] += acc;
                    }
                }
            }
        }
    }
}

pub fn tconv_backward_bias(gout: &[f64], g: &TConvGeom, gb: &mut [f64]) {
    let ohw = g.oh * g.ow;
    for n in 0..g.n {
        for oc in 0..g.oc {
            gb[oc] += gout[(n * g.oc + oc) * ohw..][..ohw].iter().sum::<f64>();
        }
    }
}
