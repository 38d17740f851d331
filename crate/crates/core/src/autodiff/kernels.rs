//! Forward and backward kernels for the spatial primitives, on NCHW buffers.
//!
//! Every window op pads symmetrically with zeros so that stride 1 keeps the
//! spatial extent and stride 2 yields `ceil(H / 2)`.

use crate::scalar::Scalar;

/// Geometry of a 2-D convolution over an NCHW batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn pad_h(&self) -> usize {
        self.dilation * (self.kh - 1) / 2
    }

    pub fn pad_w(&self) -> usize {
        self.dilation * (self.kw - 1) / 2
    }

    pub fn out_h(&self) -> usize {
        out_extent(self.h, self.kh, self.dilation, self.stride)
    }

    pub fn out_w(&self) -> usize {
        out_extent(self.w, self.kw, self.dilation, self.stride)
    }

    pub fn cin_per_group(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_per_group(&self) -> usize {
        self.cout / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin_per_group() * self.kh * self.kw
    }
}

pub fn out_extent(len: usize, k: usize, dilation: usize, stride: usize) -> usize {
    let pad = dilation * (k - 1) / 2;
    (len + 2 * pad - dilation * (k - 1) - 1) / stride + 1
}

/// Range of output columns `o` whose input column `o * stride + offset - pad` is in `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, offset: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if pad > offset { (pad - offset).div_ceil(stride) } else { 0 };
    let hi_num = len as isize - 1 + pad as isize - offset as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let (cig, cog) = (g.cin_per_group(), g.cout_per_group());
    let mut out = vec![T::zero(); g.n * g.cout * oh * ow];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / cog;
            let out_plane = &mut out[(n * g.cout + oc) * oh * ow..][..oh * ow];
            for icg in 0..cig {
                let ic = grp * cig + icg;
                let x_plane = &x[(n * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = valid_range(g.h, oh, ky * g.dilation, ph, g.stride);
                    for kx in 0..g.kw {
                        let wv = w[((oc * cig + icg) * g.kh + ky) * g.kw + kx];
                        let (ox_lo, ox_hi) = valid_range(g.w, ow, kx * g.dilation, pw, g.stride);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky * g.dilation - ph;
                            let x_row = &x_plane[iy * g.w..(iy + 1) * g.w];
                            let o_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx * g.dilation - pw;
                                o_row[ox] = o_row[ox] + wv * x_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight)` for `grad_out`.
pub fn conv2d_backward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], grad_out: &[T]) -> (Vec<T>, Vec<T>) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (ph, pw) = (g.pad_h(), g.pad_w());
    let (cig, cog) = (g.cin_per_group(), g.cout_per_group());
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); w.len()];
    for n in 0..g.n {
        for oc in 0..g.cout {
            let grp = oc / cog;
            let go_plane = &grad_out[(n * g.cout + oc) * oh * ow..][..oh * ow];
            for icg in 0..cig {
                let ic = grp * cig + icg;
                let base = (n * g.cin + ic) * g.h * g.w;
                for ky in 0..g.kh {
                    let (oy_lo, oy_hi) = valid_range(g.h, oh, ky * g.dilation, ph, g.stride);
                    for kx in 0..g.kw {
                        let widx = ((oc * cig + icg) * g.kh + ky) * g.kw + kx;
                        let wv = w[widx];
                        let (ox_lo, ox_hi) = valid_range(g.w, ow, kx * g.dilation, pw, g.stride);
                        let mut acc = T::zero();
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky * g.dilation - ph;
                            let row = base + iy * g.w;
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx * g.dilation - pw;
                                let go = go_plane[oy * ow + ox];
                                acc = acc + go * x[row + ix];
                                gx[row + ix] = gx[row + ix] + go * wv;
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    (gx, gw)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Avg,
    Max,
}

/// Output of a pooling pass: values plus, for max pooling, the flat input index
/// of each selected element.
pub struct PoolOut<T> {
    pub values: Vec<T>,
    pub argmax: Vec<usize>,
    pub counts: Vec<usize>,
}

/// `window`x`window` pooling with symmetric padding; padded cells never count.
pub fn pool2d_forward<T: Scalar>(
    kind: PoolKind,
    dims: [usize; 4],
    window: usize,
    stride: usize,
    x: &[T],
) -> PoolOut<T> {
    let [n, c, h, w] = dims;
    let pad = (window - 1) / 2;
    let oh = out_extent(h, window, 1, stride);
    let ow = out_extent(w, window, 1, stride);
    let total = n * c * oh * ow;
    let mut values = Vec::with_capacity(total);
    let mut argmax = Vec::with_capacity(if kind == PoolKind::Max { total } else { 0 });
    let mut counts = Vec::with_capacity(if kind == PoolKind::Avg { total } else { 0 });
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride).saturating_sub(pad);
            let y1 = (oy * stride + window - pad).min(h);
            for ox in 0..ow {
                let x0 = (ox * stride).saturating_sub(pad);
                let x1 = (ox * stride + window - pad).min(w);
                match kind {
                    PoolKind::Avg => {
                        let mut s = T::zero();
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                s = s + x[base + iy * w + ix];
                            }
                        }
                        let cnt = (y1 - y0) * (x1 - x0);
                        counts.push(cnt);
                        values.push(s / T::lit(cnt as f64));
                    }
                    PoolKind::Max => {
                        let mut best = base + y0 * w + x0;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                let idx = base + iy * w + ix;
                                if x[idx] > x[best] {
                                    best = idx;
                                }
                            }
                        }
                        argmax.push(best);
                        values.push(x[best]);
                    }
                }
            }
        }
    }
    PoolOut { values, argmax, counts }
}

pub fn pool2d_backward<T: Scalar>(
    kind: PoolKind,
    dims: [usize; 4],
    window: usize,
    stride: usize,
    saved: &PoolOut<T>,
    grad_out: &[T],
) -> Vec<T> {
    let [n, c, h, w] = dims;
    let mut gx = vec![T::zero(); n * c * h * w];
    match kind {
        PoolKind::Max => {
            for (&idx, &g) in saved.argmax.iter().zip(grad_out) {
                gx[idx] = gx[idx] + g;
            }
        }
        PoolKind::Avg => {
            let pad = (window - 1) / 2;
            let oh = out_extent(h, window, 1, stride);
            let ow = out_extent(w, window, 1, stride);
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    let y0 = (oy * stride).saturating_sub(pad);
                    let y1 = (oy * stride + window - pad).min(h);
                    for ox in 0..ow {
                        let x0 = (ox * stride).saturating_sub(pad);
                        let x1 = (ox * stride + window - pad).min(w);
                        let o = (plane * oh + oy) * ow + ox;
                        let share = grad_out[o] / T::lit(saved.counts[o] as f64);
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                gx[base + iy * w + ix] = gx[base + iy * w + ix] + share;
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// 2x2 block averaging (stride 2); partial edge blocks average their valid cells.
pub fn subsample2_forward<T: Scalar>(dims: [usize; 4], x: &[T]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y1 = (2 * oy + 2).min(h);
            for ox in 0..ow {
                let x1 = (2 * ox + 2).min(w);
                let mut s = T::zero();
                for iy in 2 * oy..y1 {
                    for ix in 2 * ox..x1 {
                        s = s + x[base + iy * w + ix];
                    }
                }
                out.push(s / T::lit(((y1 - 2 * oy) * (x1 - 2 * ox)) as f64));
            }
        }
    }
    out
}

pub fn subsample2_backward<T: Scalar>(dims: [usize; 4], grad_out: &[T]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut gx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y1 = (2 * oy + 2).min(h);
            for ox in 0..ow {
                let x1 = (2 * ox + 2).min(w);
                let cnt = T::lit(((y1 - 2 * oy) * (x1 - 2 * ox)) as f64);
                let share = grad_out[(plane * oh + oy) * ow + ox] / cnt;
                for iy in 2 * oy..y1 {
                    for ix in 2 * ox..x1 {
                        gx[base + iy * w + ix] = gx[base + iy * w + ix] + share;
                    }
                }
            }
        }
    }
    gx
}
