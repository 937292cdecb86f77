//! Forward and backward kernels on NCHW buffers.

use super::tensor::Tensor;

/// Geometry of a (possibly grouped) square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn dense(c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { c_in, c_out, kernel, stride, pad, groups: 1 }
    }

    pub fn depthwise(c: usize, kernel: usize, stride: usize) -> Self {
        ConvGeom { c_in: c, c_out: c, kernel, stride, pad: kernel / 2, groups: c }
    }

    pub fn pointwise(c_in: usize, c_out: usize, stride: usize) -> Self {
        ConvGeom { c_in, c_out, kernel: 1, stride, pad: 0, groups: 1 }
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * (self.c_in / self.groups) * self.kernel * self.kernel
    }

    pub fn out_dim(&self, d: usize) -> Option<usize> {
        window_out(d, self.kernel, self.stride, self.pad)
    }
}

/// Output length of a sliding window, `None` when the window never fits.
pub fn window_out(d: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = d + 2 * pad;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

/// Output positions `o` whose input coordinate `o·stride + tap − pad` falls in `[0, len)`.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    if len + pad <= tap {
        return (0, 0);
    }
    let hi = ((len - 1 + pad - tap) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub fn conv2d_forward(x: &Tensor, w: &[f32], bias: Option<&[f32]>, g: &ConvGeom) -> Tensor {
    let [n, c, h, wd] = x.shape();
    debug_assert_eq!(c, g.c_in);
    debug_assert_eq!(w.len(), g.weight_len());
    let oh = g.out_dim(h).expect("conv output height");
    let ow = g.out_dim(wd).expect("conv output width");
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    let mut out = Tensor::zeros([n, g.c_out, oh, ow]);
    let in_plane = h * wd;
    let out_plane = oh * ow;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for oc in 0..g.c_out {
            let grp = oc / cout_g;
            let o = &mut od[(ni * g.c_out + oc) * out_plane..][..out_plane];
            if let Some(b) = bias {
                o.fill(b[oc]);
            }
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                let xp = &xd[(ni * c + ic) * in_plane..][..in_plane];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
                    for kx in 0..k {
                        let wv = w[((oc * cin_g + icl) * k + ky) * k + kx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, wd, ow);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let row = &xp[iy * wd..][..wd];
                            let orow = &mut o[oy * ow..][..ow];
                            if s == 1 {
                                let off = kx as isize - p as isize;
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[(ox as isize + off) as usize];
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    orow[ox] += wv * row[ox * s + kx - p];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(x: &Tensor, w: &[f32], dout: &[f32], g: &ConvGeom) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let [n, c, h, wd] = x.shape();
    let oh = g.out_dim(h).expect("conv output height");
    let ow = g.out_dim(wd).expect("conv output width");
    let (k, s, p) = (g.kernel, g.stride, g.pad);
    let cin_g = g.c_in / g.groups;
    let cout_g = g.c_out / g.groups;
    let in_plane = h * wd;
    let out_plane = oh * ow;
    let xd = x.data();
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f32; w.len()];
    let mut db = vec![0.0f32; g.c_out];
    for ni in 0..n {
        for oc in 0..g.c_out {
            let grp = oc / cout_g;
            let go = &dout[(ni * g.c_out + oc) * out_plane..][..out_plane];
            db[oc] += go.iter().sum::<f32>();
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                let base = (ni * c + ic) * in_plane;
                let xp = &xd[base..][..in_plane];
                let dxp = &mut dx[base..][..in_plane];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = valid_range(ky, p, s, h, oh);
                    for kx in 0..k {
                        let widx = ((oc * cin_g + icl) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (ox_lo, ox_hi) = valid_range(kx, p, s, wd, ow);
                        let mut acc = 0.0f32;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * s + ky - p;
                            let grow = &go[oy * ow..][..ow];
                            for ox in ox_lo..ox_hi {
                                let ix = iy * wd + ox * s + kx - p;
                                acc += xp[ix] * grow[ox];
                                dxp[ix] += wv * grow[ox];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub const BN_EPS: f32 = 1e-5;

/// Batch-statistics batchnorm. Returns `(y, xhat, inv_std, mean, unbiased_var)`.
pub fn batchnorm_train(
    x: &Tensor,
    gamma: Option<&[f32]>,
    beta: Option<&[f32]>,
) -> (Tensor, Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
    let [n, c, _, _] = x.shape();
    let plane = x.plane();
    let m = (n * plane) as f32;
    let xd = x.data();
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ci in 0..c {
        let mut sum = 0.0f64;
        for ni in 0..n {
            sum += x.channel(ni, ci).iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = sum / m as f64;
        let mut sq = 0.0f64;
        for ni in 0..n {
            sq += x.channel(ni, ci).iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>();
        }
        mean[ci] = mu as f32;
        var[ci] = (sq / m as f64) as f32;
    }
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0f32; x.len()];
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (gm, bt) = (gamma.map_or(1.0, |g| g[ci]), beta.map_or(0.0, |b| b[ci]));
            for i in base..base + plane {
                let xh = (xd[i] - mean[ci]) * inv_std[ci];
                xhat[i] = xh;
                yd[i] = gm * xh + bt;
            }
        }
    }
    let unbiased = if m > 1.0 { var.iter().map(|v| v * m / (m - 1.0)).collect() } else { var };
    (y, xhat, inv_std, mean, unbiased)
}

pub fn batchnorm_eval(x: &Tensor, gamma: Option<&[f32]>, beta: Option<&[f32]>, mean: &[f32], var: &[f32]) -> Tensor {
    let [n, c, _, _] = x.shape();
    let plane = x.plane();
    let mut y = x.clone();
    let yd = y.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let inv = 1.0 / (var[ci] + BN_EPS).sqrt();
            let (gm, bt) = (gamma.map_or(1.0, |g| g[ci]), beta.map_or(0.0, |b| b[ci]));
            for v in &mut yd[(ni * c + ci) * plane..][..plane] {
                *v = gm * (*v - mean[ci]) * inv + bt;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: Option<&[f32]>,
    shape: [usize; 4],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let [n, c, h, w] = shape;
    let plane = h * w;
    let m = (n * plane) as f32;
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                dgamma[ci] += dy[i] * xhat[i];
                dbeta[ci] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0f32; dy.len()];
    for ci in 0..c {
        let gm = gamma.map_or(1.0, |g| g[ci]);
        // sums of dxhat and dxhat·xhat
        let (s1, s2) = (gm * dbeta[ci], gm * dgamma[ci]);
        let scale = inv_std[ci] / m;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                dx[i] = scale * (m * gm * dy[i] - s1 - xhat[i] * s2);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Padding excluded from the divisor.
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Returns the pooled tensor and, for max pooling, the argmax offset of each
/// output within its input plane.
pub fn pool_forward(x: &Tensor, kind: PoolKind, g: &PoolGeom) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let oh = window_out(h, g.kernel, g.stride, g.pad).expect("pool output height");
    let ow = window_out(w, g.kernel, g.stride, g.pad).expect("pool output width");
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = if kind == PoolKind::Max { vec![0u32; n * c * oh * ow] } else { Vec::new() };
    let od = out.data_mut();
    for nc in 0..n * c {
        let xp = &x.data()[nc * h * w..][..h * w];
        for oy in 0..oh {
            let y0 = (oy * g.stride) as isize - g.pad as isize;
            let ys = y0.max(0) as usize..((y0 + g.kernel as isize).min(h as isize)) as usize;
            for ox in 0..ow {
                let x0 = (ox * g.stride) as isize - g.pad as isize;
                let xs = x0.max(0) as usize..((x0 + g.kernel as isize).min(w as isize)) as usize;
                let oi = nc * oh * ow + oy * ow + ox;
                match kind {
                    PoolKind::Max => {
                        let mut best = f32::NEG_INFINITY;
                        let mut at = 0;
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                let v = xp[iy * w + ix];
                                if v > best {
                                    best = v;
                                    at = iy * w + ix;
                                }
                            }
                        }
                        od[oi] = best;
                        argmax[oi] = at as u32;
                    }
                    PoolKind::Avg => {
                        let mut sum = 0.0;
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                sum += xp[iy * w + ix];
                            }
                        }
                        od[oi] = sum / (ys.len() * xs.len()) as f32;
                    }
                }
            }
        }
    }
    (out, argmax)
}

pub fn pool_backward(x_shape: [usize; 4], dout: &Tensor, kind: PoolKind, g: &PoolGeom, argmax: &[u32]) -> Vec<f32> {
    let [n, c, h, w] = x_shape;
    let (oh, ow) = (dout.h(), dout.w());
    let mut dx = vec![0.0f32; n * c * h * w];
    let dd = dout.data();
    for nc in 0..n * c {
        let dxp = &mut dx[nc * h * w..][..h * w];
        for oy in 0..oh {
            let y0 = (oy * g.stride) as isize - g.pad as isize;
            let ys = y0.max(0) as usize..((y0 + g.kernel as isize).min(h as isize)) as usize;
            for ox in 0..ow {
                let oi = nc * oh * ow + oy * ow + ox;
                match kind {
                    PoolKind::Max => dxp[argmax[oi] as usize] += dd[oi],
                    PoolKind::Avg => {
                        let x0 = (ox * g.stride) as isize - g.pad as isize;
                        let xs = x0.max(0) as usize..((x0 + g.kernel as isize).min(w as isize)) as usize;
                        let share = dd[oi] / (ys.len() * xs.len()) as f32;
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                dxp[iy * w + ix] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}
