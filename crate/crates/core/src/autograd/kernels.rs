//! Raw convolution and pooling loops shared by the tape's forward and
//! backward passes. All kernels use cross-correlation (no kernel flip) and
//! zero padding.

use super::tensor::Scalar;
use crate::error::{AstnError, Result};

/// Output length along one axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Range of output positions whose tap at kernel offset `koff` lands inside
/// the unpadded input.
#[inline]
fn valid_outputs(koff: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // in = out*stride + koff - pad, need 0 <= in < in_len
    let lo = if pad > koff {
        (pad - koff).div_ceil(stride)
    } else {
        0
    };
    let top = in_len + pad;
    let hi = if top > koff {
        ((top - koff - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub width: usize,
    pub height: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl Conv2dGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, in_ch, width, height) = match *input {
            [c, w, h] => (1, c, w, h),
            [n, c, w, h] => (n, c, w, h),
            _ => {
                return Err(AstnError::shape(
                    "conv2d",
                    format!("input must be C×W×H or N×C×W×H, got {input:?}"),
                ))
            }
        };
        let [out_ch, kin, kw, kh] = *kernel else {
            return Err(AstnError::shape("conv2d", format!("kernel must be 4-D, got {kernel:?}")));
        };
        if kin != in_ch {
            return Err(AstnError::shape(
                "conv2d",
                format!("kernel expects {kin} input channels, input has {in_ch}"),
            ));
        }
        if kw != kh {
            return Err(AstnError::shape("conv2d", format!("square kernels only, got {kw}×{kh}")));
        }
        let out_w = conv_out_len(width, kw, stride, pad);
        let out_h = conv_out_len(height, kh, stride, pad);
        let (Some(out_w), Some(out_h)) = (out_w, out_h) else {
            return Err(AstnError::shape(
                "conv2d",
                format!("kernel {kw} stride {stride} pad {pad} does not fit {width}×{height}"),
            ));
        };
        Ok(Conv2dGeom {
            batch,
            in_ch,
            width,
            height,
            out_ch,
            kernel: kw,
            stride,
            pad,
            out_w,
            out_h,
        })
    }

    pub fn out_len(&self) -> usize {
        self.batch * self.out_ch * self.out_w * self.out_h
    }
}

pub fn conv2d_forward<F: Scalar>(x: &[F], k: &[F], g: &Conv2dGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.out_len()];
    let in_plane = g.width * g.height;
    let out_plane = g.out_w * g.out_h;
    let kk = g.kernel * g.kernel;
    for n in 0..g.batch {
        for co in 0..g.out_ch {
            let o = &mut out[(n * g.out_ch + co) * out_plane..][..out_plane];
            for ci in 0..g.in_ch {
                let xin = &x[(n * g.in_ch + ci) * in_plane..][..in_plane];
                let kern = &k[(co * g.in_ch + ci) * kk..][..kk];
                for kx in 0..g.kernel {
                    let (ox_lo, ox_hi) = valid_outputs(kx, g.pad, g.stride, g.width, g.out_w);
                    for ky in 0..g.kernel {
                        let wv = kern[kx * g.kernel + ky];
                        if wv == F::zero() {
                            continue;
                        }
                        let (oy_lo, oy_hi) = valid_outputs(ky, g.pad, g.stride, g.height, g.out_h);
                        for ox in ox_lo..ox_hi {
                            let ix = ox * g.stride + kx - g.pad;
                            let row = &xin[ix * g.height..][..g.height];
                            let orow = &mut o[ox * g.out_h..][..g.out_h];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * g.stride + ky - g.pad;
                                orow[oy] = orow[oy] + wv * row[iy];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input and kernel gradients for `conv2d_forward`.
pub fn conv2d_backward<F: Scalar>(
    x: &[F],
    k: &[F],
    g: &Conv2dGeom,
    gout: &[F],
    gx: Option<&mut [F]>,
    gk: Option<&mut [F]>,
) {
    let in_plane = g.width * g.height;
    let out_plane = g.out_w * g.out_h;
    let kk = g.kernel * g.kernel;
    if let Some(gx) = gx {
        for n in 0..g.batch {
            for co in 0..g.out_ch {
                let go = &gout[(n * g.out_ch + co) * out_plane..][..out_plane];
                for ci in 0..g.in_ch {
                    let gxin = &mut gx[(n * g.in_ch + ci) * in_plane..][..in_plane];
                    let kern = &k[(co * g.in_ch + ci) * kk..][..kk];
                    for kx in 0..g.kernel {
                        let (ox_lo, ox_hi) = valid_outputs(kx, g.pad, g.stride, g.width, g.out_w);
                        for ky in 0..g.kernel {
                            let wv = kern[kx * g.kernel + ky];
                            let (oy_lo, oy_hi) = valid_outputs(ky, g.pad, g.stride, g.height, g.out_h);
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx - g.pad;
                                let grow = &go[ox * g.out_h..][..g.out_h];
                                let xrow = &mut gxin[ix * g.height..][..g.height];
                                for oy in oy_lo..oy_hi {
                                    let iy = oy * g.stride + ky - g.pad;
                                    xrow[iy] = xrow[iy] + wv * grow[oy];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(gk) = gk {
        for n in 0..g.batch {
            for co in 0..g.out_ch {
                let go = &gout[(n * g.out_ch + co) * out_plane..][..out_plane];
                for ci in 0..g.in_ch {
                    let xin = &x[(n * g.in_ch + ci) * in_plane..][..in_plane];
                    let gkern = &mut gk[(co * g.in_ch + ci) * kk..][..kk];
                    for kx in 0..g.kernel {
                        let (ox_lo, ox_hi) = valid_outputs(kx, g.pad, g.stride, g.width, g.out_w);
                        for ky in 0..g.kernel {
                            let (oy_lo, oy_hi) = valid_outputs(ky, g.pad, g.stride, g.height, g.out_h);
                            let mut acc = F::zero();
                            for ox in ox_lo..ox_hi {
                                let ix = ox * g.stride + kx - g.pad;
                                let grow = &go[ox * g.out_h..][..g.out_h];
                                let xrow = &xin[ix * g.height..][..g.height];
                                for oy in oy_lo..oy_hi {
                                    let iy = oy * g.stride + ky - g.pad;
                                    acc = acc + grow[oy] * xrow[iy];
                                }
                            }
                            gkern[kx * g.kernel + ky] = gkern[kx * g.kernel + ky] + acc;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub len: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

impl Conv1dGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, in_ch, len) = match *input {
            [c, l] => (1, c, l),
            [n, c, l] => (n, c, l),
            _ => {
                return Err(AstnError::shape(
                    "conv1d",
                    format!("input must be C×L or N×C×L, got {input:?}"),
                ))
            }
        };
        let [out_ch, kin, kl] = *kernel else {
            return Err(AstnError::shape("conv1d", format!("kernel must be 3-D, got {kernel:?}")));
        };
        if kin != in_ch {
            return Err(AstnError::shape(
                "conv1d",
                format!("kernel expects {kin} input channels, input has {in_ch}"),
            ));
        }
        let Some(out_len) = conv_out_len(len, kl, stride, pad) else {
            return Err(AstnError::shape(
                "conv1d",
                format!("kernel {kl} stride {stride} pad {pad} does not fit length {len}"),
            ));
        };
        Ok(Conv1dGeom {
            batch,
            in_ch,
            len,
            out_ch,
            kernel: kl,
            stride,
            pad,
            out_len,
        })
    }
}

pub fn conv1d_forward<F: Scalar>(x: &[F], k: &[F], g: &Conv1dGeom) -> Vec<F> {
    let mut out = vec![F::zero(); g.batch * g.out_ch * g.out_len];
    for n in 0..g.batch {
        for co in 0..g.out_ch {
            let o = &mut out[(n * g.out_ch + co) * g.out_len..][..g.out_len];
            for ci in 0..g.in_ch {
                let xin = &x[(n * g.in_ch + ci) * g.len..][..g.len];
                let kern = &k[(co * g.in_ch + ci) * g.kernel..][..g.kernel];
                for (kx, &wv) in kern.iter().enumerate() {
                    let (lo, hi) = valid_outputs(kx, g.pad, g.stride, g.len, g.out_len);
                    for ox in lo..hi {
                        o[ox] = o[ox] + wv * xin[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    out
}

pub fn conv1d_backward<F: Scalar>(
    x: &[F],
    k: &[F],
    g: &Conv1dGeom,
    gout: &[F],
    mut gx: Option<&mut [F]>,
    mut gk: Option<&mut [F]>,
) {
    for n in 0..g.batch {
        for co in 0..g.out_ch {
            let go = &gout[(n * g.out_ch + co) * g.out_len..][..g.out_len];
            for ci in 0..g.in_ch {
                let xoff = (n * g.in_ch + ci) * g.len;
                let koff = (co * g.in_ch + ci) * g.kernel;
                for kx in 0..g.kernel {
                    let (lo, hi) = valid_outputs(kx, g.pad, g.stride, g.len, g.out_len);
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = k[koff + kx];
                        for ox in lo..hi {
                            let ix = xoff + ox * g.stride + kx - g.pad;
                            gx[ix] = gx[ix] + wv * go[ox];
                        }
                    }
                    if let Some(gk) = gk.as_deref_mut() {
                        let mut acc = F::zero();
                        for ox in lo..hi {
                            acc = acc + go[ox] * x[xoff + ox * g.stride + kx - g.pad];
                        }
                        gk[koff + kx] = gk[koff + kx] + acc;
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling over the trailing `dims` axes with window
/// `size`. Returns pooled values, the flat input index each output came
/// from, and the output shape. Ties resolve to the first element in
/// row-major window order.
pub fn max_pool<F: Scalar>(x: &[F], shape: &[usize], dims: usize, size: usize) -> Result<(Vec<F>, Vec<usize>, Vec<usize>)> {
    if size == 0 || shape.len() < dims {
        return Err(AstnError::shape("max_pool", format!("window {size} on shape {shape:?}")));
    }
    let lead: usize = shape[..shape.len() - dims].iter().product();
    let spatial = &shape[shape.len() - dims..];
    if spatial.iter().any(|&s| s < size) {
        return Err(AstnError::shape(
            "max_pool",
            format!("window {size} larger than spatial dims {spatial:?}"),
        ));
    }
    let mut out_shape = shape[..shape.len() - dims].to_vec();
    out_shape.extend(spatial.iter().map(|&s| s / size));
    let mut vals = Vec::new();
    let mut idx = Vec::new();
    match dims {
        1 => {
            let len = spatial[0];
            let olen = len / size;
            for l in 0..lead {
                let base = l * len;
                for o in 0..olen {
                    let mut best = base + o * size;
                    for j in 1..size {
                        let c = base + o * size + j;
                        if x[c] > x[best] {
                            best = c;
                        }
                    }
                    vals.push(x[best]);
                    idx.push(best);
                }
            }
        }
        2 => {
            let (w, h) = (spatial[0], spatial[1]);
            let (ow, oh) = (w / size, h / size);
            for l in 0..lead {
                let base = l * w * h;
                for ox in 0..ow {
                    for oy in 0..oh {
                        let mut best = base + ox * size * h + oy * size;
                        for dx in 0..size {
                            for dy in 0..size {
                                let c = base + (ox * size + dx) * h + oy * size + dy;
                                if x[c] > x[best] {
                                    best = c;
                                }
                            }
                        }
                        vals.push(x[best]);
                        idx.push(best);
                    }
                }
            }
        }
        _ => return Err(AstnError::shape("max_pool", format!("unsupported pooling rank {dims}"))),
    }
    Ok((vals, idx, out_shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_len_formula() {
        assert_eq!(conv_out_len(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_len(5, 3, 2, 1), Some(3));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
        assert_eq!(conv_out_len(2, 3, 1, 1), Some(2));
    }

    #[test]
    fn valid_range_with_padding() {
        // len 4, k offset 0, pad 1 -> output 0 reads input -1 (skipped)
        assert_eq!(valid_outputs(0, 1, 1, 4, 4), (1, 4));
        assert_eq!(valid_outputs(2, 1, 1, 4, 4), (0, 3));
        assert_eq!(valid_outputs(1, 1, 1, 4, 4), (0, 4));
    }

    #[test]
    fn pool_tie_takes_first_index() {
        let x = [1.0f64, 1.0, 1.0, 1.0];
        let (v, idx, shape) = max_pool(&x, &[1, 2, 2], 2, 2).unwrap();
        assert_eq!(v, vec![1.0]);
        assert_eq!(idx, vec![0]);
        assert_eq!(shape, vec![1, 1, 1]);
    }

    #[test]
    fn kernel_channel_mismatch_rejected() {
        assert!(Conv2dGeom::new(&[2, 5, 5], &[1, 3, 3, 3], 1, 0).is_err());
        assert!(Conv1dGeom::new(&[2, 5], &[1, 3, 3], 1, 0).is_err());
    }
}
