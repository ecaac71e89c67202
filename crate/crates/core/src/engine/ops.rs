//! Layer kernels and their adjoints on single `C×H×W` tensors.
//!
//! Reductions accumulate in `f64` and round once to `f32` on output.

use super::EngineError;
use crate::tensor::Tensor;

/// Spatial hyper-parameters shared by convolutions and pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub padding: [usize; 2],
}

impl Window {
    /// Output extents for an `h×w` input, or `None` if either is nonpositive.
    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span_h = h + 2 * self.padding[0];
        let span_w = w + 2 * self.padding[1];
        if self.stride[0] == 0 || self.stride[1] == 0 {
            return None;
        }
        if span_h < self.kernel[0] || span_w < self.kernel[1] {
            return None;
        }
        Some((
            (span_h - self.kernel[0]) / self.stride[0] + 1,
            (span_w - self.kernel[1]) / self.stride[1] + 1,
        ))
    }
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize), EngineError> {
    t.chw().ok_or_else(|| EngineError::ShapeMismatch {
        context: "expected a C×H×W tensor".into(),
        expected: vec![],
        actual: t.shape().to_vec(),
    })
}

/// Range of output indices `o` for which `o*stride + k - pad` lands in `[0, extent)`.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    // o*stride >= pad - k
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // o*stride <= extent - 1 + pad - k
    let top = extent + pad;
    let hi = if top > k { ((top - 1 - k) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

fn conv_geometry(
    input: &Tensor,
    kernel_shape: &[usize],
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<(usize, usize, usize, usize, Window, usize, usize), EngineError> {
    let (c, h, w) = chw(input)?;
    let (k, kc, kh, kw) = match kernel_shape {
        &[k, kc, kh, kw] => (k, kc, kh, kw),
        other => {
            return Err(EngineError::ShapeMismatch {
                context: "conv2d kernel must be K×C×kh×kw".into(),
                expected: vec![],
                actual: other.to_vec(),
            })
        }
    };
    if kc != c {
        return Err(EngineError::ChannelMismatch {
            expected: kc,
            actual: c,
        });
    }
    let win = Window {
        kernel: [kh, kw],
        stride,
        padding,
    };
    let (oh, ow) = win
        .output_extent(h, w)
        .ok_or(EngineError::NonPositiveExtent)?;
    Ok((c, h, w, k, win, oh, ow))
}

/// 2-D cross-correlation of a `C×H×W` input with a `K×C×kh×kw` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&[f32]>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Tensor, EngineError> {
    let (c, h, w, k, win, oh, ow) = conv_geometry(input, kernel.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.len() != k {
            return Err(EngineError::ChannelMismatch {
                expected: k,
                actual: b.len(),
            });
        }
    }
    let [kh, kw] = win.kernel;
    let [sh, sw] = stride;
    let [ph, pw] = padding;
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![0f32; k * oh * ow];
    let mut acc = vec![0f64; oh * ow];
    for ko in 0..k {
        acc.fill(bias.map_or(0.0, |b| b[ko] as f64));
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ky, ph, sh, h, oh);
                for kx in 0..kw {
                    let wv = wt[((ko * c + ci) * kh + ky) * kw + kx] as f64;
                    let (ox_lo, ox_hi) = valid_range(kx, pw, sw, w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let arow = &mut acc[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            arow[ox] += wv * row[ox * sw + kx - pw] as f64;
                        }
                    }
                }
            }
        }
        for (o, a) in out[ko * oh * ow..(ko + 1) * oh * ow].iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![k, oh, ow], out))
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input(
    input_shape: (usize, usize, usize),
    kernel: &Tensor,
    grad_out: &[f32],
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<Vec<f32>, EngineError> {
    let (c, h, w) = input_shape;
    let (k, kh, kw) = match kernel.shape() {
        &[k, kc, kh, kw] if kc == c => (k, kh, kw),
        _ => {
            return Err(EngineError::ShapeMismatch {
                context: "conv2d kernel".into(),
                expected: vec![],
                actual: kernel.shape().to_vec(),
            })
        }
    };
    let win = Window {
        kernel: [kh, kw],
        stride,
        padding,
    };
    let (oh, ow) = win
        .output_extent(h, w)
        .ok_or(EngineError::NonPositiveExtent)?;
    if grad_out.len() != k * oh * ow {
        return Err(EngineError::ShapeMismatch {
            context: "conv2d output gradient".into(),
            expected: vec![k, oh, ow],
            actual: vec![grad_out.len()],
        });
    }
    let [sh, sw] = stride;
    let [ph, pw] = padding;
    let wt = kernel.data();
    let mut acc = vec![0f64; c * h * w];
    for ko in 0..k {
        let g = &grad_out[ko * oh * ow..(ko + 1) * oh * ow];
        for ci in 0..c {
            let plane = &mut acc[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ky, ph, sh, h, oh);
                for kx in 0..kw {
                    let wv = wt[((ko * c + ci) * kh + ky) * kw + kx] as f64;
                    let (ox_lo, ox_hi) = valid_range(kx, pw, sw, w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        let prow = &mut plane[iy * w..(iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            prow[ox * sw + kx - pw] += wv * grow[ox] as f64;
                        }
                    }
                }
            }
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// Adjoint of [`conv2d`] with respect to its kernel and bias.
pub fn conv2d_backward_weight(
    input: &Tensor,
    kernel_shape: [usize; 4],
    grad_out: &[f32],
    stride: [usize; 2],
    padding: [usize; 2],
) -> Result<(Tensor, Vec<f32>), EngineError> {
    let (c, h, w, k, win, oh, ow) = conv_geometry(input, &kernel_shape, stride, padding)?;
    if grad_out.len() != k * oh * ow {
        return Err(EngineError::ShapeMismatch {
            context: "conv2d output gradient".into(),
            expected: vec![k, oh, ow],
            actual: vec![grad_out.len()],
        });
    }
    let [kh, kw] = win.kernel;
    let [sh, sw] = stride;
    let [ph, pw] = padding;
    let x = input.data();
    let mut dw = vec![0f32; k * c * kh * kw];
    let mut db = vec![0f32; k];
    for ko in 0..k {
        let g = &grad_out[ko * oh * ow..(ko + 1) * oh * ow];
        db[ko] = g.iter().map(|&v| v as f64).sum::<f64>() as f32;
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_range(ky, ph, sh, h, oh);
                for kx in 0..kw {
                    let (ox_lo, ox_hi) = valid_range(kx, pw, sw, w, ow);
                    let mut s = 0f64;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            s += grow[ox] as f64 * row[ox * sw + kx - pw] as f64;
                        }
                    }
                    dw[((ko * c + ci) * kh + ky) * kw + kx] = s as f32;
                }
            }
        }
    }
    Ok((Tensor::from_parts_unchecked(kernel_shape.to_vec(), dw), db))
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts_unchecked(input.shape().to_vec(), data)
}

/// Passes gradient only where the forward output was strictly positive.
pub fn relu_backward(output: &[f32], grad_out: &[f32]) -> Vec<f32> {
    output
        .iter()
        .zip(grad_out)
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect()
}

/// Max pooling with implicit `-inf` padding. Returns the pooled tensor and,
/// for every output element, the flat input index it was taken from. Ties
/// go to the first maximal element in row-major window order.
pub fn maxpool(input: &Tensor, win: &Window) -> Result<(Tensor, Vec<u32>), EngineError> {
    let (c, h, w) = chw(input)?;
    let (oh, ow) = win
        .output_extent(h, w)
        .ok_or(EngineError::NonPositiveExtent)?;
    let [kh, kw] = win.kernel;
    let [sh, sw] = win.stride;
    let [ph, pw] = win.padding;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut route = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut arg = usize::MAX;
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if arg == usize::MAX || x[idx] > best {
                            best = x[idx];
                            arg = idx;
                        }
                    }
                }
                if arg == usize::MAX {
                    return Err(EngineError::NonPositiveExtent);
                }
                out.push(best);
                route.push(arg as u32);
            }
        }
    }
    Ok((Tensor::from_parts_unchecked(vec![c, oh, ow], out), route))
}

pub fn maxpool_backward(input_len: usize, route: &[u32], grad_out: &[f32]) -> Vec<f32> {
    let mut g = vec![0f64; input_len];
    for (&r, &v) in route.iter().zip(grad_out) {
        g[r as usize] += v as f64;
    }
    g.into_iter().map(|v| v as f32).collect()
}

fn avgpool_divisor(win: &Window, h: usize, w: usize, oy: usize, ox: usize, include_pad: bool) -> f64 {
    if include_pad {
        // Matches the usual convention: the window is clipped to the padded extent.
        let y0 = (oy * win.stride[0]) as isize - win.padding[0] as isize;
        let x0 = (ox * win.stride[1]) as isize - win.padding[1] as isize;
        let y1 = (y0 + win.kernel[0] as isize).min((h + win.padding[0]) as isize);
        let x1 = (x0 + win.kernel[1] as isize).min((w + win.padding[1]) as isize);
        ((y1 - y0) * (x1 - x0)) as f64
    } else {
        let y0 = ((oy * win.stride[0]) as isize - win.padding[0] as isize).max(0);
        let x0 = ((ox * win.stride[1]) as isize - win.padding[1] as isize).max(0);
        let y1 = ((oy * win.stride[0] + win.kernel[0]) as isize - win.padding[0] as isize).min(h as isize);
        let x1 = ((ox * win.stride[1] + win.kernel[1]) as isize - win.padding[1] as isize).min(w as isize);
        ((y1 - y0).max(0) * (x1 - x0).max(0)) as f64
    }
}

pub fn avgpool(input: &Tensor, win: &Window, count_include_pad: bool) -> Result<Tensor, EngineError> {
    let (c, h, w) = chw(input)?;
    let (oh, ow) = win
        .output_extent(h, w)
        .ok_or(EngineError::NonPositiveExtent)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0f64;
                for ky in 0..win.kernel[0] {
                    let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..win.kernel[1] {
                        let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        s += x[base + iy as usize * w + ix as usize] as f64;
                    }
                }
                let d = avgpool_divisor(win, h, w, oy, ox, count_include_pad);
                out.push(if d > 0.0 { (s / d) as f32 } else { 0.0 });
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![c, oh, ow], out))
}

pub fn avgpool_backward(
    input_shape: (usize, usize, usize),
    win: &Window,
    count_include_pad: bool,
    grad_out: &[f32],
) -> Result<Vec<f32>, EngineError> {
    let (c, h, w) = input_shape;
    let (oh, ow) = win
        .output_extent(h, w)
        .ok_or(EngineError::NonPositiveExtent)?;
    let mut g = vec![0f64; c * h * w];
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let d = avgpool_divisor(win, h, w, oy, ox, count_include_pad);
                if d <= 0.0 {
                    continue;
                }
                let v = grad_out[(ci * oh + oy) * ow + ox] as f64 / d;
                for ky in 0..win.kernel[0] {
                    let iy = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..win.kernel[1] {
                        let ix = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        g[base + iy as usize * w + ix as usize] += v;
                    }
                }
            }
        }
    }
    Ok(g.into_iter().map(|v| v as f32).collect())
}

/// Per-channel affine map `y = x * scale[c] + shift[c]`, the inference form of batch norm.
pub fn channel_affine(input: &Tensor, scale: &[f64], shift: &[f64]) -> Result<Tensor, EngineError> {
    let (c, h, w) = chw(input)?;
    if scale.len() != c || shift.len() != c {
        return Err(EngineError::ChannelMismatch {
            expected: scale.len(),
            actual: c,
        });
    }
    let hw = h * w;
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i / hw;
            (v as f64 * scale[ch] + shift[ch]) as f32
        })
        .collect();
    Ok(Tensor::from_parts_unchecked(input.shape().to_vec(), data))
}

pub fn channel_affine_backward(shape: (usize, usize, usize), scale: &[f64], grad_out: &[f32]) -> Vec<f32> {
    let hw = shape.1 * shape.2;
    grad_out
        .iter()
        .enumerate()
        .map(|(i, &g)| (g as f64 * scale[i / hw]) as f32)
        .collect()
}

pub fn add(inputs: &[&Tensor]) -> Result<Tensor, EngineError> {
    let first = inputs.first().ok_or(EngineError::Arity {
        node: "add".into(),
        expected: "at least 2",
        actual: 0,
    })?;
    let mut acc: Vec<f64> = first.data().iter().map(|&v| v as f64).collect();
    for t in &inputs[1..] {
        if t.shape() != first.shape() {
            return Err(EngineError::ShapeMismatch {
                context: "add operands".into(),
                expected: first.shape().to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(t.data()) {
            *a += v as f64;
        }
    }
    Ok(Tensor::from_parts_unchecked(
        first.shape().to_vec(),
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Concatenates along the channel axis.
pub fn concat(inputs: &[&Tensor]) -> Result<Tensor, EngineError> {
    let first = inputs.first().ok_or(EngineError::Arity {
        node: "concat".into(),
        expected: "at least 1",
        actual: 0,
    })?;
    let (_, h, w) = chw(first)?;
    let mut channels = 0;
    let mut data = Vec::new();
    for t in inputs {
        let (c, th, tw) = chw(t)?;
        if (th, tw) != (h, w) {
            return Err(EngineError::ShapeMismatch {
                context: "concat spatial extents".into(),
                expected: vec![h, w],
                actual: vec![th, tw],
            });
        }
        channels += c;
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_parts_unchecked(vec![channels, h, w], data))
}
