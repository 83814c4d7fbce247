//! 2-D convolution, cross-correlation convention (the kernel is not flipped):
//!
//! ```text
//! out[b, o, y, x] = bias[o] + Σ_{i, ky, kx} w[o, i, ky, kx] · in[b, i, y·s + ky − pad_top, x·s + kx − pad_left]
//! ```
//!
//! Out-of-range input positions read as zero. Work is split over output
//! planes with rayon; every output value is accumulated by one thread in a
//! fixed order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(H / stride)`; padding split with the extra row/column
    /// at the bottom/right.
    Same,
    Valid,
}

/// Shape of a convolution: weights are `(c_out, c_in, kh, kw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_out: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub padding: Padding,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(c_in: usize, c_out: usize, k: usize) -> Self {
        Self { c_out, c_in, kh: k, kw: k, padding: Padding::Same, stride: 1 }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kh, self.kw]
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kh * self.kw
    }

    /// Output `(H', W')` and the `(top, left)` padding for an input of `(h, w)`.
    pub fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        if self.stride == 0 {
            return Err(Error::Config("convolution stride must be positive".into()));
        }
        let axis = |n: usize, k: usize| -> Result<(usize, usize)> {
            match self.padding {
                Padding::Same => {
                    let out = n.div_ceil(self.stride);
                    let total = ((out - 1) * self.stride + k).saturating_sub(n);
                    Ok((out, total / 2))
                }
                Padding::Valid => {
                    if n < k {
                        return Err(Error::Dimension(format!(
                            "valid convolution with kernel {k} on extent {n}"
                        )));
                    }
                    Ok(((n - k) / self.stride + 1, 0))
                }
            }
        };
        let (out_h, pad_top) = axis(h, self.kh)?;
        let (out_w, pad_left) = axis(w, self.kw)?;
        Ok(Geometry { in_h: h, in_w: w, out_h, out_w, pad_top, pad_left, stride: self.stride })
    }

    pub fn output_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let g = self.geometry(input[2], input[3])?;
        Ok([input[0], self.c_out, g.out_h, g.out_w])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub stride: usize,
}

impl Geometry {
    /// Output index range whose input tap `o·stride + k − pad` lies inside `[0, n)`.
    #[inline]
    fn valid_range(out: usize, n: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
        // smallest o with o*s + k >= pad
        let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
        // largest o with o*s + k - pad <= n - 1
        let hi = if n + pad < k + 1 { 0 } else { ((n + pad - k - 1) / stride + 1).min(out) };
        (lo.min(hi), hi)
    }

    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize) {
        Self::valid_range(self.out_h, self.in_h, ky, self.pad_top, self.stride)
    }

    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize) {
        Self::valid_range(self.out_w, self.in_w, kx, self.pad_left, self.stride)
    }
}

/// Owned kernel: weights plus an optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<R> {
    pub spec: ConvSpec,
    pub weight: Vec<R>,
    pub bias: Option<Vec<R>>,
}

impl<R: Real> ConvKernel<R> {
    pub fn new(spec: ConvSpec, weight: Vec<R>, bias: Option<Vec<R>>) -> Result<Self> {
        if weight.len() != spec.weight_len() {
            return Err(Error::Dimension(format!(
                "kernel weights have {} values, spec {:?} needs {}",
                weight.len(),
                spec.weight_dims(),
                spec.weight_len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != spec.c_out {
                return Err(Error::Dimension(format!(
                    "kernel bias has {} values for {} output channels",
                    b.len(),
                    spec.c_out
                )));
            }
        }
        Ok(Self { spec, weight, bias })
    }

    pub fn zeros(spec: ConvSpec, with_bias: bool) -> Self {
        Self {
            spec,
            weight: vec![R::zero(); spec.weight_len()],
            bias: with_bias.then(|| vec![R::zero(); spec.c_out]),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<R> {
    pub input: Tensor4<R>,
    pub weight: Vec<R>,
    /// Present when the kernel has a bias.
    pub bias: Option<Vec<R>>,
}

pub fn conv2d<R: Real>(input: &Tensor4<R>, kernel: &ConvKernel<R>) -> Result<Tensor4<R>> {
    conv2d_raw(input, &kernel.spec, &kernel.weight, kernel.bias.as_deref())
}

pub fn conv2d_backward<R: Real>(
    input: &Tensor4<R>,
    kernel: &ConvKernel<R>,
    grad_out: &Tensor4<R>,
) -> Result<ConvGrads<R>> {
    conv2d_backward_raw(input, &kernel.spec, &kernel.weight, kernel.bias.is_some(), grad_out)
}

fn check_input<R: Real>(input: &Tensor4<R>, spec: &ConvSpec, weight: &[R]) -> Result<Geometry> {
    if input.channels() != spec.c_in {
        return Err(Error::Dimension(format!(
            "conv2d: input shape {:?} has {} channels but kernel shape {:?} expects {}",
            input.dims(),
            input.channels(),
            spec.weight_dims(),
            spec.c_in
        )));
    }
    if weight.len() != spec.weight_len() {
        return Err(Error::Dimension(format!(
            "conv2d: {} weights for kernel shape {:?}",
            weight.len(),
            spec.weight_dims()
        )));
    }
    spec.geometry(input.height(), input.width())
}

/// Forward pass on borrowed weights.
pub fn conv2d_raw<R: Real>(
    input: &Tensor4<R>,
    spec: &ConvSpec,
    weight: &[R],
    bias: Option<&[R]>,
) -> Result<Tensor4<R>> {
    let g = check_input(input, spec, weight)?;
    if let Some(b) = bias {
        if b.len() != spec.c_out {
            return Err(Error::Dimension(format!(
                "conv2d: bias length {} for {} output channels",
                b.len(),
                spec.c_out
            )));
        }
    }
    let [batch, c_in, _, _] = input.dims();
    let mut out = Tensor4::zeros([batch, spec.c_out, g.out_h, g.out_w]);
    let plane = g.out_h * g.out_w;
    let k_area = spec.kh * spec.kw;

    out.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, dst)| {
        let (b, o) = (idx / spec.c_out, idx % spec.c_out);
        if let Some(bias) = bias {
            dst.fill(bias[o]);
        }
        for i in 0..c_in {
            let src = input.plane(b, i);
            let w_oi = &weight[(o * c_in + i) * k_area..(o * c_in + i + 1) * k_area];
            for ky in 0..spec.kh {
                let (y0, y1) = g.rows(ky);
                for kx in 0..spec.kw {
                    let w = w_oi[ky * spec.kw + kx];
                    if w == R::zero() {
                        continue;
                    }
                    let (x0, x1) = g.cols(kx);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        let in_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad_left;
                            let n = x1 - x0;
                            for (a, &v) in out_row[x0..x1].iter_mut().zip(&in_row[ix0..ix0 + n]) {
                                *a += w * v;
                            }
                        } else {
                            for (ox, a) in out_row.iter_mut().enumerate().take(x1).skip(x0) {
                                *a += w * in_row[ox * g.stride + kx - g.pad_left];
                            }
                        }
                    }
                }
            }
        }
    });
    debug_assert!(!input.is_finite() || out.is_finite(), "conv2d produced non-finite output");
    Ok(out)
}

pub fn conv2d_backward_raw<R: Real>(
    input: &Tensor4<R>,
    spec: &ConvSpec,
    weight: &[R],
    has_bias: bool,
    grad_out: &Tensor4<R>,
) -> Result<ConvGrads<R>> {
    let g = check_input(input, spec, weight)?;
    let [batch, c_in, _, _] = input.dims();
    let expected = [batch, spec.c_out, g.out_h, g.out_w];
    if grad_out.dims() != expected {
        return Err(Error::Dimension(format!(
            "conv2d_backward: grad_out shape {:?}, expected {:?}",
            grad_out.dims(),
            expected
        )));
    }
    let k_area = spec.kh * spec.kw;

    let bias = has_bias.then(|| {
        (0..spec.c_out)
            .map(|o| (0..batch).map(|b| grad_out.plane(b, o).iter().copied().sum::<R>()).sum())
            .collect::<Vec<R>>()
    });

    // dL/dw[o, i, ky, kx] = Σ_b Σ_(oy,ox) go[b, o, oy, ox] · in[b, i, iy, ix]
    let mut grad_w = vec![R::zero(); spec.weight_len()];
    grad_w.par_chunks_mut(c_in * k_area).enumerate().for_each(|(o, gw_o)| {
        for b in 0..batch {
            let go = grad_out.plane(b, o);
            for i in 0..c_in {
                let src = input.plane(b, i);
                for ky in 0..spec.kh {
                    let (y0, y1) = g.rows(ky);
                    for kx in 0..spec.kw {
                        let (x0, x1) = g.cols(kx);
                        if x0 >= x1 {
                            continue;
                        }
                        let mut acc = R::zero();
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad_top;
                            let go_row = &go[oy * g.out_w..(oy + 1) * g.out_w];
                            let in_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                            if g.stride == 1 {
                                let ix0 = x0 + kx - g.pad_left;
                                acc += dot(&go_row[x0..x1], &in_row[ix0..ix0 + (x1 - x0)]);
                            } else {
                                for ox in x0..x1 {
                                    acc += go_row[ox] * in_row[ox * g.stride + kx - g.pad_left];
                                }
                            }
                        }
                        gw_o[i * k_area + ky * spec.kw + kx] += acc;
                    }
                }
            }
        }
    });

    // dL/din[b, i, iy, ix] = Σ_o Σ_(ky,kx) w[o, i, ky, kx] · go[b, o, oy, ox]
    let mut grad_in = Tensor4::zeros(input.dims());
    let in_plane = input.plane_len();
    grad_in.data_mut().par_chunks_mut(in_plane).enumerate().for_each(|(idx, dst)| {
        let (b, i) = (idx / c_in, idx % c_in);
        for o in 0..spec.c_out {
            let go = grad_out.plane(b, o);
            let w_oi = &weight[(o * c_in + i) * k_area..(o * c_in + i + 1) * k_area];
            for ky in 0..spec.kh {
                let (y0, y1) = g.rows(ky);
                for kx in 0..spec.kw {
                    let w = w_oi[ky * spec.kw + kx];
                    if w == R::zero() {
                        continue;
                    }
                    let (x0, x1) = g.cols(kx);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad_top;
                        let go_row = &go[oy * g.out_w..(oy + 1) * g.out_w];
                        let in_row = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad_left;
                            let n = x1 - x0;
                            for (a, &v) in in_row[ix0..ix0 + n].iter_mut().zip(&go_row[x0..x1]) {
                                *a += w * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                in_row[ox * g.stride + kx - g.pad_left] += w * go_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });

    Ok(ConvGrads { input: grad_in, weight: grad_w, bias })
}

/// Four independent accumulators let the compiler vectorise the reduction.
#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut tail = R::zero();
    for k in chunks * 4..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
