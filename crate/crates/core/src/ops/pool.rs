use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Winning positions of a 2×2 max pool, as flat offsets into the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    input_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2×2 max pooling with stride 2. Ties go to the first element of the window
/// in row-major order.
pub fn maxpool2x2<R: Real>(input: &Tensor4<R>) -> Result<(Tensor4<R>, PoolIndices)> {
    let [b, c, h, w] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "maxpool2x2 needs even height and width, got {:?}",
            input.dims()
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let data = input.data();
    for bc in 0..b * c {
        let base = bc * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = base + (2 * y + dy) * w + 2 * x + dx;
                    if data[k] > data[best] {
                        best = k;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec([b, c, oh, ow], out)?, PoolIndices { input_dims: input.dims(), argmax }))
}

pub fn maxpool2x2_backward<R: Real>(grad_out: &Tensor4<R>, indices: &PoolIndices) -> Result<Tensor4<R>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Dimension(format!(
            "maxpool2x2_backward: grad shape {:?} does not match pooled input {:?}",
            grad_out.dims(),
            indices.input_dims
        )));
    }
    let mut grad_in = Tensor4::zeros(indices.input_dims);
    let dst = grad_in.data_mut();
    for (&k, &g) in indices.argmax.iter().zip(grad_out.data()) {
        dst[k] += g;
    }
    Ok(grad_in)
}

/// Nearest-neighbour 2× upsampling: each cell becomes a 2×2 block.
pub fn upsample2x2<R: Real>(input: &Tensor4<R>) -> Tensor4<R> {
    let [b, c, h, w] = input.dims();
    let mut out = Tensor4::zeros([b, c, 2 * h, 2 * w]);
    let ow = 2 * w;
    for bc in 0..b * c {
        let src = &input.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out.data_mut()[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                let k = 2 * y * ow + 2 * x;
                dst[k] = v;
                dst[k + 1] = v;
                dst[k + ow] = v;
                dst[k + ow + 1] = v;
            }
        }
    }
    out
}

/// Sums each 2×2 block of child gradients into its parent cell.
pub fn upsample2x2_backward<R: Real>(grad_out: &Tensor4<R>) -> Result<Tensor4<R>> {
    let [b, c, oh, ow] = grad_out.dims();
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Dimension(format!(
            "upsample2x2_backward: odd gradient shape {:?}",
            grad_out.dims()
        )));
    }
    let (h, w) = (oh / 2, ow / 2);
    Ok(Tensor4::from_fn([b, c, h, w], |[bi, ci, y, x]| {
        let g = grad_out.plane(bi, ci);
        let k = 2 * y * ow + 2 * x;
        (g[k] + g[k + 1]) + (g[k + ow] + g[k + ow + 1])
    }))
}
