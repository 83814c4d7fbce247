//! Sobel gradient magnitude on single-channel maps, edge-replicated borders.
//!
//! ```text
//!      -1 0 1         -1 -2 -1
//! Gx = -2 0 2    Gy =  0  0  0      |∇I| = sqrt(Gx² + Gy²)
//!      -1 0 1          1  2  1
//! ```
//! applied as cross-correlation.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// Lower bound on the magnitude used as a divisor in the backward pass.
pub const MAGNITUDE_GUARD: f64 = 1e-12;

fn require_single_channel<R: Real>(input: &Tensor4<R>) -> Result<()> {
    if input.channels() != 1 {
        return Err(Error::Dimension(format!(
            "sobel expects a single-channel map, got shape {:?}",
            input.dims()
        )));
    }
    Ok(())
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Raw `(Gx, Gy)` responses.
pub fn sobel_components<R: Real>(input: &Tensor4<R>) -> Result<(Tensor4<R>, Tensor4<R>)> {
    require_single_channel(input)?;
    let [b, _, h, w] = input.dims();
    let mut gx = Tensor4::zeros(input.dims());
    let mut gy = Tensor4::zeros(input.dims());
    for bi in 0..b {
        let src = input.plane(bi, 0);
        let mut ox = vec![R::zero(); h * w];
        let mut oy = vec![R::zero(); h * w];
        for y in 0..h {
            for x in 0..w {
                // separable form: smoothing [1, 2, 1] times central difference,
                // which is exactly zero on flat regions
                let (xl, xr) = (clamp_index(x as isize - 1, w), clamp_index(x as isize + 1, w));
                let (yu, yd) = (clamp_index(y as isize - 1, h), clamp_index(y as isize + 1, h));
                let mut sx = R::zero();
                let mut sy = R::zero();
                for (k, &s) in SMOOTH.iter().enumerate() {
                    let yy = clamp_index(y as isize + k as isize - 1, h);
                    let xx = clamp_index(x as isize + k as isize - 1, w);
                    sx += R::lit(s) * (src[yy * w + xr] - src[yy * w + xl]);
                    sy += R::lit(s) * (src[yd * w + xx] - src[yu * w + xx]);
                }
                ox[y * w + x] = sx;
                oy[y * w + x] = sy;
            }
        }
        gx.plane_mut(bi, 0).copy_from_slice(&ox);
        gy.plane_mut(bi, 0).copy_from_slice(&oy);
    }
    Ok((gx, gy))
}

pub fn sobel_gradient_magnitude<R: Real>(input: &Tensor4<R>) -> Result<Tensor4<R>> {
    let (gx, gy) = sobel_components(input)?;
    gx.zip_map(&gy, |a, b| (a * a + b * b).sqrt())
}

pub fn sobel_gradient_magnitude_backward<R: Real>(input: &Tensor4<R>, grad_out: &Tensor4<R>) -> Result<Tensor4<R>> {
    input.require_same_dims(grad_out, "sobel backward")?;
    let (gx, gy) = sobel_components(input)?;
    let [b, _, h, w] = input.dims();
    let guard = R::lit(MAGNITUDE_GUARD);
    let mut grad_in = Tensor4::zeros(input.dims());
    for bi in 0..b {
        let (gxp, gyp, gop) = (gx.plane(bi, 0), gy.plane(bi, 0), grad_out.plane(bi, 0));
        let mut dst = vec![R::zero(); h * w];
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                let mag = (gxp[k] * gxp[k] + gyp[k] * gyp[k]).sqrt();
                let scale = gop[k] / mag.max(guard);
                let (dgx, dgy) = (scale * gxp[k], scale * gyp[k]);
                for (dy, (row_x, row_y)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                    let yy = clamp_index(y as isize + dy as isize - 1, h);
                    for dx in 0..3 {
                        let xx = clamp_index(x as isize + dx as isize - 1, w);
                        dst[yy * w + xx] += R::lit(row_x[dx]) * dgx + R::lit(row_y[dx]) * dgy;
                    }
                }
            }
        }
        grad_in.plane_mut(bi, 0).copy_from_slice(&dst);
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let x = Tensor4::full([2, 1, 5, 6], 0.4f64);
        assert!(sobel_gradient_magnitude(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge() {
        // columns 0..3 are 0, columns 3..6 are 1
        let x = Tensor4::from_fn([1, 1, 5, 6], |[_, _, _, c]| if c >= 3 { 1.0f64 } else { 0.0 });
        let (gx, gy) = sobel_components(&x).unwrap();
        for y in 1..4 {
            assert_eq!(gx.at(0, 0, y, 2), 4.0);
            assert_eq!(gx.at(0, 0, y, 3), 4.0);
            assert_eq!(gy.at(0, 0, y, 2), 0.0);
            assert_eq!(gx.at(0, 0, y, 0), 0.0);
        }
        let m = sobel_gradient_magnitude(&x).unwrap();
        assert_eq!(m.at(0, 0, 2, 2), 4.0);
    }

    #[test]
    fn multichannel_rejected() {
        assert!(matches!(
            sobel_gradient_magnitude(&Tensor4::<f64>::zeros([1, 2, 3, 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn backward_is_zero_on_flat_input() {
        let x = Tensor4::full([1, 1, 4, 4], 1.0f64);
        let g = sobel_gradient_magnitude_backward(&x, &Tensor4::full([1, 1, 4, 4], 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
