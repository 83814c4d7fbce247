//! Plane resampling with half-pixel-centre alignment: output pixel `i`
//! samples source coordinate `(i + 0.5)·src/dst − 0.5`.

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeKind {
    /// Bilinear, edge-clamped.
    Image,
    /// Nearest neighbour; output values are a subset of input values.
    Mask,
}

fn check(from: (usize, usize), to: (usize, usize), len: usize) -> Result<()> {
    if to.0 == 0 || to.1 == 0 {
        return Err(Error::Config(format!("resize target {}×{} has a zero side", to.0, to.1)));
    }
    if len != from.0 * from.1 || len == 0 {
        return Err(Error::Dimension(format!("{len} pixels for a {}×{} plane", from.0, from.1)));
    }
    Ok(())
}

fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    // floor((i + 0.5)·src/dst) in integers
    (((2 * i + 1) * src) / (2 * dst)).min(src - 1)
}

/// Source index pair and weight of the upper neighbour.
fn linear_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f32) {
    let c = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, (c - lo as f64) as f32)
}

pub fn resize(plane: &[f32], from: (usize, usize), to: (usize, usize), kind: ResizeKind) -> Result<Vec<f32>> {
    check(from, to, plane.len())?;
    let ((sh, sw), (th, tw)) = (from, to);
    if from == to {
        return Ok(plane.to_vec());
    }
    let mut out = Vec::with_capacity(th * tw);
    match kind {
        ResizeKind::Mask => {
            let cols: Vec<usize> = (0..tw).map(|x| nearest_index(x, sw, tw)).collect();
            for y in 0..th {
                let row = &plane[nearest_index(y, sh, th) * sw..][..sw];
                out.extend(cols.iter().map(|&x| row[x]));
            }
        }
        ResizeKind::Image => {
            let cols: Vec<_> = (0..tw).map(|x| linear_taps(x, sw, tw)).collect();
            for y in 0..th {
                let (y0, y1, fy) = linear_taps(y, sh, th);
                let (r0, r1) = (&plane[y0 * sw..][..sw], &plane[y1 * sw..][..sw]);
                for &(x0, x1, fx) in &cols {
                    let top = r0[x0] + fx * (r0[x1] - r0[x0]);
                    let bot = r1[x0] + fx * (r1[x1] - r1[x0]);
                    out.push(top + fy * (bot - top));
                }
            }
        }
    }
    Ok(out)
}

pub fn resize_mask(mask: &BinaryMask, to: (usize, usize)) -> Result<BinaryMask> {
    let from = mask.dims();
    check(from, to, mask.data().len())?;
    let cols: Vec<usize> = (0..to.1).map(|x| nearest_index(x, from.1, to.1)).collect();
    Ok(BinaryMask::from_fn(to.0, to.1, |y, x| mask.get(nearest_index(y, from.0, to.0), cols[x])))
}
