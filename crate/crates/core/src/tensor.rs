use std::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense rank-4 array in `(batch, channels, height, width)` order, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor4<R> {
    dims: [usize; 4],
    data: Vec<R>,
}

impl<R: Real> Tensor4<R> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, R::zero())
    }

    pub fn full(dims: [usize; 4], value: R) -> Self {
        assert!(dims.iter().all(|&d| d >= 1), "tensor dims must be >= 1, got {dims:?}");
        Self { dims, data: vec![value; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<R>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Dimension(format!("tensor dims must be >= 1, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "data length {} does not match dims {:?} ({} elements)",
                data.len(),
                dims,
                n
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> R) -> Self {
        let [b, c, h, w] = dims;
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([bi, ci, y, x]));
                    }
                }
            }
        }
        Self::from_vec(dims, data).expect("from_fn dims")
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[R] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<R> {
        self.data
    }

    #[inline]
    pub fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> R {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: R) {
        let i = self.offset(b, c, y, x);
        self.data[i] = v;
    }

    /// The `(h, w)` plane for one batch item and channel.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[R] {
        let n = self.plane_len();
        let start = (b * self.dims[1] + c) * n;
        &self.data[start..start + n]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [R] {
        let n = self.plane_len();
        let start = (b * self.dims[1] + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(R, R) -> R) -> Result<Self> {
        self.require_same_dims(other, "zip_map")?;
        Ok(Self {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: R) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.require_same_dims(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn require_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "{what}: shape {:?} does not match {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Concatenate along the channel axis. All parts must share `(B, H, W)`.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let [b, _, h, w] = first.dims;
        for p in parts {
            if p.dims[0] != b || p.dims[2] != h || p.dims[3] != w {
                return Err(Error::Dimension(format!(
                    "concat: shape {:?} incompatible with {:?}",
                    p.dims, first.dims
                )));
            }
        }
        let c: usize = parts.iter().map(|p| p.dims[1]).sum();
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for p in parts {
                let n = p.dims[1] * h * w;
                data.extend_from_slice(&p.data[bi * n..(bi + 1) * n]);
            }
        }
        Ok(Self { dims: [b, c, h, w], data })
    }

    /// Inverse of [`Tensor4::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let [b, c, h, w] = self.dims;
        if sizes.iter().sum::<usize>() != c || sizes.contains(&0) {
            return Err(Error::Dimension(format!(
                "split {sizes:?} does not partition {c} channels"
            )));
        }
        let mut out: Vec<Vec<R>> = sizes.iter().map(|&s| Vec::with_capacity(b * s * h * w)).collect();
        let hw = h * w;
        for bi in 0..b {
            let mut start = bi * c * hw;
            for (dst, &s) in out.iter_mut().zip(sizes) {
                dst.extend_from_slice(&self.data[start..start + s * hw]);
                start += s * hw;
            }
        }
        Ok(out
            .into_iter()
            .zip(sizes)
            .map(|(data, &s)| Self { dims: [b, s, h, w], data })
            .collect())
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack_batch(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Dimension("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut b = 0;
        for t in items {
            if t.dims[1..] != first.dims[1..] {
                return Err(Error::Dimension(format!(
                    "stack: shape {:?} incompatible with {:?}",
                    t.dims, first.dims
                )));
            }
            b += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims: [b, c, h, w], data })
    }

    /// One batch item as a `(1, C, H, W)` tensor.
    pub fn item(&self, b: usize) -> Self {
        let n = self.dims[1] * self.dims[2] * self.dims[3];
        Self {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    pub fn cast<S: Real>(&self) -> Tensor4<S> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| S::lit(v.as_f64())).collect() }
    }
}

impl<R: fmt::Debug> fmt::Debug for Tensor4<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor4{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor4::<f64>::from_vec([1, 0, 2, 2], vec![]).is_err());
        let t = Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor4::<f64>::from_fn([2, 1, 2, 3], |[b, _, y, x]| (b * 100 + y * 10 + x) as f64);
        let b = Tensor4::<f64>::from_fn([2, 2, 2, 3], |[b, c, y, x]| -((b * 100 + c * 50 + y * 10 + x) as f64));
        let cat = Tensor4::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.dims(), [2, 3, 2, 3]);
        assert_eq!(cat.at(1, 0, 1, 2), a.at(1, 0, 1, 2));
        assert_eq!(cat.at(1, 2, 0, 1), b.at(1, 1, 0, 1));
        let parts = cat.split_channels(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor4::<f64>::zeros([1, 1, 2, 2]);
        let b = Tensor4::<f64>::zeros([1, 1, 4, 4]);
        assert!(Tensor4::concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn stack_and_item() {
        let a = Tensor4::<f32>::full([1, 2, 2, 2], 1.0);
        let b = Tensor4::<f32>::full([1, 2, 2, 2], 2.0);
        let s = Tensor4::stack_batch(&[&a, &b]).unwrap();
        assert_eq!(s.dims(), [2, 2, 2, 2]);
        assert_eq!(s.item(1), b);
    }
}
