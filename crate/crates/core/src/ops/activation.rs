use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor4;

pub fn relu<R: Real>(input: &Tensor4<R>) -> Tensor4<R> {
    input.map(|v| if v > R::zero() { v } else { R::zero() })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<R: Real>(input: &Tensor4<R>, grad_out: &Tensor4<R>) -> Result<Tensor4<R>> {
    input.zip_map(grad_out, |x, g| if x > R::zero() { g } else { R::zero() })
}

#[inline]
pub fn sigmoid_scalar<R: Real>(v: R) -> R {
    if v >= R::zero() {
        (R::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (R::one() + e)
    }
}

pub fn sigmoid<R: Real>(input: &Tensor4<R>) -> Tensor4<R> {
    input.map(sigmoid_scalar)
}

/// Takes the forward *output* `s`: `ds = g·s·(1 − s)`.
pub fn sigmoid_backward<R: Real>(output: &Tensor4<R>, grad_out: &Tensor4<R>) -> Result<Tensor4<R>> {
    output.zip_map(grad_out, |s, g| g * s * (R::one() - s))
}

/// Softmax across channels at every `(b, y, x)`, with max subtraction.
pub fn softmax_channels<R: Real>(input: &Tensor4<R>) -> Tensor4<R> {
    let [b, c, h, w] = input.dims();
    let hw = h * w;
    let mut out = input.clone();
    let data = out.data_mut();
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut m = R::neg_infinity();
            for ch in 0..c {
                m = m.max(data[base + ch * hw + p]);
            }
            let mut z = R::zero();
            for ch in 0..c {
                let e = (data[base + ch * hw + p] - m).exp();
                data[base + ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                data[base + ch * hw + p] /= z;
            }
        }
    }
    debug_assert!(!input.is_finite() || out.is_finite(), "softmax produced non-finite output");
    out
}

/// Takes the forward *output* `a`: `dz_c = a_c·(g_c − Σ_k g_k·a_k)`.
pub fn softmax_channels_backward<R: Real>(output: &Tensor4<R>, grad_out: &Tensor4<R>) -> Result<Tensor4<R>> {
    output.require_same_dims(grad_out, "softmax_channels_backward")?;
    let [b, c, h, w] = output.dims();
    let hw = h * w;
    let a = output.data();
    let g = grad_out.data();
    let mut out = Tensor4::zeros(output.dims());
    let d = out.data_mut();
    for bi in 0..b {
        let base = bi * c * hw;
        for p in 0..hw {
            let mut dot = R::zero();
            for ch in 0..c {
                let k = base + ch * hw + p;
                dot += g[k] * a[k];
            }
            for ch in 0..c {
                let k = base + ch * hw + p;
                d[k] = a[k] * (g[k] - dot);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec([1, v.len(), 1, 1], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![-2.0, 3.0, 0.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 3.0, 0.0]);
        let g = relu_backward(&x, &Tensor4::full([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_values() {
        let s = sigmoid(&t1(&[0.0]));
        assert_eq!(s.data(), &[0.5]);
        let g = sigmoid_backward(&s, &t1(&[1.0])).unwrap();
        assert_eq!(g.data(), &[0.25]);
        // no overflow in either tail
        assert_eq!(sigmoid_scalar(-800.0f64), 0.0);
        assert_eq!(sigmoid_scalar(800.0f64), 1.0);
    }

    #[test]
    fn softmax_uniform_and_single_channel() {
        let s = softmax_channels(&t1(&[0.0, 0.0, 0.0]));
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax_channels(&t1(&[-7.3])).data(), &[1.0]);
    }

    #[test]
    fn softmax_one_hot_logit() {
        // e / (e + 2) and 1 / (e + 2)
        let s = softmax_channels(&t1(&[1.0, 0.0, 0.0]));
        let expected = [0.576117, 0.211942, 0.211942];
        for (v, e) in s.data().iter().zip(expected) {
            assert!((v - e).abs() < 5e-7, "{v} vs {e}");
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_channels(&t1(&[1000.0, 999.0]));
        assert!(s.is_finite());
        assert!((s.data()[0] + s.data()[1] - 1.0).abs() < 1e-15);
    }
}
