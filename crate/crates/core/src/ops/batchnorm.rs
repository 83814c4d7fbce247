//! Per-channel batch normalization over `(B, H, W)`.
//!
//! Train mode normalizes with batch statistics and folds them into the
//! running estimates with momentum 0.1 (`r ← 0.9·r + 0.1·batch`; the running
//! variance uses the unbiased batch variance). Eval mode normalizes with the
//! running estimates only.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<R> {
    x_hat: Tensor4<R>,
    inv_std: Vec<R>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<R> {
    pub input: Tensor4<R>,
    pub gamma: Vec<R>,
    pub beta: Vec<R>,
}

fn check<R: Real>(input: &Tensor4<R>, gamma: &[R], beta: &[R], mean: &[R], var: &[R], eps: f64) -> Result<()> {
    let c = input.channels();
    if gamma.len() != c || beta.len() != c || mean.len() != c || var.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm over {} channels given gamma/beta/mean/var of length {}/{}/{}/{}",
            c,
            gamma.len(),
            beta.len(),
            mean.len(),
            var.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Config(format!("batchnorm eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Mode-dispatching entry point; the cache is `Some` in train mode only.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<R: Real>(
    input: &Tensor4<R>,
    gamma: &[R],
    beta: &[R],
    eps: f64,
    mode: Mode,
    running_mean: &mut [R],
    running_var: &mut [R],
) -> Result<(Tensor4<R>, Option<BatchNormCache<R>>)> {
    match mode {
        Mode::Train => {
            let (y, cache) = batchnorm_train(input, gamma, beta, eps, running_mean, running_var)?;
            Ok((y, Some(cache)))
        }
        Mode::Eval => Ok((batchnorm_eval(input, gamma, beta, eps, running_mean, running_var)?, None)),
    }
}

pub fn batchnorm_train<R: Real>(
    input: &Tensor4<R>,
    gamma: &[R],
    beta: &[R],
    eps: f64,
    running_mean: &mut [R],
    running_var: &mut [R],
) -> Result<(Tensor4<R>, BatchNormCache<R>)> {
    check(input, gamma, beta, running_mean, running_var, eps)?;
    let [b, c, _, _] = input.dims();
    let n = b * input.plane_len();
    let nf = R::lit(n as f64);
    let momentum = R::lit(DEFAULT_MOMENTUM);

    let mut x_hat = Tensor4::zeros(input.dims());
    let mut out = Tensor4::zeros(input.dims());
    let mut inv_std = vec![R::zero(); c];
    for ch in 0..c {
        let mean = (0..b).map(|bi| input.plane(bi, ch).iter().copied().sum::<R>()).sum::<R>() / nf;
        let var = (0..b)
            .map(|bi| input.plane(bi, ch).iter().map(|&v| (v - mean) * (v - mean)).sum::<R>())
            .sum::<R>()
            / nf;
        let is = (var + R::lit(eps)).sqrt().recip();
        inv_std[ch] = is;
        for bi in 0..b {
            let src = input.plane(bi, ch);
            let dst = out.plane_mut(bi, ch);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            x_hat.plane_mut(bi, ch).copy_from_slice(dst);
            for d in out.plane_mut(bi, ch) {
                *d = gamma[ch] * *d + beta[ch];
            }
        }
        let unbiased = if n > 1 { var * nf / R::lit((n - 1) as f64) } else { var };
        running_mean[ch] = (R::one() - momentum) * running_mean[ch] + momentum * mean;
        running_var[ch] = (R::one() - momentum) * running_var[ch] + momentum * unbiased;
    }
    debug_assert!(!input.is_finite() || out.is_finite(), "batchnorm produced non-finite output");
    Ok((out, BatchNormCache { x_hat, inv_std }))
}

pub fn batchnorm_eval<R: Real>(
    input: &Tensor4<R>,
    gamma: &[R],
    beta: &[R],
    eps: f64,
    running_mean: &[R],
    running_var: &[R],
) -> Result<Tensor4<R>> {
    check(input, gamma, beta, running_mean, running_var, eps)?;
    let [b, c, _, _] = input.dims();
    let mut out = input.clone();
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + R::lit(eps)).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for bi in 0..b {
            for v in out.plane_mut(bi, ch) {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_backward<R: Real>(
    cache: &BatchNormCache<R>,
    gamma: &[R],
    grad_out: &Tensor4<R>,
) -> Result<BatchNormGrads<R>> {
    cache.x_hat.require_same_dims(grad_out, "batchnorm_backward")?;
    let [b, c, _, _] = grad_out.dims();
    if gamma.len() != c {
        return Err(Error::Dimension(format!("batchnorm_backward: gamma length {} for {c} channels", gamma.len())));
    }
    let nf = R::lit((b * grad_out.plane_len()) as f64);
    let mut grad_in = Tensor4::zeros(grad_out.dims());
    let mut d_gamma = vec![R::zero(); c];
    let mut d_beta = vec![R::zero(); c];
    for ch in 0..c {
        let mut sum_g = R::zero();
        let mut sum_gx = R::zero();
        for bi in 0..b {
            for (&g, &xh) in grad_out.plane(bi, ch).iter().zip(cache.x_hat.plane(bi, ch)) {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        d_beta[ch] = sum_g;
        d_gamma[ch] = sum_gx;
        // dx = γ·inv_std/N · (N·g − Σg − x̂·Σ(g·x̂))
        let k = gamma[ch] * cache.inv_std[ch] / nf;
        for bi in 0..b {
            let go = grad_out.plane(bi, ch);
            let xh = cache.x_hat.plane(bi, ch);
            let dst = grad_in.plane_mut(bi, ch);
            for ((d, &g), &x) in dst.iter_mut().zip(go).zip(xh) {
                *d = k * (nf * g - sum_g - x * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads { input: grad_in, gamma: d_gamma, beta: d_beta })
}
