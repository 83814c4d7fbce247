//! Cross-slice attention and attention gating.
//!
//! CSA re-weights each pixel's channels by a softmax over a 1×1 projection
//! and adds the input back:
//!
//! ```text
//! CSA(x) = x + x ⊙ softmax_c(W x + b)
//! ```
//!
//! At the network input the channels are adjacent slices; inside skip
//! connections they are feature channels.
//!
//! The attention gate is a single-stage additive gate:
//!
//! ```text
//! α = σ(W_θ x + W_φ g + b),    AG(x, g) = α ⊙ x
//! ```
//!
//! `W_θ` and `W_φ` are bias-free 1×1 convolutions onto `x`'s channel count;
//! `b` is the one shared bias. `x` and `g` must already be spatially aligned.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward_raw, conv2d_raw, ConvKernel, ConvSpec};
use crate::ops::{sigmoid_scalar, softmax_channels, softmax_channels_backward};
use crate::real::Real;
use crate::tensor::Tensor4;

/// Borrowed CSA parameters: a `(C, C, 1, 1)` projection and its bias.
#[derive(Debug, Clone, Copy)]
pub struct CsaParams<'a, R> {
    pub weight: &'a [R],
    pub bias: Option<&'a [R]>,
}

/// Borrowed gate parameters: `theta (C_x, C_x, 1, 1)`, `phi (C_x, C_g, 1, 1)`,
/// `bias (C_x)`.
#[derive(Debug, Clone, Copy)]
pub struct AgParams<'a, R> {
    pub theta: &'a [R],
    pub phi: &'a [R],
    pub bias: &'a [R],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsaModule<R> {
    pub projection: ConvKernel<R>,
}

impl<R: Real> CsaModule<R> {
    pub fn new(projection: ConvKernel<R>) -> Result<Self> {
        let s = projection.spec;
        if s.kh != 1 || s.kw != 1 || s.stride != 1 {
            return Err(Error::Config(format!("CSA projection must be 1x1 stride 1, got {s:?}")));
        }
        if s.c_in != s.c_out {
            return Err(Error::Dimension(format!(
                "CSA projection maps {} -> {} channels; it must preserve the channel count",
                s.c_in, s.c_out
            )));
        }
        Ok(Self { projection })
    }

    /// Zero weights and bias: starts as the exact map `x ↦ (1 + 1/C)·x`.
    pub fn zero_init(channels: usize) -> Self {
        Self { projection: ConvKernel::zeros(ConvSpec::new(channels, channels, 1), true) }
    }

    pub fn channels(&self) -> usize {
        self.projection.spec.c_in
    }

    pub fn params(&self) -> CsaParams<'_, R> {
        CsaParams { weight: &self.projection.weight, bias: self.projection.bias.as_deref() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgBlock<R> {
    pub theta: ConvKernel<R>,
    pub phi: ConvKernel<R>,
    pub bias: Vec<R>,
}

impl<R: Real> AgBlock<R> {
    pub fn new(theta: ConvKernel<R>, phi: ConvKernel<R>, bias: Vec<R>) -> Result<Self> {
        let (t, p) = (theta.spec, phi.spec);
        if t.kh != 1 || t.kw != 1 || p.kh != 1 || p.kw != 1 {
            return Err(Error::Config("attention gate projections must be 1x1".into()));
        }
        if t.c_out != p.c_out || t.c_out != t.c_in || bias.len() != t.c_out {
            return Err(Error::Dimension(format!(
                "attention gate: theta {:?}, phi {:?}, bias {} must all map onto the skip channel count",
                t.weight_dims(),
                p.weight_dims(),
                bias.len()
            )));
        }
        Ok(Self { theta, phi, bias })
    }

    pub fn zero_init(x_channels: usize, g_channels: usize) -> Self {
        Self {
            theta: ConvKernel::zeros(ConvSpec::new(x_channels, x_channels, 1), false),
            phi: ConvKernel::zeros(ConvSpec::new(g_channels, x_channels, 1), false),
            bias: vec![R::zero(); x_channels],
        }
    }

    pub fn params(&self) -> AgParams<'_, R> {
        AgParams { theta: &self.theta.weight, phi: &self.phi.weight, bias: &self.bias }
    }
}

#[derive(Debug, Clone)]
pub struct CsaCache<R> {
    input: Tensor4<R>,
    attention: Tensor4<R>,
}

impl<R> CsaCache<R> {
    pub fn attention(&self) -> &Tensor4<R> {
        &self.attention
    }
}

#[derive(Debug, Clone)]
pub struct CsaGrads<R> {
    pub input: Tensor4<R>,
    pub weight: Vec<R>,
    pub bias: Option<Vec<R>>,
}

#[derive(Debug, Clone)]
pub struct AgCache<R> {
    x: Tensor4<R>,
    g: Tensor4<R>,
    alpha: Tensor4<R>,
}

impl<R> AgCache<R> {
    pub fn alpha(&self) -> &Tensor4<R> {
        &self.alpha
    }
}

#[derive(Debug, Clone)]
pub struct AgGrads<R> {
    pub x: Tensor4<R>,
    pub g: Tensor4<R>,
    pub theta: Vec<R>,
    pub phi: Vec<R>,
    pub bias: Vec<R>,
}

fn csa_spec(channels: usize) -> ConvSpec {
    ConvSpec::new(channels, channels, 1)
}

/// The per-pixel channel distribution `softmax_c(W x + b)`.
pub fn csa_attention_raw<R: Real>(x: &Tensor4<R>, p: CsaParams<'_, R>) -> Result<Tensor4<R>> {
    let logits = conv2d_raw(x, &csa_spec(x.channels()), p.weight, p.bias)
        .map_err(|e| Error::Dimension(format!("CSA: {e}")))?;
    Ok(softmax_channels(&logits))
}

pub fn csa_forward_raw<R: Real>(x: &Tensor4<R>, p: CsaParams<'_, R>) -> Result<(Tensor4<R>, CsaCache<R>)> {
    let attention = csa_attention_raw(x, p)?;
    // x + x ⊙ a, evaluated as x ⊙ (1 + a)
    let out = x.zip_map(&attention, |v, a| v * (R::one() + a))?;
    Ok((out, CsaCache { input: x.clone(), attention }))
}

pub fn csa_backward_raw<R: Real>(
    p: CsaParams<'_, R>,
    cache: &CsaCache<R>,
    grad_out: &Tensor4<R>,
) -> Result<CsaGrads<R>> {
    cache.input.require_same_dims(grad_out, "CSA backward")?;
    let x = &cache.input;
    let a = &cache.attention;
    // residual + gated path: ∂out/∂x (holding a fixed) = 1 + a
    let mut grad_x = grad_out.zip_map(a, |g, a| g * (R::one() + a))?;
    let grad_a = grad_out.mul(x)?;
    let grad_logits = softmax_channels_backward(a, &grad_a)?;
    let conv = conv2d_backward_raw(x, &csa_spec(x.channels()), p.weight, p.bias.is_some(), &grad_logits)?;
    grad_x.add_assign(&conv.input)?;
    Ok(CsaGrads { input: grad_x, weight: conv.weight, bias: conv.bias })
}

pub fn ag_forward_raw<R: Real>(
    x: &Tensor4<R>,
    g: &Tensor4<R>,
    p: AgParams<'_, R>,
) -> Result<(Tensor4<R>, AgCache<R>)> {
    let [bx, cx, hx, wx] = x.dims();
    let [bg, cg, hg, wg] = g.dims();
    if (bx, hx, wx) != (bg, hg, wg) {
        return Err(Error::Dimension(format!(
            "attention gate: x {:?} and g {:?} differ in batch or spatial size",
            x.dims(),
            g.dims()
        )));
    }
    if p.bias.len() != cx {
        return Err(Error::Dimension(format!("attention gate: bias length {} for {cx} channels", p.bias.len())));
    }
    let mut s = conv2d_raw(x, &ConvSpec::new(cx, cx, 1), p.theta, Some(p.bias))?;
    s.add_assign(&conv2d_raw(g, &ConvSpec::new(cg, cx, 1), p.phi, None)?)?;
    let alpha = s.map(sigmoid_scalar);
    let out = alpha.mul(x)?;
    Ok((out, AgCache { x: x.clone(), g: g.clone(), alpha }))
}

pub fn ag_backward_raw<R: Real>(p: AgParams<'_, R>, cache: &AgCache<R>, grad_out: &Tensor4<R>) -> Result<AgGrads<R>> {
    cache.x.require_same_dims(grad_out, "attention gate backward")?;
    let (x, g, alpha) = (&cache.x, &cache.g, &cache.alpha);
    let (cx, cg) = (x.channels(), g.channels());
    let mut grad_x = grad_out.mul(alpha)?;
    // ds = (grad ⊙ x) ⊙ α(1 − α)
    let mut grad_s = grad_out.mul(x)?;
    for (d, &a) in grad_s.data_mut().iter_mut().zip(alpha.data()) {
        *d *= a * (R::one() - a);
    }
    let th = conv2d_backward_raw(x, &ConvSpec::new(cx, cx, 1), p.theta, true, &grad_s)?;
    let ph = conv2d_backward_raw(g, &ConvSpec::new(cg, cx, 1), p.phi, false, &grad_s)?;
    grad_x.add_assign(&th.input)?;
    Ok(AgGrads {
        x: grad_x,
        g: ph.input,
        theta: th.weight,
        phi: ph.weight,
        bias: th.bias.expect("bias gradient requested"),
    })
}

pub fn csa_forward<R: Real>(x: &Tensor4<R>, module: &CsaModule<R>) -> Result<Tensor4<R>> {
    check_csa_channels(x, module)?;
    Ok(csa_forward_raw(x, module.params())?.0)
}

pub fn csa_forward_cached<R: Real>(x: &Tensor4<R>, module: &CsaModule<R>) -> Result<(Tensor4<R>, CsaCache<R>)> {
    check_csa_channels(x, module)?;
    csa_forward_raw(x, module.params())
}

pub fn csa_backward<R: Real>(module: &CsaModule<R>, cache: &CsaCache<R>, grad_out: &Tensor4<R>) -> Result<CsaGrads<R>> {
    csa_backward_raw(module.params(), cache, grad_out)
}

pub fn csa_attention<R: Real>(x: &Tensor4<R>, module: &CsaModule<R>) -> Result<Tensor4<R>> {
    check_csa_channels(x, module)?;
    csa_attention_raw(x, module.params())
}

fn check_csa_channels<R: Real>(x: &Tensor4<R>, module: &CsaModule<R>) -> Result<()> {
    if x.channels() != module.channels() {
        return Err(Error::Dimension(format!(
            "CSA: input shape {:?} has {} channels, projection expects {}",
            x.dims(),
            x.channels(),
            module.channels()
        )));
    }
    Ok(())
}

pub fn ag_forward<R: Real>(x: &Tensor4<R>, g: &Tensor4<R>, block: &AgBlock<R>) -> Result<Tensor4<R>> {
    check_ag_channels(x, g, block)?;
    Ok(ag_forward_raw(x, g, block.params())?.0)
}

pub fn ag_forward_cached<R: Real>(
    x: &Tensor4<R>,
    g: &Tensor4<R>,
    block: &AgBlock<R>,
) -> Result<(Tensor4<R>, AgCache<R>)> {
    check_ag_channels(x, g, block)?;
    ag_forward_raw(x, g, block.params())
}

pub fn ag_backward<R: Real>(block: &AgBlock<R>, cache: &AgCache<R>, grad_out: &Tensor4<R>) -> Result<AgGrads<R>> {
    ag_backward_raw(block.params(), cache, grad_out)
}

fn check_ag_channels<R: Real>(x: &Tensor4<R>, g: &Tensor4<R>, block: &AgBlock<R>) -> Result<()> {
    if x.channels() != block.theta.spec.c_in || g.channels() != block.phi.spec.c_in {
        return Err(Error::Dimension(format!(
            "attention gate: x {:?} / g {:?} do not match theta {:?} / phi {:?}",
            x.dims(),
            g.dims(),
            block.theta.spec.weight_dims(),
            block.phi.spec.weight_dims()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut r = SplitMix64::new(seed);
        Tensor4::from_fn(dims, |_| r.uniform_range(-2.0, 2.0))
    }

    #[test]
    fn zero_projection_scales_by_one_plus_inverse_c() {
        let x = random([2, 3, 4, 5], 1);
        let y = csa_forward(&x, &CsaModule::zero_init(3)).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, (1.0 + 1.0 / 3.0) * b);
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let x = Tensor4::<f64>::zeros([1, 3, 4, 4]);
        let mut m = CsaModule::zero_init(3);
        m.projection.weight.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.3 - 1.0);
        assert!(csa_forward(&x, &m).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_doubles() {
        let x = random([1, 1, 3, 3], 2);
        let m = CsaModule::new(ConvKernel::new(ConvSpec::new(1, 1, 1), vec![3.7], Some(vec![-1.2])).unwrap()).unwrap();
        let y = csa_forward(&x, &m).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn csa_rejects_channel_mismatch() {
        let x = Tensor4::<f64>::zeros([1, 4, 2, 2]);
        assert!(matches!(csa_forward(&x, &CsaModule::zero_init(3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn csa_projection_must_be_pointwise() {
        let k = ConvKernel::<f64>::zeros(ConvSpec::new(3, 3, 3), true);
        assert!(CsaModule::new(k).is_err());
    }

    #[test]
    fn zero_gate_halves() {
        let x = random([1, 2, 3, 3], 3);
        let g = random([1, 5, 3, 3], 4);
        let y = ag_forward(&x, &g, &AgBlock::zero_init(2, 5)).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn saturated_gate_passes_through() {
        let x = random([1, 2, 3, 3], 5);
        let g = random([1, 4, 3, 3], 6);
        let mut block = AgBlock::zero_init(2, 4);
        block.bias = vec![20.0; 2];
        let y = ag_forward(&x, &g, &block).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn gate_of_zero_is_zero() {
        let x = Tensor4::<f64>::zeros([1, 2, 3, 3]);
        let g = random([1, 3, 3, 3], 7);
        let mut block = AgBlock::zero_init(2, 3);
        block.phi.weight.iter_mut().for_each(|w| *w = 1.5);
        assert!(ag_forward(&x, &g, &block).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_rejects_spatial_mismatch() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        let g = Tensor4::<f64>::zeros([1, 2, 2, 2]);
        assert!(matches!(ag_forward(&x, &g, &AgBlock::zero_init(2, 2)), Err(Error::Dimension(_))));
    }
}
