//! The full 2.5D network.
//!
//! ```text
//! input (B, slices, H, W)
//!   └─ [input CSA]
//!   └─ encoder stage i = 0..depth: conv blocks → skip S_i → maxpool
//!   └─ bottleneck: conv blocks at base·2^depth channels
//!   └─ decoder level i = depth−1..0:
//!        U = upsample(prev)                        g = U
//!        F = concat(U, CSA(S_i), AG(S_i, g))       (disabled branches dropped,
//!                                                   raw S_i if both are off)
//!        conv blocks → base·2^i channels
//!   └─ 1×1 conv → sigmoid → (B, 1, H, W)
//! ```
//!
//! Parameters live in a [`LayerParams`] store; layers hold ids into it.
//! Train-mode forward records a tape that [`Network::backward`] consumes.

mod checkpoint;
mod config;
mod cost;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry};
pub use config::{NetworkConfig, STAGE_KERNEL};
pub use cost::{attention_overhead, attention_params, cost_report, count_flops, count_params, CostReport};

use crate::attention::{
    ag_backward_raw, ag_forward_raw, csa_backward_raw, csa_forward_raw, AgCache, AgParams, CsaCache, CsaParams,
};
use crate::error::{Error, Result};
use crate::ops::batchnorm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormCache, DEFAULT_EPS};
use crate::ops::conv::{conv2d_backward_raw, conv2d_raw, ConvSpec};
use crate::ops::{
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, upsample2x2,
    upsample2x2_backward, Mode, PoolIndices,
};
use crate::params::{LayerParams, ParamId};
use crate::real::Real;
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl ConvLayer {
    fn forward<R: Real>(&self, p: &LayerParams<R>, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        conv2d_raw(x, &self.spec, p.value(self.weight), self.bias.map(|b| p.value(b)))
    }

    fn backward<R: Real>(&self, p: &mut LayerParams<R>, x: &Tensor4<R>, grad: &Tensor4<R>) -> Result<Tensor4<R>> {
        let g = conv2d_backward_raw(x, &self.spec, p.value(self.weight), self.bias.is_some(), grad)?;
        p.accumulate(self.weight, &g.weight);
        if let (Some(id), Some(gb)) = (self.bias, g.bias.as_deref()) {
            p.accumulate(id, gb);
        }
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
struct BnLayer {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BnLayer {
    fn eval<R: Real>(&self, p: &LayerParams<R>, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        batchnorm_eval(
            x,
            p.value(self.gamma),
            p.value(self.beta),
            DEFAULT_EPS,
            p.value(self.running_mean),
            p.value(self.running_var),
        )
    }

    fn train<R: Real>(&self, p: &mut LayerParams<R>, x: &Tensor4<R>) -> Result<(Tensor4<R>, BatchNormCache<R>)> {
        let gamma = p.value(self.gamma).to_vec();
        let beta = p.value(self.beta).to_vec();
        let mut mean = std::mem::take(&mut p.get_mut(self.running_mean).value);
        let mut var = std::mem::take(&mut p.get_mut(self.running_var).value);
        let r = batchnorm_train(x, &gamma, &beta, DEFAULT_EPS, &mut mean, &mut var);
        p.get_mut(self.running_mean).value = mean;
        p.get_mut(self.running_var).value = var;
        r
    }

    fn backward<R: Real>(&self, p: &mut LayerParams<R>, cache: &BatchNormCache<R>, grad: &Tensor4<R>) -> Result<Tensor4<R>> {
        let g = batchnorm_backward(cache, p.value(self.gamma), grad)?;
        p.accumulate(self.gamma, &g.gamma);
        p.accumulate(self.beta, &g.beta);
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: ConvLayer,
    bn: BnLayer,
}

#[derive(Debug, Clone)]
struct BlockCache<R> {
    conv_in: Tensor4<R>,
    bn: BatchNormCache<R>,
    relu_in: Tensor4<R>,
}

impl ConvBlock {
    fn eval<R: Real>(&self, p: &LayerParams<R>, x: &Tensor4<R>, bn_first: bool) -> Result<Tensor4<R>> {
        let z = self.conv.forward(p, x)?;
        if bn_first {
            Ok(relu(&self.bn.eval(p, &z)?))
        } else {
            self.bn.eval(p, &relu(&z))
        }
    }

    fn train<R: Real>(
        &self,
        p: &mut LayerParams<R>,
        x: Tensor4<R>,
        bn_first: bool,
    ) -> Result<(Tensor4<R>, BlockCache<R>)> {
        let z = self.conv.forward(p, &x)?;
        if bn_first {
            let (n, bn) = self.bn.train(p, &z)?;
            let y = relu(&n);
            Ok((y, BlockCache { conv_in: x, bn, relu_in: n }))
        } else {
            let a = relu(&z);
            let (y, bn) = self.bn.train(p, &a)?;
            Ok((y, BlockCache { conv_in: x, bn, relu_in: z }))
        }
    }

    fn backward<R: Real>(
        &self,
        p: &mut LayerParams<R>,
        cache: &BlockCache<R>,
        grad: &Tensor4<R>,
        bn_first: bool,
    ) -> Result<Tensor4<R>> {
        let g_conv_out = if bn_first {
            let g = relu_backward(&cache.relu_in, grad)?;
            self.bn.backward(p, &cache.bn, &g)?
        } else {
            let g = self.bn.backward(p, &cache.bn, grad)?;
            relu_backward(&cache.relu_in, &g)?
        };
        self.conv.backward(p, &cache.conv_in, &g_conv_out)
    }
}

#[derive(Debug, Clone)]
struct ConvStage {
    blocks: Vec<ConvBlock>,
}

impl ConvStage {
    fn eval<R: Real>(&self, p: &LayerParams<R>, x: &Tensor4<R>, bn_first: bool) -> Result<Tensor4<R>> {
        let mut h = self.blocks[0].eval(p, x, bn_first)?;
        for b in &self.blocks[1..] {
            h = b.eval(p, &h, bn_first)?;
        }
        Ok(h)
    }

    fn train<R: Real>(
        &self,
        p: &mut LayerParams<R>,
        x: Tensor4<R>,
        bn_first: bool,
    ) -> Result<(Tensor4<R>, Vec<BlockCache<R>>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &self.blocks {
            let (y, c) = b.train(p, h, bn_first)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    fn backward<R: Real>(
        &self,
        p: &mut LayerParams<R>,
        caches: &[BlockCache<R>],
        grad: Tensor4<R>,
        bn_first: bool,
    ) -> Result<Tensor4<R>> {
        let mut g = grad;
        for (b, c) in self.blocks.iter().zip(caches).rev() {
            g = b.backward(p, c, &g, bn_first)?;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
struct CsaLayer {
    weight: ParamId,
    bias: ParamId,
}

impl CsaLayer {
    fn params<'a, R: Real>(&self, p: &'a LayerParams<R>) -> CsaParams<'a, R> {
        CsaParams { weight: p.value(self.weight), bias: Some(p.value(self.bias)) }
    }

    fn backward<R: Real>(&self, p: &mut LayerParams<R>, cache: &CsaCache<R>, grad: &Tensor4<R>) -> Result<Tensor4<R>> {
        let g = csa_backward_raw(self.params(p), cache, grad)?;
        p.accumulate(self.weight, &g.weight);
        p.accumulate(self.bias, g.bias.as_deref().expect("CSA bias gradient"));
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
struct AgLayer {
    theta: ParamId,
    phi: ParamId,
    bias: ParamId,
}

impl AgLayer {
    fn params<'a, R: Real>(&self, p: &'a LayerParams<R>) -> AgParams<'a, R> {
        AgParams { theta: p.value(self.theta), phi: p.value(self.phi), bias: p.value(self.bias) }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    skip_channels: usize,
    up_channels: usize,
    csa: Option<CsaLayer>,
    ag: Option<AgLayer>,
    convs: ConvStage,
}

impl DecoderStage {
    fn part_sizes(&self) -> Vec<usize> {
        let branches = match (&self.csa, &self.ag) {
            (Some(_), Some(_)) => 2,
            _ => 1,
        };
        let mut v = vec![self.up_channels];
        v.extend(std::iter::repeat_n(self.skip_channels, branches));
        v
    }
}

#[derive(Debug, Clone)]
struct DecoderCache<R> {
    csa: Option<CsaCache<R>>,
    ag: Option<AgCache<R>>,
    blocks: Vec<BlockCache<R>>,
}

#[derive(Debug, Clone)]
struct Tape<R> {
    input_csa: Option<CsaCache<R>>,
    encoder: Vec<(Vec<BlockCache<R>>, PoolIndices)>,
    bottleneck: Vec<BlockCache<R>>,
    decoder: Vec<DecoderCache<R>>,
    head_in: Tensor4<R>,
    output: Tensor4<R>,
}

/// XAG-Net style 2.5D segmentation network with switchable attention sites.
#[derive(Debug, Clone)]
pub struct Network<R> {
    config: NetworkConfig,
    params: LayerParams<R>,
    input_csa: Option<CsaLayer>,
    encoder: Vec<ConvStage>,
    bottleneck: ConvStage,
    /// Deepest level first, in execution order.
    decoder: Vec<DecoderStage>,
    head: ConvLayer,
    tape: Option<Tape<R>>,
}

struct Builder<'a, R> {
    params: LayerParams<R>,
    seed: u64,
    _marker: std::marker::PhantomData<&'a R>,
}

impl<R: Real> Builder<'_, R> {
    /// He-uniform over fan-in: U(−√(6/fan_in), √(6/fan_in)), one SplitMix64
    /// stream per parameter name.
    fn he_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut rng = SplitMix64::keyed(self.seed, name);
        let n: usize = shape.iter().product();
        let v = (0..n).map(|_| R::lit(rng.uniform_range(-bound, bound))).collect();
        self.params.add(name, shape, v, true)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64, trainable: bool) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.params.add(name, shape, vec![R::lit(value); n], trainable)
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Result<ConvLayer> {
        let spec = ConvSpec::new(c_in, c_out, k);
        let weight = self.he_uniform(&format!("{prefix}.weight"), &spec.weight_dims(), c_in * k * k)?;
        let bias = self.constant(&format!("{prefix}.bias"), &[c_out], 0.0, true)?;
        Ok(ConvLayer { spec, weight, bias: Some(bias) })
    }

    fn bn(&mut self, prefix: &str, c: usize) -> Result<BnLayer> {
        Ok(BnLayer {
            gamma: self.constant(&format!("{prefix}.gamma"), &[c], 1.0, true)?,
            beta: self.constant(&format!("{prefix}.beta"), &[c], 0.0, true)?,
            running_mean: self.constant(&format!("{prefix}.running_mean"), &[c], 0.0, false)?,
            running_var: self.constant(&format!("{prefix}.running_var"), &[c], 1.0, false)?,
        })
    }

    fn stage(&mut self, prefix: &str, c_in: usize, c_out: usize, n: usize) -> Result<ConvStage> {
        let mut blocks = Vec::with_capacity(n);
        for j in 0..n {
            let cin = if j == 0 { c_in } else { c_out };
            blocks.push(ConvBlock {
                conv: self.conv(&format!("{prefix}.conv{j}"), cin, c_out, STAGE_KERNEL)?,
                bn: self.bn(&format!("{prefix}.bn{j}"), c_out)?,
            });
        }
        Ok(ConvStage { blocks })
    }

    /// Zero projection: the module starts as `x ↦ (1 + 1/C)·x`.
    fn csa(&mut self, prefix: &str, c: usize) -> Result<CsaLayer> {
        Ok(CsaLayer {
            weight: self.constant(&format!("{prefix}.weight"), &[c, c, 1, 1], 0.0, true)?,
            bias: self.constant(&format!("{prefix}.bias"), &[c], 0.0, true)?,
        })
    }

    fn ag(&mut self, prefix: &str, cx: usize, cg: usize) -> Result<AgLayer> {
        Ok(AgLayer {
            theta: self.he_uniform(&format!("{prefix}.theta"), &[cx, cx, 1, 1], cx)?,
            phi: self.he_uniform(&format!("{prefix}.phi"), &[cx, cg, 1, 1], cg)?,
            bias: self.constant(&format!("{prefix}.bias"), &[cx], 0.0, true)?,
        })
    }
}

impl<R: Real> Network<R> {
    /// Builds and initializes every parameter deterministically from
    /// `config.seed`.
    pub fn build(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::<R> { params: LayerParams::new(), seed: config.seed, _marker: Default::default() };
        let n = config.convs_per_stage;

        let input_csa = if config.use_input_csa { Some(b.csa("input_csa", config.in_slices)?) } else { None };

        let enc_ch = config.encoder_channels();
        let mut encoder = Vec::with_capacity(config.depth);
        let mut c_prev = config.in_slices;
        for (i, &c) in enc_ch.iter().enumerate() {
            encoder.push(b.stage(&format!("enc{i}"), c_prev, c, n)?);
            c_prev = c;
        }
        let bottleneck = b.stage("bottleneck", c_prev, config.bottleneck_channels(), n)?;

        let mut decoder = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let skip = enc_ch[level];
            let up = skip * 2;
            let csa = if config.use_skip_csa { Some(b.csa(&format!("dec{level}.skip_csa"), skip)?) } else { None };
            let ag = if config.use_skip_ag { Some(b.ag(&format!("dec{level}.ag"), skip, up)?) } else { None };
            let convs = b.stage(&format!("dec{level}"), config.fusion_channels(level), skip, n)?;
            decoder.push(DecoderStage { skip_channels: skip, up_channels: up, csa, ag, convs });
        }
        let head = b.conv("head", enc_ch.first().copied().unwrap_or(config.bottleneck_channels()), 1, 1)?;

        Ok(Self { config: config.clone(), params: b.params, input_csa, encoder, bottleneck, decoder, head, tape: None })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &LayerParams<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut LayerParams<R> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    fn check_input(&self, x: &Tensor4<R>) -> Result<()> {
        let (h, w) = self.config.input_size;
        let [_, c, xh, xw] = x.dims();
        if c != self.config.in_slices || xh != h || xw != w {
            return Err(Error::Dimension(format!(
                "network expects input (B, {}, {h}, {w}), got {:?}",
                self.config.in_slices,
                x.dims()
            )));
        }
        Ok(())
    }

    /// Dispatches to [`Network::forward_train`] or [`Network::infer`].
    pub fn forward(&mut self, x: &Tensor4<R>, mode: Mode) -> Result<Tensor4<R>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.infer(x),
        }
    }

    /// Eval-mode forward. Pure: batch norm uses running statistics and
    /// nothing is recorded.
    pub fn infer(&self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.check_input(x)?;
        let p = &self.params;
        let bn_first = self.config.bn_before_relu;
        let mut h = match &self.input_csa {
            Some(l) => csa_forward_raw(x, l.params(p))?.0,
            None => x.clone(),
        };
        let mut skips = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            let s = stage.eval(p, &h, bn_first)?;
            h = maxpool2x2(&s)?.0;
            skips.push(s);
        }
        h = self.bottleneck.eval(p, &h, bn_first)?;
        for stage in &self.decoder {
            let s = skips.pop().expect("one skip per decoder stage");
            let u = upsample2x2(&h);
            let fused = {
                let csa = stage.csa.as_ref().map(|l| csa_forward_raw(&s, l.params(p))).transpose()?;
                let ag = stage.ag.as_ref().map(|l| ag_forward_raw(&s, &u, l.params(p))).transpose()?;
                let mut parts = vec![&u];
                match (&csa, &ag) {
                    (None, None) => parts.push(&s),
                    _ => {
                        parts.extend(csa.as_ref().map(|c| &c.0));
                        parts.extend(ag.as_ref().map(|a| &a.0));
                    }
                }
                Tensor4::concat_channels(&parts)?
            };
            h = stage.convs.eval(p, &fused, bn_first)?;
        }
        Ok(sigmoid(&self.head.forward(p, &h)?))
    }

    /// Train-mode forward: batch statistics, running-stat update, and a tape
    /// for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor4<R>) -> Result<Tensor4<R>> {
        self.check_input(x)?;
        self.tape = None;
        let bn_first = self.config.bn_before_relu;
        let p = &mut self.params;

        let (mut h, input_csa) = match &self.input_csa {
            Some(l) => {
                let (y, c) = csa_forward_raw(x, l.params(p))?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };

        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut enc_caches = Vec::with_capacity(self.encoder.len());
        for stage in &self.encoder {
            let (s, caches) = stage.train(p, h, bn_first)?;
            let (pooled, idx) = maxpool2x2(&s)?;
            skips.push(s);
            enc_caches.push((caches, idx));
            h = pooled;
        }
        let (mut h, bottleneck) = self.bottleneck.train(p, h, bn_first)?;

        let mut dec_caches = Vec::with_capacity(self.decoder.len());
        for stage in &self.decoder {
            let s = skips.pop().expect("one skip per decoder stage");
            let u = upsample2x2(&h);
            let csa = stage.csa.as_ref().map(|l| csa_forward_raw(&s, l.params(p))).transpose()?;
            let ag = stage.ag.as_ref().map(|l| ag_forward_raw(&s, &u, l.params(p))).transpose()?;
            let fused = {
                let mut parts = vec![&u];
                match (&csa, &ag) {
                    (None, None) => parts.push(&s),
                    _ => {
                        parts.extend(csa.as_ref().map(|c| &c.0));
                        parts.extend(ag.as_ref().map(|a| &a.0));
                    }
                }
                Tensor4::concat_channels(&parts)?
            };
            let (y, blocks) = stage.convs.train(p, fused, bn_first)?;
            dec_caches.push(DecoderCache { csa: csa.map(|c| c.1), ag: ag.map(|a| a.1), blocks });
            h = y;
        }
        let out = sigmoid(&self.head.forward(p, &h)?);
        self.tape = Some(Tape {
            input_csa,
            encoder: enc_caches,
            bottleneck,
            decoder: dec_caches,
            head_in: h,
            output: out.clone(),
        });
        Ok(out)
    }

    /// Accumulates `dL/dθ` into every parameter's gradient buffer, given
    /// `dL/d(output)`. Consumes the tape of the last train-mode forward and
    /// returns `dL/d(input)`.
    pub fn backward(&mut self, grad_output: &Tensor4<R>) -> Result<Tensor4<R>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding train-mode forward".into()))?;
        tape.output.require_same_dims(grad_output, "network backward")?;
        let bn_first = self.config.bn_before_relu;
        let p = &mut self.params;

        let g_logits = sigmoid_backward(&tape.output, grad_output)?;
        let mut g = self.head.backward(p, &tape.head_in, &g_logits)?;

        let mut skip_grads: Vec<Tensor4<R>> = Vec::with_capacity(self.decoder.len());
        for (stage, cache) in self.decoder.iter().zip(&tape.decoder).rev() {
            let g_fused = stage.convs.backward(p, &cache.blocks, g, bn_first)?;
            let mut parts = g_fused.split_channels(&stage.part_sizes())?.into_iter();
            let mut g_u = parts.next().expect("upsampled part");
            let g_skip = match (&stage.csa, &stage.ag) {
                (None, None) => parts.next().expect("raw skip part"),
                (csa, ag) => {
                    let mut acc: Option<Tensor4<R>> = None;
                    if let Some(l) = csa {
                        let gc = parts.next().expect("csa part");
                        let c = cache.csa.as_ref().expect("csa cache");
                        acc = Some(l.backward(p, c, &gc)?);
                    }
                    if let Some(l) = ag {
                        let ga = parts.next().expect("ag part");
                        let c = cache.ag.as_ref().expect("ag cache");
                        let grads = ag_backward_raw(l.params(p), c, &ga)?;
                        p.accumulate(l.theta, &grads.theta);
                        p.accumulate(l.phi, &grads.phi);
                        p.accumulate(l.bias, &grads.bias);
                        g_u.add_assign(&grads.g)?;
                        acc = Some(match acc {
                            Some(mut a) => {
                                a.add_assign(&grads.x)?;
                                a
                            }
                            None => grads.x,
                        });
                    }
                    acc.expect("at least one branch")
                }
            };
            skip_grads.push(g_skip);
            g = upsample2x2_backward(&g_u)?;
        }

        g = self.bottleneck.backward(p, &tape.bottleneck, g, bn_first)?;
        for (stage, (caches, idx)) in self.encoder.iter().zip(&tape.encoder).rev() {
            let mut gs = maxpool2x2_backward(&g, idx)?;
            gs.add_assign(&skip_grads.pop().expect("skip gradient"))?;
            g = stage.backward(p, caches, gs, bn_first)?;
        }
        if let (Some(l), Some(c)) = (&self.input_csa, &tape.input_csa) {
            g = l.backward(p, c, &g)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    /// Drops any recorded tape.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    /// Names of every trainable parameter, in store order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect()
    }
}
