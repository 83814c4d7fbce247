//! Central finite-difference checks of every hand-written backward, in f64.
//!
//! Each operator or block output `y` is reduced with a fixed random
//! projection `L = Σ r ⊙ y`, so the analytic input to each backward is `r`.
//! The losses are checked as they are, and the whole network through the
//! combined loss against a random binary target. For every argument a sample
//! of entries is perturbed by `±step` and
//!
//! ```text
//! err = |analytic − numeric| / max(|analytic|, |numeric|, floor)
//! ```
//!
//! The floor keeps entries whose true gradient is zero (a conv bias
//! feeding batch norm, say) from dividing rounding noise by nothing.
//! For the network it scales with the largest gradient in the network.

use crate::attention::{ag_backward_raw, ag_forward_raw, csa_backward_raw, csa_forward_raw, AgParams, CsaParams};
use crate::error::{Error, Result};
use crate::loss::{boundary_loss, boundary_loss_grad, combined_loss, combined_loss_grad, dice_loss, dice_loss_grad, LossWeights};
use crate::network::{Network, NetworkConfig};
use crate::ops::batchnorm::{batchnorm_backward, batchnorm_train, DEFAULT_EPS};
use crate::ops::conv::{conv2d_backward_raw, conv2d_raw, ConvSpec, Padding};
use crate::ops::{
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, sobel_gradient_magnitude,
    sobel_gradient_magnitude_backward, softmax_channels, softmax_channels_backward, upsample2x2, upsample2x2_backward,
};
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Primitive,
    Block,
    Loss,
    Network,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Primitive => "primitive",
            Kind::Block => "block",
            Kind::Loss => "loss",
            Kind::Network => "network",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub step: f64,
    pub floor: f64,
    /// Smaller than `step`: a network has enough ReLUs that a wider step
    /// routinely straddles one of their kinks.
    pub network_step: f64,
    /// The network floor is this fraction of the largest analytic gradient
    /// anywhere in the network. The combined loss averages over every pixel,
    /// so individual gradients sit far below 1 while the rounding noise in
    /// a central difference stays near 1e-9.
    pub network_floor_ratio: f64,
    /// Entries checked per argument (all of them if the argument is smaller).
    pub samples: usize,
    pub network: NetworkConfig,
    pub batch: usize,
    pub primitive_tolerance: f64,
    pub loss_tolerance: f64,
    pub network_tolerance: f64,
    /// Corrupts the analytic gradient of the named component, to show the
    /// check can fail.
    pub fault: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            step: 1e-5,
            floor: 1e-6,
            network_step: 1e-6,
            network_floor_ratio: 1e-2,
            samples: 50,
            network: NetworkConfig::desk(),
            batch: 2,
            primitive_tolerance: 1e-5,
            loss_tolerance: 1e-6,
            network_tolerance: 1e-4,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub name: String,
    pub kind: Kind,
    pub worst: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Names accepted by [`GradcheckConfig::fault`] besides network parameter
/// names (`network:<param>`).
pub const COMPONENTS: [&str; 15] = [
    "conv2d-same",
    "conv2d-strided",
    "conv2d-1x1",
    "maxpool2x2",
    "upsample2x2",
    "batchnorm",
    "relu",
    "sigmoid",
    "softmax-channels",
    "sobel-magnitude",
    "csa",
    "attention-gate",
    "dice-loss",
    "boundary-loss",
    "combined-loss",
];

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

struct Checker<'a> {
    cfg: &'a GradcheckConfig,
    rng: SplitMix64,
    reports: Vec<ComponentReport>,
}

fn tensor(rng: &mut SplitMix64, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| rng.uniform_range(lo, hi))
}

fn values(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(lo, hi)).collect()
}

fn project(y: &Tensor4<f64>, r: &Tensor4<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

impl Checker<'_> {
    fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        if n <= self.cfg.samples {
            return (0..n).collect();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut idx);
        idx.truncate(self.cfg.samples);
        idx
    }

    fn faulty(&self, name: &str) -> bool {
        self.cfg.fault.as_deref() == Some(name)
    }

    /// `args` are the flattened arguments, `grads` their analytic gradients
    /// and `loss` the scalar objective of all arguments.
    fn check(
        &mut self,
        name: &str,
        kind: Kind,
        tolerance: f64,
        args: Vec<Vec<f64>>,
        mut grads: Vec<Vec<f64>>,
        loss: impl Fn(&[Vec<f64>]) -> Result<f64>,
    ) -> Result<()> {
        if self.faulty(name) {
            grads[0].iter_mut().for_each(|g| *g += 1e-3);
        }
        let h = self.cfg.step;
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut work = args.clone();
        for (a, grad) in grads.iter().enumerate() {
            for i in self.sample_indices(args[a].len()) {
                work[a][i] = args[a][i] + h;
                let up = loss(&work)?;
                work[a][i] = args[a][i] - h;
                let down = loss(&work)?;
                work[a][i] = args[a][i];
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max(relative_error(grad[i], numeric, self.cfg.floor));
                checked += 1;
            }
        }
        self.reports.push(ComponentReport { name: name.to_string(), kind, worst, checked, tolerance });
        Ok(())
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, input_dims: [usize; 4]) -> Result<()> {
        let x = tensor(&mut self.rng, input_dims, -1.0, 1.0);
        let w = values(&mut self.rng, spec.weight_len(), -1.0, 1.0);
        let b = values(&mut self.rng, spec.c_out, -1.0, 1.0);
        let out = spec.output_dims(input_dims)?;
        let r = tensor(&mut self.rng, out, -1.0, 1.0);
        let g = conv2d_backward_raw(&x, &spec, &w, true, &r)?;
        let tol = self.cfg.primitive_tolerance;
        self.check(
            name,
            Kind::Primitive,
            tol,
            vec![x.data().to_vec(), w, b],
            vec![g.input.into_vec(), g.weight, g.bias.expect("bias gradient")],
            |a| {
                let x = Tensor4::from_vec(input_dims, a[0].clone())?;
                Ok(project(&conv2d_raw(&x, &spec, &a[1], Some(&a[2]))?, &r))
            },
        )
    }

    /// A unary op `f` with backward `df(x, y, grad_y)`.
    fn unary(
        &mut self,
        name: &str,
        x: Tensor4<f64>,
        f: impl Fn(&Tensor4<f64>) -> Result<Tensor4<f64>>,
        df: impl Fn(&Tensor4<f64>, &Tensor4<f64>, &Tensor4<f64>) -> Result<Tensor4<f64>>,
    ) -> Result<()> {
        let y = f(&x)?;
        let r = tensor(&mut self.rng, y.dims(), -1.0, 1.0);
        let gx = df(&x, &y, &r)?;
        let dims = x.dims();
        let tol = self.cfg.primitive_tolerance;
        self.check(name, Kind::Primitive, tol, vec![x.into_vec()], vec![gx.into_vec()], |a| {
            Ok(project(&f(&Tensor4::from_vec(dims, a[0].clone())?)?, &r))
        })
    }

    fn primitives(&mut self) -> Result<()> {
        self.conv("conv2d-same", ConvSpec::new(3, 4, 3), [2, 3, 6, 5])?;
        self.conv(
            "conv2d-strided",
            ConvSpec { padding: Padding::Valid, stride: 2, ..ConvSpec::new(2, 3, 3) },
            [1, 2, 7, 7],
        )?;
        self.conv("conv2d-1x1", ConvSpec::new(4, 2, 1), [2, 4, 3, 3])?;

        let x = tensor(&mut self.rng, [2, 2, 6, 6], -1.0, 1.0);
        self.unary(
            "maxpool2x2",
            x,
            |x| Ok(maxpool2x2(x)?.0),
            |x, _, g| maxpool2x2_backward(g, &maxpool2x2(x)?.1),
        )?;
        let x = tensor(&mut self.rng, [1, 2, 3, 3], -1.0, 1.0);
        self.unary("upsample2x2", x, |x| Ok(upsample2x2(x)), |_, _, g| upsample2x2_backward(g))?;

        // batch norm over input, gamma and beta
        let dims = [3, 2, 4, 4];
        let x = tensor(&mut self.rng, dims, -2.0, 2.0);
        let gamma = values(&mut self.rng, 2, 0.5, 1.5);
        let beta = values(&mut self.rng, 2, -0.5, 0.5);
        let r = tensor(&mut self.rng, dims, -1.0, 1.0);
        let bn = |x: &Tensor4<f64>, gm: &[f64], bt: &[f64]| {
            let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
            batchnorm_train(x, gm, bt, DEFAULT_EPS, &mut m, &mut v)
        };
        let (_, cache) = bn(&x, &gamma, &beta)?;
        let g = batchnorm_backward(&cache, &gamma, &r)?;
        let tol = self.cfg.primitive_tolerance;
        self.check(
            "batchnorm",
            Kind::Primitive,
            tol,
            vec![x.into_vec(), gamma, beta],
            vec![g.input.into_vec(), g.gamma, g.beta],
            |a| Ok(project(&bn(&Tensor4::from_vec(dims, a[0].clone())?, &a[1], &a[2])?.0, &r)),
        )?;

        // keep ReLU inputs away from the kink
        let x = tensor(&mut self.rng, [2, 2, 4, 4], 0.05, 1.0).zip_map(&tensor(&mut self.rng, [2, 2, 4, 4], -1.0, 1.0), |m, s| {
            if s < 0.0 {
                -m
            } else {
                m
            }
        })?;
        self.unary("relu", x, |x| Ok(relu(x)), |x, _, g| relu_backward(x, g))?;
        let x = tensor(&mut self.rng, [2, 2, 4, 4], -4.0, 4.0);
        self.unary("sigmoid", x, |x| Ok(sigmoid(x)), |_, y, g| sigmoid_backward(y, g))?;
        let x = tensor(&mut self.rng, [2, 5, 3, 3], -3.0, 3.0);
        self.unary("softmax-channels", x, |x| Ok(softmax_channels(x)), |_, y, g| softmax_channels_backward(y, g))?;
        let x = tensor(&mut self.rng, [2, 1, 6, 6], 0.0, 1.0);
        self.unary("sobel-magnitude", x, sobel_gradient_magnitude, |x, _, g| sobel_gradient_magnitude_backward(x, g))
    }

    fn blocks(&mut self) -> Result<()> {
        let tol = self.cfg.primitive_tolerance;

        let dims = [2, 4, 5, 5];
        let x = tensor(&mut self.rng, dims, -1.0, 1.0);
        let w = values(&mut self.rng, 16, -1.0, 1.0);
        let b = values(&mut self.rng, 4, -0.5, 0.5);
        let r = tensor(&mut self.rng, dims, -1.0, 1.0);
        let (_, cache) = csa_forward_raw(&x, CsaParams { weight: &w, bias: Some(&b) })?;
        let g = csa_backward_raw(CsaParams { weight: &w, bias: Some(&b) }, &cache, &r)?;
        self.check(
            "csa",
            Kind::Block,
            tol,
            vec![x.into_vec(), w, b],
            vec![g.input.into_vec(), g.weight, g.bias.expect("bias gradient")],
            |a| {
                let x = Tensor4::from_vec(dims, a[0].clone())?;
                Ok(project(&csa_forward_raw(&x, CsaParams { weight: &a[1], bias: Some(&a[2]) })?.0, &r))
            },
        )?;

        let (xd, gd) = ([2, 3, 4, 4], [2, 6, 4, 4]);
        let x = tensor(&mut self.rng, xd, -1.0, 1.0);
        let gs = tensor(&mut self.rng, gd, -1.0, 1.0);
        let theta = values(&mut self.rng, 9, -1.0, 1.0);
        let phi = values(&mut self.rng, 18, -1.0, 1.0);
        let bias = values(&mut self.rng, 3, -0.5, 0.5);
        let r = tensor(&mut self.rng, xd, -1.0, 1.0);
        let p = AgParams { theta: &theta, phi: &phi, bias: &bias };
        let (_, cache) = ag_forward_raw(&x, &gs, p)?;
        let g = ag_backward_raw(p, &cache, &r)?;
        self.check(
            "attention-gate",
            Kind::Block,
            tol,
            vec![x.into_vec(), gs.into_vec(), theta.clone(), phi.clone(), bias.clone()],
            vec![g.x.into_vec(), g.g.into_vec(), g.theta, g.phi, g.bias],
            |a| {
                let x = Tensor4::from_vec(xd, a[0].clone())?;
                let gs = Tensor4::from_vec(gd, a[1].clone())?;
                Ok(project(&ag_forward_raw(&x, &gs, AgParams { theta: &a[2], phi: &a[3], bias: &a[4] })?.0, &r))
            },
        )
    }

    fn losses(&mut self) -> Result<()> {
        let dims = [2, 1, 8, 8];
        let t = Tensor4::from_fn(dims, |_| if self.rng.uniform() < 0.4 { 1.0 } else { 0.0 });
        let p = tensor(&mut self.rng, dims, 0.05, 0.95);
        let tol = self.cfg.loss_tolerance;
        let w = LossWeights::default();

        let (_, g) = dice_loss_grad(&t, &p)?;
        self.check("dice-loss", Kind::Loss, tol, vec![p.data().to_vec()], vec![g.into_vec()], |a| {
            dice_loss(&t, &Tensor4::from_vec(dims, a[0].clone())?)
        })?;
        let (_, g) = boundary_loss_grad(&t, &p)?;
        self.check("boundary-loss", Kind::Loss, tol, vec![p.data().to_vec()], vec![g.into_vec()], |a| {
            boundary_loss(&t, &Tensor4::from_vec(dims, a[0].clone())?)
        })?;
        let (_, g) = combined_loss_grad(&t, &p, w)?;
        self.check("combined-loss", Kind::Loss, tol, vec![p.into_vec()], vec![g.into_vec()], |a| {
            Ok(combined_loss(&t, &Tensor4::from_vec(dims, a[0].clone())?, w)?.total)
        })
    }

    fn network(&mut self) -> Result<()> {
        let cfg = self.cfg.network.clone();
        let mut net = Network::<f64>::build(&cfg)?;
        // move every trainable tensor off its initial value so zero-initialized
        // projections and unit batch-norm scales are exercised too
        for p in net.params_mut().iter_mut().filter(|p| p.trainable) {
            let mut r = SplitMix64::keyed(self.cfg.seed, &p.name);
            for v in p.value.iter_mut() {
                *v += r.uniform_range(-0.2, 0.2);
            }
        }
        let (h, w) = cfg.input_size;
        let dims = [self.cfg.batch, cfg.in_slices, h, w];
        let x = tensor(&mut self.rng, dims, 0.0, 1.0);
        let t = Tensor4::from_fn([self.cfg.batch, 1, h, w], |_| if self.rng.uniform() < 0.3 { 1.0 } else { 0.0 });
        let weights = LossWeights::default();
        net.zero_grads();
        let y = net.forward_train(&x)?;
        let (_, grad) = combined_loss_grad(&t, &y, weights)?;
        let gx = net.backward(&grad)?;

        let tol = self.cfg.network_tolerance;
        let step = self.cfg.network_step;
        let names = net.trainable_names();
        let largest = names
            .iter()
            .flat_map(|n| net.params().by_name(n).expect("known parameter").grad.iter())
            .chain(gx.data())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = self.cfg.floor.max(self.cfg.network_floor_ratio * largest);
        for name in names.iter().map(|n| format!("network:{n}")).chain(std::iter::once("network:input".to_string())) {
            let fault = self.faulty(&name);
            let param = name.strip_prefix("network:").expect("prefix");
            let (len, mut analytic) = if param == "input" {
                (x.len(), gx.data().to_vec())
            } else {
                let p = net.params().by_name(param).expect("known parameter");
                (p.len(), p.grad.clone())
            };
            if fault {
                analytic.iter_mut().for_each(|g| *g += 1e-3);
            }
            let mut worst = 0.0f64;
            let idx = self.sample_indices(len);
            for &i in &idx {
                let mut eval = |delta: f64| -> Result<f64> {
                    if param == "input" {
                        let mut xp = x.clone();
                        xp.data_mut()[i] += delta;
                        Ok(combined_loss(&t, &net.forward_train(&xp)?, weights)?.total)
                    } else {
                        let orig = net.params().by_name(param).expect("known parameter").value[i];
                        net.params_mut().by_name_mut(param).expect("known parameter").value[i] = orig + delta;
                        let y = net.forward_train(&x);
                        net.params_mut().by_name_mut(param).expect("known parameter").value[i] = orig;
                        Ok(combined_loss(&t, &y?, weights)?.total)
                    }
                };
                let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
                worst = worst.max(relative_error(analytic[i], numeric, floor));
            }
            net.clear_tape();
            self.reports.push(ComponentReport { name, kind: Kind::Network, worst, checked: idx.len(), tolerance: tol });
        }
        Ok(())
    }
}

/// Runs the primitive, block, loss and full-network suites.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<ComponentReport>> {
    if cfg.step <= 0.0 || cfg.network_step <= 0.0 || cfg.samples == 0 || cfg.batch == 0 {
        return Err(Error::Config("gradcheck needs positive steps, samples ≥ 1 and batch ≥ 1".into()));
    }
    let mut c = Checker { cfg, rng: SplitMix64::keyed(cfg.seed, "gradcheck"), reports: Vec::new() };
    c.primitives()?;
    c.blocks()?;
    c.losses()?;
    c.network()?;
    if let Some(f) = &cfg.fault {
        if !c.reports.iter().any(|r| &r.name == f) {
            return Err(Error::Config(format!("unknown gradcheck component {f:?}")));
        }
    }
    Ok(c.reports)
}
