use crate::error::{Error, Result};
use crate::params::LayerParams;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if !ok {
            return Err(Error::Config(format!(
                "Adam needs lr > 0, eps > 0 and betas in [0, 1), got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update on every trainable parameter, step
/// number `t ≥ 1`, followed by zeroing all gradients.
///
/// ```text
/// m ← β1·m + (1 − β1)·g          m̂ = m / (1 − β1^t)
/// v ← β2·v + (1 − β2)·g²         v̂ = v / (1 − β2^t)
/// θ ← θ − lr · m̂ / (√v̂ + eps)
/// ```
pub fn adam_step<R: Real>(params: &mut LayerParams<R>, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::State("Adam step number must start at 1".into()));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    for p in params.iter_mut().filter(|p| p.trainable) {
        for i in 0..p.value.len() {
            let g = p.grad[i].as_f64();
            let m = b1 * p.m[i].as_f64() + (1.0 - b1) * g;
            let v = b2 * p.v[i].as_f64() + (1.0 - b2) * g * g;
            p.m[i] = R::lit(m);
            p.v[i] = R::lit(v);
            let step = cfg.learning_rate * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            p.value[i] = R::lit(p.value[i].as_f64() - step);
        }
    }
    params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(grads: &[f64]) -> LayerParams<f64> {
        let mut s = LayerParams::new();
        let id = s.add("w", &[grads.len()], vec![1.0; grads.len()], true).unwrap();
        s.get_mut(id).grad = grads.to_vec();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { learning_rate: 1e-3, ..Default::default() };
        let mut s = store(&[0.37, -5.0]);
        adam_step(&mut s, &cfg, 1).unwrap();
        let v = &s.by_name("w").unwrap().value;
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps)
        assert!((v[0] - (1.0 - 1e-3 * 0.37 / (0.37 + 1e-8))).abs() < 1e-15);
        assert!((v[1] - (1.0 + 1e-3 * 5.0 / (5.0 + 1e-8))).abs() < 1e-15);
        assert!(s.by_name("w").unwrap().grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut s = store(&[0.0]);
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.by_name("w").unwrap().value[0], 1.0);
    }

    #[test]
    fn step_zero_is_state_error() {
        let mut s = store(&[1.0]);
        assert!(matches!(adam_step(&mut s, &AdamConfig::default(), 0), Err(Error::State(_))));
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut s = store(&[1.0]);
        let id = s.add("running_mean", &[1], vec![0.5], false).unwrap();
        s.get_mut(id).grad[0] = 3.0;
        adam_step(&mut s, &AdamConfig::default(), 1).unwrap();
        assert_eq!(s.get(id).value[0], 0.5);
    }
}
