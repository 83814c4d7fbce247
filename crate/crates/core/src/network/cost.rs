//! Closed-form parameter and FLOP counts.
//!
//! FLOP conventions, per sample:
//!
//! | op          | cost                                   |
//! |-------------|----------------------------------------|
//! | conv        | `2·kh·kw·Cin·Cout·H·W` + `Cout·H·W` bias |
//! | batch norm  | 2 per element                          |
//! | ReLU        | 1 per element                          |
//! | max pool    | 3 comparisons per output               |
//! | CSA         | 1×1 conv + 5 per element (softmax, gate, residual) |
//! | AG          | two 1×1 convs + 4 per element (add, sigmoid, gate) |
//! | sigmoid     | 1 per element                          |
//!
//! Upsampling and concatenation are free.

use super::config::{NetworkConfig, STAGE_KERNEL};

/// Parameter and FLOP totals for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
}

fn conv_params(c_in: usize, c_out: usize, k: usize) -> u64 {
    (c_in * c_out * k * k + c_out) as u64
}

fn conv_flops(c_in: usize, c_out: usize, k: usize, pixels: usize) -> u64 {
    (2 * k * k * c_in * c_out * pixels + c_out * pixels) as u64
}

fn csa_params(c: usize) -> u64 {
    (c * c + c) as u64
}

fn ag_params(cx: usize, cg: usize) -> u64 {
    (cx * cx + cx * cg + cx) as u64
}

/// Visits every stage: `(c_in, c_out, pixels)` for each conv block.
fn for_each_block(cfg: &NetworkConfig, mut f: impl FnMut(usize, usize, usize)) {
    let (h, w) = cfg.input_size;
    let n = cfg.convs_per_stage;
    let mut stage = |c_in: usize, c_out: usize, pixels: usize| {
        for j in 0..n {
            f(if j == 0 { c_in } else { c_out }, c_out, pixels);
        }
    };
    let enc = cfg.encoder_channels();
    let mut c_prev = cfg.in_slices;
    for (i, &c) in enc.iter().enumerate() {
        stage(c_prev, c, (h >> i) * (w >> i));
        c_prev = c;
    }
    stage(c_prev, cfg.bottleneck_channels(), (h >> cfg.depth) * (w >> cfg.depth));
    for level in (0..cfg.depth).rev() {
        stage(cfg.fusion_channels(level), enc[level], (h >> level) * (w >> level));
    }
}

/// Trainable scalars of the network built from `cfg`.
pub fn count_params(cfg: &NetworkConfig) -> u64 {
    let mut total = 0;
    for_each_block(cfg, |c_in, c_out, _| {
        total += conv_params(c_in, c_out, STAGE_KERNEL) + 2 * c_out as u64;
    });
    total + attention_params(cfg) + conv_params(cfg.base_filters, 1, 1)
}

/// Parameters of the attention projections alone.
pub fn attention_params(cfg: &NetworkConfig) -> u64 {
    let mut total = 0;
    if cfg.use_input_csa {
        total += csa_params(cfg.in_slices);
    }
    for c in cfg.encoder_channels() {
        if cfg.use_skip_csa {
            total += csa_params(c);
        }
        if cfg.use_skip_ag {
            total += ag_params(c, 2 * c);
        }
    }
    total
}

/// Parameter difference between `cfg` and its plain U-Net counterpart.
///
/// With both skip branches on, the fused tensor carries one extra copy of
/// the skip channels, so the first decoder convolution at each level gains
/// `C·C·k²` weights on top of the projection parameters.
pub fn attention_overhead(cfg: &NetworkConfig) -> u64 {
    let widening: u64 = if cfg.use_skip_csa && cfg.use_skip_ag {
        cfg.encoder_channels().iter().map(|&c| (c * c * STAGE_KERNEL * STAGE_KERNEL) as u64).sum()
    } else {
        0
    };
    attention_params(cfg) + widening
}

/// Forward FLOPs for one sample.
pub fn count_flops(cfg: &NetworkConfig) -> u64 {
    let (h, w) = cfg.input_size;
    let mut total = 0;
    for_each_block(cfg, |c_in, c_out, px| {
        let elems = (c_out * px) as u64;
        total += conv_flops(c_in, c_out, STAGE_KERNEL, px) + 3 * elems;
    });
    if cfg.use_input_csa {
        let c = cfg.in_slices;
        total += conv_flops(c, c, 1, h * w) + 5 * (c * h * w) as u64;
    }
    for (i, &c) in cfg.encoder_channels().iter().enumerate() {
        let px = (h >> i) * (w >> i);
        total += 3 * (c * px / 4) as u64;
        if cfg.use_skip_csa {
            total += conv_flops(c, c, 1, px) + 5 * (c * px) as u64;
        }
        if cfg.use_skip_ag {
            total += conv_flops(c, c, 1, px) + (2 * 2 * c * c * px) as u64 + 4 * (c * px) as u64;
        }
    }
    total + conv_flops(cfg.base_filters, 1, 1, h * w) + (h * w) as u64
}

pub fn cost_report(cfg: &NetworkConfig) -> CostReport {
    CostReport { params: count_params(cfg), flops: count_flops(cfg) }
}
