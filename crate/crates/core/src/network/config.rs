use crate::error::{Error, Result};

/// Kernel size of every encoder, bottleneck and decoder convolution.
pub const STAGE_KERNEL: usize = 3;

/// Architecture hyperparameters plus the three attention switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// `(height, width)` of the network input.
    pub input_size: (usize, usize),
    pub in_slices: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub use_input_csa: bool,
    pub use_skip_csa: bool,
    pub use_skip_ag: bool,
    pub convs_per_stage: usize,
    /// `conv → bn → relu` when true, `conv → relu → bn` otherwise.
    pub bn_before_relu: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: (256, 256),
            in_slices: 3,
            base_filters: 64,
            depth: 4,
            use_input_csa: true,
            use_skip_csa: true,
            use_skip_ag: true,
            convs_per_stage: 2,
            bn_before_relu: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// 64×64 input, 4 base filters, two levels.
    pub fn desk() -> Self {
        Self { input_size: (64, 64), base_filters: 4, depth: 2, ..Self::default() }
    }

    pub fn with_flags(mut self, input_csa: bool, skip_csa: bool, skip_ag: bool) -> Self {
        self.use_input_csa = input_csa;
        self.use_skip_csa = skip_csa;
        self.use_skip_ag = skip_ag;
        self
    }

    /// Same architecture with every attention site disabled: a plain 2.5D U-Net.
    pub fn plain_unet(&self) -> Self {
        self.clone().with_flags(false, false, false)
    }

    pub fn flags(&self) -> (bool, bool, bool) {
        (self.use_input_csa, self.use_skip_csa, self.use_skip_ag)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        let m = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("depth {} is too large", self.depth)))?;
        if h == 0 || h % m != 0 {
            return Err(Error::Config(format!(
                "input height {h} is not divisible by 2^depth = {m}"
            )));
        }
        if w == 0 || w % m != 0 {
            return Err(Error::Config(format!("input width {w} is not divisible by 2^depth = {m}")));
        }
        if self.in_slices == 0 {
            return Err(Error::Config("in_slices must be at least 1".into()));
        }
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        if self.convs_per_stage == 0 {
            return Err(Error::Config("convs_per_stage must be at least 1".into()));
        }
        Ok(())
    }

    /// Output channels of encoder stage `i`, `i = 0..depth`.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_filters << i).collect()
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_filters << self.depth
    }

    /// Channel count entering the first decoder convolution at level `i`.
    pub fn fusion_channels(&self, level: usize) -> usize {
        let skip = self.base_filters << level;
        let up = skip * 2;
        let branches = match (self.use_skip_csa, self.use_skip_ag) {
            (true, true) => 2,
            _ => 1,
        };
        up + branches * skip
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_channel_ladder() {
        let c = NetworkConfig::default();
        assert_eq!(c.encoder_channels(), vec![64, 128, 256, 512]);
        assert_eq!(c.bottleneck_channels(), 1024);
        c.validate().unwrap();
    }

    #[test]
    fn desk_channels() {
        let c = NetworkConfig { base_filters: 4, depth: 2, ..NetworkConfig::desk() };
        assert_eq!(c.encoder_channels(), vec![4, 8]);
        assert_eq!(c.bottleneck_channels(), 16);
    }

    #[test]
    fn indivisible_size_names_dimension() {
        let c = NetworkConfig { input_size: (64, 60), depth: 3, ..NetworkConfig::desk() };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("width 60"), "{msg}");
        let c = NetworkConfig { input_size: (36, 64), depth: 3, ..NetworkConfig::desk() };
        assert!(c.validate().unwrap_err().to_string().contains("height 36"));
    }

    #[test]
    fn fusion_width_follows_flags() {
        let c = NetworkConfig::desk();
        assert_eq!(c.fusion_channels(0), 8 + 4 + 4);
        assert_eq!(c.clone().with_flags(true, true, false).fusion_channels(1), 16 + 8);
        assert_eq!(c.plain_unet().fusion_channels(1), 16 + 8);
    }
}
