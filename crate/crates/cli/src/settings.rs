//! Resolved run settings: built-in defaults, then a `key = value` file,
//! then command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use xseg::data::{MaskStyle, PhantomConfig, SplitSpec};
use xseg::gradcheck::GradcheckConfig;
use xseg::loss::LossWeights;
use xseg::train::{AdamConfig, TrainConfig};
use xseg::NetworkConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub desk_scale: bool,
    // paths
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    // network
    pub height: usize,
    pub width: usize,
    pub base_filters: usize,
    pub depth: usize,
    pub convs_per_stage: usize,
    pub input_csa: bool,
    pub skip_csa: bool,
    pub skip_ag: bool,
    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dice_weight: f64,
    pub boundary_weight: f64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    // splits
    pub val_volumes: usize,
    pub test_volumes: usize,
    pub shaft_cap: Option<f64>,
    // phantom generation
    pub volumes: usize,
    pub slices: usize,
    pub raw_height: usize,
    pub raw_width: usize,
    pub mask_style: MaskStyle,
    pub noise_sigma: f64,
    // gradient check
    pub samples: usize,
    pub gradcheck_batch: usize,
    // evaluation
    pub dump_masks: bool,
}

impl Settings {
    pub fn defaults(desk_scale: bool) -> Self {
        let net = if desk_scale { NetworkConfig::desk() } else { NetworkConfig::default() };
        let train = if desk_scale { TrainConfig::desk() } else { TrainConfig::default() };
        let phantom = PhantomConfig::default();
        let grad = GradcheckConfig::default();
        Self {
            desk_scale,
            data: None,
            out: None,
            ckpt: None,
            height: net.input_size.0,
            width: net.input_size.1,
            base_filters: net.base_filters,
            depth: net.depth,
            convs_per_stage: net.convs_per_stage,
            input_csa: net.use_input_csa,
            skip_csa: net.use_skip_csa,
            skip_ag: net.use_skip_ag,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.adam.learning_rate,
            beta1: train.adam.beta1,
            beta2: train.adam.beta2,
            adam_eps: train.adam.eps,
            dice_weight: train.loss_weights.dice,
            boundary_weight: train.loss_weights.boundary,
            seed: 0,
            seeds: vec![0, 1, 2],
            val_volumes: 1,
            test_volumes: 1,
            shaft_cap: Some(0.4),
            volumes: 10,
            slices: phantom.n_slices,
            raw_height: phantom.raw_size.0,
            raw_width: phantom.raw_size.1,
            mask_style: phantom.mask_style,
            noise_sigma: phantom.noise_sigma,
            samples: grad.samples,
            gradcheck_batch: grad.batch,
            dump_masks: false,
        }
    }

    /// Resolves `pairs` in order on top of the defaults. `desk_scale`
    /// picks the defaults, so it is honored wherever it appears.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self, String> {
        let mut desk = false;
        for (k, v) in pairs {
            if k == "desk_scale" {
                desk = parse_bool(k, v)?;
            }
        }
        let mut s = Self::defaults(desk);
        for (k, v) in pairs {
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "desk_scale" => self.desk_scale = parse_bool(key, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "ckpt" => self.ckpt = Some(PathBuf::from(v)),
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "base_filters" => self.base_filters = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "convs_per_stage" => self.convs_per_stage = parse(key, v)?,
            "input_csa" => self.input_csa = parse_bool(key, v)?,
            "skip_csa" => self.skip_csa = parse_bool(key, v)?,
            "skip_ag" => self.skip_ag = parse_bool(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "dice_weight" => self.dice_weight = parse(key, v)?,
            "boundary_weight" => self.boundary_weight = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seeds" => {
                self.seeds = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_, _>>()?;
                if self.seeds.is_empty() {
                    return Err("seeds: need at least one seed".into());
                }
            }
            "val_volumes" => self.val_volumes = parse(key, v)?,
            "test_volumes" => self.test_volumes = parse(key, v)?,
            "shaft_cap" => self.shaft_cap = if v == "none" { None } else { Some(parse(key, v)?) },
            "volumes" => self.volumes = parse(key, v)?,
            "slices" => self.slices = parse(key, v)?,
            "raw_height" => self.raw_height = parse(key, v)?,
            "raw_width" => self.raw_width = parse(key, v)?,
            "mask_style" => self.mask_style = v.parse().map_err(|e| format!("mask_style: {e}"))?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "gradcheck_batch" => self.gradcheck_batch = parse(key, v)?,
            "dump_masks" => self.dump_masks = parse_bool(key, v)?,
            _ => return Err(format!("unknown setting {key:?}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("-".to_string(), |p| p.display().to_string());
        match key {
            "desk_scale" => self.desk_scale.to_string(),
            "data" => path(&self.data),
            "out" => path(&self.out),
            "ckpt" => path(&self.ckpt),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "base_filters" => self.base_filters.to_string(),
            "depth" => self.depth.to_string(),
            "convs_per_stage" => self.convs_per_stage.to_string(),
            "input_csa" => self.input_csa.to_string(),
            "skip_csa" => self.skip_csa.to_string(),
            "skip_ag" => self.skip_ag.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => format!("{:e}", self.learning_rate),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => format!("{:e}", self.adam_eps),
            "dice_weight" => self.dice_weight.to_string(),
            "boundary_weight" => self.boundary_weight.to_string(),
            "seed" => self.seed.to_string(),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            "val_volumes" => self.val_volumes.to_string(),
            "test_volumes" => self.test_volumes.to_string(),
            "shaft_cap" => self.shaft_cap.map_or("none".to_string(), |c| c.to_string()),
            "volumes" => self.volumes.to_string(),
            "slices" => self.slices.to_string(),
            "raw_height" => self.raw_height.to_string(),
            "raw_width" => self.raw_width.to_string(),
            "mask_style" => match self.mask_style {
                MaskStyle::Filled => "filled".into(),
                MaskStyle::Annulus => "annulus".into(),
            },
            "noise_sigma" => self.noise_sigma.to_string(),
            "samples" => self.samples.to_string(),
            "gradcheck_batch" => self.gradcheck_batch.to_string(),
            "dump_masks" => self.dump_masks.to_string(),
            _ => unreachable!("unknown setting {key}"),
        }
    }

    /// `# xseg <command>` followed by one `key = value` line per key. The
    /// result is itself a valid settings file.
    pub fn header(&self, command: &str, keys: &[&str]) -> String {
        let mut s = format!("# xseg {command}\n");
        for k in keys {
            writeln!(s, "{k} = {}", self.get(k)).unwrap();
        }
        s
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            input_size: (self.height, self.width),
            base_filters: self.base_filters,
            depth: self.depth,
            convs_per_stage: self.convs_per_stage,
            seed: self.seed,
            ..NetworkConfig::default()
        }
        .with_flags(self.input_csa, self.skip_csa, self.skip_ag)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps },
            loss_weights: LossWeights { dice: self.dice_weight, boundary: self.boundary_weight },
            seed: self.seed,
        }
    }

    pub fn split(&self, n_volumes: usize) -> SplitSpec {
        let held_out = self.val_volumes + self.test_volumes;
        SplitSpec {
            n_train: n_volumes.saturating_sub(held_out),
            n_val: self.val_volumes,
            n_test: self.test_volumes,
            shaft_cap: self.shaft_cap,
            seed: self.seed,
        }
    }

    pub fn phantom(&self) -> PhantomConfig {
        PhantomConfig {
            n_slices: self.slices,
            raw_size: (self.raw_height, self.raw_width),
            mask_style: self.mask_style,
            noise_sigma: self.noise_sigma,
            ..PhantomConfig::default()
        }
    }

    pub fn gradcheck(&self, fault: Option<String>) -> GradcheckConfig {
        GradcheckConfig {
            seed: self.seed,
            samples: self.samples,
            batch: self.gradcheck_batch,
            network: self.network(),
            fault,
            ..GradcheckConfig::default()
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {v:?}")),
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_settings_text(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_settings_file(path: &Path) -> Result<Vec<(String, String)>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_settings_text(&text).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn later_pairs_win() {
        let s = Settings::resolve(&pairs(&[("epochs", "3"), ("epochs", "5")])).unwrap();
        assert_eq!(s.epochs, 5);
    }

    #[test]
    fn desk_scale_switches_defaults_wherever_it_appears() {
        let s = Settings::resolve(&pairs(&[("epochs", "7"), ("desk_scale", "true")])).unwrap();
        assert_eq!((s.height, s.base_filters, s.depth, s.epochs), (64, 4, 2, 7));
        assert_eq!(s.learning_rate, 3e-3);
        let full = Settings::resolve(&[]).unwrap();
        assert_eq!((full.height, full.base_filters, full.depth, full.epochs, full.batch_size), (256, 64, 4, 100, 4));
        assert_eq!(full.learning_rate, 1e-4);
    }

    #[test]
    fn header_round_trips() {
        let s = Settings::resolve(&pairs(&[("desk_scale", "1"), ("seeds", "4, 5"), ("shaft_cap", "none")])).unwrap();
        let keys = ["desk_scale", "height", "learning_rate", "seeds", "shaft_cap", "mask_style", "data"];
        let text = s.header("train", &keys);
        let mut back = Settings::resolve(&parse_settings_text(&text).unwrap()).unwrap();
        back.data = None;
        assert_eq!(back, s);
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(Settings::resolve(&pairs(&[("nope", "1")])).is_err());
        assert!(Settings::resolve(&pairs(&[("epochs", "x")])).is_err());
        assert!(Settings::resolve(&pairs(&[("skip_ag", "maybe")])).is_err());
        assert!(parse_settings_text("epochs 3").is_err());
    }

    #[test]
    fn comments_and_blanks() {
        let p = parse_settings_text("# run\n\nepochs = 2  # short\n").unwrap();
        assert_eq!(p, pairs(&[("epochs", "2")]));
    }
}
