//! The 2³ grid over the three attention switches.

use std::fmt::Write as _;

use super::eval::evaluate;
use super::trainer::{train, RunLog, TrainConfig};
use crate::data::{SliceTriplet, Splits};
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};

/// `(input_csa, skip_csa, skip_ag)` in table order: none, singles, pairs,
/// all.
pub const GRID_ORDER: [(bool, bool, bool); 8] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, true, false),
    (true, false, true),
    (false, true, true),
    (true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub dsc: f64,
    pub iou: f64,
    pub log: RunLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub flags: (bool, bool, bool),
    /// Mean over seeds of the full-scan test Dice.
    pub dsc: f64,
    pub iou: f64,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, flags: (bool, bool, bool)) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.flags == flags)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("input_csa,skip_csa,skip_ag,dsc,iou\n");
        for r in &self.rows {
            let (a, b, c) = r.flags;
            writeln!(s, "{},{},{},{:.6},{:.6}", a as u8, b as u8, c as u8, r.dsc, r.iou).unwrap();
        }
        s
    }
}

/// Trains and scores one configuration under one seed. The seed drives
/// both the weight initialization and the shuffle.
pub fn run_single(
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    seed: u64,
) -> Result<SeedResult> {
    let mut net = Network::<f32>::build(&NetworkConfig { seed, ..net_cfg.clone() })?;
    let log = train(&mut net, &splits.train, &splits.val, &TrainConfig { seed, ..train_cfg.clone() }, None)?;
    let test: Vec<&SliceTriplet> = splits.test.iter().collect();
    let full = evaluate(&net, &test, train_cfg.batch_size)?.summary(None)?;
    Ok(SeedResult { seed, dsc: full.dice, iou: full.iou, log })
}

/// Every flag combination, identical data and seeds. `progress` sees each
/// finished run.
pub fn run_ablation_grid(
    base: &NetworkConfig,
    train_cfg: &TrainConfig,
    splits: &Splits,
    seeds: &[u64],
    mut progress: impl FnMut((bool, bool, bool), &SeedResult),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(GRID_ORDER.len());
    for flags in GRID_ORDER {
        let cfg = base.clone().with_flags(flags.0, flags.1, flags.2);
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let r = run_single(&cfg, train_cfg, splits, seed)?;
            progress(flags, &r);
            runs.push(r);
        }
        let n = runs.len() as f64;
        rows.push(AblationRow {
            flags,
            dsc: runs.iter().map(|r| r.dsc).sum::<f64>() / n,
            iou: runs.iter().map(|r| r.iou).sum::<f64>() / n,
            runs,
        });
    }
    Ok(AblationTable { rows })
}
