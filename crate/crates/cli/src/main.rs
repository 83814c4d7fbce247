mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{read_settings_file, Settings};

/// 2.5D bone segmentation with cross-slice attention.
#[derive(Parser)]
#[command(name = "xseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom volumes.
    Gen(GenArgs),
    /// Train one configuration and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out volumes.
    Eval(EvalArgs),
    /// Train and score all eight attention-flag combinations.
    Ablate(AblateArgs),
    /// Compare every backward pass with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Report parameter and FLOP counts.
    Cost(CostArgs),
}

/// Collects the `Some` fields of a flag struct as settings pairs, keyed by
/// field name.
macro_rules! pairs {
    ($out:ident, $self:ident, $($field:ident),*) => {
        $(if let Some(v) = &$self.$field {
            $out.push((stringify!($field).to_string(), v.to_string()));
        })*
    };
}

#[derive(Args)]
struct Common {
    /// Settings file of `key = value` lines; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Small, fast defaults: 64×64 input, 4 base filters, depth 2, 15 epochs at learning rate 3e-3.
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct NetFlags {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    base_filters: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    convs_per_stage: Option<usize>,
}

impl NetFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        pairs!(out, self, height, width, base_filters, depth, convs_per_stage);
    }
}

#[derive(Args)]
struct AttentionFlags {
    #[arg(long)]
    input_csa: Option<bool>,
    #[arg(long)]
    skip_csa: Option<bool>,
    #[arg(long)]
    skip_ag: Option<bool>,
}

impl AttentionFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        pairs!(out, self, input_csa, skip_csa, skip_ag);
    }
}

#[derive(Args)]
struct SplitFlags {
    #[arg(long)]
    val_volumes: Option<usize>,
    #[arg(long)]
    test_volumes: Option<usize>,
    /// Largest shaft share of training bone slices, or `none`.
    #[arg(long)]
    shaft_cap: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl SplitFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        pairs!(out, self, val_volumes, test_volumes, shaft_cap, batch_size);
    }
}

#[derive(Args)]
struct OptimFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    #[arg(long)]
    dice_weight: Option<f64>,
    #[arg(long)]
    boundary_weight: Option<f64>,
}

impl OptimFlags {
    fn push(&self, out: &mut Vec<(String, String)>) {
        pairs!(out, self, epochs, learning_rate, beta1, beta2, adam_eps, dice_weight, boundary_weight);
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output root; one directory per volume is created inside.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    volumes: Option<usize>,
    #[arg(long)]
    slices: Option<usize>,
    /// Slice size before resizing, `HEIGHTxWIDTH`.
    #[arg(long)]
    raw_size: Option<String>,
    /// `annulus` (cortical wall) or `filled` (whole cross-section).
    #[arg(long)]
    mask_style: Option<String>,
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for runlog.csv, best.ckpt and settings.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    attention: AttentionFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory for records.csv and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expected input height; must agree with the checkpoint.
    #[arg(long)]
    height: Option<usize>,
    /// Expected input width; must agree with the checkpoint.
    #[arg(long)]
    width: Option<usize>,
    /// Also write a ground truth / prediction overlay PNG per test slice.
    #[arg(long)]
    dump_masks: bool,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated training seeds, each run once per configuration.
    #[arg(long)]
    seeds: Option<String>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    optim: OptimFlags,
    #[command(flatten)]
    split: SplitFlags,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Entries checked per argument or parameter tensor.
    #[arg(long)]
    samples: Option<usize>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    attention: AttentionFlags,
    /// Corrupt the named component's analytic gradient.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    attention: AttentionFlags,
}

/// What went wrong, and which exit code it maps to.
pub enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Run(String),
}

impl From<xseg::Error> for Failure {
    fn from(e: xseg::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

/// Settings from the defaults, the `--config` file, then `flags`.
fn resolve(common: &Common, mut flags: Vec<(String, String)>) -> Result<Settings, Failure> {
    let mut pairs = match &common.config {
        Some(p) => read_settings_file(p).map_err(Failure::Usage)?,
        None => Vec::new(),
    };
    if common.desk_scale {
        pairs.push(("desk_scale".into(), "true".into()));
    }
    if let Some(s) = common.seed {
        pairs.push(("seed".into(), s.to_string()));
    }
    pairs.append(&mut flags);
    Settings::resolve(&pairs).map_err(Failure::Usage)
}

fn path_pair(out: &mut Vec<(String, String)>, key: &str, p: &Option<PathBuf>) {
    if let Some(p) = p {
        out.push((key.into(), p.display().to_string()));
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut f = Vec::new();
    match cli.command {
        Command::Gen(a) => {
            path_pair(&mut f, "out", &a.out);
            if let Some(v) = a.volumes {
                f.push(("volumes".into(), v.to_string()));
            }
            if let Some(v) = a.slices {
                f.push(("slices".into(), v.to_string()));
            }
            if let Some(rs) = &a.raw_size {
                let (h, w) = rs
                    .split_once(['x', 'X'])
                    .ok_or_else(|| Failure::Usage(format!("--raw-size: expected HEIGHTxWIDTH, got {rs:?}")))?;
                f.push(("raw_height".into(), h.into()));
                f.push(("raw_width".into(), w.into()));
            }
            if let Some(v) = &a.mask_style {
                f.push(("mask_style".into(), v.clone()));
            }
            if let Some(v) = a.noise_sigma {
                f.push(("noise_sigma".into(), v.to_string()));
            }
            commands::gen(&resolve(&a.common, f)?)
        }
        Command::Train(a) => {
            path_pair(&mut f, "data", &a.data);
            path_pair(&mut f, "out", &a.out);
            a.net.push(&mut f);
            a.attention.push(&mut f);
            a.optim.push(&mut f);
            a.split.push(&mut f);
            commands::train(&resolve(&a.common, f)?)
        }
        Command::Eval(a) => {
            path_pair(&mut f, "data", &a.data);
            path_pair(&mut f, "ckpt", &a.ckpt);
            path_pair(&mut f, "out", &a.out);
            if a.dump_masks {
                f.push(("dump_masks".into(), "true".into()));
            }
            a.split.push(&mut f);
            commands::eval(&resolve(&a.common, f)?, (a.height, a.width))
        }
        Command::Ablate(a) => {
            path_pair(&mut f, "data", &a.data);
            path_pair(&mut f, "out", &a.out);
            if let Some(s) = &a.seeds {
                f.push(("seeds".into(), s.clone()));
            }
            a.net.push(&mut f);
            a.optim.push(&mut f);
            a.split.push(&mut f);
            commands::ablate(&resolve(&a.common, f)?)
        }
        Command::Gradcheck(a) => {
            if let Some(v) = a.samples {
                f.push(("samples".into(), v.to_string()));
            }
            a.net.push(&mut f);
            a.attention.push(&mut f);
            // the check always runs on the small network unless told otherwise
            let mut common = a.common;
            common.desk_scale = true;
            commands::gradcheck(&resolve(&common, f)?, a.inject_fault)
        }
        Command::Cost(a) => {
            a.net.push(&mut f);
            a.attention.push(&mut f);
            commands::cost(&resolve(&a.common, f)?)
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let n = match std::env::var("XSEG_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::Usage(format!("XSEG_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Run(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("Try 'xseg --help' for usage.");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
