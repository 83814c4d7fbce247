use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use xseg::data::{
    build_splits, generate_phantom_with, list_volumes, load_slice_dir, make_triplets, save_volume, write_rgb_png,
    SliceTriplet, Splits,
};
use xseg::gradcheck::run_gradcheck;
use xseg::metrics::{csv_number, BinaryMask, Region};
use xseg::network::{attention_overhead, attention_params, cost_report, load_checkpoint};
use xseg::train::{evaluate_predictions, predict_masks, run_ablation_grid, train_with, validate};
use xseg::{Network, SplitMix64};

use crate::settings::Settings;
use crate::Failure;

const GEN_KEYS: &[&str] = &["out", "volumes", "slices", "raw_height", "raw_width", "mask_style", "noise_sigma", "seed"];
const NET_KEYS: &[&str] = &["height", "width", "base_filters", "depth", "convs_per_stage"];
const FLAG_KEYS: &[&str] = &["input_csa", "skip_csa", "skip_ag"];
const OPTIM_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "beta1",
    "beta2",
    "adam_eps",
    "dice_weight",
    "boundary_weight",
];
const SPLIT_KEYS: &[&str] = &["val_volumes", "test_volumes", "shaft_cap"];

/// Published figures for the full-size model, shown for orientation only.
const REFERENCE_PARAMS: u64 = 23_138_641;
const REFERENCE_FLOPS: u64 = 89_465_067_776;

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref().ok_or_else(|| Failure::Usage(format!("--{flag} is required")))
}

fn create_dir(p: &Path) -> Result<(), Failure> {
    fs::create_dir_all(p).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))
}

fn write_file(p: &Path, text: &str) -> Result<(), Failure> {
    fs::write(p, text).map_err(|e| Failure::Run(format!("{}: {e}", p.display())))
}

fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn gen(s: &Settings) -> Result<(), Failure> {
    print!("{}", s.header("gen", GEN_KEYS));
    let out = required(&s.out, "out")?;
    if s.volumes == 0 {
        return Err(Failure::Usage("--volumes must be at least 1".into()));
    }
    let cfg = s.phantom();
    create_dir(out)?;
    let mut totals = [0usize; 4];
    for i in 0..s.volumes {
        let seed = SplitMix64::keyed(s.seed, &format!("volume-{i}")).next_u64();
        let vol = generate_phantom_with(seed, &cfg)?;
        let id = format!("vol{i:02}");
        save_volume(&vol, &out.join(&id))?;
        let counts: Vec<String> = vol.region_counts().iter().map(|(r, c)| format!("{r} {c}")).collect();
        println!("{id}: {} slices ({})", vol.n_slices(), counts.join(", "));
        for (j, r) in Region::ALL.iter().take(4).enumerate() {
            totals[j] += vol.regions.iter().filter(|g| *g == r).count();
        }
    }
    let all: usize = totals.iter().sum();
    println!(
        "total: {all} slices in {} volumes ({} {}, {} {}, {} {}, {} {})",
        s.volumes,
        Region::ALL[0],
        totals[0],
        Region::ALL[1],
        totals[1],
        Region::ALL[2],
        totals[2],
        Region::ALL[3],
        totals[3]
    );
    Ok(())
}

/// Loads every volume under `root` as triplets of the given size.
fn load_triplets(root: &Path, size: (usize, usize)) -> Result<Vec<Vec<SliceTriplet>>, Failure> {
    let mut out = Vec::new();
    for dir in list_volumes(root)? {
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(make_triplets(&load_slice_dir(&dir)?, &id, size)?);
    }
    Ok(out)
}

fn load_splits(s: &Settings, size: (usize, usize)) -> Result<Splits, Failure> {
    let root = required(&s.data, "data")?;
    let volumes = load_triplets(root, size)?;
    let spec = s.split(volumes.len());
    let splits = build_splits(volumes, &spec)?;
    println!(
        "split: train {} slices (volumes {:?}, {} shaft slices dropped), val {} (volumes {:?}), test {} (volumes {:?})",
        splits.train.len(),
        splits.train_volumes,
        splits.dropped_shaft,
        splits.val.len(),
        splits.val_volumes,
        splits.test.len(),
        splits.test_volumes
    );
    Ok(splits)
}

pub fn train(s: &Settings) -> Result<(), Failure> {
    let header = s.header("train", &keys(&[&["desk_scale", "data", "out", "seed"], NET_KEYS, FLAG_KEYS, OPTIM_KEYS, SPLIT_KEYS]));
    print!("{header}");
    let out = required(&s.out, "out")?.to_path_buf();
    required(&s.data, "data")?;
    let net_cfg = s.network();
    let splits = load_splits(s, net_cfg.input_size)?;
    let mut net = Network::<f32>::build(&net_cfg)?;
    println!("parameters: {}", grouped(net.param_count() as u64));
    create_dir(&out)?;
    write_file(&out.join("settings.txt"), &header)?;
    let ckpt = out.join("best.ckpt");
    let start = Instant::now();
    let mut best = f64::INFINITY;
    let log = train_with(&mut net, &splits.train, &splits.val, &s.train(), Some(&ckpt), |e| {
        let mark = if e.val_loss < best { "  *" } else { "" };
        best = best.min(e.val_loss);
        println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_dice {:.4}  ({:.0} s){mark}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_dice,
            start.elapsed().as_secs_f64()
        );
    })?;
    write_file(&out.join("runlog.csv"), &log.to_csv())?;
    if let Some(b) = log.best_epoch() {
        println!("best epoch {} (val_loss {:.17e}), checkpoint {}", b.epoch, b.val_loss, ckpt.display());
    }
    Ok(())
}

fn overlay(t: &SliceTriplet, truth: &BinaryMask, pred: &BinaryMask) -> Vec<u8> {
    let [_, _, h, w] = t.input.dims();
    let center = t.input.plane(0, 1);
    let mut px = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let g = (center[y * w + x].clamp(0.0, 1.0) * 160.0) as u8;
            px.extend_from_slice(&match (truth.get(y, x), pred.get(y, x)) {
                (true, true) => [255, 255, 0],
                (true, false) => [0, 255, 0],
                (false, true) => [255, 0, 0],
                (false, false) => [g, g, g],
            });
        }
    }
    px
}

pub fn eval(s: &Settings, expected: (Option<usize>, Option<usize>)) -> Result<(), Failure> {
    print!("{}", s.header("eval", &keys(&[&["data", "ckpt", "out", "batch_size", "seed"], SPLIT_KEYS, &["dump_masks"]])));
    let ckpt = required(&s.ckpt, "ckpt")?;
    let out = required(&s.out, "out")?.to_path_buf();
    required(&s.data, "data")?;
    let net = load_checkpoint::<f32>(ckpt)?;
    let cfg = net.config().clone();
    let (h, w) = cfg.input_size;
    let mismatch = expected.0.is_some_and(|v| v != h) || expected.1.is_some_and(|v| v != w);
    if mismatch || cfg.in_slices != 3 {
        return Err(xseg::Error::Config(format!(
            "checkpoint expects {} slices of {h}×{w}, data gives 3 slices of {}×{}",
            cfg.in_slices,
            expected.0.unwrap_or(h),
            expected.1.unwrap_or(w)
        ))
        .into());
    }
    println!(
        "checkpoint: {h}×{w}, base_filters {}, depth {}, input_csa {}, skip_csa {}, skip_ag {}",
        cfg.base_filters, cfg.depth, cfg.use_input_csa, cfg.use_skip_csa, cfg.use_skip_ag
    );
    let splits = load_splits(s, (h, w))?;
    let (val_loss, val_dice) = validate(&net, &splits.val, s.batch_size, s.train().loss_weights)?;
    println!("validation: loss {val_loss:.17e}, dice {val_dice:.6}");

    let test: Vec<&SliceTriplet> = splits.test.iter().collect();
    let preds = predict_masks(&net, &test, s.batch_size)?;
    let report = evaluate_predictions(&test, &preds)?;
    create_dir(&out)?;
    write_file(&out.join("records.csv"), &report.records_csv())?;
    write_file(&out.join("summary.csv"), &report.summary_csv())?;

    println!("{:<10} {:>6} {:>8} {:>8} {:>8}  hd95_dropped", "scope", "slices", "dice", "iou", "hd95");
    for (name, sum) in report.scope_summaries() {
        match sum {
            Ok(m) => println!(
                "{name:<10} {:>6} {:>8} {:>8} {:>8}  {}",
                m.count,
                csv_number(m.dice),
                csv_number(m.iou),
                csv_number(m.hd95),
                m.hd95_dropped
            ),
            Err(_) => println!("{name:<10} {:>6} {:>8} {:>8} {:>8}  0", 0, "-", "-", "-"),
        }
    }

    if s.dump_masks {
        let dir = out.join("masks");
        create_dir(&dir)?;
        for (t, p) in test.iter().zip(&preds) {
            let [_, _, th, tw] = t.target.dims();
            let truth = xseg::metrics::binarize_plane(t.target.data(), th, tw, 0.5);
            let file = dir.join(format!("{}.png", t.slice_id.replace('/', "_")));
            write_rgb_png(&file, th, tw, overlay(t, &truth, p))?;
        }
        println!("wrote {} overlays to {} (green truth, red prediction, yellow overlap)", preds.len(), dir.display());
    }
    Ok(())
}

pub fn ablate(s: &Settings) -> Result<(), Failure> {
    print!("{}", s.header("ablate", &keys(&[&["desk_scale", "data", "out", "seed", "seeds"], NET_KEYS, OPTIM_KEYS, SPLIT_KEYS])));
    let out = required(&s.out, "out")?.to_path_buf();
    required(&s.data, "data")?;
    let base = s.network();
    let splits = load_splits(s, base.input_size)?;
    let start = Instant::now();
    let mut last = Instant::now();
    let table = run_ablation_grid(&base, &s.train(), &splits, &s.seeds, |(a, b, c), r| {
        println!(
            "input_csa {} skip_csa {} skip_ag {}  seed {}: dsc {:.4} iou {:.4}  ({:.0} s)",
            a as u8,
            b as u8,
            c as u8,
            r.seed,
            r.dsc,
            r.iou,
            last.elapsed().as_secs_f64()
        );
        last = Instant::now();
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let csv = table.to_csv();
    write_file(&out, &csv)?;
    print!("{csv}");
    println!("grid finished in {:.1} min", start.elapsed().as_secs_f64() / 60.0);
    Ok(())
}

pub fn gradcheck(s: &Settings, fault: Option<String>) -> Result<(), Failure> {
    print!("{}", s.header("gradcheck", &keys(&[&["seed", "samples", "gradcheck_batch"], NET_KEYS, FLAG_KEYS])));
    let start = Instant::now();
    let reports = run_gradcheck(&s.gradcheck(fault))?;
    println!("{:<9} {:<36} {:>10} {:>9}", "kind", "component", "worst", "tolerance");
    for r in &reports {
        println!(
            "{:<9} {:<36} {:>10.3e} {:>9.0e}  {}",
            r.kind.as_str(),
            r.name,
            r.worst,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let secs = start.elapsed().as_secs_f64();
    if failed > 0 {
        return Err(Failure::Run(format!("{failed} of {} components exceed their tolerance", reports.len())));
    }
    println!("all {} components pass ({secs:.1} s)", reports.len());
    Ok(())
}

pub fn cost(s: &Settings) -> Result<(), Failure> {
    print!("{}", s.header("cost", &keys(&[&["desk_scale"], NET_KEYS, FLAG_KEYS])));
    let cfg = s.network();
    cfg.validate()?;
    let this = cost_report(&cfg);
    let plain = cost_report(&cfg.plain_unet());
    println!("{:<28} {:>16} {:>20}", "", "params", "flops");
    println!("{:<28} {:>16} {:>20}", "this configuration", grouped(this.params), grouped(this.flops));
    println!("{:<28} {:>16} {:>20}", "plain U-Net (no attention)", grouped(plain.params), grouped(plain.flops));
    let ap = attention_params(&cfg);
    let overhead = attention_overhead(&cfg);
    println!("{:<28} {:>16}", "difference", grouped(this.params - plain.params));
    println!("{:<28} {:>16}", "  attention projections", grouped(ap));
    println!("{:<28} {:>16}", "  wider fusion convolutions", grouped(overhead - ap));
    println!("published reference figures for the full-size model (not a match target):");
    println!("{:<28} {:>16} {:>20}", "  reference", grouped(REFERENCE_PARAMS), grouped(REFERENCE_FLOPS));
    Ok(())
}
