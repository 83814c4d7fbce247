//! Synthetic long-bone volumes.
//!
//! Each axial slice shows a soft-tissue body with one bone cross-section:
//! a dark cortical wall around bright marrow. Along the axis the section is
//! absent (above the bone), then bulbous with a second lobe (proximal),
//! then a near-constant ellipse (shaft), then widening into two condyles
//! (distal). The bone center drifts smoothly from slice to slice.
//!
//! All lengths are given at the 90×40 reference size and scale with the
//! requested raw size.

use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, Region};
use crate::rng::SplitMix64;

pub const MIN_SLICES: usize = 8;
pub const DEFAULT_RAW_SIZE: (usize, usize) = (90, 40);
const REF_SIZE: (f64, f64) = (90.0, 40.0);

/// What the ground-truth mask covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStyle {
    /// The whole bone cross-section, wall and marrow.
    Filled,
    /// The cortical wall only.
    Annulus,
}

impl std::str::FromStr for MaskStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filled" => Ok(MaskStyle::Filled),
            "annulus" => Ok(MaskStyle::Annulus),
            _ => Err(Error::Config(format!("unknown mask style {s:?} (expected filled or annulus)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub n_slices: usize,
    /// `(height, width)` of the generated slices.
    pub raw_size: (usize, usize),
    /// Fractions for above-structure, proximal and distal; the shaft takes
    /// the remainder.
    pub above_fraction: f64,
    pub proximal_fraction: f64,
    pub distal_fraction: f64,
    pub noise_sigma: f64,
    pub mask_style: MaskStyle,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_slices: 40,
            raw_size: DEFAULT_RAW_SIZE,
            above_fraction: 0.10,
            proximal_fraction: 0.25,
            distal_fraction: 0.25,
            noise_sigma: 0.05,
            mask_style: MaskStyle::Annulus,
        }
    }
}

impl PhantomConfig {
    /// Slice counts per region, top to bottom: above, proximal, shaft, distal.
    pub fn region_counts(&self) -> Result<[usize; 4]> {
        let n = self.n_slices;
        if n < MIN_SLICES {
            return Err(Error::Config(format!("a phantom needs at least {MIN_SLICES} slices, got {n}")));
        }
        let fr = [self.above_fraction, self.proximal_fraction, self.distal_fraction];
        if fr.iter().any(|f| !(0.0..1.0).contains(f)) || fr.iter().sum::<f64>() >= 1.0 {
            return Err(Error::Config(format!("region fractions {fr:?} must be in [0, 1) and sum below 1")));
        }
        let count = |f: f64| ((f * n as f64).round() as usize).max(1);
        let (above, prox, dist) = (count(fr[0]), count(fr[1]), count(fr[2]));
        if above + prox + dist >= n {
            return Err(Error::Config(format!("{n} slices leave no room for a shaft")));
        }
        Ok([above, prox, n - above - prox - dist, dist])
    }
}

/// One generated or loaded scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomVolume {
    pub height: usize,
    pub width: usize,
    /// Row-major slices with values in `[0, 1]`.
    pub images: Vec<Vec<f32>>,
    pub masks: Vec<BinaryMask>,
    pub regions: Vec<Region>,
}

impl PhantomVolume {
    pub fn n_slices(&self) -> usize {
        self.images.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.masks.len() != n || self.regions.len() != n {
            return Err(Error::Format(format!(
                "volume has {n} images, {} masks and {} region tags",
                self.masks.len(),
                self.regions.len()
            )));
        }
        for (i, (img, m)) in self.images.iter().zip(&self.masks).enumerate() {
            if img.len() != self.height * self.width || m.dims() != (self.height, self.width) {
                return Err(Error::Dimension(format!("slice {i} does not match volume size {}×{}", self.height, self.width)));
            }
        }
        Ok(())
    }

    pub fn region_counts(&self) -> Vec<(Region, usize)> {
        Region::ALL
            .into_iter()
            .map(|r| (r, self.regions.iter().filter(|&&g| g == r).count()))
            .filter(|&(_, c)| c > 0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    /// `< 1` inside.
    fn level(&self, y: f64, x: f64) -> f64 {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx
    }

    fn shrink(&self, t: f64) -> Self {
        Self { ry: (self.ry - t).max(0.5), rx: (self.rx - t).max(0.5), ..*self }
    }
}

/// Per-volume random shape parameters.
struct Anatomy {
    drift_amp: (f64, f64),
    drift_phase: (f64, f64),
    drift_freq: f64,
    shaft_r: (f64, f64),
    thickness: f64,
    head_gain: f64,
    lobe_side: f64,
    condyle_spread: f64,
    marrow: f64,
    muscle: f64,
    texture: [(f64, f64, f64, f64); 3],
}

impl Anatomy {
    fn sample(rng: &mut SplitMix64) -> Self {
        let mut u = |lo: f64, hi: f64| rng.uniform_range(lo, hi);
        Self {
            drift_amp: (u(1.0, 3.0), u(1.0, 3.0)),
            drift_phase: (u(0.0, std::f64::consts::TAU), u(0.0, std::f64::consts::TAU)),
            drift_freq: u(0.5, 1.5),
            shaft_r: (u(9.5, 12.0), u(5.5, 7.0)),
            thickness: u(2.0, 4.0),
            head_gain: u(0.5, 0.8),
            lobe_side: if u(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 },
            condyle_spread: u(4.5, 6.5),
            marrow: u(0.68, 0.8),
            muscle: u(0.35, 0.45),
            texture: [
                (u(0.05, 0.2), u(0.05, 0.2), u(0.0, std::f64::consts::TAU), u(0.02, 0.05)),
                (u(0.05, 0.2), u(0.05, 0.2), u(0.0, std::f64::consts::TAU), u(0.02, 0.05)),
                (u(0.2, 0.4), u(0.2, 0.4), u(0.0, std::f64::consts::TAU), u(0.01, 0.03)),
            ],
        }
    }

    /// Bone cross-section at axial position `s ∈ [0, 1]` (whole volume).
    fn section(&self, region: Region, t: f64, s: f64) -> Vec<Ellipse> {
        let (ry, rx) = self.shaft_r;
        let phase = std::f64::consts::TAU * self.drift_freq * s;
        let cy = REF_SIZE.0 / 2.0 + self.drift_amp.0 * (phase + self.drift_phase.0).sin();
        let cx = REF_SIZE.1 / 2.0 + self.drift_amp.1 * (phase + self.drift_phase.1).sin();
        match region {
            Region::AboveStructure | Region::Unspecified => Vec::new(),
            Region::Proximal => {
                // t = 0 at the top of the bone; the head shrinks toward the shaft
                let g = self.head_gain * (1.0 - t);
                let head = Ellipse { cy: cy - 4.0 * g, cx, ry: ry * (1.0 + g), rx: rx * (1.0 + g) };
                let mut out = vec![head];
                if t < 0.75 {
                    let k = 1.0 - t / 0.75;
                    out.push(Ellipse {
                        cy: cy + 3.0,
                        cx: cx + self.lobe_side * (rx + 2.0),
                        ry: 3.0 + 4.0 * k,
                        rx: 2.5 + 2.5 * k,
                    });
                }
                out
            }
            Region::Shaft => vec![Ellipse { cy, cx, ry: ry * (1.0 + 0.04 * (7.0 * s).sin()), rx }],
            Region::Distal => {
                // t = 0 at the shaft, condyles separate toward the bottom
                let sep = self.condyle_spread * t;
                let grow = 1.0 + 0.35 * t;
                let r = (ry * grow, rx * (1.0 + 0.2 * t));
                vec![
                    Ellipse { cy, cx: cx - sep, ry: r.0, rx: r.1 },
                    Ellipse { cy: cy + 1.5 * t, cx: cx + sep, ry: r.0 * 0.92, rx: r.1 },
                ]
            }
        }
    }
}

fn region_layout(cfg: &PhantomConfig) -> Result<Vec<(Region, f64)>> {
    let counts = cfg.region_counts()?;
    let regions = [Region::AboveStructure, Region::Proximal, Region::Shaft, Region::Distal];
    let mut out = Vec::with_capacity(cfg.n_slices);
    for (r, c) in regions.into_iter().zip(counts) {
        for i in 0..c {
            let t = if c > 1 { i as f64 / (c - 1) as f64 } else { 0.5 };
            out.push((r, t));
        }
    }
    Ok(out)
}

/// Default geometry with the given slice count and size.
pub fn generate_phantom(seed: u64, n_slices: usize, raw_size: (usize, usize)) -> Result<PhantomVolume> {
    generate_phantom_with(seed, &PhantomConfig { n_slices, raw_size, ..PhantomConfig::default() })
}

pub fn generate_phantom_with(seed: u64, cfg: &PhantomConfig) -> Result<PhantomVolume> {
    let (h, w) = cfg.raw_size;
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("raw size {h}×{w} is too small (minimum 16×16)")));
    }
    let layout = region_layout(cfg)?;
    let mut rng = SplitMix64::keyed(seed, "phantom");
    let anatomy = Anatomy::sample(&mut rng);
    let (sy, sx) = (h as f64 / REF_SIZE.0, w as f64 / REF_SIZE.1);
    let body = Ellipse { cy: REF_SIZE.0 / 2.0, cx: REF_SIZE.1 / 2.0, ry: REF_SIZE.0 * 0.47, rx: REF_SIZE.1 * 0.47 };

    let n = cfg.n_slices;
    let mut images = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    for (k, &(region, t)) in layout.iter().enumerate() {
        let s = k as f64 / (n - 1) as f64;
        let outer = anatomy.section(region, t, s);
        let inner: Vec<Ellipse> = outer.iter().map(|e| e.shrink(anatomy.thickness)).collect();
        let shift = rng.uniform_range(-0.03, 0.03);
        let mut img = Vec::with_capacity(h * w);
        let mut mask = BinaryMask::empty(h, w);
        for py in 0..h {
            for px in 0..w {
                // pixel center in reference coordinates
                let y = (py as f64 + 0.5) / sy;
                let x = (px as f64 + 0.5) / sx;
                let in_outer = outer.iter().any(|e| e.level(y, x) < 1.0);
                let in_inner = inner.iter().any(|e| e.level(y, x) < 1.0);
                let texture: f64 = anatomy
                    .texture
                    .iter()
                    .map(|&(fy, fx, ph, a)| a * (fy * y + fx * x + ph + 3.0 * s).sin())
                    .sum();
                let v = if in_inner {
                    // marrow brightens toward the bone center
                    let depth = inner.iter().map(|e| 1.0 - e.level(y, x)).fold(0.0, f64::max);
                    anatomy.marrow + 0.08 * depth
                } else if in_outer {
                    0.12
                } else if body.level(y, x) < 1.0 {
                    anatomy.muscle + texture - 0.06 * (y / REF_SIZE.0)
                } else {
                    0.04 + 0.3 * texture.abs()
                };
                let v = v + shift + cfg.noise_sigma * rng.gaussian();
                img.push(v.clamp(0.0, 1.0) as f32);
                let on = match cfg.mask_style {
                    MaskStyle::Filled => in_outer,
                    MaskStyle::Annulus => in_outer && !in_inner,
                };
                if on {
                    mask.set(py, px, true);
                }
            }
        }
        images.push(img);
        masks.push(mask);
        regions.push(region);
    }
    let vol = PhantomVolume { height: h, width: w, images, masks, regions };
    for (i, (m, r)) in vol.masks.iter().zip(&vol.regions).enumerate() {
        if *r != Region::AboveStructure && m.count() < 20 {
            return Err(Error::Config(format!(
                "raw size {h}×{w} is too small: slice {i} has only {} bone pixels",
                m.count()
            )));
        }
    }
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = generate_phantom(11, 20, DEFAULT_RAW_SIZE).unwrap();
        let b = generate_phantom(11, 20, DEFAULT_RAW_SIZE).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(12, 20, DEFAULT_RAW_SIZE).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn regions_are_contiguous_in_order() {
        let v = generate_phantom(1, 40, DEFAULT_RAW_SIZE).unwrap();
        let counts = PhantomConfig::default().region_counts().unwrap();
        assert_eq!(counts, [4, 10, 16, 10]);
        let mut order: Vec<Region> = v.regions.clone();
        order.dedup();
        assert_eq!(order, vec![Region::AboveStructure, Region::Proximal, Region::Shaft, Region::Distal]);
    }

    #[test]
    fn masks_follow_regions() {
        for style in [MaskStyle::Filled, MaskStyle::Annulus] {
            let cfg = PhantomConfig { mask_style: style, ..PhantomConfig::default() };
            let v = generate_phantom_with(5, &cfg).unwrap();
            for (m, r) in v.masks.iter().zip(&v.regions) {
                if *r == Region::AboveStructure {
                    assert!(m.is_empty());
                } else {
                    assert!(m.count() >= 20, "{style:?} {r}: {}", m.count());
                }
            }
        }
    }

    #[test]
    fn images_in_unit_range() {
        let v = generate_phantom(2, 12, DEFAULT_RAW_SIZE).unwrap();
        assert!(v.images.iter().flatten().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn too_few_slices_is_config_error() {
        assert!(matches!(generate_phantom(0, 7, DEFAULT_RAW_SIZE), Err(Error::Config(_))));
    }

    #[test]
    fn full_scale_size_works() {
        let v = generate_phantom(3, 8, (360, 160)).unwrap();
        assert_eq!((v.height, v.width), (360, 160));
        v.validate().unwrap();
    }
}
