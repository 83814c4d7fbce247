//! Per-slice evaluation metrics on binarized masks and their aggregation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::DICE_SMOOTH;
use crate::real::Real;
use crate::tensor::Tensor4;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const HD_PERCENTILE: f64 = 0.95;

/// Row-major `H×W` mask of zeros and ones.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Dimension(format!("mask data length {} for {h}×{w}", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![false; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..h * w).map(|k| f(k / w, k % w)).collect();
        Self { h, w, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn to_tensor<R: Real>(&self) -> Tensor4<R> {
        let data = self.data.iter().map(|&v| if v { R::one() } else { R::zero() }).collect();
        Tensor4::from_vec([1, 1, self.h, self.w], data).expect("mask dims")
    }

    fn require_same(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Dimension(format!(
                "{what}: masks of size {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Mask pixels with at least one unset 4-neighbour or lying on the image
    /// border.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let (h, w) = (self.h, self.w);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !self.get(y, x) {
                    continue;
                }
                let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
                if edge || !self.get(y - 1, x) || !self.get(y + 1, x) || !self.get(y, x - 1) || !self.get(y, x + 1) {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}×{}", self.h, self.w)?;
        for y in 0..self.h {
            let row: String = (0..self.w).map(|x| if self.get(y, x) { '#' } else { '.' }).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

/// Thresholds one plane: 1 where `value > threshold` (exactly 0.5 maps to 0).
pub fn binarize_plane<R: Real>(plane: &[R], h: usize, w: usize, threshold: f64) -> BinaryMask {
    assert_eq!(plane.len(), h * w);
    BinaryMask { h, w, data: plane.iter().map(|v| v.as_f64() > threshold).collect() }
}

/// Binarizes a single-plane `(1, 1, H, W)` tensor.
pub fn binarize<R: Real>(y_pred: &Tensor4<R>, threshold: f64) -> Result<BinaryMask> {
    let [b, c, h, w] = y_pred.dims();
    if b != 1 || c != 1 {
        return Err(Error::Dimension(format!("binarize expects (1, 1, H, W), got {:?}", y_pred.dims())));
    }
    Ok(binarize_plane(y_pred.data(), h, w, threshold))
}

/// One mask per batch item of a single-channel tensor.
pub fn binarize_batch<R: Real>(y_pred: &Tensor4<R>, threshold: f64) -> Result<Vec<BinaryMask>> {
    let [b, c, h, w] = y_pred.dims();
    if c != 1 {
        return Err(Error::Dimension(format!("binarize expects one channel, got {:?}", y_pred.dims())));
    }
    Ok((0..b).map(|i| binarize_plane(y_pred.plane(i, 0), h, w, threshold)).collect())
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

/// Smoothed Dice on binary masks, same formula as the training loss.
pub fn mask_dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.require_same(b, "dice")?;
    let (i, na, nb) = overlap(a, b);
    Ok((2.0 * i as f64 + DICE_SMOOTH) / ((na + nb) as f64 + DICE_SMOOTH))
}

/// `|a ∩ b| / |a ∪ b|`, with two empty masks scoring 1.
pub fn iou_score(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.require_same(b, "iou")?;
    let (i, na, nb) = overlap(a, b);
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Exact squared Euclidean distance transform of a 1-D sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        if f[v[0]].is_infinite() {
            v[0] = q;
            continue;
        }
        let parabola_cut = |p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
        let mut s = parabola_cut(v[k]);
        // z[0] = −∞ stops the walk at k = 0
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    if f[v[0]].is_infinite() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared distance from every pixel to the nearest listed site.
fn squared_distance_map(h: usize, w: usize, sites: &[(usize, usize)]) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; h * w];
    for &(y, x) in sites {
        grid[y * w + x] = 0.0;
    }
    let n = h.max(w);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; n];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        edt_1d(&col, &mut tmp[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = tmp[y];
        }
    }
    for y in 0..h {
        let row = grid[y * w..(y + 1) * w].to_vec();
        edt_1d(&row, &mut grid[y * w..(y + 1) * w], &mut v, &mut z);
    }
    grid
}

/// Linear interpolation between order statistics at `q · (n − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pooled nearest-boundary distances in both directions, unsorted.
pub fn boundary_distances(a: &BinaryMask, b: &BinaryMask) -> Result<Option<Vec<f64>>> {
    a.require_same(b, "hd95")?;
    let (ba, bb) = (a.boundary(), b.boundary());
    if ba.is_empty() || bb.is_empty() {
        return Ok(None);
    }
    let (h, w) = a.dims();
    let da = squared_distance_map(h, w, &ba);
    let db = squared_distance_map(h, w, &bb);
    let mut d: Vec<f64> = ba.iter().map(|&(y, x)| db[y * w + x].sqrt()).collect();
    d.extend(bb.iter().map(|&(y, x)| da[y * w + x].sqrt()));
    Ok(Some(d))
}

/// 95th-percentile symmetric Hausdorff distance in pixels; NaN when either
/// mask has no boundary.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(match boundary_distances(a, b)? {
        None => f64::NAN,
        Some(mut d) => {
            d.sort_by(f64::total_cmp);
            percentile(&d, HD_PERCENTILE)
        }
    })
}

/// Anatomical position of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    AboveStructure,
    Proximal,
    Shaft,
    Distal,
    Unspecified,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::AboveStructure, Region::Proximal, Region::Shaft, Region::Distal, Region::Unspecified];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::AboveStructure => "above-structure",
            Region::Proximal => "proximal",
            Region::Shaft => "shaft",
            Region::Distal => "distal",
            Region::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown region tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub slice_id: String,
    pub region: Region,
    pub dice: f64,
    pub iou: f64,
    pub hd95: f64,
}

impl MetricRecord {
    pub fn compute(slice_id: impl Into<String>, region: Region, truth: &BinaryMask, pred: &BinaryMask) -> Result<Self> {
        Ok(Self {
            slice_id: slice_id.into(),
            region,
            dice: mask_dice(truth, pred)?,
            iou: iou_score(truth, pred)?,
            hd95: hd95(truth, pred)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub dice: f64,
    pub iou: f64,
    /// Mean over slices with a finite value; NaN if there are none.
    pub hd95: f64,
    pub hd95_dropped: usize,
}

/// Means over the records matching `region` (all records for `None`).
pub fn aggregate(records: &[MetricRecord], region: Option<Region>) -> Result<Summary> {
    let sel: Vec<&MetricRecord> = records.iter().filter(|r| region.is_none_or(|g| r.region == g)).collect();
    if sel.is_empty() {
        let what = region.map_or("any region".to_string(), |r| r.to_string());
        return Err(Error::EmptySet(format!("no slices for {what}")));
    }
    let n = sel.len() as f64;
    let finite: Vec<f64> = sel.iter().map(|r| r.hd95).filter(|v| !v.is_nan()).collect();
    Ok(Summary {
        count: sel.len(),
        dice: sel.iter().map(|r| r.dice).sum::<f64>() / n,
        iou: sel.iter().map(|r| r.iou).sum::<f64>() / n,
        hd95: if finite.is_empty() { f64::NAN } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        hd95_dropped: sel.len() - finite.len(),
    })
}

/// Formats a value for CSV output, spelling NaN as `nan`.
pub fn csv_number(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub const RECORD_CSV_HEADER: &str = "slice_id,region,dice,iou,hd95";

pub fn records_to_csv(records: &[MetricRecord]) -> String {
    let mut s = format!("{RECORD_CSV_HEADER}\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.slice_id,
            r.region,
            csv_number(r.dice),
            csv_number(r.iou),
            csv_number(r.hd95)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |y, x| (y0..y0 + side).contains(&y) && (x0..x0 + side).contains(&x))
    }

    #[test]
    fn binarize_is_strict() {
        let t = Tensor4::from_vec([1, 1, 1, 4], vec![0.49f64, 0.5, 0.51, 1.0]).unwrap();
        assert_eq!(binarize(&t, 0.5).unwrap().data(), &[false, false, true, true]);
        let all = binarize(&Tensor4::full([1, 1, 3, 3], 0.7f32), 0.5).unwrap();
        assert_eq!(all.count(), 9);
    }

    #[test]
    fn iou_hand_values() {
        let e = BinaryMask::empty(4, 4);
        assert_eq!(iou_score(&e, &e).unwrap(), 1.0);
        let a = BinaryMask::from_fn(4, 4, |y, x| y == 0 && x < 4);
        let b = BinaryMask::from_fn(4, 4, |y, x| (y == 0 && x >= 2) || (y == 1 && x < 2));
        assert_eq!(iou_score(&a, &b).unwrap(), 2.0 / 6.0);
        assert_eq!(iou_score(&a, &a).unwrap(), 1.0);
        let c = BinaryMask::from_fn(4, 4, |y, _| y == 3);
        assert_eq!(iou_score(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn boundary_of_filled_square() {
        let m = square(8, 2, 2, 4);
        assert_eq!(m.boundary().len(), 12);
        // a fully-set image is all border
        assert_eq!(BinaryMask::from_fn(3, 3, |_, _| true).boundary().len(), 8);
    }

    #[test]
    fn hd95_shifted_square_is_one() {
        let a = square(16, 3, 3, 10);
        let b = square(16, 3, 4, 10);
        assert_eq!(hd95(&a, &b).unwrap(), 1.0);
        assert_eq!(hd95(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn hd95_empty_is_nan() {
        let a = square(8, 1, 1, 3);
        assert!(hd95(&a, &BinaryMask::empty(8, 8)).unwrap().is_nan());
        assert!(hd95(&BinaryMask::empty(8, 8), &a).unwrap().is_nan());
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert!((percentile(&[0.0, 10.0], 0.95) - 9.5).abs() < 1e-12);
        assert_eq!(percentile(&[4.0], 0.95), 4.0);
    }

    #[test]
    fn aggregate_nanmean() {
        let rec = |d: f64, h: f64| MetricRecord { slice_id: "s".into(), region: Region::Shaft, dice: d, iou: d, hd95: h };
        let rs = vec![rec(0.9, 1.0), rec(0.8, f64::NAN), rec(0.7, 3.0)];
        let s = aggregate(&rs, None).unwrap();
        assert_eq!((s.hd95, s.hd95_dropped, s.count), (2.0, 1, 3));
        assert!((aggregate(&rs[..2], None).unwrap().dice - 0.85).abs() < 1e-15);
        assert!(matches!(aggregate(&rs, Some(Region::Distal)), Err(Error::EmptySet(_))));
        let only_nan = aggregate(&rs[1..2], Some(Region::Shaft)).unwrap();
        assert!(only_nan.hd95.is_nan());
        assert_eq!(only_nan.hd95_dropped, 1);
    }

    #[test]
    fn region_tags_round_trip() {
        for r in Region::ALL {
            assert_eq!(r.as_str().parse::<Region>().unwrap(), r);
        }
        assert!("femur".parse::<Region>().is_err());
    }

    #[test]
    fn csv_spells_nan() {
        let r = MetricRecord { slice_id: "v0/0003".into(), region: Region::AboveStructure, dice: 1.0, iou: 1.0, hd95: f64::NAN };
        let s = records_to_csv(&[r]);
        assert_eq!(s.lines().nth(1).unwrap(), "v0/0003,above-structure,1.000000,1.000000,nan");
    }
}
