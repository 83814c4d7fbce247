//! Metrics against brute-force reimplementations.

use xseg::metrics::{hd95, iou_score, mask_dice, BinaryMask};
use xseg::SplitMix64;

fn random_mask(rng: &mut SplitMix64, h: usize, w: usize, density: f64) -> BinaryMask {
    let bits: Vec<bool> = (0..h * w).map(|_| rng.uniform() < density).collect();
    BinaryMask::new(h, w, bits).unwrap()
}

/// Foreground pixels with a 4-neighbour outside the mask or the image.
fn brute_boundary(m: &BinaryMask) -> Vec<(i64, i64)> {
    let (h, w) = m.dims();
    let inside = |y: i64, x: i64| y >= 0 && x >= 0 && y < h as i64 && x < w as i64 && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if inside(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !inside(y + dy, x + dx)) {
                out.push((y, x));
            }
        }
    }
    out
}

fn brute_directed(from: &[(i64, i64)], to: &[(i64, i64)]) -> Vec<f64> {
    from.iter()
        .map(|&(y, x)| to.iter().map(|&(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt()).fold(f64::INFINITY, f64::min))
        .collect()
}

fn brute_hd95(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (ba, bb) = (brute_boundary(a), brute_boundary(b));
    if ba.is_empty() || bb.is_empty() {
        return f64::NAN;
    }
    let mut d = brute_directed(&ba, &bb);
    d.extend(brute_directed(&bb, &ba));
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    d[lo] + (pos - lo as f64) * (d[hi] - d[lo])
}

#[test]
fn hd95_matches_all_pairs_oracle() {
    let mut rng = SplitMix64::new(2024);
    let mut cases = 0;
    let mut defined = 0;
    for _ in 0..600 {
        let h = 1 + rng.below(16);
        let w = 1 + rng.below(16);
        let da = rng.uniform_range(0.02, 0.9);
        let db = rng.uniform_range(0.02, 0.9);
        let a = random_mask(&mut rng, h, w, da);
        let b = random_mask(&mut rng, h, w, db);
        let got = hd95(&a, &b).unwrap();
        let want = brute_hd95(&a, &b);
        if want.is_nan() {
            assert!(got.is_nan(), "{h}×{w}: expected NaN, got {got}");
        } else {
            assert_eq!(got, want, "{h}×{w}\n{a:?}\n{b:?}");
            defined += 1;
        }
        cases += 1;
    }
    assert!(cases >= 500);
    assert!(defined >= 400, "too few defined cases: {defined}");
}

#[test]
fn hd95_is_symmetric() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..200 {
        let a = random_mask(&mut rng, 12, 9, 0.4);
        let b = random_mask(&mut rng, 12, 9, 0.3);
        let (x, y) = (hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
        assert!(x == y || (x.is_nan() && y.is_nan()));
    }
}

#[test]
fn shifted_square_is_one_pixel() {
    let a = BinaryMask::from_fn(16, 16, |y, x| (4..10).contains(&y) && (4..10).contains(&x));
    let b = BinaryMask::from_fn(16, 16, |y, x| (4..10).contains(&y) && (5..11).contains(&x));
    assert_eq!(hd95(&a, &b).unwrap(), 1.0);
    assert_eq!(brute_hd95(&a, &b), 1.0);
}

#[test]
fn dice_iou_identity_within_smoothing() {
    // with |A|+|B| = n, I = iou and D₀ = 2I/(1+I) exactly; the ε = 1
    // smoothing moves D by at most 1/(n + 1)
    let mut rng = SplitMix64::new(77);
    for _ in 0..500 {
        let h = 2 + rng.below(15);
        let w = 2 + rng.below(15);
        let (da, db) = (rng.uniform(), rng.uniform());
        let a = random_mask(&mut rng, h, w, da);
        let b = random_mask(&mut rng, h, w, db);
        let d = mask_dice(&a, &b).unwrap();
        let i = iou_score(&a, &b).unwrap();
        let n = (a.count() + b.count()) as f64;
        let unsmoothed = 2.0 * i / (1.0 + i);
        assert!((d - unsmoothed).abs() <= 1.0 / (n + 1.0) + 1e-12, "d {d} i {i} n {n}");
    }
}

#[test]
fn empty_masks() {
    let e = BinaryMask::empty(8, 8);
    let full = BinaryMask::from_fn(8, 8, |_, _| true);
    assert_eq!(mask_dice(&e, &e).unwrap(), 1.0);
    assert_eq!(iou_score(&e, &e).unwrap(), 1.0);
    assert!(hd95(&e, &full).unwrap().is_nan());
    assert_eq!(iou_score(&e, &full).unwrap(), 0.0);
    assert!((mask_dice(&e, &full).unwrap() - 1.0 / 65.0).abs() < 1e-15);
}
