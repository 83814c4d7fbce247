//! On-disk volume layout:
//!
//! ```text
//! <volume>/images/0000.png   8-bit grayscale, value / 255
//! <volume>/masks/0000.png    8-bit grayscale, > 127 is foreground
//! <volume>/regions.txt       one region tag per line, index-aligned
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, ImageReader, RgbImage};

use super::phantom::PhantomVolume;
use crate::error::{Error, Result};
use crate::metrics::{BinaryMask, Region};

pub const MASK_THRESHOLD: u8 = 127;

fn slice_name(i: usize) -> String {
    format!("{i:04}.png")
}

pub fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("images").join(slice_name(i))
}

pub fn mask_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("masks").join(slice_name(i))
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray_png(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::Dimension(format!("{}: pixel buffer does not match {h}×{w}", path.display())))?;
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// `pixels` holds `h·w` RGB triples, row-major.
pub fn write_rgb_png(path: &Path, h: usize, w: usize, pixels: Vec<u8>) -> Result<()> {
    let img = RgbImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::Dimension(format!("{}: pixel buffer does not match {h}×{w}×3", path.display())))?;
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

pub fn save_volume(vol: &PhantomVolume, dir: &Path) -> Result<()> {
    vol.validate()?;
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::file(&d, e))?;
    }
    let (h, w) = (vol.height, vol.width);
    for (i, (img, mask)) in vol.images.iter().zip(&vol.masks).enumerate() {
        write_gray_png(&image_path(dir, i), h, w, img.iter().map(|&v| to_u8(v)).collect())?;
        write_gray_png(&mask_path(dir, i), h, w, mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect())?;
    }
    let tags: String = vol.regions.iter().map(|r| format!("{r}\n")).collect();
    let p = dir.join("regions.txt");
    fs::write(&p, tags).map_err(|e| Error::file(&p, e))
}

/// Reads an 8-bit grayscale PNG; anything else is a format error.
pub fn read_gray_png(path: &Path, index: usize) -> Result<(usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingSlice { index, path: path.to_path_buf() });
    }
    let img = ImageReader::open(path)
        .map_err(|e| Error::file(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    if img.color() != ColorType::L8 {
        return Err(Error::Format(format!(
            "{}: expected 8-bit grayscale, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((h, w, img.into_luma8().into_raw()))
}

pub fn load_slice_dir(dir: &Path) -> Result<PhantomVolume> {
    let manifest = dir.join("regions.txt");
    let text = fs::read_to_string(&manifest).map_err(|e| Error::file(&manifest, e))?;
    let regions = text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().parse()).collect::<Result<Vec<Region>>>()?;
    if regions.is_empty() {
        return Err(Error::Format(format!("{}: no slices listed", manifest.display())));
    }
    let mut images = Vec::with_capacity(regions.len());
    let mut masks = Vec::with_capacity(regions.len());
    let mut size = None;
    for i in 0..regions.len() {
        let (h, w, px) = read_gray_png(&image_path(dir, i), i)?;
        let (mh, mw, mpx) = read_gray_png(&mask_path(dir, i), i)?;
        if (h, w) != (mh, mw) || size.is_some_and(|s| s != (h, w)) {
            return Err(Error::Dimension(format!("slice {i} in {}: image {h}×{w}, mask {mh}×{mw}", dir.display())));
        }
        size = Some((h, w));
        images.push(px.iter().map(|&v| v as f32 / 255.0).collect());
        masks.push(BinaryMask::new(h, w, mpx.iter().map(|&v| v > MASK_THRESHOLD).collect())?);
    }
    let (height, width) = size.expect("at least one slice");
    Ok(PhantomVolume { height, width, images, masks, regions })
}

/// Volume directories directly under `root`, sorted by name.
pub fn list_volumes(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::file(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("regions.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Format(format!("{}: no volume directories with regions.txt", root.display())));
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::generate_phantom;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = generate_phantom(4, 10, (32, 24)).unwrap();
        save_volume(&v, dir.path()).unwrap();
        let back = load_slice_dir(dir.path()).unwrap();
        assert_eq!(back.masks, v.masks);
        assert_eq!(back.regions, v.regions);
        for (a, b) in v.images.iter().flatten().zip(back.images.iter().flatten()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn mask_threshold() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        write_gray_png(&image_path(dir.path(), 0), 1, 2, vec![0, 0]).unwrap();
        write_gray_png(&mask_path(dir.path(), 0), 1, 2, vec![200, 100]).unwrap();
        fs::write(dir.path().join("regions.txt"), "shaft\n").unwrap();
        let v = load_slice_dir(dir.path()).unwrap();
        assert_eq!(v.masks[0].data(), &[true, false]);
    }

    #[test]
    fn missing_mask_names_slice() {
        let dir = tempfile::tempdir().unwrap();
        let v = generate_phantom(4, 8, (32, 24)).unwrap();
        save_volume(&v, dir.path()).unwrap();
        fs::remove_file(mask_path(dir.path(), 3)).unwrap();
        let err = load_slice_dir(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingSlice { index: 3, .. }));
        assert!(err.to_string().contains("slice 3"), "{err}");
    }

    #[test]
    fn rgb_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::new(2, 2).save(&p).unwrap();
        assert!(matches!(read_gray_png(&p, 0), Err(Error::Format(_))));
    }
}
