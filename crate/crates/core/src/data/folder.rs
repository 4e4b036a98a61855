use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::SegSample;
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::tensor::Tensor;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes any supported image to `[H, W, 3]` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| load_err(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| b as f32 / 255.0)
        .collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Decodes a mask and binarizes it at 0.5.
fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| load_err(path, e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|b| if b as f32 / 255.0 >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![h as usize, w as usize], data)
}

fn pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| load_err(dir, e.to_string()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs `images_dir/<stem>.png` with `masks_dir/<stem>.png`, sorted by
/// file name.
pub fn load_folder(images_dir: &Path, masks_dir: &Path) -> Result<Vec<SegSample>> {
    let mut samples = Vec::new();
    for img_path in pngs(images_dir)? {
        let stem = img_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| load_err(&img_path, "file name is not valid UTF-8"))?
            .to_string();
        let mask_path = masks_dir.join(format!("{stem}.png"));
        if !mask_path.is_file() {
            return Err(load_err(
                &img_path,
                format!("no mask {}", mask_path.display()),
            ));
        }
        let image = load_image(&img_path)?;
        let mask = load_mask(&mask_path)?;
        if image.shape()[..2] != mask.shape()[..] {
            return Err(load_err(
                &mask_path,
                format!(
                    "mask is {:?} but image is {:?}",
                    mask.shape(),
                    &image.shape()[..2]
                ),
            ));
        }
        samples.push(SegSample {
            id: stem,
            image,
            mask,
        });
    }
    Ok(samples)
}

/// [`load_folder`] on `<root>/images` and `<root>/masks`.
pub fn load_root(root: &Path) -> Result<Vec<SegSample>> {
    load_folder(&root.join(IMAGES_DIR), &root.join(MASKS_DIR))
}

pub fn save_image_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = (image.shape()[0] as u32, image.shape()[1] as u32);
    let raw = image.data().iter().map(|&v| to_u8(v)).collect();
    let img = RgbImage::from_raw(w, h, raw).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Writes a binary map as an 8-bit `{0, 255}` PNG.
pub fn save_mask_png(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let (h, w) = (mask.shape()[0] as u32, mask.shape()[1] as u32);
    let raw = mask
        .data()
        .iter()
        .map(|&v| if v >= 0.5 { 255 } else { 0 })
        .collect();
    let img = GrayImage::from_raw(w, h, raw).expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Writes `<root>/images/<id>.png`, `<root>/masks/<id>.png` and, when
/// given, a key=value record of the generating config.
pub fn write_dataset(root: &Path, samples: &[SegSample], record: Option<&KvMap>) -> Result<()> {
    let (images, masks) = (root.join(IMAGES_DIR), root.join(MASKS_DIR));
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for s in samples {
        save_image_png(&images.join(format!("{}.png", s.id)), &s.image)?;
        save_mask_png(&masks.join(format!("{}.png", s.id)), &s.mask)?;
    }
    if let Some(kv) = record {
        fs::write(root.join(super::GEN_CONFIG_FILE), kv.to_text())?;
    }
    Ok(())
}
