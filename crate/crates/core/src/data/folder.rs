use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb};

use super::{default_class_names, Dataset, DatasetManifest, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const IMG_SUFFIX: &str = "_img.png";
const MASK_SUFFIX: &str = "_mask.png";

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), source }
}

/// Writes `<id>_img.png` (16-bit gray or RGB) and `<id>_mask.png` (8-bit) per
/// sample, plus the manifest.
pub fn save_folder(ds: &Dataset, dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in &ds.samples {
        let (c, h, w) = (s.channels(), s.height() as u32, s.width() as u32);
        let plane = s.height() * s.width();
        let px = |ch: usize, i: usize| (s.image.data()[ch * plane + i].clamp(0.0, 1.0) * 65535.0).round() as u16;
        let img_path = dir.join(format!("{}{IMG_SUFFIX}", s.id));
        let img = match c {
            1 => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_fn(w, h, |x, y| {
                Luma([px(0, (y * w + x) as usize)])
            })),
            3 => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_fn(w, h, |x, y| {
                let i = (y * w + x) as usize;
                Rgb([px(0, i), px(1, i), px(2, i)])
            })),
            _ => return Err(Error::Data(format!("sample {}: PNG export supports 1 or 3 channels, not {c}", s.id))),
        };
        img.save(&img_path).map_err(|e| image_err(&img_path, e))?;
        let mask_path = dir.join(format!("{}{MASK_SUFFIX}", s.id));
        GrayImage::from_raw(w, h, s.label.clone())
            .expect("label length checked by Dataset")
            .save(&mask_path)
            .map_err(|e| image_err(&mask_path, e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

fn read_image(path: &Path, id: &str) -> Result<Tensor<f64>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u16>) = match img.color().channel_count() {
        1 | 2 => (1, img.into_luma16().into_raw()),
        _ => (3, img.into_rgb16().into_raw()),
    };
    // interleaved to channel-major
    let mut data = vec![0.0; channels * h * w];
    for (i, &v) in raw.iter().enumerate() {
        data[(i % channels) * h * w + i / channels] = v as f64 / 65535.0;
    }
    Tensor::new(vec![channels, h, w], data).map_err(|e| Error::Data(format!("sample {id}: {e}")))
}

/// Loads every `<id>_img.png` / `<id>_mask.png` pair in lexicographic id
/// order. Spacing and class names come from the manifest when present.
pub fn load_folder(dir: &Path, num_classes: usize) -> Result<Dataset> {
    let mut pairs: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
        if let Some(id) = name.strip_suffix(IMG_SUFFIX) {
            pairs.entry(id.to_string()).or_default().0 = Some(path);
        } else if let Some(id) = name.strip_suffix(MASK_SUFFIX) {
            pairs.entry(id.to_string()).or_default().1 = Some(path);
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Option<DatasetManifest> = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let class_names = match &manifest {
        Some(m) if m.class_names.len() == num_classes => m.class_names.clone(),
        _ => default_class_names(num_classes),
    };
    let spacing = manifest.as_ref().and_then(|m| m.spacing);
    let mut samples = Vec::with_capacity(pairs.len());
    for (id, (img, mask)) in pairs {
        let (img, mask) = match (img, mask) {
            (Some(i), Some(m)) => (i, m),
            (None, _) => return Err(Error::Data(format!("sample {id}: missing {id}{IMG_SUFFIX}"))),
            (_, None) => return Err(Error::Data(format!("sample {id}: missing {id}{MASK_SUFFIX}"))),
        };
        let image = read_image(&img, &id)?;
        let m = image::open(&mask).map_err(|e| image_err(&mask, e))?.into_luma8();
        if (m.height() as usize, m.width() as usize) != (image.shape()[1], image.shape()[2]) {
            return Err(Error::Data(format!(
                "sample {id}: mask is {}x{}, image is {}x{}",
                m.height(),
                m.width(),
                image.shape()[1],
                image.shape()[2]
            )));
        }
        let sample = Sample { id, image, label: m.into_raw(), spacing };
        sample.validate(num_classes)?;
        samples.push(sample);
    }
    Dataset::new(num_classes, class_names, samples)
}
