//! Dataset manifests, unpaired per-group sampling and augmentation.
//!
//! Expected on-disk layout, with `k = 0..G-1`:
//!
//! ```text
//! <root>/group<k>/real/*.png|jpg
//! <root>/group<k>/cartoon/*.png|jpg
//! ```
//!
//! Images are expected pre-cropped to faces; alignment and segmentation are
//! out of scope here.

pub mod synth;

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::model::{Domain, GroupId};

#[derive(Clone, Debug)]
pub struct GroupEntry {
    pub id: GroupId,
    pub real: Vec<PathBuf>,
    pub cartoon: Vec<PathBuf>,
}

impl GroupEntry {
    pub fn paths(&self, domain: Domain) -> &[PathBuf] {
        match domain {
            Domain::Real => &self.real,
            Domain::Cartoon => &self.cartoon,
        }
    }
}

/// Validated per-group, per-domain unpaired image lists.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub groups: Vec<GroupEntry>,
}

impl DatasetManifest {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, id: GroupId) -> Result<&GroupEntry> {
        self.groups
            .get(id.0)
            .ok_or(Error::UnknownGroup(id.0))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub resize: usize,
    pub crop: usize,
    pub horizontal_flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            resize: 286,
            crop: 256,
            horizontal_flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop > self.resize {
            return Err(Error::Config(format!(
                "crop {} exceeds resize {}",
                self.crop, self.resize
            )));
        }
        Ok(())
    }
}

/// One unpaired sample per (group, domain) pair.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub items: Vec<BatchItem>,
}

#[derive(Clone, Debug)]
pub struct BatchItem {
    pub group: GroupId,
    pub real: Array,
    pub cartoon: Array,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            message: "missing domain directory".into(),
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_lowercase),
                Some(ref ext) if ext == "png" || ext == "jpg" || ext == "jpeg"
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            message: "no images in directory".into(),
        });
    }
    for f in &files {
        image::image_dimensions(f).map_err(|e| Error::Dataset {
            path: f.clone(),
            message: format!("unreadable image: {e}"),
        })?;
    }
    Ok(files)
}

/// Scans `root` for the `group<k>/{real,cartoon}` layout and validates it.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut groups = Vec::new();
    for k in 0.. {
        let gdir = root.join(format!("group{k}"));
        if !gdir.is_dir() {
            break;
        }
        groups.push(GroupEntry {
            id: GroupId(k),
            real: list_images(&gdir.join("real"))?,
            cartoon: list_images(&gdir.join("cartoon"))?,
        });
    }
    if groups.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            message: "no group directories found".into(),
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        groups,
    })
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        other => Err(Error::Dataset {
            path: path.to_path_buf(),
            message: format!("expected RGB image, got {:?}", other.color()),
        }),
    }
}

/// Index draws for one batch: per active group, independent uniform indices
/// for the real and cartoon pools (unpaired sampling).
pub fn sample_indices(
    manifest: &DatasetManifest,
    rng: &mut impl Rng,
    active_groups: &[GroupId],
) -> Result<Vec<(GroupId, usize, usize)>> {
    let mut out = Vec::with_capacity(active_groups.len());
    for g in active_groups {
        let entry = manifest.group(*g)?;
        let ri = rng.gen_range(0..entry.real.len());
        let ci = rng.gen_range(0..entry.cartoon.len());
        out.push((*g, ri, ci));
    }
    Ok(out)
}

/// Samples, loads and augments one image per (group, domain) pair.
pub fn sample_batch(
    manifest: &DatasetManifest,
    rng: &mut impl Rng,
    active_groups: &[GroupId],
    aug: &AugmentConfig,
) -> Result<TrainBatch> {
    let indices = sample_indices(manifest, rng, active_groups)?;
    let mut items = Vec::with_capacity(indices.len());
    for (g, ri, ci) in indices {
        let entry = manifest.group(g)?;
        let real = augment(&load_image(&entry.real[ri])?, aug, rng)?;
        let cartoon = augment(&load_image(&entry.cartoon[ci])?, aug, rng)?;
        items.push(BatchItem {
            group: g,
            real,
            cartoon,
        });
    }
    Ok(TrainBatch { items })
}

/// Resize -> random crop -> optional horizontal flip -> scale to [-1, 1].
pub fn augment(img: &RgbImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Array> {
    cfg.validate()?;
    let resized = image::imageops::resize(
        img,
        cfg.resize as u32,
        cfg.resize as u32,
        image::imageops::FilterType::Triangle,
    );
    let max_off = cfg.resize - cfg.crop;
    let ox = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
    let oy = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
    let flip = rng.gen_bool(cfg.horizontal_flip_prob);
    Ok(to_tensor_cropped(&resized, ox, oy, cfg.crop, flip))
}

/// Deterministic inference-time conversion: resize to `size` and scale to
/// [-1, 1]; no crop jitter, no flip.
pub fn image_to_tensor(img: &RgbImage, size: usize) -> Array {
    let resized = image::imageops::resize(
        img,
        size as u32,
        size as u32,
        image::imageops::FilterType::Triangle,
    );
    to_tensor_cropped(&resized, 0, 0, size, false)
}

fn to_tensor_cropped(img: &RgbImage, ox: usize, oy: usize, crop: usize, flip: bool) -> Array {
    let mut data = vec![0.0; 3 * crop * crop];
    for y in 0..crop {
        for x in 0..crop {
            let sx = if flip { ox + crop - 1 - x } else { ox + x };
            let p = img.get_pixel(sx as u32, (oy + y) as u32);
            for c in 0..3 {
                data[c * crop * crop + y * crop + x] = p.0[c] as f64 / 127.5 - 1.0;
            }
        }
    }
    Array::new(vec![3, crop, crop], data)
}

/// Converts a generator-range tensor in [-1, 1] back to an 8-bit RGB image.
pub fn tensor_to_image(a: &Array) -> RgbImage {
    let (c, h, w) = a.chw();
    assert_eq!(c, 3, "expected 3-channel tensor");
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([0, 1, 2].map(|ch| {
                let v = (a.data[ch * h * w + y * w + x] + 1.0) * 127.5;
                v.round().clamp(0.0, 255.0) as u8
            }));
            img.put_pixel(x as u32, y as u32, px);
        }
    }
    img
}
