//! CAM attention panels: five side-by-side columns per input image, written
//! as one PNG each.

use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::autodiff::{Array, Tape};
use crate::data::tensor_to_image;
use crate::error::Result;
use crate::model::{Direction, GroupId};
use crate::train::Models;

/// Nearest-neighbor upsample of a `[1,h,w]` (or `[c,h,w]`, channel-averaged)
/// attention map to `size`x`size`, min-max normalized to 0..255 gray.
/// Constant maps become uniform mid-gray (128).
pub fn heatmap(map: &Array, size: usize) -> RgbImage {
    let (c, h, w) = map.chw();
    let mut plane = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in plane.iter_mut().zip(&map.data[ch * h * w..(ch + 1) * h * w]) {
            *o += v / c as f64;
        }
    }
    let min = plane.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let sy = y * h / size;
            let sx = x * w / size;
            let v = plane[sy * w + sx];
            let g = if max > min {
                ((v - min) / (max - min) * 255.0).round() as u8
            } else {
                128
            };
            img.put_pixel(x as u32, y as u32, image::Rgb([g, g, g]));
        }
    }
    img
}

fn paste(panel: &mut RgbImage, col: u32, img: &RgbImage) {
    let w = img.width();
    for (x, y, p) in img.enumerate_pixels() {
        panel.put_pixel(col * w + x, y, *p);
    }
}

/// For each input: translate forward and back through `group`, and write one
/// panel of five columns: source, forward attention, translation, backward
/// attention, reconstruction.
pub fn export_attention(
    models: &Models,
    images: &[Array],
    group: GroupId,
    dir: Direction,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    models.gen.check_group(group)?;
    std::fs::create_dir_all(out_dir)?;
    let size = models.arch.image_size;
    let mut written = Vec::with_capacity(images.len());
    for (idx, img) in images.iter().enumerate() {
        let mut t = Tape::new();
        let x = t.value(img.clone());
        let fwd = models
            .gen
            .translate(&models.store, &mut t, x, group, dir, false)?;
        let back = models.gen.translate(
            &models.store,
            &mut t,
            fwd.image,
            group,
            dir.reverse(),
            false,
        )?;
        let mut panel = RgbImage::new(5 * size as u32, size as u32);
        paste(&mut panel, 0, &tensor_to_image(img));
        paste(&mut panel, 1, &heatmap(&fwd.attention, size));
        paste(&mut panel, 2, &tensor_to_image(t.val(fwd.image)));
        paste(&mut panel, 3, &heatmap(&back.attention, size));
        paste(&mut panel, 4, &tensor_to_image(t.val(back.image)));
        let path = out_dir.join(format!("attention_{}_{idx:03}.png", dir.tag()));
        panel.save(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchConfig, SplitConfig};

    #[test]
    fn heatmap_extrema_and_degenerate_rule() {
        let map = Array::new(vec![1, 2, 2], vec![0.3, 0.7, 0.5, 0.6]);
        let img = heatmap(&map, 4);
        let vals: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
        assert_eq!(*vals.iter().min().unwrap(), 0);
        assert_eq!(*vals.iter().max().unwrap(), 255);

        let flat = Array::full(vec![1, 2, 2], 0.4);
        let img = heatmap(&flat, 4);
        assert!(img.pixels().all(|p| p.0 == [128, 128, 128]));
    }

    #[test]
    fn panel_has_five_columns_per_image() {
        let arch = ArchConfig::miniature(8);
        let models = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![Array::full(vec![3, 8, 8], 0.2), Array::zeros(vec![3, 8, 8])];
        let files = export_attention(
            &models,
            &imgs,
            GroupId(0),
            Direction::Real2Cartoon,
            dir.path(),
        )
        .unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let img = image::open(f).unwrap();
            assert_eq!(img.width(), 5 * 8);
            assert_eq!(img.height(), 8);
        }
    }

    #[test]
    fn unknown_group_is_rejected() {
        let arch = ArchConfig::miniature(8);
        let models = Models::build(&arch, &SplitConfig::default(), 1, 0.05, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let imgs = vec![Array::zeros(vec![3, 8, 8])];
        assert!(export_attention(
            &models,
            &imgs,
            GroupId(3),
            Direction::Real2Cartoon,
            dir.path(),
        )
        .is_err());
    }
}
