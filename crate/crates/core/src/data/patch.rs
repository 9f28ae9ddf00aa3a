//! Grid patch extraction.

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetTag, ImageRecord, View};
use crate::error::{Error, Result};

/// Square crop of a source image; `pixels` is interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub patch_id: String,
    pub image_id: String,
    pub fragment_id: String,
    pub dataset: DatasetTag,
    pub class_key: String,
    pub view: View,
    pub x: usize,
    pub y: usize,
    pub edge: usize,
    #[serde(skip)]
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub patches: Vec<Patch>,
    pub warnings: Vec<String>,
}

/// Grid offsets `k·stride` with `k·stride + edge <= len`.
pub fn grid_positions(len: usize, edge: usize, max_overlap: usize) -> Vec<usize> {
    let stride = edge - max_overlap;
    (0..).map(|k| k * stride).take_while(|p| p + edge <= len).collect()
}

pub fn extract_patches(image: &ImageRecord, edge: usize, max_overlap: usize) -> Result<Extraction> {
    if edge == 0 || max_overlap >= edge {
        return Err(Error::Config(format!("patch edge {edge} must exceed max overlap {max_overlap}")));
    }
    let (w, h) = (image.pixels.width(), image.pixels.height());
    let mut out = Extraction::default();
    if w < edge || h < edge {
        out.warnings.push(format!(
            "image {} is {w}x{h}, smaller than patch edge {edge}; no patches",
            image.image_id
        ));
        return Ok(out);
    }
    for &y in &grid_positions(h, edge, max_overlap) {
        for &x in &grid_positions(w, edge, max_overlap) {
            out.patches.push(Patch {
                patch_id: format!("{}_y{y}_x{x}", image.image_id),
                image_id: image.image_id.clone(),
                fragment_id: image.fragment_id.clone(),
                dataset: image.dataset,
                class_key: image.class_key.clone(),
                view: image.view,
                x,
                y,
                edge,
                pixels: image.pixels.crop(x, y, edge),
            });
        }
    }
    Ok(out)
}

/// Extracts from every image; output ordered by (image_id, y, x).
pub fn extract_all(images: &[ImageRecord], edge: usize, max_overlap: usize) -> Result<Extraction> {
    let mut sorted: Vec<&ImageRecord> = images.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut out = Extraction::default();
    for img in sorted {
        let e = extract_patches(img, edge, max_overlap)?;
        out.patches.extend(e.patches);
        out.warnings.extend(e.warnings);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::raster::RgbImage;
    use std::path::PathBuf;

    pub(crate) fn image(w: usize, h: usize) -> ImageRecord {
        let pixels = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        ImageRecord {
            image_id: "img".into(),
            fragment_id: "frag".into(),
            dataset: DatasetTag::A,
            class_key: "WW".into(),
            view: View::Surface,
            path: PathBuf::from("img.ppm"),
            pixels: RgbImage::new(w, h, pixels).unwrap(),
        }
    }

    #[test]
    fn four_patches_from_512() {
        let e = extract_patches(&image(512, 512), 256, 20).unwrap();
        let offsets: Vec<_> = e.patches.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(offsets, vec![(0, 0), (236, 0), (0, 236), (236, 236)]);
    }

    #[test]
    fn exact_fit_is_one_patch() {
        assert_eq!(extract_patches(&image(256, 256), 256, 20).unwrap().patches.len(), 1);
    }

    #[test]
    fn boundary_491_is_one_patch() {
        assert_eq!(extract_patches(&image(491, 256), 256, 20).unwrap().patches.len(), 1);
        assert_eq!(extract_patches(&image(492, 256), 256, 20).unwrap().patches.len(), 2);
    }

    #[test]
    fn small_image_warns() {
        let e = extract_patches(&image(100, 300), 256, 20).unwrap();
        assert!(e.patches.is_empty());
        assert_eq!(e.warnings.len(), 1);
    }

    #[test]
    fn rejects_overlap_not_below_edge() {
        assert!(extract_patches(&image(64, 64), 32, 32).is_err());
    }

    #[test]
    fn patch_content_matches_source() {
        let img = image(70, 40);
        let e = extract_patches(&img, 32, 4).unwrap();
        let p = &e.patches[1];
        assert_eq!((p.x, p.y), (28, 0));
        assert_eq!(&p.pixels[..3], &img.pixels.pixel(28, 0));
        let last = p.pixels.len() - 3;
        assert_eq!(&p.pixels[last..], &img.pixels.pixel(28 + 31, 31));
    }
}
