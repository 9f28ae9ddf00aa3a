//! On-disk patch store: one PPM per patch plus `index.csv`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{DatasetTag, View};
use super::patch::Patch;
use super::raster::RgbImage;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    patch_id: String,
    image_id: String,
    fragment_id: String,
    x: usize,
    y: usize,
    class_key: String,
    view: View,
    dataset: DatasetTag,
}

fn raster_name(patch_id: &str) -> String {
    format!("{}.ppm", patch_id.replace(['/', '\\'], "_"))
}

pub fn write_patch_store(dir: &Path, patches: &[Patch]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let index = dir.join(INDEX_FILE);
    let file = std::fs::File::create(&index).map_err(|e| Error::io(&index, e))?;
    let mut w = csv::Writer::from_writer(file);
    for p in patches {
        RgbImage::new(p.edge, p.edge, p.pixels.clone())?.write_ppm(&dir.join(raster_name(&p.patch_id)))?;
        w.serialize(IndexRow {
            patch_id: p.patch_id.clone(),
            image_id: p.image_id.clone(),
            fragment_id: p.fragment_id.clone(),
            x: p.x,
            y: p.y,
            class_key: p.class_key.clone(),
            view: p.view,
            dataset: p.dataset,
        })?;
    }
    w.flush().map_err(|e| Error::io(&index, e))
}

pub fn read_patch_store(dir: &Path) -> Result<Vec<Patch>> {
    let index = dir.join(INDEX_FILE);
    let file = std::fs::File::open(&index).map_err(|e| Error::io(&index, e))?;
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(file).deserialize::<IndexRow>() {
        let row = row?;
        let img = RgbImage::read_ppm(&dir.join(raster_name(&row.patch_id)))?;
        if img.width() != img.height() {
            return Err(Error::Data(format!("patch {} is not square", row.patch_id)));
        }
        out.push(Patch {
            patch_id: row.patch_id,
            image_id: row.image_id,
            fragment_id: row.fragment_id,
            dataset: row.dataset,
            class_key: row.class_key,
            view: row.view,
            x: row.x,
            y: row.y,
            edge: img.width(),
            pixels: img.pixels().to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Patch {
            patch_id: "img_y0_x4#aug1".into(),
            image_id: "img".into(),
            fragment_id: "f".into(),
            dataset: DatasetTag::B,
            class_key: "AU".into(),
            view: View::Section,
            x: 4,
            y: 0,
            edge: 3,
            pixels: (0..27).collect(),
        };
        write_patch_store(dir.path(), std::slice::from_ref(&p)).unwrap();
        assert_eq!(read_patch_store(dir.path()).unwrap(), vec![p]);
    }
}
