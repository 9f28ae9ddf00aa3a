//! Image records and the manifest CSV
//! (`image_id,fragment_id,dataset,class_key,view,path`).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::raster::RgbImage;
use crate::error::{Error, Result};

/// Class keys of the CCD-camera dataset, in head-index order.
pub const DATASET_A_KEYS: [&str; 6] = ["WW", "CAR", "CAR2", "STR", "BRU", "CYS"];
/// Class keys of the endoscopic dataset, in head-index order.
pub const DATASET_B_KEYS: [&str; 6] = ["WW", "WD", "AU", "STR", "BRU", "CYS"];
/// Size of the generic texture task used for backbone pretraining.
pub const GENERIC_CLASSES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    A,
    B,
    /// Many-class texture task for stage-0 pretraining, keys `G00`, `G01`, ...
    Generic,
}

impl DatasetTag {
    pub fn class_keys(self) -> Vec<String> {
        let keys: &[&str] = match self {
            DatasetTag::A => &DATASET_A_KEYS,
            DatasetTag::B => &DATASET_B_KEYS,
            DatasetTag::Generic => return (0..GENERIC_CLASSES).map(|i| format!("G{i:02}")).collect(),
        };
        keys.iter().map(|k| k.to_string()).collect()
    }

    pub fn class_index(self, key: &str) -> Option<usize> {
        self.class_keys().iter().position(|k| k == key)
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::A => "A",
            DatasetTag::B => "B",
            DatasetTag::Generic => "generic",
        })
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(DatasetTag::A),
            "B" | "b" => Ok(DatasetTag::B),
            "generic" => Ok(DatasetTag::Generic),
            other => Err(Error::Data(format!("unknown dataset tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Surface,
    Section,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::Surface => "surface",
            View::Section => "section",
        })
    }
}

impl FromStr for View {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" | "SUR" => Ok(View::Surface),
            "section" | "SEC" => Ok(View::Section),
            other => Err(Error::Data(format!("unknown view {other:?}"))),
        }
    }
}

/// Which views a patch set contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Surface,
    Section,
    Mixed,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Surface, Subset::Section, Subset::Mixed];

    pub fn contains(self, view: View) -> bool {
        matches!(
            (self, view),
            (Subset::Mixed, _) | (Subset::Surface, View::Surface) | (Subset::Section, View::Section)
        )
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Surface => "surface",
            Subset::Section => "section",
            Subset::Mixed => "mixed",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(Subset::Surface),
            "section" => Ok(Subset::Section),
            "mixed" => Ok(Subset::Mixed),
            other => Err(Error::Usage(format!("unknown subset {other:?} (surface|section|mixed)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub fragment_id: String,
    pub dataset: DatasetTag,
    pub class_key: String,
    pub view: View,
    pub path: PathBuf,
    pub pixels: RgbImage,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    image_id: String,
    fragment_id: String,
    dataset: String,
    class_key: String,
    view: String,
    path: String,
}

/// Per-class, per-view image counts of a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestAudit {
    pub counts: BTreeMap<String, BTreeMap<View, usize>>,
}

impl ManifestAudit {
    pub fn of(records: &[ImageRecord]) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<View, usize>> = BTreeMap::new();
        for r in records {
            *counts.entry(r.class_key.clone()).or_default().entry(r.view).or_default() += 1;
        }
        Self { counts }
    }

    pub fn count(&self, class_key: &str, view: View) -> usize {
        self.counts.get(class_key).and_then(|m| m.get(&view)).copied().unwrap_or(0)
    }

    pub fn view_total(&self, view: View) -> usize {
        self.counts.values().filter_map(|m| m.get(&view)).sum()
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|m| m.values()).sum()
    }
}

/// Loads and validates a manifest. Raster paths are resolved relative to
/// the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ImageRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut fragment_class: BTreeMap<String, String> = BTreeMap::new();
    let mut cache: BTreeMap<PathBuf, RgbImage> = BTreeMap::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Data(format!("manifest row {line}: {e}")))?;
        let dataset: DatasetTag = row.dataset.parse().map_err(|e| Error::Data(format!("manifest row {line}: {e}")))?;
        if dataset.class_index(&row.class_key).is_none() {
            return Err(Error::Data(format!(
                "manifest row {line}: class key {:?} not in dataset {dataset} key set {:?}",
                row.class_key,
                dataset.class_keys()
            )));
        }
        if row.fragment_id.is_empty() {
            return Err(Error::Data(format!("manifest row {line}: empty fragment_id")));
        }
        if !seen.insert(row.image_id.clone()) {
            return Err(Error::Data(format!("manifest row {line}: duplicate image_id {:?}", row.image_id)));
        }
        if let Some(prev) = fragment_class.insert(row.fragment_id.clone(), row.class_key.clone()) {
            if prev != row.class_key {
                return Err(Error::Data(format!(
                    "manifest row {line}: fragment {:?} labeled both {prev} and {}",
                    row.fragment_id, row.class_key
                )));
            }
        }
        let view: View = row.view.parse().map_err(|e| Error::Data(format!("manifest row {line}: {e}")))?;
        let raster_path = base.join(&row.path);
        let pixels = match cache.get(&raster_path) {
            Some(img) => img.clone(),
            None => {
                let img = RgbImage::read_ppm(&raster_path)
                    .map_err(|e| Error::Data(format!("manifest row {line}: unreadable raster: {e}")))?;
                cache.insert(raster_path.clone(), img.clone());
                img
            }
        };
        records.push(ImageRecord {
            image_id: row.image_id,
            fragment_id: row.fragment_id,
            dataset,
            class_key: row.class_key,
            view,
            path: PathBuf::from(row.path),
            pixels,
        });
    }
    Ok(records)
}

/// Writes the manifest CSV; rasters are expected at `dir/record.path`.
pub fn write_manifest(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in records {
        w.serialize(ManifestRow {
            image_id: r.image_id.clone(),
            fragment_id: r.fragment_id.clone(),
            dataset: r.dataset.to_string(),
            class_key: r.class_key.clone(),
            view: r.view.to_string(),
            path: r.path.to_string_lossy().into_owned(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        RgbImage::filled(4, 4, [1, 2, 3]).write_ppm(&dir.join("img.ppm")).unwrap();
        let p = dir.join("manifest.csv");
        std::fs::write(&p, format!("image_id,fragment_id,dataset,class_key,view,path\n{body}")).unwrap();
        p
    }

    #[test]
    fn empty_manifest_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_manifest(&write(dir.path(), "")).unwrap().is_empty());
    }

    #[test]
    fn rejects_unknown_class_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "i1,f1,B,CAR,surface,img.ppm\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("CAR"), "{err}");
    }

    #[test]
    fn rejects_duplicate_image_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "i1,f1,A,WW,surface,img.ppm\ni1,f2,A,WW,section,img.ppm\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("duplicate"), "{err}");
    }

    #[test]
    fn rejects_unreadable_raster() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "i1,f1,A,WW,surface,missing.ppm\n");
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("unreadable"), "{err}");
    }

    #[test]
    fn rejects_fragment_with_two_classes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "i1,f1,A,WW,surface,img.ppm\ni2,f1,A,CYS,surface,img.ppm\n");
        assert!(load_manifest(&p).is_err());
    }
}
