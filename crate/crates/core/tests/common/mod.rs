#![allow(dead_code)]

use std::path::PathBuf;

use stage_transfer::data::{load_manifest, DatasetTag, ImageRecord, RgbImage, View};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_a() -> Vec<ImageRecord> {
    load_manifest(&fixture("dataset_a.csv")).expect("fixture A loads")
}

pub fn fixture_b() -> Vec<ImageRecord> {
    load_manifest(&fixture("dataset_b.csv")).expect("fixture B loads")
}

/// One image of a given size filled with a deterministic pattern.
pub fn record(id: &str, edge: usize) -> ImageRecord {
    let pixels = (0..edge * edge * 3).map(|i| (i * 31 % 251) as u8).collect();
    ImageRecord {
        image_id: id.into(),
        fragment_id: format!("{id}-frag"),
        dataset: DatasetTag::A,
        class_key: "WW".into(),
        view: View::Surface,
        path: PathBuf::from(format!("{id}.ppm")),
        pixels: RgbImage::new(edge, edge, pixels).unwrap(),
    }
}

/// Per-sample brute force: (accuracy, macro precision, macro recall, macro F1).
pub fn brute_force_metrics(preds: &[usize], labels: &[usize], classes: usize) -> (f64, f64, f64, f64) {
    let n = preds.len() as f64;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for k in 0..classes {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        let mut actual = 0.0;
        for (p, l) in preds.iter().zip(labels) {
            if *p == k && *l == k {
                tp += 1.0;
            }
            if *p == k {
                predicted += 1.0;
            }
            if *l == k {
                actual += 1.0;
            }
        }
        let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let rec = if actual > 0.0 { tp / actual } else { 0.0 };
        p_sum += prec;
        r_sum += rec;
        f_sum += if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    let c = classes as f64;
    (hits / n, p_sum / c, r_sum / c, f_sum / c)
}
