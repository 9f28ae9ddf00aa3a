mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use stage_transfer::data::patch::grid_positions;
use stage_transfer::data::{compute_whitening_stats, split, DatasetTag, GeometricOp, SplitUnit, StatsScope, View};
use stage_transfer::metrics::{confusion, metrics};

#[derive(Clone, Debug)]
struct Unit {
    id: String,
    fragment: String,
    class: String,
}

impl SplitUnit for Unit {
    fn unit_id(&self) -> &str {
        &self.id
    }
    fn fragment_id(&self) -> &str {
        &self.fragment
    }
    fn class_key(&self) -> &str {
        &self.class
    }
}

fn layout() -> impl Strategy<Value = Vec<Unit>> {
    prop::collection::vec((0usize..4, 1usize..12), 1..30).prop_map(|frags| {
        let mut units = Vec::new();
        for (f, (class, size)) in frags.into_iter().enumerate() {
            for i in 0..size {
                units.push(Unit { id: format!("f{f}-u{i}"), fragment: format!("f{f}"), class: format!("C{class}") });
            }
        }
        units
    })
}

fn keys(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("k{k}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn split_keeps_fragments_whole(units in layout(), seed in any::<u64>(), ratio in 0.5f64..0.95) {
        let m = split(&units, ratio, seed).unwrap();
        let train: BTreeSet<&str> = m.train.iter().map(String::as_str).collect();
        prop_assert_eq!(m.train.len() + m.test.len(), units.len());
        for u in &units {
            let on_train = train.contains(u.id.as_str());
            let side = m.side_of_fragment(&u.fragment).unwrap();
            prop_assert_eq!(on_train, side == stage_transfer::data::Side::Train);
        }
        prop_assert_eq!(split(&units, ratio, seed).unwrap(), m);
    }

    #[test]
    fn geometric_ops_invert(op in prop::sample::select(GeometricOp::ALL.to_vec()), s in 1usize..7) {
        let data: Vec<u32> = (0..(3 * s * s) as u32).collect();
        let there = op.apply_chw(&data, 3, s);
        prop_assert_eq!(op.inverse().apply_chw(&there, 3, s), data);
    }

    #[test]
    fn grid_is_maximal_and_inside(len in 1usize..600, edge in 1usize..300, overlap in 0usize..40) {
        prop_assume!(overlap < edge);
        let stride = edge - overlap;
        let pos = grid_positions(len, edge, overlap);
        if len < edge {
            prop_assert!(pos.is_empty());
        } else {
            prop_assert_eq!(pos[0], 0);
            for w in pos.windows(2) {
                prop_assert_eq!(w[1] - w[0], stride);
            }
            let end = *pos.last().unwrap() + edge;
            prop_assert!(end <= len && len - end < stride);
        }
    }

    #[test]
    fn metrics_match_brute_force(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = metrics(&confusion(&preds, &labels, &keys(5)).unwrap()).unwrap();
        let (a, p, r, f) = common::brute_force_metrics(&preds, &labels, 5);
        prop_assert!((m.accuracy - a).abs() < 1e-12);
        prop_assert!((m.precision - p).abs() < 1e-12);
        prop_assert!((m.recall - r).abs() < 1e-12);
        prop_assert!((m.f1 - f).abs() < 1e-12);
    }

    #[test]
    fn confusion_permutation_preserves_totals(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)
    ) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = confusion(&preds, &labels, &keys(4)).unwrap();
        let p = cm.permuted(&[2, 0, 3, 1]);
        prop_assert_eq!(p.total(), cm.total());
        let trace = |c: &stage_transfer::metrics::ConfusionMatrix| (0..4).map(|i| c.counts[i][i]).sum::<u64>();
        prop_assert_eq!(trace(&p), trace(&cm));
    }

    #[test]
    fn whitening_standardizes_any_patches(
        pixels in prop::collection::vec(prop::collection::vec(any::<u8>(), 12), 2..10)
    ) {
        let patches: Vec<_> = pixels
            .into_iter()
            .enumerate()
            .map(|(i, px)| stage_transfer::data::Patch {
                patch_id: format!("p{i}"),
                image_id: format!("i{i}"),
                fragment_id: format!("f{i}"),
                dataset: DatasetTag::A,
                class_key: "WW".into(),
                view: View::Surface,
                x: 0,
                y: 0,
                edge: 2,
                pixels: px,
            })
            .collect();
        let stats = compute_whitening_stats(&patches, StatsScope { dataset: DatasetTag::A, split: "train".into() }).unwrap();
        let mut all = Vec::new();
        for p in &patches {
            stats.whiten_into::<f64>(p, &mut all).unwrap();
        }
        for c in 0..3 {
            let vals: Vec<f64> = all.chunks(12).flat_map(|s| s[c * 4..(c + 1) * 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            if stats.std[c] > 1e-3 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }
}
