//! Per-channel standardization `(v - m) / max(σ, ε)`.

use serde::{Deserialize, Serialize};

use super::manifest::DatasetTag;
use super::patch::Patch;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const WHITEN_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsScope {
    pub dataset: DatasetTag,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub scope: StatsScope,
}

/// Population statistics over every pixel of `patches`.
pub fn compute_whitening_stats(patches: &[Patch], scope: StatsScope) -> Result<WhiteningStats> {
    if patches.is_empty() {
        return Err(Error::Data("cannot compute whitening statistics of zero patches".into()));
    }
    if let Some(p) = patches.iter().find(|p| p.dataset != scope.dataset) {
        return Err(Error::ScopeMismatch {
            stats: scope.dataset.to_string(),
            patch: format!("{} ({})", p.dataset, p.patch_id),
        });
    }
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut n = 0usize;
    for p in patches {
        for px in p.pixels.chunks_exact(3) {
            for c in 0..3 {
                let v = px[c] as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += p.pixels.len() / 3;
    }
    let n = n as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0f64; 3];
    for c in 0..3 {
        // integer-valued inputs keep these sums exact well past 1e9 pixels
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt();
    }
    Ok(WhiteningStats { mean, std, scope })
}

impl WhiteningStats {
    fn check_scope(&self, patch: &Patch) -> Result<()> {
        if patch.dataset != self.scope.dataset {
            return Err(Error::ScopeMismatch {
                stats: self.scope.dataset.to_string(),
                patch: format!("{} ({})", patch.dataset, patch.patch_id),
            });
        }
        Ok(())
    }

    /// Whitens into a CHW buffer appended to `out`.
    pub fn whiten_into<T: Scalar>(&self, patch: &Patch, out: &mut Vec<T>) -> Result<()> {
        self.check_scope(patch)?;
        let inv = self.std.map(|s| 1.0 / s.max(WHITEN_EPSILON));
        for c in 0..3 {
            out.extend(
                patch.pixels.chunks_exact(3).map(|px| T::from_f64((px[c] as f64 - self.mean[c]) * inv[c])),
            );
        }
        Ok(())
    }

    /// Whitened `[3, S, S]` tensor.
    pub fn whiten<T: Scalar>(&self, patch: &Patch) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(patch.pixels.len());
        self.whiten_into(patch, &mut data)?;
        Tensor::new(vec![3, patch.edge, patch.edge], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::View;
    use rand::{Rng, SeedableRng};

    fn patch(pixels: Vec<u8>, edge: usize) -> Patch {
        Patch {
            patch_id: "p".into(),
            image_id: "i".into(),
            fragment_id: "f".into(),
            dataset: DatasetTag::A,
            class_key: "WW".into(),
            view: View::Surface,
            x: 0,
            y: 0,
            edge,
            pixels,
        }
    }

    fn scope() -> StatsScope {
        StatsScope { dataset: DatasetTag::A, split: "train".into() }
    }

    #[test]
    fn constant_gray() {
        let s = compute_whitening_stats(&[patch(vec![128; 4 * 4 * 3], 4)], scope()).unwrap();
        assert_eq!(s.mean, [128.0; 3]);
        assert_eq!(s.std, [0.0; 3]);
        let w = s.whiten::<f64>(&patch(vec![128; 4 * 4 * 3], 4)).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_value_channel() {
        let pixels: Vec<u8> = (0..4).flat_map(|i| if i % 2 == 0 { [1, 0, 0] } else { [3, 0, 0] }).collect();
        let s = compute_whitening_stats(&[patch(pixels, 2)], scope()).unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.std[0], 1.0);
    }

    #[test]
    fn matches_two_pass_reference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let patches: Vec<Patch> =
            (0..5).map(|_| patch((0..8 * 8 * 3).map(|_| rng.random()).collect(), 8)).collect();
        let s = compute_whitening_stats(&patches, scope()).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> =
                patches.iter().flat_map(|p| p.pixels.chunks_exact(3).map(move |px| px[c] as f64)).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((s.mean[c] - m).abs() < 1e-9);
            assert!((s.std[c] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn scope_mismatch_rejected() {
        let s = compute_whitening_stats(&[patch(vec![10; 12], 2)], scope()).unwrap();
        let mut b = patch(vec![10; 12], 2);
        b.dataset = DatasetTag::B;
        assert!(matches!(s.whiten::<f32>(&b), Err(Error::ScopeMismatch { .. })));
    }

    #[test]
    fn empty_input_errors() {
        assert!(compute_whitening_stats(&[], scope()).is_err());
    }
}
