//! Per-class balancing of the training split.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngCore;

use super::augment::GeometricOp;
use super::patch::Patch;
use crate::error::{Error, Result};

/// Resamples to exactly `target` patches per class, in `class_keys` order.
/// Surplus classes are subsampled; short classes gain geometric copies of
/// their own patches with ids `{original}#aug{k}`.
pub fn balance(patches: &[Patch], class_keys: &[String], target: usize, rng: &mut dyn RngCore) -> Result<Vec<Patch>> {
    if target == 0 {
        return Err(Error::Config("balance target must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(target * class_keys.len());
    for key in class_keys {
        let members: Vec<&Patch> = patches.iter().filter(|p| &p.class_key == key).collect();
        if members.is_empty() {
            return Err(Error::Data(format!("class {key} has no patches to balance")));
        }
        if members.len() >= target {
            let mut idx: Vec<usize> = (0..members.len()).collect();
            idx.shuffle(rng);
            let mut keep = idx[..target].to_vec();
            keep.sort_unstable();
            out.extend(keep.into_iter().map(|i| members[i].clone()));
        } else {
            out.extend(members.iter().map(|p| (*p).clone()));
            let ops = &GeometricOp::ALL[1..];
            for k in 0..target - members.len() {
                let src = members.choose(rng).expect("non-empty");
                let op = *ops.choose(rng).expect("non-empty");
                let mut copy = (*src).clone();
                copy.patch_id = format!("{}#aug{k}", src.patch_id);
                copy.pixels = op.apply_hwc(&src.pixels, src.edge);
                out.push(copy);
            }
        }
    }
    Ok(out)
}

/// Original patch id of a balanced copy.
pub fn provenance(patch_id: &str) -> &str {
    patch_id.split('#').next().unwrap_or(patch_id)
}
