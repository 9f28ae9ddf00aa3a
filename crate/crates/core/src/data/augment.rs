//! Training-time augmentation: the dihedral group of the square plus an
//! optional Gaussian blur. Operates on CHW float buffers and on HWC bytes.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricOp {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl GeometricOp {
    pub const ALL: [GeometricOp; 6] = [
        GeometricOp::Identity,
        GeometricOp::FlipH,
        GeometricOp::FlipV,
        GeometricOp::Rot90,
        GeometricOp::Rot180,
        GeometricOp::Rot270,
    ];

    pub fn inverse(self) -> Self {
        match self {
            GeometricOp::Rot90 => GeometricOp::Rot270,
            GeometricOp::Rot270 => GeometricOp::Rot90,
            other => other,
        }
    }

    /// Source coordinate `(y, x)` read for output position `(y, x)` of an `s`×`s` image.
    /// Rot90 is a counter-clockwise quarter turn.
    #[inline]
    pub fn source(self, s: usize, y: usize, x: usize) -> (usize, usize) {
        let m = s - 1;
        match self {
            GeometricOp::Identity => (y, x),
            GeometricOp::FlipH => (y, m - x),
            GeometricOp::FlipV => (m - y, x),
            GeometricOp::Rot90 => (x, m - y),
            GeometricOp::Rot180 => (m - y, m - x),
            GeometricOp::Rot270 => (m - x, y),
        }
    }

    pub fn apply_chw<T: Copy>(self, data: &[T], channels: usize, s: usize) -> Vec<T> {
        if self == GeometricOp::Identity {
            return data.to_vec();
        }
        let mut out = Vec::with_capacity(data.len());
        for c in 0..channels {
            let plane = &data[c * s * s..(c + 1) * s * s];
            for y in 0..s {
                for x in 0..s {
                    let (sy, sx) = self.source(s, y, x);
                    out.push(plane[sy * s + sx]);
                }
            }
        }
        out
    }

    pub fn apply_hwc(self, pixels: &[u8], s: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(pixels.len());
        for y in 0..s {
            for x in 0..s {
                let (sy, sx) = self.source(s, y, x);
                let i = (sy * s + sx) * 3;
                out.extend_from_slice(&pixels[i..i + 3]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentPolicy {
    None,
    Geometric,
    GeometricBlur,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Geometric ops drawn uniformly; dropping the rotations leaves flips only.
    pub geometric_ops: Vec<GeometricOp>,
    pub blur_probability: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { geometric_ops: GeometricOp::ALL.to_vec(), blur_probability: 0.5, blur_sigma: (0.5, 1.5) }
    }
}

/// What fired for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AugmentRecord {
    pub geometric: Option<GeometricOp>,
    pub blur_sigma: Option<f64>,
}

/// Normalized 1-D Gaussian kernel of size `2·ceil(2σ)+1`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Reflect-101 index into `[0, n)`.
fn reflect(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Separable Gaussian blur with reflect padding, in place, per channel.
pub fn gaussian_blur_chw<T: Scalar>(data: &mut [T], channels: usize, s: usize, sigma: f64) {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0f64; s * s];
    for c in 0..channels {
        let plane = &mut data[c * s * s..(c + 1) * s * s];
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0;
                for (t, w) in k.iter().enumerate() {
                    let xx = reflect(x as i64 + t as i64 - r, s as i64);
                    acc += w * plane[y * s + xx].to_f64();
                }
                tmp[y * s + x] = acc;
            }
        }
        for y in 0..s {
            for x in 0..s {
                let mut acc = 0.0;
                for (t, w) in k.iter().enumerate() {
                    let yy = reflect(y as i64 + t as i64 - r, s as i64);
                    acc += w * tmp[yy * s + x];
                }
                plane[y * s + x] = T::from_f64(acc);
            }
        }
    }
}

/// Augments one `[channels, s, s]` sample in place.
pub fn augment<T: Scalar>(
    data: &mut Vec<T>,
    channels: usize,
    s: usize,
    policy: AugmentPolicy,
    cfg: &AugmentConfig,
    rng: &mut dyn RngCore,
) -> AugmentRecord {
    let mut record = AugmentRecord { geometric: None, blur_sigma: None };
    if policy == AugmentPolicy::None {
        return record;
    }
    let op = cfg.geometric_ops[rng.random_range(0..cfg.geometric_ops.len())];
    if op != GeometricOp::Identity {
        *data = op.apply_chw(data, channels, s);
    }
    record.geometric = Some(op);
    if policy == AugmentPolicy::GeometricBlur && rng.random::<f64>() < cfg.blur_probability {
        let sigma = rng.random_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        gaussian_blur_chw(data, channels, s, sigma);
        record.blur_sigma = Some(sigma);
    }
    record
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample(s: usize) -> Vec<f64> {
        (0..3 * s * s).map(|i| (i * 7 % 13) as f64).collect()
    }

    #[test]
    fn identity_is_noop() {
        let d = sample(5);
        assert_eq!(GeometricOp::Identity.apply_chw(&d, 3, 5), d);
    }

    #[test]
    fn group_inverses_restore() {
        let d = sample(4);
        for op in GeometricOp::ALL {
            let once = op.apply_chw(&d, 3, 4);
            assert_eq!(op.inverse().apply_chw(&once, 3, 4), d, "{op:?}");
        }
        let twice = GeometricOp::FlipH.apply_chw(&GeometricOp::FlipH.apply_chw(&d, 3, 4), 3, 4);
        assert_eq!(twice, d);
    }

    #[test]
    fn rot90_moves_top_right_to_top_left() {
        // 2x2 plane [[a, b], [c, d]] turned counter-clockwise is [[b, d], [a, c]]
        let d = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(GeometricOp::Rot90.apply_chw(&d, 1, 2), vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn hwc_and_chw_agree() {
        let s = 3;
        let hwc: Vec<u8> = (0..s * s * 3).map(|v| v as u8).collect();
        let chw: Vec<u8> = (0..3).flat_map(|c| hwc.iter().skip(c).step_by(3).copied().collect::<Vec<_>>()).collect();
        for op in GeometricOp::ALL {
            let a = op.apply_hwc(&hwc, s);
            let a_chw: Vec<u8> =
                (0..3).flat_map(|c| a.iter().skip(c).step_by(3).copied().collect::<Vec<_>>()).collect();
            assert_eq!(a_chw, op.apply_chw(&chw, 3, s));
        }
    }

    #[test]
    fn kernel_shape_and_sum() {
        for sigma in [0.5, 1.0, 1.3, 1.5] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (2.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constant() {
        let mut d = vec![0.37f64; 3 * 6 * 6];
        gaussian_blur_chw(&mut d, 3, 6, 1.4);
        assert!(d.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn geometric_policy_never_blurs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let cfg = AugmentConfig::default();
        for _ in 0..200 {
            let mut d = sample(4);
            let r = augment(&mut d, 3, 4, AugmentPolicy::Geometric, &cfg, &mut rng);
            assert!(r.blur_sigma.is_none());
            assert_eq!(d.len(), 48);
        }
    }

    #[test]
    fn blur_sigma_within_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig::default();
        let mut fired = 0;
        for _ in 0..200 {
            let mut d = sample(4);
            if let Some(s) = augment(&mut d, 3, 4, AugmentPolicy::GeometricBlur, &cfg, &mut rng).blur_sigma {
                assert!((0.5..=1.5).contains(&s));
                fired += 1;
            }
        }
        assert!(fired > 50);
    }
}
