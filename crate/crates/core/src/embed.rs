//! Penultimate-layer features, PCA projection and cluster separability.
//!
//! PCA stands in for a neighbor-graph embedding; output headers say so.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::data::View;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{Scalar, Tensor};

pub const PROJECTION_NOTE: &str = "linear PCA projection (substitute for a nonlinear neighbor-graph embedding)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowMeta {
    pub patch_id: String,
    pub class_key: String,
    pub view: View,
}

/// `rows × cols` row-major features with per-row metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub cols: usize,
    pub data: Vec<f64>,
    pub meta: Vec<RowMeta>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.meta.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.class_key.clone()).collect()
    }
}

/// Eval-mode features feeding the final linear layer, in batches.
pub fn extract_features<T: Scalar>(model: &mut Model<T>, inputs: &Tensor<T>, meta: Vec<RowMeta>) -> Result<FeatureMatrix> {
    let n = inputs.shape()[0];
    if n != meta.len() {
        return Err(Error::Data(format!("{n} inputs but {} metadata rows", meta.len())));
    }
    let cols = model.arch().penultimate_width();
    let mut data = Vec::with_capacity(n * cols);
    const BATCH: usize = 128;
    let mut start = 0;
    while start < n {
        let count = BATCH.min(n - start);
        let f = model.features(&inputs.slice_outer(start, count)?)?;
        f.ensure_finite("extract_features")?;
        data.extend(f.to_f64_vec());
        start += count;
    }
    Ok(FeatureMatrix { cols, data, meta })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub k: usize,
    /// `n × k`, row-major.
    pub coords: Vec<f64>,
    /// Principal axes, each of length `d`, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

impl Projection {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.coords.chunks(self.k).map(|c| c.to_vec()).collect()
    }
}

/// Sample covariance (n-1) of row-major `n × d` data.
pub fn covariance(data: &[f64], n: usize, d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mut mean = vec![0.0; d];
    for r in data.chunks(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data[i * d + j] - mean[j]);
    let cov = centered.transpose() * &centered / ((n - 1).max(1) as f64);
    (mean, cov)
}

/// Mean-centered projection onto the top `k` principal axes. The first
/// nonzero loading of every axis is made positive.
pub fn pca_project(data: &[f64], n: usize, d: usize, k: usize) -> Result<Projection> {
    if n <= k || k == 0 || k > d {
        return Err(Error::Data(format!("PCA needs n > k and 1 <= k <= d (n {n}, d {d}, k {k})")));
    }
    if data.len() != n * d {
        return Err(Error::Data(format!("PCA input has {} values, expected {n}x{d}", data.len())));
    }
    let (mean, cov) = covariance(data, n, d);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut axes = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
        }
        axes.push(axis);
        explained.push(if total > 0.0 { eig.eigenvalues[i].max(0.0) / total } else { 0.0 });
    }
    let mut coords = Vec::with_capacity(n * k);
    for r in data.chunks(d) {
        for axis in &axes {
            coords.push(r.iter().zip(&mean).zip(axis).map(|((v, m), a)| (v - m) * a).sum());
        }
    }
    Ok(Projection { k, coords, axes, explained_variance: explained, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparabilityReport {
    pub silhouette: f64,
    pub centroids: BTreeMap<String, Vec<f64>>,
    /// Euclidean distance between every pair of class centroids.
    pub centroid_distances: Vec<(String, String, f64)>,
    /// All points coincide; silhouette reported as 0.
    pub degenerate: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean silhouette with Euclidean distance; singleton clusters score 0.
pub fn separability_report(points: &[Vec<f64>], labels: &[String]) -> Result<SeparabilityReport> {
    if points.len() != labels.len() {
        return Err(Error::Data(format!("{} points but {} labels", points.len(), labels.len())));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Data(format!("separability needs at least 2 classes, got {}", groups.len())));
    }
    let dim = points[0].len();
    let centroids: BTreeMap<String, Vec<f64>> = groups
        .iter()
        .map(|(k, idx)| {
            let mut c = vec![0.0; dim];
            for &i in idx {
                for (a, v) in c.iter_mut().zip(&points[i]) {
                    *a += v;
                }
            }
            c.iter_mut().for_each(|a| *a /= idx.len() as f64);
            (k.to_string(), c)
        })
        .collect();
    let keys: Vec<&String> = centroids.keys().collect();
    let mut centroid_distances = Vec::new();
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            centroid_distances.push((keys[i].clone(), keys[j].clone(), dist(&centroids[keys[i]], &centroids[keys[j]])));
        }
    }
    let degenerate = points.iter().all(|p| dist(p, &points[0]) == 0.0);
    if degenerate {
        return Ok(SeparabilityReport { silhouette: 0.0, centroids, centroid_distances, degenerate });
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = &groups[labels[i].as_str()];
        if own.len() < 2 {
            continue;
        }
        let mean_to = |idx: &[usize]| idx.iter().filter(|&&j| j != i).map(|&j| dist(p, &points[j])).sum::<f64>();
        let a = mean_to(own) / (own.len() - 1) as f64;
        let b = groups
            .iter()
            .filter(|(k, _)| **k != labels[i])
            .map(|(_, idx)| mean_to(idx) / idx.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(SeparabilityReport { silhouette: total / points.len() as f64, centroids, centroid_distances, degenerate })
}

/// `patch_id,class_key,view,x,y` for the first two projected coordinates.
pub fn write_embedding_csv(path: &Path, meta: &[RowMeta], projection: &Projection) -> Result<()> {
    if projection.k < 2 {
        return Err(Error::Data("embedding CSV needs a 2-D projection".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["patch_id", "class_key", "view", "x", "y"])?;
    for (i, m) in meta.iter().enumerate() {
        let p = projection.point(i);
        w.write_record([m.patch_id.clone(), m.class_key.clone(), m.view.to_string(), p[0].to_string(), p[1].to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn random(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn line_is_one_component() {
        let data: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&data, 20, 3, 2).unwrap();
        assert!((p.explained_variance[0] - 1.0).abs() < 1e-12);
        assert!(p.axes[0][0] > 0.0);
    }

    #[test]
    fn matches_jacobi_oracle() {
        let (n, d) = (50, 5);
        let data = random(n, d, 2);
        let (_, cov) = covariance(&data, n, d);
        let oracle = jacobi_eigenvalues((0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect());
        let p = pca_project(&data, n, d, d).unwrap();
        let total: f64 = oracle.iter().sum();
        for (e, o) in p.explained_variance.iter().zip(&oracle) {
            assert!((e - o / total).abs() < 1e-8);
        }
        // reconstruction error of the top-2 projection equals the dropped variance
        let p2 = pca_project(&data, n, d, 2).unwrap();
        let mut err = 0.0;
        for i in 0..n {
            let row = &data[i * d..(i + 1) * d];
            for j in 0..d {
                let rec = p2.mean[j] + (0..2).map(|a| p2.point(i)[a] * p2.axes[a][j]).sum::<f64>();
                err += (row[j] - rec).powi(2);
            }
        }
        let dropped: f64 = oracle[2..].iter().sum::<f64>() * (n - 1) as f64;
        assert!((err - dropped).abs() < 1e-8, "{err} vs {dropped}");
    }

    #[test]
    fn projection_is_idempotent_on_subspace() {
        let data = random(30, 4, 8);
        let p = pca_project(&data, 30, 4, 2).unwrap();
        let again = pca_project(&p.coords, 30, 2, 2).unwrap();
        for (a, b) in p.coords.iter().zip(&again.coords) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn row_order_invariant() {
        let data = random(25, 3, 4);
        let p = pca_project(&data, 25, 3, 2).unwrap();
        let rev: Vec<f64> = data.chunks(3).rev().flatten().copied().collect();
        let q = pca_project(&rev, 25, 3, 2).unwrap();
        for i in 0..25 {
            for a in 0..2 {
                assert!((p.point(i)[a] - q.point(24 - i)[a]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blobs_separate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in [(0.0, 0.0), (10.0, 10.0)].iter().enumerate() {
            for _ in 0..20 {
                pts.push(vec![center.0 + rng.random_range(-0.5..0.5), center.1 + rng.random_range(-0.5..0.5)]);
                labels.push(format!("c{c}"));
            }
        }
        let r = separability_report(&pts, &labels).unwrap();
        assert!(r.silhouette > 0.8);
        let swapped: Vec<String> = labels.iter().map(|l| if l == "c0" { "c1".into() } else { "c0".into() }).collect();
        assert!((separability_report(&pts, &swapped).unwrap().silhouette - r.silhouette).abs() < 1e-12);
    }

    #[test]
    fn identical_points_degenerate() {
        let pts = vec![vec![1.0, 1.0]; 6];
        let labels: Vec<String> = (0..6).map(|i| format!("c{}", i % 2)).collect();
        let r = separability_report(&pts, &labels).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.silhouette, 0.0);
    }

    #[test]
    fn single_class_errors() {
        assert!(separability_report(&[vec![0.0], vec![1.0]], &["a".into(), "a".into()]).is_err());
    }
}
