//! Principal component analysis via the symmetric eigendecomposition of the sample covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit-length axes, by descending eigenvalue; each axis has its largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// Fits `k` principal axes to `points` (covariance with an `n - 1` denominator).
pub fn pca_fit(points: &[Vec<f64>], k: usize) -> Result<Pca> {
    if points.len() < 2 {
        return Err(Error::invalid("PCA needs at least two points"));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("PCA points differ in dimension"));
    }
    if k > d {
        return Err(Error::invalid(format!(
            "cannot keep {k} components of {d}-dimensional data"
        )));
    }
    let n = points.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for p in points {
        for a in 0..d {
            let da = p[a] - mean[a];
            for b in 0..d {
                cov[(a, b)] += da * (p[b] - mean[b]);
            }
        }
    }
    cov /= n - 1.0;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, v)| {
                if v.abs() > acc.1.abs() {
                    (j, v)
                } else {
                    acc
                }
            });
        if lead.1 < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(axis);
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

impl Pca {
    pub fn project(&self, point: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(point)
                    .zip(&self.mean)
                    .map(|((a, x), m)| a * (x - m))
                    .sum()
            })
            .collect()
    }

    /// Maps coordinates back to the centred input space.
    pub fn reconstruct_centered(&self, coords: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        let mut out = vec![0.0; d];
        for (c, &z) in self.components.iter().zip(coords) {
            for j in 0..d {
                out[j] += c[j] * z;
            }
        }
        out
    }
}

/// Per-group 2-D scatter summary in a shared PCA plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: String,
    pub points: Vec<[f64; 2]>,
    pub centroid: [f64; 2],
    /// Mean Euclidean distance of the group's points from its centroid.
    pub mean_radius: f64,
}

/// Fits a 2-axis PCA to every point, projects, and summarizes each label's cluster.
/// Labels come out sorted.
pub fn pca_clusters(labeled: &[(String, Vec<f64>)]) -> Result<(Pca, Vec<ClusterSummary>)> {
    let points: Vec<Vec<f64>> = labeled.iter().map(|p| p.1.clone()).collect();
    let pca = pca_fit(&points, 2)?;
    let mut groups: std::collections::BTreeMap<&str, Vec<[f64; 2]>> = Default::default();
    for (label, p) in labeled {
        let c = pca.project(p);
        groups
            .entry(label)
            .or_default()
            .push([c[0], c.get(1).copied().unwrap_or(0.0)]);
    }
    let summaries = groups
        .into_iter()
        .map(|(label, points)| {
            let n = points.len() as f64;
            let centroid = [
                points.iter().map(|p| p[0]).sum::<f64>() / n,
                points.iter().map(|p| p[1]).sum::<f64>() / n,
            ];
            let mean_radius = points
                .iter()
                .map(|p| (p[0] - centroid[0]).hypot(p[1] - centroid[1]))
                .sum::<f64>()
                / n;
            ClusterSummary {
                label: label.to_string(),
                points,
                centroid,
                mean_radius,
            }
        })
        .collect();
    Ok((pca, summaries))
}
