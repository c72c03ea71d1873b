//! Handcrafted spatial-temporal forensic signals: spectra, high-frequency
//! dispersion over time, block-matching motion and motion PCA.

pub mod fft;
mod motion;
mod pca;
mod spectrum;

pub use motion::{block_motion_field, motion_stats, MotionField, MotionStats};
pub use pca::{pca_clusters, pca_fit, ClusterSummary, Pca};
pub use spectrum::{
    frame_spectrum, hf_energy_ratio, hf_ratios, temporal_hf_dispersion, SpectrumProfile,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::VideoTensor;
use spectrum::{mean, sample_variance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub radial_bins: usize,
    /// High-frequency cutoff as a fraction of the Nyquist radius.
    pub hf_cutoff: f64,
    pub block: usize,
    pub search_radius: usize,
    /// Raw moments of the motion descriptor, orders `2..=1 + motion_moments`.
    pub motion_moments: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            radial_bins: 8,
            hf_cutoff: 0.5,
            block: 4,
            search_radius: 2,
            motion_moments: 3,
        }
    }
}

impl FeatureConfig {
    /// `2·radial_bins + 5 + motion_moments`.
    pub fn len(&self) -> usize {
        2 * self.radial_bins + 5 + self.motion_moments
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column names in feature order.
    pub fn names(&self) -> Vec<String> {
        let mut n = Vec::with_capacity(self.len());
        n.extend((0..self.radial_bins).map(|b| format!("radial_mean_{b}")));
        n.extend((0..self.radial_bins).map(|b| format!("radial_std_{b}")));
        n.extend(
            [
                "hf_mean",
                "hf_std",
                "hf_dispersion",
                "motion_mean",
                "motion_variance",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        n.extend((0..self.motion_moments).map(|k| format!("motion_moment_{}", k + 2)));
        n
    }
}

/// Fixed-order feature vector; see [`FeatureConfig::names`] for the index map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

/// Spectral and motion features of a video (RGB is reduced to luma).
///
/// Index map for `n` radial bins and `m` moments:
/// `[0, n)` mean over frames of `ln(1e-10 + E_b / N²)` per radial band,
/// `[n, 2n)` the matching standard deviations, then HF ratio mean and standard
/// deviation, temporal HF dispersion, motion mean, motion variance, and the raw
/// moments of orders `2..=m+1` of the per-pair motion magnitudes.
pub fn extract_feature_vector(
    video: &VideoTensor,
    config: &FeatureConfig,
) -> Result<FeatureVector> {
    if video.frames() < 2 {
        return Err(Error::invalid(
            "feature extraction needs at least two frames",
        ));
    }
    let n_pix = (video.height() * video.width()) as f64;
    let mut radial = vec![Vec::with_capacity(video.frames()); config.radial_bins];
    let mut ratios = Vec::with_capacity(video.frames());
    for t in 0..video.frames() {
        let s = frame_spectrum(&video.luma_image(t));
        for (b, e) in s.radial_energy(config.radial_bins).into_iter().enumerate() {
            radial[b].push((1e-10 + e / (n_pix * n_pix)).ln());
        }
        ratios.push(hf_energy_ratio(&s, config.hf_cutoff));
    }
    let pop_std = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let mut out = Vec::with_capacity(config.len());
    out.extend(radial.iter().map(|r| mean(r)));
    out.extend(radial.iter().map(|r| pop_std(r)));
    out.push(mean(&ratios));
    out.push(pop_std(&ratios));
    out.push(sample_variance(&ratios));
    let motion = motion_stats(video, config.block, config.search_radius)?;
    out.push(motion.mean_magnitude);
    out.push(motion.magnitude_variance);
    for k in 0..config.motion_moments {
        let order = (k + 2) as i32;
        out.push(mean(
            &motion
                .pair_magnitudes
                .iter()
                .map(|m| m.powi(order))
                .collect::<Vec<_>>(),
        ));
    }
    Ok(FeatureVector(out))
}

/// CSV with a `sample` column followed by the named features.
pub fn features_csv(config: &FeatureConfig, rows: &[(String, FeatureVector)]) -> String {
    let mut s = String::from("sample");
    for n in config.names() {
        s.push(',');
        s.push_str(&n);
    }
    s.push('\n');
    for (name, fv) in rows {
        s.push_str(name);
        for v in &fv.0 {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_video_has_zero_dynamics() {
        let v = VideoTensor::filled(4, 1, 16, 16, 0.5).unwrap();
        let cfg = FeatureConfig::default();
        let f = extract_feature_vector(&v, &cfg).unwrap();
        assert_eq!(f.0.len(), 8 * 2 + 5 + 3);
        assert_eq!(f.0.len(), cfg.names().len());
        let at = |name: &str| f.0[cfg.names().iter().position(|n| n == name).unwrap()];
        for name in [
            "hf_mean",
            "hf_dispersion",
            "motion_mean",
            "motion_variance",
            "motion_moment_2",
        ] {
            assert_eq!(at(name), 0.0, "{name}");
        }
        assert_eq!(extract_feature_vector(&v, &cfg).unwrap(), f);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = FeatureConfig::default();
        let f =
            extract_feature_vector(&VideoTensor::filled(2, 1, 8, 8, 0.2).unwrap(), &cfg).unwrap();
        let csv = features_csv(&cfg, &[("a".into(), f)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), cfg.len() + 1);
        assert_eq!(lines[1].split(',').count(), cfg.len() + 1);
    }
}
