//! Frame spectra, radial energy profiles and high-frequency energy ratios.

use super::fft::dft2;
use crate::error::{Error, Result};
use crate::video::{GrayImage, VideoTensor};

/// Non-DC energy below this fraction of the total is treated as zero.
const DEGENERATE_ENERGY: f64 = 1e-20;

/// DC-centred magnitude spectrum of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumProfile {
    pub height: usize,
    pub width: usize,
    /// `|F|`, shifted so the DC term sits at `(height / 2, width / 2)`.
    pub magnitude: Vec<f64>,
}

impl SpectrumProfile {
    /// `log(1 + |F|)`.
    pub fn log_magnitude(&self) -> Vec<f64> {
        self.magnitude.iter().map(|m| m.ln_1p()).collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.magnitude.iter().map(|m| m * m).sum()
    }

    /// Signed frequency indices of centred position `(i, j)`.
    fn frequency(&self, i: usize, j: usize) -> (f64, f64) {
        (
            i as f64 - (self.height / 2) as f64,
            j as f64 - (self.width / 2) as f64,
        )
    }

    /// Radius normalized so the Nyquist frequency on each axis is 1.
    pub fn normalized_radius(&self, i: usize, j: usize) -> f64 {
        let (fy, fx) = self.frequency(i, j);
        let ny = (self.height as f64 / 2.0).max(0.5);
        let nx = (self.width as f64 / 2.0).max(0.5);
        ((fy / ny).powi(2) + (fx / nx).powi(2)).sqrt()
    }

    fn is_dc(&self, i: usize, j: usize) -> bool {
        i == self.height / 2 && j == self.width / 2
    }

    /// Squared magnitude summed in `bins` equal radius bands over `[0, 1]`;
    /// corner frequencies beyond radius 1 land in the last band, so the bins
    /// sum to the total energy.
    pub fn radial_energy(&self, bins: usize) -> Vec<f64> {
        let mut out = vec![0.0; bins.max(1)];
        for i in 0..self.height {
            for j in 0..self.width {
                let r = self.normalized_radius(i, j);
                let b = ((r * out.len() as f64) as usize).min(out.len() - 1);
                out[b] += self.magnitude[i * self.width + j].powi(2);
            }
        }
        out
    }
}

/// DFT magnitude of a single-channel frame, DC-centred.
pub fn frame_spectrum(frame: &GrayImage) -> SpectrumProfile {
    let (h, w) = (frame.height, frame.width);
    let f = dft2(&frame.data, h, w);
    let mut magnitude = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (cy, cx) = ((y + h / 2) % h, (x + w / 2) % w);
            magnitude[cy * w + cx] = f[y * w + x].norm();
        }
    }
    SpectrumProfile {
        height: h,
        width: w,
        magnitude,
    }
}

/// Share of non-DC energy whose normalized radius exceeds `cutoff`; 0 when no non-DC energy exists.
pub fn hf_energy_ratio(spectrum: &SpectrumProfile, cutoff: f64) -> f64 {
    let (mut high, mut total, mut all) = (0.0, 0.0, 0.0);
    for i in 0..spectrum.height {
        for j in 0..spectrum.width {
            let e = spectrum.magnitude[i * spectrum.width + j].powi(2);
            all += e;
            if spectrum.is_dc(i, j) {
                continue;
            }
            total += e;
            if spectrum.normalized_radius(i, j) > cutoff {
                high += e;
            }
        }
    }
    if total <= DEGENERATE_ENERGY * all || total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Per-frame HF ratios of the luma channel.
pub fn hf_ratios(video: &VideoTensor, cutoff: f64) -> Vec<f64> {
    (0..video.frames())
        .map(|t| hf_energy_ratio(&frame_spectrum(&video.luma_image(t)), cutoff))
        .collect()
}

/// Unbiased variance across frames of the per-frame HF ratio.
pub fn temporal_hf_dispersion(video: &VideoTensor, cutoff: f64) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::invalid(
            "temporal dispersion needs at least two frames",
        ));
    }
    Ok(sample_variance(&hf_ratios(video, cutoff)))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forensics::fft::dft_direct;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(h: usize, w: usize) -> GrayImage {
        GrayImage::new(
            h,
            w,
            (0..h * w).map(|k| ((k / w + k % w) % 2) as f64).collect(),
        )
        .unwrap()
    }

    fn noise(h: usize, w: usize, seed: u64) -> GrayImage {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| r.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn constant_frame_concentrates_at_dc() {
        let s = frame_spectrum(&GrayImage::filled(8, 8, 0.3));
        let logm = s.log_magnitude();
        for i in 0..8 {
            for j in 0..8 {
                if (i, j) == (4, 4) {
                    assert!((s.magnitude[i * 8 + j] - 0.3 * 64.0).abs() < 1e-12);
                } else {
                    assert!(logm[i * 8 + j].abs() < 1e-12);
                }
            }
        }
        assert_eq!(hf_energy_ratio(&s, 0.5), 0.0);
    }

    #[test]
    fn horizontal_sinusoid_peaks_at_plus_minus_k() {
        let (h, w, k) = (8, 12, 3);
        let data = (0..h * w)
            .map(|i| {
                0.5 + 0.4 * (std::f64::consts::TAU * k as f64 * (i % w) as f64 / w as f64).cos()
            })
            .collect();
        let s = frame_spectrum(&GrayImage::new(h, w, data).unwrap());
        // Oracle: one row through direct summation.
        let row: Vec<Complex64> = (0..w)
            .map(|x| {
                Complex64::new(
                    0.4 * (std::f64::consts::TAU * k as f64 * x as f64 / w as f64).cos(),
                    0.0,
                )
            })
            .collect();
        let peak = dft_direct(&row)[k].norm() * h as f64;
        let (cy, cx) = (h / 2, w / 2);
        for i in 0..h {
            for j in 0..w {
                let m = s.magnitude[i * w + j];
                if i == cy && (j == cx - k || j == cx + k) {
                    assert!((m - peak).abs() < 1e-9, "({i},{j}) = {m}");
                } else if (i, j) != (cy, cx) {
                    assert!(m < 1e-9, "({i},{j}) = {m}");
                }
            }
        }
    }

    #[test]
    fn nyquist_checkerboard_is_all_high_frequency() {
        assert!((hf_energy_ratio(&frame_spectrum(&checkerboard(8, 8)), 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn white_noise_ratio_matches_bin_fraction() {
        let (h, w) = (32, 32);
        let probe = frame_spectrum(&GrayImage::filled(h, w, 0.0));
        let outside = (0..h * w)
            .filter(|&k| {
                !(k / w == h / 2 && k % w == w / 2) && probe.normalized_radius(k / w, k % w) > 0.5
            })
            .count();
        let expected = outside as f64 / (h * w - 1) as f64;
        let ratios: Vec<f64> = (0..20)
            .map(|s| hf_energy_ratio(&frame_spectrum(&noise(h, w, s)), 0.5))
            .collect();
        let m = mean(&ratios);
        assert!((m - expected).abs() < 0.02, "{m} vs {expected}");
    }

    #[test]
    fn parseval_and_radial_bins_conserve_energy() {
        for (h, w) in [(16, 16), (12, 10)] {
            let img = noise(h, w, 3);
            let s = frame_spectrum(&img);
            let spatial: f64 = img.data.iter().map(|v| v * v).sum();
            let spectral = s.total_energy() / (h * w) as f64;
            assert!((spatial - spectral).abs() / spatial < 1e-9);
            let bins: f64 = s.radial_energy(8).iter().sum();
            assert!((bins - s.total_energy()).abs() / s.total_energy() < 1e-9);
        }
    }

    #[test]
    fn hf_ratio_ignores_constant_offset() {
        let img = noise(16, 16, 4);
        let shifted = GrayImage {
            data: img.data.iter().map(|v| v * 0.5 + 0.3).collect(),
            ..img.clone()
        };
        let half = GrayImage {
            data: img.data.iter().map(|v| v * 0.5).collect(),
            ..img
        };
        let a = hf_energy_ratio(&frame_spectrum(&half), 0.5);
        let b = hf_energy_ratio(&frame_spectrum(&shifted), 0.5);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn dispersion_of_alternating_frames() {
        let t = 6;
        let flat = GrayImage::filled(8, 8, 0.5);
        let check = checkerboard(8, 8);
        let frames: Vec<GrayImage> = (0..t)
            .map(|i| {
                if i % 2 == 0 {
                    flat.clone()
                } else {
                    check.clone()
                }
            })
            .collect();
        let v = VideoTensor::from_frames(&frames).unwrap();
        // Ratios {0, 1, 0, 1, 0, 1}: mean 1/2, squared deviations 1/4 each.
        let expected = t as f64 * 0.25 / (t - 1) as f64;
        assert!((temporal_hf_dispersion(&v, 0.5).unwrap() - expected).abs() < 1e-12);
        let still = VideoTensor::from_frames(&[check.clone(), check]).unwrap();
        assert_eq!(temporal_hf_dispersion(&still, 0.5).unwrap(), 0.0);
        assert!(temporal_hf_dispersion(&VideoTensor::from_frames(&[flat]).unwrap(), 0.5).is_err());
    }
}
