//! Video tensors, frame sampling and resizing.

mod io;
mod manifest;

pub use io::{
    decode_raw, encode_raw, load_frames_dir, load_image_png, load_video, quantize_video,
    save_frames_dir, save_image_png, save_raw, RAW_MAGIC, RAW_VERSION,
};
pub use manifest::{
    manifest_to_string, parse_manifest, read_manifest, write_manifest, Label, ManifestEntry,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `T × C × H × W` frames with values in `[0, 1]`, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "video extents must be positive, got T={frames} H={height} W={width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "videos have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != frames * channels * height * width {
            return Err(Error::invalid(format!(
                "{}x{}x{}x{} video needs {} values, got {}",
                frames,
                channels,
                height,
                width,
                frames * channels * height * width,
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "video value {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(VideoTensor {
            frames,
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a video from arbitrary reals, clamping into `[0, 1]` (NaN maps to 0).
    pub fn from_clamped(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let data = data.into_iter().map(clamp_unit).collect();
        Self::new(frames, channels, height, width, data)
    }

    pub fn filled(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        value: f64,
    ) -> Result<Self> {
        Self::new(
            frames,
            channels,
            height,
            width,
            vec![value; frames * channels * height * width],
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// All channels of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Single-channel view of frame `t`; RGB is reduced with BT.601 luma weights.
    pub fn luma(&self, t: usize) -> Vec<f64> {
        let f = self.frame(t);
        if self.channels == 1 {
            return f.to_vec();
        }
        let plane = self.height * self.width;
        (0..plane)
            .map(|i| 0.299 * f[i] + 0.587 * f[plane + i] + 0.114 * f[2 * plane + i])
            .collect()
    }

    pub fn luma_image(&self, t: usize) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.luma(t),
        }
    }

    pub fn to_luma(&self) -> VideoTensor {
        if self.channels == 1 {
            return self.clone();
        }
        let data = (0..self.frames).flat_map(|t| self.luma(t)).collect();
        VideoTensor {
            frames: self.frames,
            channels: 1,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// `[T, C, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [self.frames, self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("video extents match data")
    }

    /// Inverse of [`VideoTensor::to_tensor`] with clamping.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [f, c, h, w] => Self::from_clamped(f, c, h, w, t.data().to_vec()),
            _ => Err(Error::invalid(format!(
                "expected a [T, C, H, W] tensor, got {:?}",
                t.shape()
            ))),
        }
    }

    pub fn from_frames(frames: &[GrayImage]) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::invalid("no frames"))?;
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| f.height != first.height || f.width != first.width)
        {
            return Err(Error::invalid(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.height, f.width, first.height, first.width
            )));
        }
        let data = frames.iter().flat_map(|f| f.data.iter().copied()).collect();
        Self::new(frames.len(), 1, first.height, first.width, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(format!(
                "{height}x{width} image cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(GrayImage {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.clone())
            .expect("image extents match data")
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `‖a - b‖∞`.
    pub fn linf_distance(&self, other: &GrayImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Picks `n` frames at indices `floor(i·T/n)`.
pub fn sample_frames(video: &VideoTensor, n: usize) -> Result<VideoTensor> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero frames"));
    }
    let t = video.frames;
    let mut data = Vec::with_capacity(n * video.frame_len());
    for i in 0..n {
        let idx = (i * t / n).min(t - 1);
        data.extend_from_slice(video.frame(idx));
    }
    VideoTensor::new(n, video.channels, video.height, video.width, data)
}

/// Corner-aligned bilinear interpolation of one plane.
pub fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |o: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        if out_len == 1 || in_len == 1 {
            return (0, 0, 0.0);
        }
        let pos = o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
        let lo = (pos.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, out_h, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, out_w, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(clamp_unit(top * (1.0 - fy) + bottom * fy));
        }
    }
    out
}

/// Per-frame, per-channel bilinear resize with corner-aligned sampling.
pub fn resize_bilinear(video: &VideoTensor, out_h: usize, out_w: usize) -> Result<VideoTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "target size {out_h}x{out_w} must be positive"
        )));
    }
    let plane = video.height * video.width;
    let mut data = Vec::with_capacity(video.frames * video.channels * out_h * out_w);
    for p in video.data.chunks(plane) {
        data.extend(resize_plane(p, video.height, video.width, out_h, out_w));
    }
    VideoTensor::new(video.frames, video.channels, out_h, out_w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn indexed_video(t: usize) -> VideoTensor {
        let data = (0..t).flat_map(|i| vec![i as f64 / t as f64; 4]).collect();
        VideoTensor::new(t, 1, 2, 2, data).unwrap()
    }

    fn picked(v: &VideoTensor, t_src: usize) -> Vec<usize> {
        (0..v.frames())
            .map(|i| (v.frame(i)[0] * t_src as f64).round() as usize)
            .collect()
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(VideoTensor::new(1, 1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(VideoTensor::new(0, 1, 1, 1, vec![]).is_err());
        assert!(VideoTensor::new(1, 2, 1, 1, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_follows_floor_rule() {
        let v = indexed_video(16);
        assert_eq!(sample_frames(&v, 16).unwrap(), v);
        let v32 = indexed_video(32);
        assert_eq!(
            picked(&sample_frames(&v32, 16).unwrap(), 32),
            (0..16).map(|i| 2 * i).collect::<Vec<_>>()
        );
        let v10 = indexed_video(10);
        assert_eq!(
            picked(&sample_frames(&v10, 16).unwrap(), 10),
            vec![0, 0, 1, 1, 2, 3, 3, 4, 5, 5, 6, 6, 7, 8, 8, 9]
        );
        assert!(sample_frames(&v, 0).is_err());
    }

    #[test]
    fn bilinear_interpolates_columns() {
        let v = VideoTensor::new(1, 1, 2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&v, 2, 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for (c, e) in expected.iter().enumerate() {
                assert!((r.data()[row * 4 + c] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constants_survive_resizing() {
        let v = VideoTensor::filled(3, 1, 5, 7, 0.37).unwrap();
        let up = resize_bilinear(&v, 11, 13).unwrap();
        assert!(up.data().iter().all(|&x| x == 0.37));
        let down = resize_bilinear(&up, 5, 7).unwrap();
        assert_eq!(down, v);
    }

    proptest! {
        #[test]
        fn resize_stays_in_unit_range(
            vals in prop::collection::vec(0.0f64..=1.0, 12),
            oh in 1usize..9, ow in 1usize..9,
        ) {
            let v = VideoTensor::new(1, 1, 3, 4, vals).unwrap();
            let r = resize_bilinear(&v, oh, ow).unwrap();
            prop_assert!(r.data().iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn sampling_all_frames_is_identity(t in 1usize..20) {
            let v = indexed_video(t);
            prop_assert_eq!(sample_frames(&v, t).unwrap(), v);
        }
    }
}
