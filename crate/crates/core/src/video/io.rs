//! Raw planar video files and PNG frame directories.
//!
//! Raw layout: magic `b"TVID"`, version `u32`, then `T, C, H, W` as `u32`
//! little-endian, followed by frame-major 8-bit samples.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use super::{GrayImage, VideoTensor};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"TVID";
pub const RAW_VERSION: u32 = 1;

fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}

/// The video as it reads back after a raw round trip: every sample on the 8-bit grid.
pub fn quantize_video(video: &VideoTensor) -> VideoTensor {
    let data = video
        .data()
        .iter()
        .map(|&v| dequantize(quantize(v)))
        .collect();
    VideoTensor::new(
        video.frames(),
        video.channels(),
        video.height(),
        video.width(),
        data,
    )
    .expect("same extents")
}

pub fn encode_raw(video: &VideoTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + video.data().len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for d in [
        video.frames(),
        video.channels(),
        video.height(),
        video.width(),
    ] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(video.data().iter().map(|&v| quantize(v)));
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<VideoTensor> {
    if bytes.len() < 24 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::format("raw video", "missing magic header"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) != RAW_VERSION as usize {
        return Err(Error::format(
            "raw video",
            format!("unsupported version {}", word(0)),
        ));
    }
    let (t, c, h, w) = (word(1), word(2), word(3), word(4));
    let n = t * c * h * w;
    let body = &bytes[24..];
    if body.len() != n {
        let frame = c * h * w;
        let offending = if frame == 0 { 0 } else { body.len() / frame };
        return Err(Error::format(
            "raw video",
            format!(
                "expected {n} samples for {t}x{c}x{h}x{w}, found {} (frame {offending} incomplete)",
                body.len()
            ),
        ));
    }
    VideoTensor::new(t, c, h, w, body.iter().map(|&b| dequantize(b)).collect())
}

pub fn save_raw(path: &Path, video: &VideoTensor) -> Result<()> {
    fs::write(path, encode_raw(video)).map_err(|e| Error::io(path, e))
}

fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.png")
}

/// Writes one lossless 8-bit PNG per frame into `dir`.
pub fn save_frames_dir(dir: &Path, video: &VideoTensor) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (video.height() as u32, video.width() as u32);
    for t in 0..video.frames() {
        let path = dir.join(frame_name(t));
        let f = video.frame(t);
        let result = if video.channels() == 1 {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, f.iter().map(|&v| quantize(v)).collect())
                    .expect("frame size");
            buf.save(&path)
        } else {
            let plane = (h * w) as usize;
            let px = (0..plane)
                .flat_map(|i| {
                    [
                        quantize(f[i]),
                        quantize(f[plane + i]),
                        quantize(f[2 * plane + i]),
                    ]
                })
                .collect();
            let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
                ImageBuffer::from_raw(w, h, px).expect("frame size");
            buf.save(&path)
        };
        result.map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

/// Frame index encoded in a `prefix_<digits>.png` name.
fn frame_index(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Reads a directory of zero-padded, lexicographically ordered PNG frames.
pub fn load_frames_dir(dir: &Path) -> Result<VideoTensor> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(
            dir.display().to_string(),
            "no frame images found",
        ));
    }
    let first_index = frame_index(&files[0]).unwrap_or(0);
    let mut dims: Option<(u32, u32, usize)> = None;
    let mut data = Vec::new();
    for (k, path) in files.iter().enumerate() {
        if let Some(idx) = frame_index(path) {
            if idx != first_index + k {
                return Err(Error::format(
                    dir.display().to_string(),
                    format!(
                        "missing frame {} (next file is {})",
                        first_index + k,
                        path.display()
                    ),
                ));
            }
        }
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let channels = if img.color().has_color() { 3 } else { 1 };
        let (w, h) = (img.width(), img.height());
        match dims {
            None => dims = Some((w, h, channels)),
            Some(d) if d != (w, h, channels) => {
                return Err(Error::format(
                    dir.display().to_string(),
                    format!(
                        "frame {} is {w}x{h} with {channels} channel(s), expected {}x{} with {}",
                        path.display(),
                        d.0,
                        d.1,
                        d.2
                    ),
                ))
            }
            _ => {}
        }
        if channels == 1 {
            data.extend(img.to_luma8().into_raw().into_iter().map(dequantize));
        } else {
            let rgb = img.to_rgb8().into_raw();
            for c in 0..3 {
                data.extend(rgb.iter().skip(c).step_by(3).map(|&b| dequantize(b)));
            }
        }
    }
    let (w, h, c) = dims.expect("at least one frame");
    VideoTensor::new(files.len(), c, h as usize, w as usize, data)
}

/// Loads either a PNG frame directory or a raw planar file.
pub fn load_video(path: &Path) -> Result<VideoTensor> {
    if path.is_dir() {
        load_frames_dir(path)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_raw(&bytes).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(path.display().to_string(), detail),
            other => other,
        })
    }
}

pub fn save_image_png(path: &Path, image: &GrayImage) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        image.width as u32,
        image.height as u32,
        image.data.iter().map(|&v| quantize(v)).collect(),
    )
    .expect("image size");
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_image_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let luma = img.to_luma8();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    GrayImage::new(h, w, luma.into_raw().into_iter().map(dequantize).collect())
}
