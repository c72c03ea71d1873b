//! SSIM and PSNR on the `[0, 1]` scale, per frame and averaged over a video pair.

use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::prevention::PerceptualProxy;
use crate::video::{GrayImage, VideoTensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

/// Normalized 11-tap Gaussian, outer-producted into the 2-D window.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - c;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

fn same_shape(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::invalid(format!(
            "frames differ in shape: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// Gaussian-windowed SSIM averaged over every window position fully inside the frame.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    let (ny, nx) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    for y0 in 0..ny {
        for x0 in 0..nx {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, ty) in taps.iter().enumerate() {
                for (dx, tx) in taps.iter().enumerate() {
                    let k = ty * tx;
                    let i = (y0 + dy) * w + x0 + dx;
                    let (va, vb) = (a.data[i], b.data[i]);
                    ma += k * va;
                    mb += k * vb;
                    aa += k * (va * va);
                    bb += k * (vb * vb);
                    ab += k * (va * vb);
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (ny * nx) as f64)
}

/// PSNR in dB; identical frames give [`Psnr::Infinite`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value `{t}`"))),
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

/// `10·log10(1 / MSE)`.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<Psnr> {
    same_shape(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (1.0 / mse).log10())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frames: usize,
    pub ssim: Vec<f64>,
    pub psnr: Vec<Psnr>,
    /// Random-filter perceptual distance standing in for LPIPS.
    pub proxy: Vec<f64>,
    pub mean_ssim: f64,
    /// Infinite when any frame pair is identical.
    pub mean_psnr: Psnr,
    pub mean_proxy: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-frame metrics on luma, then arithmetic means.
pub fn video_quality(
    a: &VideoTensor,
    b: &VideoTensor,
    proxy: &PerceptualProxy,
) -> Result<QualityReport> {
    if a.frames() != b.frames() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::invalid(format!(
            "videos differ: {}x{}x{} vs {}x{}x{}",
            a.frames(),
            a.height(),
            a.width(),
            b.frames(),
            b.height(),
            b.width()
        )));
    }
    if a.frames() == 0 {
        return Err(Error::invalid("quality needs at least one frame"));
    }
    let (mut s, mut p, mut q) = (vec![], vec![], vec![]);
    for t in 0..a.frames() {
        let (fa, fb) = (a.luma_image(t), b.luma_image(t));
        s.push(ssim(&fa, &fb)?);
        p.push(psnr(&fa, &fb)?);
        q.push(proxy.distance(&fa, &fb)?);
    }
    let mean_psnr = if p.contains(&Psnr::Infinite) {
        Psnr::Infinite
    } else {
        Psnr::Finite(mean(&p.iter().map(|v| v.value()).collect::<Vec<_>>()))
    };
    Ok(QualityReport {
        frames: a.frames(),
        mean_ssim: mean(&s),
        mean_proxy: mean(&q),
        ssim: s,
        psnr: p,
        proxy: q,
        mean_psnr,
    })
}

impl QualityReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per frame, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,ssim,psnr,proxy\n");
        for t in 0..self.frames {
            let _ = writeln!(s, "{t},{},{},{}", self.ssim[t], self.psnr[t], self.proxy[t]);
        }
        let _ = writeln!(
            s,
            "mean,{},{},{}",
            self.mean_ssim, self.mean_psnr, self.mean_proxy
        );
        s
    }
}
