//! Python bindings. Images are nested lists of rows in `[0, 1]`; videos are lists of images.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use vidshield::corpus::{build_corpus, CorpusConfig};
use vidshield::forensics::temporal_hf_dispersion as hf_dispersion;
use vidshield::prevention::{
    undirected_defense as run_undirected, AdversarialBudget, EncoderConfig, EncoderPair,
    PerceptualProxy,
};
use vidshield::toy_world::NextFramePredictor;
use vidshield::video::{GrayImage, VideoTensor};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn image(rows: Vec<Vec<f64>>) -> PyResult<GrayImage> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(err("image rows differ in length"));
    }
    GrayImage::new(h, w, rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(img: &GrayImage) -> Vec<Vec<f64>> {
    img.data.chunks(img.width).map(<[f64]>::to_vec).collect()
}

#[pyfunction]
fn ssim(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    vidshield::quality::ssim(&image(a)?, &image(b)?).map_err(err)
}

/// PSNR in dB; `inf` for identical images.
#[pyfunction]
fn psnr(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(vidshield::quality::psnr(&image(a)?, &image(b)?)
        .map_err(err)?
        .value())
}

#[pyfunction]
#[pyo3(signature = (frames, cutoff = 0.5))]
fn temporal_hf_dispersion(frames: Vec<Vec<Vec<f64>>>, cutoff: f64) -> PyResult<f64> {
    let imgs = frames
        .into_iter()
        .map(image)
        .collect::<PyResult<Vec<_>>>()?;
    let video = VideoTensor::from_frames(&imgs).map_err(err)?;
    hf_dispersion(&video, cutoff).map_err(err)
}

/// Undirected immunization with seeded untrained encoders; returns the perturbed image.
#[pyfunction]
#[pyo3(signature = (image_rows, eta, iterations = 40, seed = 0))]
fn undirected_defense(
    image_rows: Vec<Vec<f64>>,
    eta: f64,
    iterations: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = image(image_rows)?;
    let cfg = EncoderConfig {
        seed,
        ..EncoderConfig::default()
    };
    let enc = EncoderPair::new(NextFramePredictor::new(6, seed), &cfg).map_err(err)?;
    let budget = AdversarialBudget {
        iterations,
        ..AdversarialBudget::with_eta(eta)
    };
    let r = run_undirected(&enc, &PerceptualProxy::new(seed), &x, &budget, seed).map_err(err)?;
    Ok(rows(&r.immunized))
}

/// Manifest of the smoke-preset corpus for `seed`, one JSON object per sample.
#[pyfunction]
fn smoke_manifest(seed: u64) -> PyResult<Vec<String>> {
    let corpus = build_corpus(&CorpusConfig::smoke(seed)).map_err(err)?;
    corpus
        .manifest()
        .iter()
        .map(|e| serde_json::to_string(e).map_err(err))
        .collect()
}

#[pymodule]
fn vidshield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_hf_dispersion, m)?)?;
    m.add_function(wrap_pyfunction!(undirected_defense, m)?)?;
    m.add_function(wrap_pyfunction!(smoke_manifest, m)?)?;
    Ok(())
}
