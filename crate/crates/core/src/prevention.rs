//! Image immunization against image-to-video generation.
//!
//! A spatial embedder E₁ reads a single frame; a temporal embedder E₂ reads the frame stacked
//! with a frozen next-frame prediction. Directed defense pulls both embeddings toward a target
//! image while staying close to the original in pixels; undirected defense pushes them away from
//! the original. Both run signed projected gradient steps under an ∞-norm budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Graph, NodeId, ParamStore};
use crate::error::{Error, Result};
use crate::forensics::motion_stats;
use crate::quality::{video_quality, QualityReport};
use crate::tensor::Tensor;
use crate::toy_world::{NextFramePredictor, ToyGenerator};
use crate::video::{GrayImage, VideoTensor};

const UNIT_NORM_EPS: f64 = 1e-10;

/// Stack of `3×3` conv + tanh layers with 2×2 pooling between them, sum-pooled to one vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvEmbedder {
    pub params: ParamStore,
    pub layers: usize,
}

impl ConvEmbedder {
    pub fn new(cin: usize, widths: &[usize], dim: usize, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut c = cin;
        for (i, &out) in widths.iter().chain(std::iter::once(&dim)).enumerate() {
            p.push_fan_in(format!("embed.{i}.weight"), &[out, c, 3, 3], 9 * c, &mut r);
            p.push_fan_in(format!("embed.{i}.bias"), &[out], 9 * c, &mut r);
            c = out;
        }
        ConvEmbedder {
            params: p,
            layers: widths.len() + 1,
        }
    }

    /// `x [N, C, H, W]` to `[N, dim]`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for i in 0..self.layers {
            h = g.conv2d(
                h,
                p.id(&format!("embed.{i}.weight")),
                Some(p.id(&format!("embed.{i}.bias"))),
                [1, 1],
            )?;
            h = g.tanh(h);
            let s = g.shape(h);
            if i + 1 < self.layers && s[2] >= 2 && s[3] >= 2 {
                h = g.avg_pool2d(h, [2, 2])?;
            }
        }
        let positions: usize = g.shape(h)[2..].iter().product();
        let m = g.mean_trailing(h, 2)?;
        Ok(g.scale(m, positions as f64))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    Conv(ConvEmbedder),
    /// Flattened pixels; the embedding is the input itself.
    Identity,
}

impl Embedder {
    fn bind(&self, g: &mut Graph) -> Option<BoundParams> {
        match self {
            Embedder::Conv(e) => Some(e.params.bind(g, false)),
            Embedder::Identity => None,
        }
    }

    fn forward(&self, g: &mut Graph, p: Option<&BoundParams>, x: NodeId) -> Result<NodeId> {
        match (self, p) {
            (Embedder::Conv(e), Some(p)) => e.forward(g, p, x),
            _ => {
                let s = g.shape(x).to_vec();
                g.reshape(x, [s[0], s[1..].iter().product()])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingDistance {
    #[default]
    L1,
    /// `1 − cos(a, b)`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub spatial_dim: usize,
    pub temporal_dim: usize,
    pub widths: Vec<usize>,
    pub distance: EmbeddingDistance,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            spatial_dim: 16,
            temporal_dim: 16,
            widths: vec![8, 16],
            distance: EmbeddingDistance::L1,
            seed: 0,
        }
    }
}

/// E₁ over a frame and E₂ over `[frame, predicted next frame]`; both frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderPair {
    pub spatial: Embedder,
    pub temporal: Embedder,
    pub predictor: NextFramePredictor,
    pub distance: EmbeddingDistance,
}

/// Graph handles of one bound encoder pair.
struct Bound {
    spatial: Option<BoundParams>,
    temporal: Option<BoundParams>,
    predictor: BoundParams,
}

impl EncoderPair {
    /// Seeded random conv embedders around a trained predictor.
    pub fn new(predictor: NextFramePredictor, cfg: &EncoderConfig) -> Result<Self> {
        if cfg.spatial_dim == 0 || cfg.temporal_dim == 0 || cfg.widths.contains(&0) {
            return Err(Error::invalid("embedding sizes must be positive"));
        }
        Ok(EncoderPair {
            spatial: Embedder::Conv(ConvEmbedder::new(
                1,
                &cfg.widths,
                cfg.spatial_dim,
                cfg.seed ^ 0xe1,
            )),
            temporal: Embedder::Conv(ConvEmbedder::new(
                2,
                &cfg.widths,
                cfg.temporal_dim,
                cfg.seed ^ 0xe2,
            )),
            predictor,
            distance: cfg.distance,
        })
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            spatial: self.spatial.bind(g),
            temporal: self.temporal.bind(g),
            predictor: self.predictor.params.bind(g, false),
        }
    }

    fn spatial_node(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        self.spatial.forward(g, b.spatial.as_ref(), x)
    }

    fn temporal_node(&self, g: &mut Graph, b: &Bound, x: NodeId) -> Result<NodeId> {
        let next = self.predictor.forward(g, &b.predictor, x)?;
        let pair = g.concat_channels(&[x, next])?;
        self.temporal.forward(g, b.temporal.as_ref(), pair)
    }

    fn distance_node(&self, g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
        match self.distance {
            EmbeddingDistance::L1 => {
                let d = g.sub(a, b)?;
                let d = g.abs(d);
                Ok(g.sum(d))
            }
            EmbeddingDistance::Cosine => {
                let ab = g.mul(a, b)?;
                let dot = g.sum(ab);
                let (na, nb) = (g.l2_norm(a), g.l2_norm(b));
                let den = g.mul(na, nb)?;
                let den = g.add_scalar(den, 1e-12);
                let cos = g.div(dot, den)?;
                let neg = g.scale(cos, -1.0);
                Ok(g.add_scalar(neg, 1.0))
            }
        }
    }

    pub fn embed_spatial(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let x = g.constant(image.to_tensor());
        let e = self.spatial_node(&mut g, &b, x)?;
        Ok(g.value(e).data().to_vec())
    }

    pub fn embed_temporal(&self, image: &GrayImage) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let x = g.constant(image.to_tensor());
        let e = self.temporal_node(&mut g, &b, x)?;
        Ok(g.value(e).data().to_vec())
    }

    /// `(E₁ distance, E₂ distance)` between two images.
    pub fn distances(&self, a: &GrayImage, b: &GrayImage) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let bd = self.bind(&mut g);
        let (xa, xb) = (g.constant(a.to_tensor()), g.constant(b.to_tensor()));
        let (sa, sb) = (
            self.spatial_node(&mut g, &bd, xa)?,
            self.spatial_node(&mut g, &bd, xb)?,
        );
        let (ta, tb) = (
            self.temporal_node(&mut g, &bd, xa)?,
            self.temporal_node(&mut g, &bd, xb)?,
        );
        let ds = self.distance_node(&mut g, sa, sb)?;
        let dt = self.distance_node(&mut g, ta, tb)?;
        Ok((g.value(ds).data()[0], g.value(dt).data()[0]))
    }
}

/// Fixed bank of seeded random filters; the distance is the mean over two layers of the mean
/// squared difference between channel-normalized responses. Stands in for LPIPS.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualProxy {
    pub params: ParamStore,
}

impl PerceptualProxy {
    pub const CHANNELS: usize = 8;

    pub fn new(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x1b1b5);
        let c = Self::CHANNELS;
        let mut p = ParamStore::new();
        p.push_fan_in("proxy.0.weight", &[c, 1, 3, 3], 9, &mut r);
        p.push_fan_in("proxy.0.bias", &[c], 9, &mut r);
        p.push_fan_in("proxy.1.weight", &[c, c, 3, 3], 9 * c, &mut r);
        p.push_fan_in("proxy.1.bias", &[c], 9 * c, &mut r);
        PerceptualProxy { params: p }
    }

    fn features(&self, g: &mut Graph, p: &BoundParams, x: NodeId) -> Result<[NodeId; 2]> {
        let h0 = g.conv2d(
            x,
            p.id("proxy.0.weight"),
            Some(p.id("proxy.0.bias")),
            [1, 1],
        )?;
        let h0 = g.tanh(h0);
        let f0 = g.channel_unit_norm(h0, UNIT_NORM_EPS)?;
        let s = g.shape(h0);
        let pooled = if s[2] >= 2 && s[3] >= 2 {
            g.avg_pool2d(h0, [2, 2])?
        } else {
            h0
        };
        let h1 = g.conv2d(
            pooled,
            p.id("proxy.1.weight"),
            Some(p.id("proxy.1.bias")),
            [1, 1],
        )?;
        let h1 = g.tanh(h1);
        Ok([f0, g.channel_unit_norm(h1, UNIT_NORM_EPS)?])
    }

    /// Distance node between two `[N, 1, H, W]` inputs.
    pub fn distance_node(&self, g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.params.bind(g, false);
        let fa = self.features(g, &p, a)?;
        let fb = self.features(g, &p, b)?;
        let mut total = None;
        for (x, y) in fa.into_iter().zip(fb) {
            let d = g.sub(x, y)?;
            let d = g.square(d);
            let m = g.mean(d);
            total = Some(match total {
                None => m,
                Some(t) => g.add(t, m)?,
            });
        }
        Ok(g.scale(total.expect("two layers"), 0.5))
    }

    pub fn distance(&self, a: &GrayImage, b: &GrayImage) -> Result<f64> {
        if (a.height, a.width) != (b.height, b.width) {
            return Err(Error::invalid(
                "perceptual proxy needs images of equal shape",
            ));
        }
        let mut g = Graph::new();
        let (xa, xb) = (g.constant(a.to_tensor()), g.constant(b.to_tensor()));
        let d = self.distance_node(&mut g, xa, xb)?;
        Ok(g.value(d).data()[0])
    }
}

/// Perturbation budget and loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialBudget {
    /// Per-pixel ∞-norm bound η.
    pub eta: f64,
    /// Step size μ.
    pub mu: f64,
    pub iterations: usize,
    /// Weight λ₁ of the temporal embedding term.
    pub lambda1: f64,
    /// Weight λ₂ of the pixel-similarity term.
    pub lambda2: f64,
}

impl AdversarialBudget {
    /// `μ = 1/255`, `T = 40`, `λ₁ = λ₂ = 1`.
    pub fn with_eta(eta: f64) -> Self {
        AdversarialBudget {
            eta,
            mu: 1.0 / 255.0,
            iterations: 40,
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eta.is_finite()
            && self.eta > 0.0
            && self.mu.is_finite()
            && self.mu > 0.0
            && self.lambda1.is_finite()
            && self.lambda2.is_finite();
        if !ok {
            return Err(Error::invalid(format!(
                "budget needs finite eta > 0, mu > 0 and finite weights, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Which objective a defense optimizes.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Pull embeddings toward the target image's.
    Directed { target: &'a GrayImage },
    /// Push embeddings away from the original's.
    Undirected,
}

fn check_images(images: &[&GrayImage]) -> Result<()> {
    let (h, w) = (images[0].height, images[0].width);
    if images.iter().any(|i| (i.height, i.width) != (h, w)) {
        return Err(Error::invalid("defense images must share one shape"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
/// Objective value at `x_hat` and, when `grad`, its gradient with respect to `x_hat`.
///
/// Directed: `‖E₁(x̂)−E₁(x̃)‖ + λ₁‖E₂(x̂)−E₂(x̃)‖ + λ₂(‖x̂−x‖₂ + proxy(x̂, x))`.
/// Undirected: `‖E₁(x̂)−E₁(x)‖ + λ₁‖E₂(x̂)−E₂(x)‖ − λ₂(‖x̂−x‖₂ + proxy(x̂, x))`.
pub fn objective_value(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    objective: Objective<'_>,
    x_hat: &Tensor,
    x: &GrayImage,
    lambda1: f64,
    lambda2: f64,
    grad: bool,
) -> Result<(f64, Option<Tensor>)> {
    let reference = match objective {
        Objective::Directed { target } => target,
        Objective::Undirected => x,
    };
    check_images(&[x, reference])?;
    if x_hat.shape() != [1, 1, x.height, x.width] {
        return Err(Error::invalid(format!(
            "x_hat has shape {:?}, expected [1, 1, {}, {}]",
            x_hat.shape(),
            x.height,
            x.width
        )));
    }
    let mut g = Graph::new();
    let b = enc.bind(&mut g);
    let xh = if grad {
        g.variable(x_hat.clone())
    } else {
        g.constant(x_hat.clone())
    };
    let x0 = g.constant(x.to_tensor());
    let r = g.constant(reference.to_tensor());
    let (s_hat, s_ref) = (
        enc.spatial_node(&mut g, &b, xh)?,
        enc.spatial_node(&mut g, &b, r)?,
    );
    let (t_hat, t_ref) = (
        enc.temporal_node(&mut g, &b, xh)?,
        enc.temporal_node(&mut g, &b, r)?,
    );
    let e1 = enc.distance_node(&mut g, s_hat, s_ref)?;
    let e2 = enc.distance_node(&mut g, t_hat, t_ref)?;
    let e2 = g.scale(e2, lambda1);
    let diff = g.sub(xh, x0)?;
    let l2 = g.l2_norm(diff);
    let perc = proxy.distance_node(&mut g, xh, x0)?;
    let pixel = g.add(l2, perc)?;
    let sign = match objective {
        Objective::Directed { .. } => lambda2,
        Objective::Undirected => -lambda2,
    };
    let pixel = g.scale(pixel, sign);
    let emb = g.add(e1, e2)?;
    let loss = g.add(emb, pixel)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("defense objective".into()));
    }
    let gradient = if grad {
        Some(g.backward(loss)?.wrt(xh))
    } else {
        None
    };
    Ok((value, gradient))
}

pub fn directed_loss(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    x_hat: &GrayImage,
    target: &GrayImage,
    x: &GrayImage,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_images(&[x_hat, x])?;
    let objective = Objective::Directed { target };
    objective_value(
        enc,
        proxy,
        objective,
        &x_hat.to_tensor(),
        x,
        lambda1,
        lambda2,
        false,
    )
    .map(|r| r.0)
}

pub fn undirected_loss(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    x_hat: &GrayImage,
    x: &GrayImage,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    check_images(&[x_hat, x])?;
    let objective = Objective::Undirected;
    objective_value(
        enc,
        proxy,
        objective,
        &x_hat.to_tensor(),
        x,
        lambda1,
        lambda2,
        false,
    )
    .map(|r| r.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DefenseResult {
    #[serde(skip)]
    pub immunized: GrayImage,
    /// Objective value at the start of each iteration.
    pub loss_trace: Vec<f64>,
    /// E₁/E₂ distances to the reference (the target when directed, the original otherwise)
    /// before and after the defense.
    pub initial_spatial: f64,
    pub final_spatial: f64,
    pub initial_temporal: f64,
    pub final_temporal: f64,
    /// Achieved `‖x̂ − x‖∞`.
    pub linf: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projects `v` into `[x − η, x + η] ∩ [0, 1]`, exactly under floating-point subtraction.
pub fn project(v: f64, x: f64, eta: f64) -> f64 {
    let mut p = x + (v - x).clamp(-eta, eta);
    while p - x > eta {
        p = p.next_down();
    }
    while x - p > eta {
        p = p.next_up();
    }
    p.clamp(0.0, 1.0)
}

fn pgd(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    objective: Objective<'_>,
    x: &GrayImage,
    budget: &AdversarialBudget,
    random_start: Option<u64>,
) -> Result<DefenseResult> {
    budget.validate()?;
    let reference = match objective {
        Objective::Directed { target } => target,
        Objective::Undirected => x,
    };
    check_images(&[x, reference])?;
    if x.data
        .iter()
        .chain(&reference.data)
        .any(|v| !(0.0..=1.0).contains(v))
    {
        return Err(Error::invalid("defense images must lie in [0, 1]"));
    }
    let (initial_spatial, initial_temporal) = enc.distances(x, reference)?;
    // Descent for the directed objective, ascent for the undirected one.
    let direction = match objective {
        Objective::Directed { .. } => -1.0,
        Objective::Undirected => 1.0,
    };
    let mut xh = x.to_tensor();
    let mut trace = Vec::with_capacity(budget.iterations);
    for it in 0..budget.iterations {
        if it == 0 {
            if let Some(seed) = random_start {
                // At x̂ = x the undirected objective has a zero subgradient.
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                for (v, &x0) in xh.data_mut().iter_mut().zip(&x.data) {
                    *v = project(
                        x0 + r.random_range(-budget.eta..=budget.eta),
                        x0,
                        budget.eta,
                    );
                }
            }
        }
        let (loss, grad) = objective_value(
            enc,
            proxy,
            objective,
            &xh,
            x,
            budget.lambda1,
            budget.lambda2,
            true,
        )?;
        trace.push(loss);
        let grad = grad.expect("gradient requested");
        for ((v, &gr), &x0) in xh.data_mut().iter_mut().zip(grad.data()).zip(&x.data) {
            *v = project(*v + direction * budget.mu * sign(gr), x0, budget.eta);
        }
    }
    let immunized = GrayImage::new(x.height, x.width, xh.into_data())?;
    let (final_spatial, final_temporal) = enc.distances(&immunized, reference)?;
    Ok(DefenseResult {
        linf: immunized.linf_distance(x),
        immunized,
        loss_trace: trace,
        initial_spatial,
        final_spatial,
        initial_temporal,
        final_temporal,
    })
}

/// Signed gradient descent on the directed objective, starting from `x`.
pub fn directed_defense(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    x: &GrayImage,
    target: &GrayImage,
    budget: &AdversarialBudget,
) -> Result<DefenseResult> {
    pgd(enc, proxy, Objective::Directed { target }, x, budget, None)
}

/// Signed gradient ascent on the undirected objective from a seeded uniform start in the
/// η-ball.
pub fn undirected_defense(
    enc: &EncoderPair,
    proxy: &PerceptualProxy,
    x: &GrayImage,
    budget: &AdversarialBudget,
    seed: u64,
) -> Result<DefenseResult> {
    pgd(enc, proxy, Objective::Undirected, x, budget, Some(seed))
}

/// Effect of an immunized image on a conditional generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImmunizationReport {
    pub generator: String,
    pub seed: u64,
    /// Video conditioned on `x` against video conditioned on `x̂`.
    pub clean_vs_immunized: QualityReport,
    /// Each output against the still video of the conditioning image `x`.
    pub clean_vs_reference: QualityReport,
    pub immunized_vs_reference: QualityReport,
    pub clean_motion: f64,
    pub immunized_motion: f64,
    /// `immunized_motion − clean_motion`.
    pub motion_delta: f64,
}

/// Samples the generator from `x` and from `x̂` with the same seed and compares the outputs.
pub fn immunization_report(
    x: &GrayImage,
    x_hat: &GrayImage,
    generator: &ToyGenerator,
    frames: usize,
    seed: u64,
    proxy: &PerceptualProxy,
) -> Result<ImmunizationReport> {
    if !generator.variant.conditional {
        return Err(Error::invalid(format!(
            "generator {} is not image-conditioned",
            generator.id()
        )));
    }
    check_images(&[x, x_hat])?;
    let (h, w) = (x.height, x.width);
    let clean = generator.sample(frames, h, w, seed, Some(x))?;
    let immunized = generator.sample(frames, h, w, seed, Some(x_hat))?;
    let reference = VideoTensor::from_frames(&vec![x.clone(); frames])?;
    let motion = |v: &VideoTensor| motion_stats(v, 4, 2).map(|m| m.mean_magnitude);
    let (clean_motion, immunized_motion) = (motion(&clean)?, motion(&immunized)?);
    Ok(ImmunizationReport {
        generator: generator.id().to_string(),
        seed,
        clean_vs_immunized: video_quality(&clean, &immunized, proxy)?,
        clean_vs_reference: video_quality(&clean, &reference, proxy)?,
        immunized_vs_reference: video_quality(&immunized, &reference, proxy)?,
        clean_motion,
        immunized_motion,
        motion_delta: immunized_motion - clean_motion,
    })
}
