//! Toy diffusion video generators: a small convolutional noise predictor shared
//! across frames, a learned temporal mixing of the prediction, and a fixed
//! decoder from the denoised latent grid to output frames.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{diffuse_forward, posterior_mean, NoiseSchedule};
use crate::autodiff::{BoundParams, Graph, NodeId, ParamStore};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::video::{GrayImage, VideoTensor};

pub const TIME_EMBED_DIM: usize = 8;

/// Architecture and schedule of one generator family member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorVariant {
    pub id: String,
    /// Whether the first frame of a reference video is fed as an extra input channel.
    pub conditional: bool,
    /// Odd number of frames mixed by the temporal layer.
    pub temporal_width: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: usize,
    #[serde(default)]
    pub decoder: Decoder,
}

/// Parameter-free map from the latent grid the denoiser works on to output frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    #[default]
    Identity,
    /// Half-resolution latent; every latent pixel becomes a 2×2 block.
    NearestSpatial,
    /// Half-frame-rate latent; every latent frame is shown twice.
    RepeatTemporal,
    /// Half-frame-rate latent; odd frames average their two neighbours.
    LinearTemporal,
}

impl Decoder {
    /// Latent `(frames, height, width)` for an output of the given size.
    pub fn latent_dims(
        self,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<(usize, usize, usize)> {
        match self {
            Decoder::Identity => Ok((frames, height, width)),
            Decoder::NearestSpatial => {
                if !height.is_multiple_of(2) || !width.is_multiple_of(2) {
                    return Err(Error::invalid(format!(
                        "nearest decoder needs even frame sides, got {height}x{width}"
                    )));
                }
                Ok((frames, height / 2, width / 2))
            }
            Decoder::RepeatTemporal | Decoder::LinearTemporal => {
                Ok((frames.div_ceil(2), height, width))
            }
        }
    }

    /// Encodes a `[T, 1, H, W]` clip: 2×2 mean pooling or even-frame subsampling.
    pub fn encode(self, clip: &Tensor) -> Result<Tensor> {
        let s = clip.shape();
        let (t, h, w) = (s[0], s[2], s[3]);
        let (lt, lh, lw) = self.latent_dims(t, h, w)?;
        let v = clip.data();
        let out = match self {
            Decoder::Identity => v.to_vec(),
            Decoder::NearestSpatial => {
                let mut out = Vec::with_capacity(lt * lh * lw);
                for f in 0..t {
                    for y in 0..lh {
                        for x in 0..lw {
                            let at =
                                |dy: usize, dx: usize| v[(f * h + 2 * y + dy) * w + 2 * x + dx];
                            out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
                        }
                    }
                }
                out
            }
            Decoder::RepeatTemporal | Decoder::LinearTemporal => (0..lt)
                .flat_map(|f| v[2 * f * h * w..(2 * f + 1) * h * w].to_vec())
                .collect(),
        };
        Tensor::new([lt, 1, lh, lw], out)
    }

    pub fn encode_image(self, img: &GrayImage) -> Result<GrayImage> {
        let t = self.encode(&img.to_tensor())?;
        GrayImage::new(t.shape()[2], t.shape()[3], t.into_data())
    }

    /// Decodes a latent `[T', 1, H', W']` to `[frames, 1, height, width]`.
    pub fn decode(
        self,
        latent: &Tensor,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Tensor> {
        let s = latent.shape();
        let expected = self.latent_dims(frames, height, width)?;
        if (s[0], s[2], s[3]) != expected {
            return Err(Error::invalid(format!(
                "latent {s:?} does not decode to {frames}x{height}x{width}"
            )));
        }
        let v = latent.data();
        let plane = height * width;
        let frame = |f: usize| &v[f * plane..(f + 1) * plane];
        let out: Vec<f64> = match self {
            Decoder::Identity => v.to_vec(),
            Decoder::NearestSpatial => {
                let (lh, lw) = (height / 2, width / 2);
                (0..frames * plane)
                    .map(|i| {
                        let (f, y, x) = (i / plane, (i % plane) / width, i % width);
                        v[(f * lh + y / 2) * lw + x / 2]
                    })
                    .collect()
            }
            Decoder::RepeatTemporal => (0..frames).flat_map(|f| frame(f / 2).to_vec()).collect(),
            Decoder::LinearTemporal => {
                let last = s[0] - 1;
                (0..frames)
                    .flat_map(|f| {
                        let (a, b) = (frame(f / 2), frame((f / 2 + f % 2).min(last)));
                        a.iter()
                            .zip(b)
                            .map(|(p, q)| 0.5 * (p + q))
                            .collect::<Vec<_>>()
                    })
                    .collect()
            }
        };
        Tensor::new([frames, 1, height, width], out)
    }
}

impl GeneratorVariant {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_width.is_multiple_of(2) || self.hidden == 0 {
            return Err(Error::invalid(format!(
                "variant {}: temporal width must be odd and hidden width positive",
                self.id
            )));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        if self.conditional {
            2
        } else {
            1
        }
    }
}

/// Two unconditional text-to-video stand-ins and two first-frame-conditioned image-to-video ones.
pub fn standard_variants() -> Vec<GeneratorVariant> {
    let v = |id: &str, conditional, temporal_width, diffusion_steps, beta_end, hidden, decoder| {
        GeneratorVariant {
            id: id.to_string(),
            conditional,
            temporal_width,
            diffusion_steps,
            beta_start: 1e-4,
            beta_end,
            hidden,
            decoder,
        }
    };
    vec![
        v("t2v-a", false, 1, 50, 2e-2, 6, Decoder::Identity),
        v("t2v-b", false, 5, 25, 4e-2, 8, Decoder::NearestSpatial),
        v("i2v-c", true, 3, 50, 2e-2, 6, Decoder::RepeatTemporal),
        v("i2v-d", true, 7, 35, 3e-2, 8, Decoder::LinearTemporal),
    ]
}

/// Sinusoidal embedding of the diffusion step.
pub fn time_embedding(t: usize) -> Tensor {
    let half = TIME_EMBED_DIM / 2;
    let mut out = Vec::with_capacity(TIME_EMBED_DIM);
    for i in 0..half {
        let freq = 1.0 / 100f64.powf(i as f64 / half as f64);
        out.push((t as f64 * freq).sin());
        out.push((t as f64 * freq).cos());
    }
    Tensor::new([1, TIME_EMBED_DIM], out).expect("embedding size")
}

/// Input scale that keeps `x_t` near unit variance for data in `[0, 1]`.
fn input_scale(schedule: &NoiseSchedule, t: usize) -> f64 {
    let ab = schedule.alpha_bar(t);
    1.0 / (0.25 * ab + 1.0 - ab).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyGenerator {
    pub variant: GeneratorVariant,
    pub schedule: NoiseSchedule,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    variant: GeneratorVariant,
    schedule: NoiseSchedule,
}

impl ToyGenerator {
    /// Randomly initialized generator; the temporal layer starts as the identity.
    pub fn new(variant: &GeneratorVariant, seed: u64) -> Result<Self> {
        variant.validate()?;
        let schedule = variant.schedule()?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (c, cin, w) = (
            variant.hidden,
            variant.input_channels(),
            variant.temporal_width,
        );
        let mut p = ParamStore::new();
        p.push_fan_in("in.weight", &[c, cin, 3, 3], cin * 9, &mut r);
        p.push_fan_in("in.bias", &[c], cin * 9, &mut r);
        p.push_fan_in("time.weight", &[c, TIME_EMBED_DIM], TIME_EMBED_DIM, &mut r);
        p.push("time.bias", Tensor::zeros([c]));
        p.push_fan_in("out.weight", &[1, c, 3, 3], c * 9, &mut r);
        p.push("out.bias", Tensor::zeros([1]));
        p.push(
            "temporal.weight",
            Tensor::from_fn([1, 1, w, 1, 1], |i| if i == w / 2 { 1.0 } else { 0.0 }),
        );
        Ok(ToyGenerator {
            variant: variant.clone(),
            schedule,
            params: p,
        })
    }

    pub fn id(&self) -> &str {
        &self.variant.id
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Noise prediction graph for `x_t [T, 1, H, W]`; `cond` is `[T, 1, H, W]` or absent.
    pub fn predict_node(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x_t: NodeId,
        cond: Option<NodeId>,
        t: usize,
    ) -> Result<NodeId> {
        let shape = g.shape(x_t).to_vec();
        if shape.len() != 4 || shape[1] != 1 {
            return Err(Error::invalid(format!(
                "generator input must be [T, 1, H, W], got {shape:?}"
            )));
        }
        let (frames, h, w) = (shape[0], shape[2], shape[3]);
        let scaled = g.scale(x_t, input_scale(&self.schedule, t));
        let input = if self.variant.conditional {
            let c = match cond {
                Some(c) => c,
                None => g.constant(Tensor::zeros(shape.clone())),
            };
            g.concat_channels(&[scaled, c])?
        } else {
            scaled
        };
        let hid = g.conv2d(input, p.id("in.weight"), Some(p.id("in.bias")), [1, 1])?;
        let emb = g.constant(time_embedding(t));
        let temb = g.linear(emb, p.id("time.weight"), Some(p.id("time.bias")))?;
        let temb = g.reshape(temb, [self.variant.hidden])?;
        let hid = g.channel_bias(hid, temb)?;
        let hid = g.relu(hid);
        let out = g.conv2d(hid, p.id("out.weight"), Some(p.id("out.bias")), [1, 1])?;
        let stacked = g.reshape(out, [1, 1, frames, h, w])?;
        let pad = self.variant.temporal_width / 2;
        let mixed = g.conv3d(stacked, p.id("temporal.weight"), None, [pad, 0, 0])?;
        g.reshape(mixed, [frames, 1, h, w])
    }

    /// `mean((noise - ε_θ(x_t, t))²)` as a graph node, with `x_t` formed from `x0` and `noise`.
    pub fn loss_node(
        &self,
        g: &mut Graph,
        p: &BoundParams,
        x0: &Tensor,
        t: usize,
        noise: &Tensor,
        cond: Option<&Tensor>,
    ) -> Result<NodeId> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::invalid(format!(
                "diffusion step {t} outside [1, {}]",
                self.schedule.steps()
            )));
        }
        let x_t = g.constant(diffuse_forward(x0, t, &self.schedule, noise)?);
        let c = cond.map(|c| g.constant(c.clone()));
        let pred = self.predict_node(g, p, x_t, c, t)?;
        let target = g.constant(noise.clone());
        noise_prediction_loss(g, target, pred)
    }

    /// Scalar denoising loss for one `(x0, t, noise)` triple.
    pub fn denoiser_loss(
        &self,
        x0: &Tensor,
        t: usize,
        noise: &Tensor,
        cond: Option<&Tensor>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let l = self.loss_node(&mut g, &p, x0, t, noise, cond)?;
        Ok(g.value(l).data()[0])
    }

    pub fn predict_noise(&self, x_t: &Tensor, cond: Option<&Tensor>, t: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(x_t.clone());
        let c = cond.map(|c| g.constant(c.clone()));
        let out = self.predict_node(&mut g, &p, x, c, t)?;
        Ok(g.value(out).clone())
    }

    /// Ancestral sampling from standard normal noise on the latent grid, then decoding;
    /// the result is clamped to `[0, 1]`.
    pub fn sample(
        &self,
        frames: usize,
        height: usize,
        width: usize,
        seed: u64,
        cond: Option<&GrayImage>,
    ) -> Result<VideoTensor> {
        if cond.is_some() && !self.variant.conditional {
            return Err(Error::invalid(format!(
                "generator {} takes no conditioning frame",
                self.id()
            )));
        }
        let decoder = self.variant.decoder;
        let (lt, lh, lw) = decoder.latent_dims(frames, height, width)?;
        let shape = [lt, 1, lh, lw];
        let cond = match cond {
            Some(img) => {
                if (img.height, img.width) != (height, width) {
                    return Err(Error::invalid(format!(
                        "conditioning frame is {}x{}, expected {height}x{width}",
                        img.height, img.width
                    )));
                }
                Some(repeat_frame(&decoder.encode_image(img)?, lt))
            }
            None => None,
        };
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::randn(shape, &mut r);
        for t in (1..=self.schedule.steps()).rev() {
            let eps = self.predict_noise(&x, cond.as_ref(), t)?;
            let mu = posterior_mean(&x, &eps, t, &self.schedule)?;
            x = if t > 1 {
                let sigma = self.schedule.sigma(t);
                let z = Tensor::randn(shape, &mut r);
                Tensor::new(
                    shape,
                    mu.data()
                        .iter()
                        .zip(z.data())
                        .map(|(m, z)| m + sigma * z)
                        .collect(),
                )?
            } else {
                mu
            };
            if !x.all_finite() {
                return Err(Error::NonFinite(format!(
                    "sampling {} at step {t}",
                    self.id()
                )));
            }
        }
        VideoTensor::from_tensor(&decoder.decode(&x, frames, height, width)?)
    }

    /// Writes `<stem>.ckpt` and the `<stem>.json` sidecar.
    pub fn save(&self, stem: &Path) -> Result<()> {
        checkpoint::save(&stem.with_extension("ckpt"), &self.params)?;
        let sidecar = Sidecar {
            variant: self.variant.clone(),
            schedule: self.schedule.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        let path = stem.with_extension("json");
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let path = stem.with_extension("json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let params = checkpoint::load(&stem.with_extension("ckpt"))?;
        let reference = ToyGenerator::new(&sidecar.variant, 0)?;
        let shapes_match = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
        if !shapes_match {
            return Err(Error::format(
                stem.display().to_string(),
                "checkpoint tensors do not match the variant architecture",
            ));
        }
        Ok(ToyGenerator {
            schedule: sidecar.variant.schedule()?,
            variant: sidecar.variant,
            params,
        })
    }
}

/// `mean((target - pred)²)`.
pub fn noise_prediction_loss(g: &mut Graph, target: NodeId, pred: NodeId) -> Result<NodeId> {
    let diff = g.sub(target, pred)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `[T, 1, H, W]` tensor repeating `img` in every frame.
pub fn repeat_frame(img: &GrayImage, frames: usize) -> Tensor {
    let n = img.data.len();
    Tensor::from_fn([frames, 1, img.height, img.width], |i| img.data[i % n])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTraining {
    pub steps: usize,
    pub clip_frames: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for GeneratorTraining {
    fn default() -> Self {
        GeneratorTraining {
            steps: 1200,
            clip_frames: 8,
            adam: AdamConfig::with_rate(3e-3, 50),
            seed: 0,
        }
    }
}

/// Loss history of a generator training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub losses: Vec<f64>,
    /// Fixed probe-batch loss at initialization.
    pub probe_initial: f64,
    /// Fixed probe-batch loss after the first pass over the corpus.
    pub probe_after_first_epoch: f64,
}

struct Example {
    x0: Tensor,
    cond: Option<Tensor>,
    t: usize,
    noise: Tensor,
}

/// A random clip of `video`, encoded to the variant's latent grid.
fn draw_example(
    video: &VideoTensor,
    gen: &ToyGenerator,
    clip: usize,
    r: &mut ChaCha8Rng,
) -> Result<Example> {
    let luma = video.to_luma();
    let clip = clip.min(luma.frames());
    let start = r.random_range(0..=luma.frames() - clip);
    let (h, w) = (luma.height(), luma.width());
    let data = (start..start + clip)
        .flat_map(|f| luma.frame(f).to_vec())
        .collect();
    let decoder = gen.variant.decoder;
    let x0 = decoder.encode(&Tensor::new([clip, 1, h, w], data)?)?;
    let lt = x0.shape()[0];
    let cond = if gen.variant.conditional {
        Some(repeat_frame(
            &decoder.encode_image(&luma.luma_image(0))?,
            lt,
        ))
    } else {
        None
    };
    let t = r.random_range(1..=gen.schedule.steps());
    let noise = Tensor::randn(x0.shape().to_vec(), r);
    Ok(Example { x0, cond, t, noise })
}

fn mean_loss(gen: &ToyGenerator, batch: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for e in batch {
        total += gen.denoiser_loss(&e.x0, e.t, &e.noise, e.cond.as_ref())?;
    }
    Ok(total / batch.len() as f64)
}

/// Trains a generator on real videos of one family; one clip per step, seeded epoch shuffles.
pub fn train_toy_generator(
    corpus: &[VideoTensor],
    variant: &GeneratorVariant,
    cfg: &GeneratorTraining,
) -> Result<(ToyGenerator, TrainingTrace)> {
    if corpus.is_empty() {
        return Err(Error::invalid(
            "generator training needs at least one video",
        ));
    }
    let mut gen = ToyGenerator::new(variant, cfg.seed)?;
    if gen.schedule.steps() == 0 {
        return Err(Error::invalid(format!(
            "variant {} has no diffusion steps to train",
            variant.id
        )));
    }
    let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_0000);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0b0b_e000);
    let probe: Vec<Example> = (0..corpus.len().min(8))
        .map(|i| draw_example(&corpus[i], &gen, cfg.clip_frames, &mut probe_rng))
        .collect::<Result<_>>()?;
    let probe_initial = mean_loss(&gen, &probe)?;
    let mut probe_after_first_epoch = probe_initial;
    let mut adam = AdamState::new(cfg.adam, &gen.params)?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        let pos = step % corpus.len();
        if pos == 0 {
            order = (0..corpus.len()).collect();
            shuffle(&mut order, &mut r);
        }
        let ex = draw_example(&corpus[order[pos]], &gen, cfg.clip_frames, &mut r)?;
        let mut g = Graph::new();
        let p = gen.params.bind(&mut g, true);
        let loss = gen.loss_node(&mut g, &p, &ex.x0, ex.t, &ex.noise, ex.cond.as_ref())?;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged {
                step: step + 1,
                what: format!("generator {} loss is {value}", variant.id),
            });
        }
        losses.push(value);
        let grads = p.gradients(&g.backward(loss)?);
        adam.step(&mut gen.params, &grads)
            .map_err(|e| Error::Diverged {
                step: step + 1,
                what: e.to_string(),
            })?;
        if step + 1 == corpus.len() {
            probe_after_first_epoch = mean_loss(&gen, &probe)?;
        }
    }
    if cfg.steps < corpus.len() {
        probe_after_first_epoch = mean_loss(&gen, &probe)?;
    }
    Ok((
        gen,
        TrainingTrace {
            losses,
            probe_initial,
            probe_after_first_epoch,
        },
    ))
}

/// Seeded Fisher-Yates shuffle.
pub(crate) fn shuffle<T>(items: &mut [T], r: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = r.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Output of a two-stage generator pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainedSample {
    /// Stage ids joined with `+` in pipeline order.
    pub generator_id: String,
    pub first_stage: VideoTensor,
    /// First frame of the first stage, fed to the second stage as conditioning.
    pub condition: GrayImage,
    pub video: VideoTensor,
    pub second_stage_seed: u64,
}

/// Seed used by the second stage of a chain started with `seed`.
pub fn second_stage_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17) ^ 0xc4a1_0000
}

/// Runs `a`, then conditions `b` on the first frame of `a`'s output.
pub fn chain_generators(
    a: &ToyGenerator,
    b: &ToyGenerator,
    first_condition: Option<&GrayImage>,
    frames: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<ChainedSample> {
    if !b.variant.conditional {
        return Err(Error::invalid(format!(
            "second pipeline stage {} must accept a conditioning frame",
            b.id()
        )));
    }
    let first_condition = if a.variant.conditional {
        first_condition
    } else {
        None
    };
    let first_stage = a.sample(frames, height, width, seed, first_condition)?;
    let condition = first_stage.luma_image(0);
    let s2 = second_stage_seed(seed);
    let video = b.sample(frames, height, width, s2, Some(&condition))?;
    Ok(ChainedSample {
        generator_id: format!("{}+{}", a.id(), b.id()),
        first_stage,
        condition,
        video,
        second_stage_seed: s2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference, relative_error};

    fn tiny_variant(conditional: bool) -> GeneratorVariant {
        GeneratorVariant {
            id: "tiny".into(),
            conditional,
            temporal_width: 3,
            diffusion_steps: 10,
            beta_start: 1e-3,
            beta_end: 5e-2,
            hidden: 3,
            decoder: Decoder::Identity,
        }
    }

    #[test]
    fn variants_have_distinct_parameter_counts() {
        let vs = standard_variants();
        let counts: Vec<usize> = vs
            .iter()
            .map(|v| ToyGenerator::new(v, 0).unwrap().param_count())
            .collect();
        // hidden·(cin·9 + 1) + hidden·(8 + 1) + 9·hidden + 1 + temporal width
        for (v, &n) in vs.iter().zip(&counts) {
            let c = v.hidden;
            let cin = if v.conditional { 2 } else { 1 };
            assert_eq!(
                n,
                c * (cin * 9 + 1) + c * 9 + 9 * c + 1 + v.temporal_width,
                "{}",
                v.id
            );
        }
        let mut unique = counts.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn zero_predictor_loss_is_mean_squared_noise() {
        let mut gen = ToyGenerator::new(&tiny_variant(false), 1).unwrap();
        gen.params
            .tensors_mut()
            .for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let x0 = Tensor::uniform([4, 1, 16, 16], 0.0, 1.0, &mut r);
        let noise = Tensor::randn([4, 1, 16, 16], &mut r);
        let loss = gen.denoiser_loss(&x0, 5, &noise, None).unwrap();
        let expected = noise.data().iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 1.0).abs() < 0.15);
    }

    #[test]
    fn oracle_prediction_has_zero_loss() {
        let mut g = Graph::new();
        let noise = Tensor::from_fn([2, 1, 3, 3], |i| (i as f64).sin());
        let a = g.constant(noise.clone());
        let b = g.constant(noise);
        let l = noise_prediction_loss(&mut g, a, b).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);
    }

    #[test]
    fn denoiser_loss_gradient_matches_finite_differences() {
        let gen = ToyGenerator::new(&tiny_variant(true), 3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let x0 = Tensor::uniform([3, 1, 5, 5], 0.0, 1.0, &mut r);
        let noise = Tensor::randn([3, 1, 5, 5], &mut r);
        let cond = Tensor::uniform([3, 1, 5, 5], 0.0, 1.0, &mut r);
        let mut g = Graph::new();
        let p = gen.params.bind(&mut g, true);
        let l = gen
            .loss_node(&mut g, &p, &x0, 7, &noise, Some(&cond))
            .unwrap();
        let grads = p.gradients(&g.backward(l).unwrap());
        for (k, (name, value)) in gen.params.iter().enumerate() {
            let numeric = finite_difference(
                |probe| {
                    let mut trial = gen.clone();
                    *trial.params.tensors_mut().nth(k).unwrap() = probe.clone();
                    trial.denoiser_loss(&x0, 7, &noise, Some(&cond)).unwrap()
                },
                value,
                1e-5,
            );
            let err = relative_error(&grads[k], &numeric);
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn zero_step_schedule_returns_clamped_noise() {
        let mut v = tiny_variant(false);
        v.diffusion_steps = 0;
        let gen = ToyGenerator::new(&v, 0).unwrap();
        let out = gen.sample(2, 4, 4, 9, None).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let noise = Tensor::randn([2, 1, 4, 4], &mut r);
        assert_eq!(out, VideoTensor::from_tensor(&noise).unwrap());
    }

    #[test]
    fn sampling_is_deterministic() {
        let gen = ToyGenerator::new(&tiny_variant(true), 5).unwrap();
        let cond = GrayImage::filled(6, 6, 0.3);
        let a = gen.sample(3, 6, 6, 77, Some(&cond)).unwrap();
        let b = gen.sample(3, 6, 6, 77, Some(&cond)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_example_overfits() {
        let mut v = tiny_variant(false);
        v.hidden = 8;
        let gen = ToyGenerator::new(&v, 6).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let x0 = Tensor::uniform([2, 1, 8, 8], 0.0, 1.0, &mut r);
        let noise = Tensor::randn([2, 1, 8, 8], &mut r);
        let t = 10;
        let mut gen = gen;
        let initial = gen.denoiser_loss(&x0, t, &noise, None).unwrap();
        let mut adam = AdamState::new(AdamConfig::with_rate(1e-2, 0), &gen.params).unwrap();
        for _ in 0..200 {
            let mut g = Graph::new();
            let p = gen.params.bind(&mut g, true);
            let l = gen.loss_node(&mut g, &p, &x0, t, &noise, None).unwrap();
            let grads = p.gradients(&g.backward(l).unwrap());
            adam.step(&mut gen.params, &grads).unwrap();
        }
        let final_loss = gen.denoiser_loss(&x0, t, &noise, None).unwrap();
        assert!(final_loss < 0.1 * initial, "{final_loss} vs {initial}");
    }

    #[test]
    fn checkpoint_round_trip_and_determinism() {
        let corpus: Vec<VideoTensor> = (0..3)
            .map(|s| {
                let scene = super::super::SceneSpec::random(0, s, 16, 16).unwrap();
                super::super::render_real_video(&scene, 8, 16, 16).unwrap()
            })
            .collect();
        let cfg = GeneratorTraining {
            steps: 6,
            clip_frames: 4,
            adam: AdamConfig::with_rate(1e-3, 2),
            seed: 8,
        };
        let v = &standard_variants()[3];
        let (a, _) = train_toy_generator(&corpus, v, &cfg).unwrap();
        let (b, _) = train_toy_generator(&corpus, v, &cfg).unwrap();
        assert_eq!(checkpoint::encode(&a.params), checkpoint::encode(&b.params));
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("gen");
        a.save(&stem).unwrap();
        assert_eq!(ToyGenerator::load(&stem).unwrap(), a);
    }

    #[test]
    fn decoders_round_trip_and_leave_signatures() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let latent = Tensor::uniform([3, 1, 2, 2], 0.0, 1.0, &mut r);
        let near = Decoder::NearestSpatial.decode(&latent, 3, 4, 4).unwrap();
        assert_eq!(near.data()[0], near.data()[5]);
        assert_eq!(Decoder::NearestSpatial.encode(&near).unwrap(), latent);
        let rep = Decoder::RepeatTemporal.decode(&latent, 6, 2, 2).unwrap();
        assert_eq!(&rep.data()[0..4], &rep.data()[4..8]);
        assert_eq!(Decoder::RepeatTemporal.encode(&rep).unwrap(), latent);
        let lin = Decoder::LinearTemporal.decode(&latent, 5, 2, 2).unwrap();
        let expect = 0.5 * (latent.data()[0] + latent.data()[4]);
        assert!((lin.data()[4] - expect).abs() < 1e-15);
        assert_eq!(Decoder::LinearTemporal.encode(&lin).unwrap(), latent);
        assert!(Decoder::NearestSpatial.latent_dims(2, 5, 4).is_err());
        let gen = ToyGenerator::new(&standard_variants()[1], 0).unwrap();
        let v = gen.sample(2, 8, 8, 1, None).unwrap();
        assert!((0..8)
            .step_by(2)
            .all(|y| v.frame(0)[y * 8] == v.frame(0)[(y + 1) * 8 + 1]));
    }

    #[test]
    fn unconditional_generator_rejects_conditioning() {
        let gen = ToyGenerator::new(&tiny_variant(false), 0).unwrap();
        assert!(gen
            .sample(2, 4, 4, 0, Some(&GrayImage::filled(4, 4, 0.5)))
            .is_err());
    }
}
