//! In-memory corpus assembly: real scenes, trained generators, fakes and chained fakes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::toy_world::{
    chain_generators, render_real_video, standard_variants, train_toy_generator, GeneratorTraining,
    GeneratorVariant, NextFramePredictor, SceneSpec, ToyGenerator,
};
use crate::video::{quantize_video, Label, ManifestEntry, VideoTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub families: Vec<u32>,
    pub real_per_family: usize,
    /// Fakes per family, chained samples included.
    pub fake_per_family: usize,
    pub chained_per_family: usize,
    pub variants: Vec<GeneratorVariant>,
    pub generator_training: GeneratorTraining,
    pub predictor_steps: usize,
    pub predictor_hidden: usize,
}

impl CorpusConfig {
    /// Desk-scale preset: 32×32, 16 frames, 200 real and 200 fake videos per family.
    pub fn full(seed: u64) -> Self {
        CorpusConfig {
            seed,
            height: 32,
            width: 32,
            frames: 16,
            families: vec![0, 1],
            real_per_family: 200,
            fake_per_family: 200,
            chained_per_family: 8,
            variants: standard_variants(),
            generator_training: GeneratorTraining {
                steps: 1200,
                clip_frames: 8,
                adam: AdamConfig::with_rate(3e-3, 50),
                seed,
            },
            predictor_steps: 300,
            predictor_hidden: 6,
        }
    }

    /// Small preset for quick end-to-end runs.
    pub fn smoke(seed: u64) -> Self {
        CorpusConfig {
            height: 16,
            width: 16,
            real_per_family: 16,
            fake_per_family: 16,
            chained_per_family: 2,
            generator_training: GeneratorTraining {
                steps: 120,
                clip_frames: 8,
                adam: AdamConfig::with_rate(3e-3, 20),
                seed,
            },
            predictor_steps: 60,
            ..Self::full(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.variants.is_empty() {
            return Err(Error::invalid(
                "corpus needs at least one family and one generator",
            ));
        }
        if self.chained_per_family > self.fake_per_family {
            return Err(Error::invalid("chained fakes exceed the fake count"));
        }
        if self.chained_per_family > 0 && !self.variants.iter().any(|v| v.conditional) {
            return Err(Error::invalid("chained fakes need a conditional generator"));
        }
        if self.frames < 2 || self.real_per_family == 0 {
            return Err(Error::invalid(
                "corpus needs at least two frames and one real video per family",
            ));
        }
        for v in &self.variants {
            v.validate()?;
            v.decoder
                .latent_dims(self.frames, self.height, self.width)?;
        }
        let mut ids: Vec<&str> = self.variants.iter().map(|v| v.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.variants.len() || ids.iter().any(|id| id.contains('+')) {
            return Err(Error::invalid(
                "generator ids must be unique and must not contain `+`",
            ));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer used to derive independent per-sample seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_seed(base: u64, family: u32, kind: &str, index: usize) -> u64 {
    let tag = kind.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    mix_seed(mix_seed(mix_seed(base, family as u64), tag), index as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub video: VideoTensor,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub samples: Vec<Sample>,
    /// Trained generators keyed by `(family, generator id)`.
    pub generators: BTreeMap<(u32, String), ToyGenerator>,
    pub predictor: NextFramePredictor,
}

impl Corpus {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.samples.iter().map(|s| s.entry.clone()).collect()
    }
}

pub fn real_path(family: u32, index: usize) -> String {
    format!("f{family}/real_{index:04}.tvid")
}

pub fn fake_path(family: u32, generator: &str, index: usize) -> String {
    format!("f{family}/{generator}_{index:04}.tvid")
}

/// Whether a real entry was rendered from a motionless scene.
pub fn is_still_real(config: &CorpusConfig, entry: &ManifestEntry) -> Result<bool> {
    if entry.label != Label::Real {
        return Ok(false);
    }
    let scene = SceneSpec::random(entry.family, entry.seed, config.height, config.width)?;
    Ok(scene.motion.is_still())
}

/// Real videos of `family` in manifest order.
pub fn render_reals(config: &CorpusConfig, family: u32) -> Result<Vec<Sample>> {
    (0..config.real_per_family)
        .map(|i| {
            let seed = sample_seed(config.seed, family, "real", i);
            let scene = SceneSpec::random(family, seed, config.height, config.width)?;
            let video = quantize_video(&render_real_video(
                &scene,
                config.frames,
                config.height,
                config.width,
            )?);
            Ok(Sample {
                entry: ManifestEntry {
                    path: real_path(family, i),
                    label: Label::Real,
                    generator: None,
                    family,
                    frames: config.frames,
                    seed,
                    source: None,
                },
                video,
            })
        })
        .collect()
}

/// Trains variant `k` on `family`'s real videos.
pub fn train_family_generator(
    config: &CorpusConfig,
    family: u32,
    k: usize,
    reals: &[Sample],
) -> Result<ToyGenerator> {
    let videos: Vec<VideoTensor> = reals.iter().map(|s| s.video.clone()).collect();
    let mut cfg = config.generator_training.clone();
    cfg.seed = mix_seed(config.seed ^ 0x6e6e, (family as u64) << 8 | k as u64);
    train_toy_generator(&videos, &config.variants[k], &cfg).map(|(g, _)| g)
}

pub fn train_family_generators(
    config: &CorpusConfig,
    family: u32,
    reals: &[Sample],
) -> Result<Vec<ToyGenerator>> {
    (0..config.variants.len())
        .map(|k| train_family_generator(config, family, k, reals))
        .collect()
}

/// Planned fakes of one family: `(generator id, index, stage generators)`.
pub fn fake_plan(config: &CorpusConfig) -> Vec<(String, usize, Vec<usize>)> {
    let plain = config.fake_per_family - config.chained_per_family;
    let nv = config.variants.len();
    let mut counters = vec![0usize; nv];
    let mut plan = Vec::with_capacity(config.fake_per_family);
    for k in 0..plain {
        let g = k % nv;
        plan.push((config.variants[g].id.clone(), counters[g], vec![g]));
        counters[g] += 1;
    }
    let conditional: Vec<usize> = (0..nv)
        .filter(|&i| config.variants[i].conditional)
        .collect();
    let mut chain_counts: BTreeMap<String, usize> = BTreeMap::new();
    for k in 0..config.chained_per_family {
        let a = k % nv;
        let b = conditional[(k / nv) % conditional.len().max(1)];
        let id = format!("{}+{}", config.variants[a].id, config.variants[b].id);
        let c = chain_counts.entry(id.clone()).or_insert(0);
        plan.push((id, *c, vec![a, b]));
        *c += 1;
    }
    plan
}

/// Manifest entry of the fake at `plan_index` of `family`'s plan.
pub fn fake_entry(
    config: &CorpusConfig,
    family: u32,
    plan_index: usize,
    reals: &[Sample],
) -> ManifestEntry {
    let plan = fake_plan(config);
    let (id, index, stages) = &plan[plan_index];
    let conditional = config.variants[stages[0]].conditional;
    ManifestEntry {
        path: fake_path(family, id, *index),
        label: Label::Fake,
        generator: Some(id.clone()),
        family,
        frames: config.frames,
        seed: sample_seed(config.seed, family, id, *index),
        source: conditional.then(|| reals[plan_index % reals.len()].entry.path.clone()),
    }
}

/// Generates the fake sample at `plan_index` of `family`'s plan.
pub fn generate_fake(
    config: &CorpusConfig,
    family: u32,
    plan_index: usize,
    reals: &[Sample],
    gens: &[ToyGenerator],
) -> Result<Sample> {
    let plan = fake_plan(config);
    let stages = &plan[plan_index].2;
    let entry = fake_entry(config, family, plan_index, reals);
    let first = entry
        .source
        .as_ref()
        .map(|_| reals[plan_index % reals.len()].video.luma_image(0));
    let (h, w, t) = (config.height, config.width, config.frames);
    let video = if stages.len() == 1 {
        gens[stages[0]].sample(t, h, w, entry.seed, first.as_ref())?
    } else {
        chain_generators(
            &gens[stages[0]],
            &gens[stages[1]],
            first.as_ref(),
            t,
            h,
            w,
            entry.seed,
        )?
        .video
    };
    Ok(Sample {
        entry,
        video: quantize_video(&video),
    })
}

pub fn train_predictor(config: &CorpusConfig, reals: &[Sample]) -> Result<NextFramePredictor> {
    let videos: Vec<VideoTensor> = reals.iter().map(|s| s.video.clone()).collect();
    NextFramePredictor::train(
        &videos,
        config.predictor_hidden,
        config.predictor_steps,
        4,
        AdamConfig::with_rate(5e-3, 10),
        mix_seed(config.seed, 0x7072_6564),
    )
    .map(|(p, _)| p)
}

/// Renders, trains and samples the whole corpus in manifest order.
pub fn build_corpus(config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let mut samples = Vec::new();
    let mut generators = BTreeMap::new();
    let mut all_reals = Vec::new();
    for &family in &config.families {
        let reals = render_reals(config, family)?;
        let gens = train_family_generators(config, family, &reals)?;
        let n_plan = fake_plan(config).len();
        let fakes = (0..n_plan)
            .map(|k| generate_fake(config, family, k, &reals, &gens))
            .collect::<Result<Vec<_>>>()?;
        for g in gens {
            generators.insert((family, g.id().to_string()), g);
        }
        all_reals.extend(reals.iter().cloned());
        samples.extend(reals);
        samples.extend(fakes);
    }
    let predictor = train_predictor(config, &all_reals)?;
    Ok(Corpus {
        config: config.clone(),
        samples,
        generators,
        predictor,
    })
}
