//! Mini-batch cross-entropy training with seeded batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{BackboneKind, Dataset, Model, Normalizer};
use super::split::SplitSpec;
use crate::autodiff::Graph;
use crate::corpus::mix_seed;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::toy_world::shuffle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    /// 20 epochs, Adam at 1e-4 with 1000 warmup steps.
    pub fn reference(seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            adam: AdamConfig::with_rate(1e-4, 1000),
            seed,
        }
    }

    /// Desk-scale schedule: a few hundred steps in total, so the warmup is shortened to match.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            adam: AdamConfig::with_rate(3e-3, 20),
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Trains on `split.train`. The feature-MLP input normalizer is fitted on the
/// training side when at least one epoch runs.
pub fn train(
    model: &Model,
    split: &SplitSpec,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    if split.train.is_empty() {
        return Err(Error::InfeasibleSplit("training side is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let rows = split
        .train
        .iter()
        .map(|p| {
            let (e, x) = data.get(p)?;
            Ok((model.target_of(e)?, x))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok((
            model,
            TrainReport {
                epoch_losses: vec![],
                steps: 0,
            },
        ));
    }
    if model.spec.kind == BackboneKind::FeatureMlp {
        let inputs: Vec<&[f64]> = rows.iter().map(|r| r.1).collect();
        model.normalizer = Some(Normalizer::fit(&inputs)?);
    }
    let mut adam = AdamState::new(cfg.adam, &model.params)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        shuffle(&mut order, &mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].1).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| rows[i].0).collect();
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let f = model.forward(&mut g, &p, &batch, false)?;
            let loss = g.cross_entropy(f.logits, &targets)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: adam.step_count() + 1,
                    what: "classifier cross-entropy".into(),
                });
            }
            let grads = g.backward(loss)?;
            adam.step(&mut model.params, &p.gradients(&grads))?;
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            steps: adam.step_count(),
        },
    ))
}
