//! Residual next-frame predictor trained on consecutive real frames.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BoundParams, Graph, NodeId, ParamStore};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use crate::video::{GrayImage, VideoTensor};

/// `x + conv(relu(conv(x)))` on single-channel frames.
#[derive(Clone, Debug, PartialEq)]
pub struct NextFramePredictor {
    pub params: ParamStore,
}

impl NextFramePredictor {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        p.push_fan_in("pred.in.weight", &[hidden, 1, 3, 3], 9, &mut r);
        p.push("pred.in.bias", Tensor::zeros([hidden]));
        p.push_fan_in("pred.out.weight", &[1, hidden, 3, 3], hidden * 9, &mut r);
        p.push("pred.out.bias", Tensor::zeros([1]));
        NextFramePredictor { params: p }
    }

    /// Prediction graph for `x [N, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph, p: &BoundParams, x: NodeId) -> Result<NodeId> {
        let h = g.conv2d(
            x,
            p.id("pred.in.weight"),
            Some(p.id("pred.in.bias")),
            [1, 1],
        )?;
        let h = g.relu(h);
        let d = g.conv2d(
            h,
            p.id("pred.out.weight"),
            Some(p.id("pred.out.bias")),
            [1, 1],
        )?;
        g.add(x, d)
    }

    /// Predicted successor of `frame`, unclamped.
    pub fn predict(&self, frame: &GrayImage) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(frame.to_tensor());
        let y = self.forward(&mut g, &p, x)?;
        Ok(g.value(y).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(NextFramePredictor {
            params: checkpoint::load(path)?,
        })
    }

    /// Fits consecutive-frame pairs drawn from `videos`, `batch` pairs per step.
    pub fn train(
        videos: &[VideoTensor],
        hidden: usize,
        steps: usize,
        batch: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<(Self, Vec<f64>)> {
        let usable: Vec<&VideoTensor> = videos.iter().filter(|v| v.frames() >= 2).collect();
        let first = usable.first().ok_or_else(|| {
            Error::invalid("next-frame training needs a video with at least two frames")
        })?;
        let (h, w) = (first.height(), first.width());
        let mut model = Self::new(hidden, seed);
        let mut state = AdamState::new(adam, &model.params)?;
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x0f2a_3e00);
        let mut losses = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut inputs = Vec::with_capacity(batch * h * w);
            let mut targets = Vec::with_capacity(batch * h * w);
            for _ in 0..batch {
                let v = usable[r.random_range(0..usable.len())];
                let t = r.random_range(0..v.frames() - 1);
                inputs.extend(v.luma(t));
                targets.extend(v.luma(t + 1));
            }
            let mut g = Graph::new();
            let p = model.params.bind(&mut g, true);
            let x = g.constant(Tensor::new([batch, 1, h, w], inputs)?);
            let y = g.constant(Tensor::new([batch, 1, h, w], targets)?);
            let pred = model.forward(&mut g, &p, x)?;
            let diff = g.sub(pred, y)?;
            let sq = g.square(diff);
            let loss = g.mean(sq);
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: step + 1,
                    what: format!("next-frame loss is {value}"),
                });
            }
            losses.push(value);
            let grads = p.gradients(&g.backward(loss)?);
            state.step(&mut model.params, &grads)?;
        }
        Ok((model, losses))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_world::{render_real_video, MotionProgram, SceneSpec};

    #[test]
    fn training_reduces_prediction_error() {
        let videos: Vec<VideoTensor> = (0..4)
            .map(|s| {
                let scene = SceneSpec::random_with_program(
                    0,
                    s,
                    16,
                    16,
                    MotionProgram::Velocity { vx: 1.0, vy: 0.0 },
                )
                .unwrap();
                render_real_video(&scene, 6, 16, 16).unwrap()
            })
            .collect();
        let (model, losses) =
            NextFramePredictor::train(&videos, 4, 150, 4, AdamConfig::with_rate(5e-3, 10), 1)
                .unwrap();
        let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = losses[140..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
        let out = model.predict(&videos[0].luma_image(0)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 16, 16]);
    }
}
