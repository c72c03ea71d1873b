//! Detection and source-tracing classifiers, scenario splits, evaluation and Grad-CAM.

mod gradcam;
mod model;
mod report;
mod split;
mod train;

pub use gradcam::{grad_cam, trilinear};
pub use model::{
    build_model, detection_classes, prepare_input, BackboneKind, BackboneSpec, Dataset,
    ForwardPass, Model, Normalizer,
};
pub use report::EvalReport;
pub use split::{base_generators, make_splits, Scenario, SplitSpec, TRAIN_FRACTION};
pub use train::{train, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax;
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::video::{Label, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: Label,
    /// Softmax probability of the fake class.
    pub score: f64,
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Binary decision from logits; equal logits resolve to real.
pub fn detect_logits(logits: &[f64]) -> Result<Detection> {
    if logits.len() != 2 {
        return Err(Error::invalid(format!(
            "detection needs 2 classes, model has {}",
            logits.len()
        )));
    }
    let p = softmax(logits);
    Ok(Detection {
        label: if argmax(logits) == 1 {
            Label::Fake
        } else {
            Label::Real
        },
        score: p[1],
    })
}

pub fn detect_input(model: &Model, input: &[f64]) -> Result<Detection> {
    if !model.spec.is_detector() {
        return Err(Error::invalid("detect needs a binary real/fake model"));
    }
    detect_logits(&model.logits(input)?)
}

pub fn detect(model: &Model, video: &VideoTensor) -> Result<Detection> {
    detect_input(model, &prepare_input(&model.spec, video)?)
}

/// Generator probabilities, in `model.spec.classes` order.
pub fn trace_input(model: &Model, input: &[f64]) -> Result<Vec<f64>> {
    if model.spec.is_detector() {
        return Err(Error::invalid("trace needs a generator-attribution model"));
    }
    Ok(softmax(&model.logits(input)?))
}

/// Traces a labelled sample; real samples are rejected because tracing presumes a fake.
pub fn trace(model: &Model, sample: &Sample) -> Result<Vec<f64>> {
    if sample.entry.label == Label::Real {
        return Err(Error::invalid(format!(
            "{} is labelled real; tracing presumes a generated video",
            sample.entry.path
        )));
    }
    trace_input(model, &prepare_input(&model.spec, &sample.video)?)
}

fn predicted(model: &Model, input: &[f64]) -> Result<usize> {
    Ok(argmax(&model.logits(input)?))
}

/// Scores `split.test`.
pub fn evaluate(model: &Model, split: &SplitSpec, data: &Dataset) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::InfeasibleSplit("test side is empty".into()));
    }
    let k = model.spec.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for path in &split.test {
        let (e, x) = data.get(path)?;
        confusion[model.target_of(e)?][predicted(model, x)?] += 1;
    }
    EvalReport::from_confusion(
        split.scenario.name(),
        &split.fingerprint,
        model.spec.classes.clone(),
        confusion,
    )
}

/// Per-stage tracing of chained fakes: report `i` scores every chained test sample against its
/// stage-`i` generator.
pub fn evaluate_stages(
    model: &Model,
    split: &SplitSpec,
    data: &Dataset,
) -> Result<Vec<EvalReport>> {
    if model.spec.is_detector() {
        return Err(Error::invalid("per-stage evaluation needs a tracing model"));
    }
    let k = model.spec.num_classes();
    let mut per_stage: Vec<Vec<Vec<usize>>> = Vec::new();
    for path in &split.chained_test {
        let (e, x) = data.get(path)?;
        let pred = predicted(model, x)?;
        for (i, stage) in e.stages().iter().enumerate() {
            let truth = model.class_index(stage).ok_or_else(|| {
                Error::invalid(format!("stage generator `{stage}` is not a model class"))
            })?;
            if per_stage.len() <= i {
                per_stage.push(vec![vec![0; k]; k]);
            }
            per_stage[i][truth][pred] += 1;
        }
    }
    per_stage
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            EvalReport::from_confusion(
                format!("{}-stage{}", split.scenario.name(), i + 1),
                &split.fingerprint,
                model.spec.classes.clone(),
                c,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::ManifestEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(path: &str, label: Label, generator: Option<&str>) -> ManifestEntry {
        ManifestEntry {
            path: path.into(),
            label,
            generator: generator.map(str::to_string),
            family: 0,
            frames: 2,
            seed: 0,
            source: None,
        }
    }

    fn split_over(train: Vec<String>, test: Vec<String>, scenario: Scenario) -> SplitSpec {
        SplitSpec {
            scenario,
            seed: 0,
            train_families: vec![0],
            test_families: vec![0],
            train_generators: vec![],
            test_generators: vec![],
            leave_out: vec![],
            train,
            test,
            chained_test: vec![],
            fingerprint: "test".into(),
        }
    }

    #[test]
    fn tie_goes_to_real_and_large_margin_is_fake() {
        let d = detect_logits(&[0.0, 0.0]).unwrap();
        assert_eq!((d.label, d.score), (Label::Real, 0.5));
        let d = detect_logits(&[0.0, 10.0]).unwrap();
        assert!(d.label == Label::Fake && d.score > 0.999);
        assert!(detect_logits(&[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn softmax_translation_invariance() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let l: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
            let c = r.random_range(-100.0..100.0);
            let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
            let (a, b) = (softmax(&l), softmax(&shifted));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
            assert_eq!(argmax(&l), argmax(&shifted));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(softmax(&[3.0; 4]).iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    /// Eight separable feature rows, four per class.
    fn toy_feature_data() -> (Dataset, SplitSpec) {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let mut entries = Vec::new();
        let mut inputs = Vec::new();
        for i in 0..8 {
            let fake = i % 2 == 1;
            entries.push(entry(
                &format!("s{i}"),
                if fake { Label::Fake } else { Label::Real },
                fake.then_some("g"),
            ));
            inputs.push(
                (0..24)
                    .map(|_| r.random_range(-1.0..1.0) + if fake { 0.3 } else { 0.0 })
                    .collect(),
            );
        }
        let paths: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
        let data = Dataset::from_parts(entries, inputs).unwrap();
        (data, split_over(paths.clone(), paths, Scenario::Targeted))
    }

    #[test]
    fn eight_sample_split_is_memorized() {
        let (data, split) = toy_feature_data();
        let model = build_model(&BackboneSpec::feature_mlp(detection_classes()), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            adam: crate::optim::AdamConfig::with_rate(1e-2, 5),
            seed: 3,
        };
        let (trained, rep) = train(&model, &split, &data, &cfg).unwrap();
        assert_eq!(rep.steps, 200);
        assert_eq!(rep.epoch_losses.len(), 200);
        let r = evaluate(&trained, &split, &data).unwrap();
        assert_eq!(r.accuracy, 1.0, "{:?}", r.confusion);
        assert!(r.is_consistent());
        let (again, _) = train(&model, &split, &data, &cfg).unwrap();
        assert_eq!(again, trained);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (data, split) = toy_feature_data();
        let model = build_model(&BackboneSpec::feature_mlp(detection_classes()), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::desk(0)
        };
        let (same, rep) = train(&model, &split, &data, &cfg).unwrap();
        assert_eq!(same, model);
        assert!(rep.epoch_losses.is_empty());
    }

    #[test]
    fn tracing_rejects_real_samples_and_sums_to_one() {
        let classes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let model = build_model(&BackboneSpec::feature_mlp(classes), 0).unwrap();
        let video = VideoTensor::filled(4, 1, 8, 8, 0.5).unwrap();
        let real = Sample {
            entry: entry("r", Label::Real, None),
            video: video.clone(),
        };
        assert!(trace(&model, &real).is_err());
        let fake = Sample {
            entry: entry("f", Label::Fake, Some("a")),
            video,
        };
        let p = trace(&model, &fake).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(detect(&model, &fake.video).is_err());
        assert!(model.target_of(&real.entry).is_err());
    }

    #[test]
    fn stage_reports_score_each_stage() {
        let classes: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let model = build_model(&BackboneSpec::feature_mlp(classes), 0).unwrap();
        let data = Dataset::from_parts(
            vec![
                entry("c0", Label::Fake, Some("a+b")),
                entry("c1", Label::Fake, Some("b+b")),
            ],
            vec![vec![0.0; 24], vec![1.0; 24]],
        )
        .unwrap();
        let mut split = split_over(vec![], vec!["c0".into()], Scenario::TraceDataAware);
        split.chained_test = vec!["c0".into(), "c1".into()];
        let reps = evaluate_stages(&model, &split, &data).unwrap();
        assert_eq!(reps.len(), 2);
        assert_eq!(reps[0].confusion[0].iter().sum::<usize>(), 1);
        assert_eq!(reps[1].confusion[1].iter().sum::<usize>(), 2);
    }

    fn small_conv_spec() -> BackboneSpec {
        let mut s = BackboneSpec::conv3d(detection_classes());
        s.widths = vec![4, 8, 8];
        s.frames = 16;
        s.size = 16;
        s
    }

    #[test]
    fn grad_cam_range_and_degenerate_cases() {
        let spec = small_conv_spec();
        let model = build_model(&spec, 5).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..spec.input_len()).map(|_| r.random::<f64>()).collect();
        let cam = grad_cam(&model, &x, 1).unwrap();
        assert_eq!((cam.frames(), cam.height(), cam.width()), (16, 16, 16));
        assert!(cam.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let max = cam.data().iter().copied().fold(0.0, f64::max);
        assert!(max == 1.0 || max == 0.0);
        let mut zero_head = model.clone();
        zero_head
            .params
            .get_mut("head.weight")
            .unwrap()
            .data_mut()
            .fill(0.0);
        let cam0 = grad_cam(&zero_head, &x, 1).unwrap();
        assert!(cam0.data().iter().all(|&v| v == 0.0));
        let mlp = build_model(&BackboneSpec::feature_mlp(detection_classes()), 0).unwrap();
        assert!(grad_cam(&mlp, &[0.0; 24], 0).is_err());
    }

    #[test]
    fn trilinear_identity_and_corners() {
        let src: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(trilinear(&src, [2, 2, 2], [2, 2, 2]), src);
        let up = trilinear(&src, [2, 2, 2], [3, 3, 3]);
        assert_eq!(up[0], 0.0);
        assert_eq!(up[26], 7.0);
        assert!((up[13] - 3.5).abs() < 1e-12);
    }

    /// Dark noise clips where fakes carry a bright 4×4 patch at a random location.
    fn patch_clip(r: &mut ChaCha8Rng, with_patch: bool) -> Vec<f64> {
        let mut x: Vec<f64> = (0..16 * 16 * 16)
            .map(|_| 0.05 + 0.1 * r.random::<f64>())
            .collect();
        if with_patch {
            let (py, px) = (r.random_range(0..12), r.random_range(0..12));
            for t in 0..16 {
                for y in py..py + 4 {
                    for xx in px..px + 4 {
                        x[(t * 16 + y) * 16 + xx] = 0.95;
                    }
                }
            }
        }
        x
    }

    #[test]
    fn occluding_top_heatmap_region_hurts_more_than_random() {
        let spec = small_conv_spec();
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let mut entries = Vec::new();
        let mut inputs = Vec::new();
        for i in 0..48 {
            let fake = i % 2 == 1;
            entries.push(entry(
                &format!("v{i}"),
                if fake { Label::Fake } else { Label::Real },
                fake.then_some("g"),
            ));
            inputs.push(patch_clip(&mut r, fake));
        }
        let paths: Vec<String> = entries.iter().map(|e| e.path.clone()).collect();
        let data = Dataset::from_parts(entries, inputs).unwrap();
        let split = split_over(paths.clone(), paths, Scenario::Targeted);
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 16,
            adam: crate::optim::AdamConfig::with_rate(1e-2, 5),
            seed: 1,
        };
        let (model, _) = train(&build_model(&spec, 3).unwrap(), &split, &data, &cfg).unwrap();
        assert!(evaluate(&model, &split, &data).unwrap().accuracy > 0.9);
        let n = spec.input_len();
        let k = n / 10;
        let mut wins = 0;
        for _ in 0..20 {
            let x = patch_clip(&mut r, true);
            let base = model.logits(&x).unwrap()[1];
            let cam = grad_cam(&model, &x, 1).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| cam.data()[b].total_cmp(&cam.data()[a]).then(a.cmp(&b)));
            let mut top = x.clone();
            order[..k].iter().for_each(|&i| top[i] = 0.1);
            let mut rand_mask = x.clone();
            let mut idx: Vec<usize> = (0..n).collect();
            crate::toy_world::shuffle(&mut idx, &mut r);
            idx[..k].iter().for_each(|&i| rand_mask[i] = 0.1);
            let drop_top = base - model.logits(&top).unwrap()[1];
            let drop_rand = base - model.logits(&rand_mask).unwrap()[1];
            if drop_top > drop_rand {
                wins += 1;
            }
        }
        assert!(wins > 10, "top-decile occlusion won {wins}/20");
    }
}
