//! Subcommand bodies. Each reads and writes only under the configured roots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use vidshield::classifier::{
    build_model, detection_classes, evaluate, evaluate_stages, make_splits, train, BackboneKind,
    BackboneSpec, Dataset, EvalReport, Model, Scenario, SplitSpec, TrainReport,
};
use vidshield::corpus::{
    fake_entry, fake_plan, generate_fake, is_still_real, render_reals, train_family_generator,
    train_predictor, CorpusConfig, Sample,
};
use vidshield::forensics::{frame_spectrum, motion_stats, pca_clusters, FeatureConfig};
use vidshield::prevention::{
    directed_defense, immunization_report, undirected_defense, DefenseResult, EncoderPair,
    ImmunizationReport, PerceptualProxy,
};
use vidshield::toy_world::{NextFramePredictor, ToyGenerator};
use vidshield::video::{
    decode_raw, load_image_png, load_video, read_manifest, save_image_png, save_raw,
    write_manifest, GrayImage, ManifestEntry, VideoTensor,
};

use crate::config::{DefenseMode, RunConfig};
use crate::plot;

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn generator_stem(checkpoints: &Path, family: u32, id: &str) -> PathBuf {
    checkpoints
        .join("generators")
        .join(format!("f{family}_{id}"))
}

fn predictor_path(checkpoints: &Path) -> PathBuf {
    checkpoints.join("predictor.ckpt")
}

/// An existing video file: `Ok(None)` when absent, an error string when unreadable or the wrong
/// shape.
fn existing_video(
    path: &Path,
    cfg: &CorpusConfig,
) -> std::result::Result<Option<VideoTensor>, String> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let v = decode_raw(&bytes).map_err(|e| e.to_string())?;
    if (v.frames(), v.height(), v.width()) != (cfg.frames, cfg.height, cfg.width) {
        return Err(format!(
            "{}x{}x{} does not match the corpus config",
            v.frames(),
            v.height(),
            v.width()
        ));
    }
    Ok(Some(v))
}

#[derive(Debug, Serialize)]
pub struct CorpusSummary {
    pub real: usize,
    pub fake: usize,
    pub written: usize,
    pub reused: usize,
}

/// Renders, trains and samples the corpus, reusing every readable file already on disk.
pub fn gen_corpus(run: &RunConfig) -> Result<CorpusSummary> {
    let cfg = run.corpus_config();
    cfg.validate()?;
    let (root, ckpt) = (&run.paths.corpus, &run.paths.checkpoints);
    ensure_dir(root)?;
    let cfg_path = root.join("corpus.json");
    if cfg_path.exists() {
        let existing: CorpusConfig = read_json(&cfg_path)?;
        if existing != cfg {
            bail!(
                "{} was built with a different configuration; use a fresh corpus root",
                cfg_path.display()
            );
        }
    }
    write_json(&cfg_path, &cfg)?;

    let mut reals_by_family = BTreeMap::new();
    let mut corrupt = Vec::new();
    for &family in &cfg.families {
        let reals = render_reals(&cfg, family)?;
        let mut planned: Vec<ManifestEntry> = reals.iter().map(|s| s.entry.clone()).collect();
        planned.extend((0..fake_plan(&cfg).len()).map(|k| fake_entry(&cfg, family, k, &reals)));
        for e in &planned {
            if let Err(why) = existing_video(&root.join(&e.path), &cfg) {
                corrupt.push(format!("{}: {why}", e.path));
            }
        }
        reals_by_family.insert(family, reals);
    }
    if !corrupt.is_empty() {
        bail!(
            "corrupt corpus files (remove them to regenerate):\n  {}",
            corrupt.join("\n  ")
        );
    }

    let (mut written, mut reused) = (0, 0);
    let mut manifest = Vec::new();
    let mut all_reals = Vec::new();
    for (&family, reals) in &reals_by_family {
        for s in reals {
            let path = root.join(&s.entry.path);
            if path.exists() {
                reused += 1;
            } else {
                ensure_dir(path.parent().expect("nested path"))?;
                save_raw(&path, &s.video)?;
                written += 1;
            }
            manifest.push(s.entry.clone());
        }
        let mut gens = Vec::new();
        for (k, v) in cfg.variants.iter().enumerate() {
            let stem = generator_stem(ckpt, family, &v.id);
            let g = if stem.with_extension("ckpt").exists() {
                ToyGenerator::load(&stem)
                    .with_context(|| format!("loading generator {}", stem.display()))?
            } else {
                let g = train_family_generator(&cfg, family, k, reals)?;
                ensure_dir(stem.parent().expect("generator dir"))?;
                g.save(&stem)?;
                g
            };
            if g.variant != *v {
                bail!(
                    "{} holds a different variant than configured",
                    stem.display()
                );
            }
            gens.push(g);
        }
        for k in 0..fake_plan(&cfg).len() {
            let entry = fake_entry(&cfg, family, k, reals);
            let path = root.join(&entry.path);
            if path.exists() {
                reused += 1;
            } else {
                let s = generate_fake(&cfg, family, k, reals, &gens)?;
                ensure_dir(path.parent().expect("nested path"))?;
                save_raw(&path, &s.video)?;
                written += 1;
            }
            manifest.push(entry);
        }
        all_reals.extend(reals.iter().cloned());
    }
    let pred_path = predictor_path(ckpt);
    if !pred_path.exists() {
        ensure_dir(ckpt)?;
        train_predictor(&cfg, &all_reals)?.save(&pred_path)?;
    }
    write_manifest(&root.join("manifest.jsonl"), &manifest)?;
    let real = manifest.iter().filter(|e| e.generator.is_none()).count();
    Ok(CorpusSummary {
        real,
        fake: manifest.len() - real,
        written,
        reused,
    })
}

/// Corpus config and every manifest sample with its video.
pub fn load_corpus(root: &Path) -> Result<(CorpusConfig, Vec<Sample>)> {
    let cfg_path = root.join("corpus.json");
    if !cfg_path.is_file() {
        bail!("no corpus at {}; run gen-corpus first", root.display());
    }
    let cfg: CorpusConfig = read_json(&cfg_path)?;
    let manifest = read_manifest(&root.join("manifest.jsonl"))?;
    let samples = manifest
        .into_iter()
        .map(|entry| {
            let video = load_video(&root.join(&entry.path))
                .with_context(|| format!("loading {}", entry.path))?;
            Ok(Sample { entry, video })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((cfg, samples))
}

fn model_stem(run: &RunConfig, scenario: Scenario) -> PathBuf {
    let kind = if scenario.is_tracing() {
        "tracer"
    } else {
        "detector"
    };
    run.paths
        .checkpoints
        .join(format!("{kind}_{}", scenario.name()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelExtra {
    split: SplitSpec,
    train: TrainReport,
}

/// Splits, trains and checkpoints a detector (`tracing == false`) or a source tracer.
pub fn train_model(run: &RunConfig, tracing: bool) -> Result<PathBuf> {
    let fallback = if tracing {
        Scenario::TraceDataAware
    } else {
        Scenario::Targeted
    };
    let scenario = run.scenario_or(fallback);
    if scenario.is_tracing() != tracing {
        bail!(
            "scenario {scenario} is a {} scenario; use {}",
            if tracing { "detection" } else { "tracing" },
            if tracing {
                "train-detector"
            } else {
                "train-tracer"
            }
        );
    }
    let (_, samples) = load_corpus(&run.paths.corpus)?;
    let manifest: Vec<ManifestEntry> = samples.iter().map(|s| s.entry.clone()).collect();
    let split = make_splits(scenario, &manifest, &run.leave_out, run.seed)?;
    split.check(&manifest)?;
    let classes = if tracing {
        split.train_generators.clone()
    } else {
        detection_classes()
    };
    let spec = match run.backbone {
        BackboneKind::FeatureMlp => BackboneSpec::feature_mlp(classes),
        BackboneKind::Conv3d => BackboneSpec::conv3d(classes),
    };
    let data = Dataset::from_samples(&spec, &samples)?;
    let model = build_model(&spec, run.seed)?;
    let (model, report) = train(&model, &split, &data, &run.train_config())?;
    let stem = model_stem(run, scenario);
    ensure_dir(&run.paths.checkpoints)?;
    let extra = ModelExtra {
        split: split.clone(),
        train: report.clone(),
    };
    model.save(&stem, serde_json::to_value(&extra)?)?;
    let reports = &run.paths.reports;
    write_json(
        &reports.join(format!("split_{}.json", scenario.name())),
        &split,
    )?;
    write_json(
        &reports.join(format!("train_{}.json", scenario.name())),
        &report,
    )?;
    Ok(stem)
}

/// Scores a trained model on its recorded split, checking the corpus still yields that split.
pub fn eval(run: &RunConfig) -> Result<EvalReport> {
    let scenario = run.scenario_or(Scenario::Targeted);
    let stem = model_stem(run, scenario);
    if !stem.with_extension("ckpt").is_file() {
        bail!(
            "no trained model for {scenario} at {}; train it first",
            stem.display()
        );
    }
    let (model, extra) = Model::load(&stem)?;
    let extra: ModelExtra = serde_json::from_value(extra).context("model sidecar extra")?;
    let (_, samples) = load_corpus(&run.paths.corpus)?;
    let manifest: Vec<ManifestEntry> = samples.iter().map(|s| s.entry.clone()).collect();
    let split = make_splits(scenario, &manifest, &run.leave_out, run.seed)?;
    if split.fingerprint != extra.split.fingerprint {
        bail!(
            "split fingerprint {} differs from the trained model's {}; corpus, seed or leave-out changed",
            split.fingerprint,
            extra.split.fingerprint
        );
    }
    let data = Dataset::from_samples(&model.spec, &samples)?;
    let report = evaluate(&model, &split, &data)?;
    let reports = &run.paths.reports;
    write(
        &reports.join(format!("eval_{}.json", scenario.name())),
        &report.to_json()?,
    )?;
    write(
        &reports.join(format!("eval_{}.csv", scenario.name())),
        &report.to_csv(),
    )?;
    if scenario.is_tracing() && !split.chained_test.is_empty() {
        let stages = evaluate_stages(&model, &split, &data)?;
        write_json(
            &reports.join(format!("eval_{}_stages.json", scenario.name())),
            &stages,
        )?;
    }
    Ok(report)
}

/// Budget echo, result summary and the exact immunized pixels of one η.
#[derive(Debug, Serialize, Deserialize)]
pub struct DefenseRecord {
    pub mode: DefenseMode,
    pub seed: u64,
    pub budget: vidshield::prevention::AdversarialBudget,
    pub loss_trace: Vec<f64>,
    pub initial_spatial: f64,
    pub final_spatial: f64,
    pub initial_temporal: f64,
    pub final_temporal: f64,
    pub linf: f64,
    pub input: GrayImage,
    pub immunized: GrayImage,
}

fn immunize_root(run: &RunConfig) -> PathBuf {
    run.paths.reports.join("immunize")
}

fn encoders(run: &RunConfig) -> Result<EncoderPair> {
    let path = predictor_path(&run.paths.checkpoints);
    if !path.is_file() {
        bail!(
            "no next-frame predictor at {}; run gen-corpus first",
            path.display()
        );
    }
    let predictor = NextFramePredictor::load(&path)?;
    Ok(EncoderPair::new(predictor, &run.encoder_config())?)
}

fn input_image(run: &RunConfig) -> Result<GrayImage> {
    match &run.immunize.input {
        Some(p) => Ok(load_image_png(p)?),
        None => {
            let (_, samples) = load_corpus(&run.paths.corpus)?;
            let first = samples
                .iter()
                .find(|s| s.entry.generator.is_none())
                .ok_or_else(|| anyhow!("corpus has no real video to take an input frame from"))?;
            Ok(first.video.luma_image(0))
        }
    }
}

/// Runs the defense once per η and writes `eta_XX/defense.json` plus a PNG preview.
pub fn immunize(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let target = match (run.immunize.mode, &run.immunize.target_image) {
        (DefenseMode::Directed, None) => bail!("directed mode needs --target-image"),
        (DefenseMode::Directed, Some(p)) => Some(load_image_png(p)?),
        (DefenseMode::Undirected, _) => None,
    };
    let x = input_image(run)?;
    if let Some(t) = &target {
        if (t.height, t.width) != (x.height, x.width) {
            bail!(
                "target image is {}x{}, input is {}x{}",
                t.height,
                t.width,
                x.height,
                x.width
            );
        }
    }
    let enc = encoders(run)?;
    let proxy = PerceptualProxy::new(run.seed);
    let mut dirs = Vec::new();
    for (i, &eta) in run.budget.etas.iter().enumerate() {
        let budget = run.budget.budget(eta);
        let result: DefenseResult = match &target {
            Some(t) => directed_defense(&enc, &proxy, &x, t, &budget)?,
            None => undirected_defense(&enc, &proxy, &x, &budget, run.seed.wrapping_add(i as u64))?,
        };
        let dir = immunize_root(run).join(format!("eta_{i:02}"));
        ensure_dir(&dir)?;
        save_image_png(&dir.join("immunized.png"), &result.immunized)?;
        let record = DefenseRecord {
            mode: run.immunize.mode,
            seed: run.seed,
            budget,
            loss_trace: result.loss_trace,
            initial_spatial: result.initial_spatial,
            final_spatial: result.final_spatial,
            initial_temporal: result.initial_temporal,
            final_temporal: result.final_temporal,
            linf: result.linf,
            input: x.clone(),
            immunized: result.immunized,
        };
        write_json(&dir.join("defense.json"), &record)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn defense_dirs(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let root = immunize_root(run);
    let mut dirs: Vec<PathBuf> = match fs::read_dir(&root) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("defense.json").is_file())
            .collect(),
        Err(_) => Vec::new(),
    };
    dirs.sort();
    if dirs.is_empty() {
        bail!(
            "no defense results under {}; run immunize first",
            root.display()
        );
    }
    Ok(dirs)
}

/// Generates from each recorded input/immunized pair and writes `quality.json` and `quality.csv`.
pub fn quality(run: &RunConfig) -> Result<Vec<ImmunizationReport>> {
    let dirs = defense_dirs(run)?;
    let (cfg, _) = load_corpus(&run.paths.corpus)?;
    let family = cfg.families[0];
    let stem = generator_stem(&run.paths.checkpoints, family, &run.immunize.generator);
    if !stem.with_extension("ckpt").is_file() {
        bail!("no generator checkpoint at {}", stem.display());
    }
    let gen = ToyGenerator::load(&stem)?;
    let proxy = PerceptualProxy::new(run.seed);
    let mut out = Vec::new();
    for dir in dirs {
        let rec: DefenseRecord = read_json(&dir.join("defense.json"))?;
        let x = GrayImage::new(rec.input.height, rec.input.width, rec.input.data)?;
        let xh = GrayImage::new(
            rec.immunized.height,
            rec.immunized.width,
            rec.immunized.data,
        )?;
        let r = immunization_report(&x, &xh, &gen, cfg.frames, run.seed, &proxy)?;
        write_json(&dir.join("quality.json"), &r)?;
        write(&dir.join("quality.csv"), &r.clean_vs_immunized.to_csv())?;
        out.push(r);
    }
    Ok(out)
}

fn json_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with(prefix)
                        && name.ends_with(".json")
                        && !name.ends_with("_stages.json")
                })
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

/// Class key of a sample for plots: generator id, `real`, or `real-still`.
fn plot_class(cfg: &CorpusConfig, e: &ManifestEntry) -> Result<String> {
    Ok(match &e.generator {
        Some(g) => g.clone(),
        None if is_still_real(cfg, e)? => "real-still".into(),
        None => "real".into(),
    })
}

/// Writes every chart its inputs allow under `reports/plots`.
pub fn plot(run: &RunConfig) -> Result<Vec<PathBuf>> {
    let reports = &run.paths.reports;
    let out = reports.join("plots");
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let p = out.join(name);
        write(&p, &text)?;
        written.push(p);
        Ok(())
    };

    let evals = json_files(reports, "eval_");
    if !evals.is_empty() {
        let mut bars = Vec::new();
        for p in &evals {
            let r: EvalReport = read_json(p)?;
            bars.push((r.scenario.clone(), r.accuracy));
        }
        let csv: String = std::iter::once("scenario,accuracy\n".to_string())
            .chain(bars.iter().map(|(s, a)| format!("{s},{a}\n")))
            .collect();
        emit("accuracy.svg", plot::bar_chart("test accuracy", &bars))?;
        emit("accuracy.csv", csv)?;
    }
    for p in json_files(reports, "train_") {
        let r: TrainReport = read_json(&p)?;
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("train")
            .trim_start_matches("train_")
            .to_string();
        emit(
            &format!("loss_{name}.svg"),
            plot::line_chart(
                &format!("training loss: {name}"),
                &[(name.clone(), r.epoch_losses)],
            ),
        )?;
    }

    if run.paths.corpus.join("corpus.json").is_file() {
        let (cfg, samples) = load_corpus(&run.paths.corpus)?;
        let features = FeatureConfig::default();
        let family = cfg.families[0];
        let mut spectra: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        let mut descriptors = Vec::new();
        for s in samples.iter().filter(|s| s.entry.family == family) {
            let class = plot_class(&cfg, &s.entry)?;
            let acc = spectra
                .entry(class.clone())
                .or_insert_with(|| (vec![0.0; cfg.height * cfg.width], 0));
            for t in 0..s.video.frames() {
                let lm = frame_spectrum(&s.video.luma_image(t)).log_magnitude();
                acc.0.iter_mut().zip(&lm).for_each(|(a, v)| *a += v);
                acc.1 += 1;
            }
            let m = motion_stats(&s.video, features.block, features.search_radius)?;
            descriptors.push((class, m.pair_magnitudes));
        }
        for (class, (sum, n)) in &spectra {
            let mean: Vec<f64> = sum.iter().map(|v| v / *n as f64).collect();
            emit(
                &format!("spectrum_{class}.svg"),
                plot::heatmap(
                    &format!("mean log spectrum: {class}"),
                    &mean,
                    cfg.height,
                    cfg.width,
                ),
            )?;
        }
        let (_, clusters) = pca_clusters(&descriptors)?;
        let mut csv = String::from("class,pc1,pc2\n");
        for c in &clusters {
            for p in &c.points {
                csv.push_str(&format!("{},{},{}\n", c.label, p[0], p[1]));
            }
        }
        emit(
            "motion_pca.svg",
            plot::scatter("motion descriptor PCA", &clusters, "real-still"),
        )?;
        emit("motion_pca.csv", csv)?;
    }

    if written.is_empty() {
        bail!(
            "nothing to plot: no reports under {} and no corpus at {}",
            reports.display(),
            run.paths.corpus.display()
        );
    }
    Ok(written)
}
