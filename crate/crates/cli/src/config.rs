//! JSON run configuration. Every key is optional except `seed`; command-line flags override keys.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use vidshield::classifier::{BackboneKind, Scenario, TrainConfig};
use vidshield::corpus::CorpusConfig;
use vidshield::prevention::{AdversarialBudget, EncoderConfig};
use vidshield::toy_world::GeneratorVariant;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Smoke,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Paths {
    pub fn under(root: &Path) -> Self {
        Paths {
            corpus: root.join("corpus"),
            checkpoints: root.join("checkpoints"),
            reports: root.join("reports"),
        }
    }
}

impl Default for Paths {
    fn default() -> Self {
        Paths::under(Path::new("vidshield-out"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseMode {
    Directed,
    #[default]
    Undirected,
}

/// η grid and shared PGD settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub etas: Vec<f64>,
    pub mu: f64,
    pub iterations: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let b = AdversarialBudget::with_eta(1.0);
        BudgetConfig {
            etas: [2.0, 4.0, 8.0, 16.0].iter().map(|k| k / 255.0).collect(),
            mu: b.mu,
            iterations: b.iterations,
            lambda1: b.lambda1,
            lambda2: b.lambda2,
        }
    }
}

impl BudgetConfig {
    pub fn budget(&self, eta: f64) -> AdversarialBudget {
        AdversarialBudget {
            eta,
            mu: self.mu,
            iterations: self.iterations,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImmunizeConfig {
    pub mode: DefenseMode,
    /// PNG to immunize; the first frame of the first real corpus video when absent.
    pub input: Option<PathBuf>,
    pub target_image: Option<PathBuf>,
    /// Image-conditioned generator (family 0) used for quality reports.
    pub generator: String,
}

impl Default for ImmunizeConfig {
    fn default() -> Self {
        ImmunizeConfig {
            mode: DefenseMode::Undirected,
            input: None,
            target_image: None,
            generator: "i2v-c".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub leave_out: Vec<String>,
    #[serde(default = "default_backbone")]
    pub backbone: BackboneKind,
    /// Defaults to the desk-scale schedule; its seed is replaced by `seed`.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    /// Generator variants; the four standard ones when absent.
    #[serde(default)]
    pub variants: Option<Vec<GeneratorVariant>>,
    #[serde(default)]
    pub budget: BudgetConfig,
    /// Its seed is replaced by `seed`.
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub immunize: ImmunizeConfig,
}

fn default_backbone() -> BackboneKind {
    BackboneKind::FeatureMlp
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "seed": seed })).expect("seed-only config")
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let mut c = match self.preset {
            Preset::Smoke => CorpusConfig::smoke(self.seed),
            Preset::Full => CorpusConfig::full(self.seed),
        };
        if let Some(v) = &self.variants {
            c.variants = v.clone();
        }
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self
            .train
            .clone()
            .unwrap_or_else(|| TrainConfig::desk(self.seed));
        t.seed = self.seed;
        t
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed,
            ..self.encoder.clone()
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.budget.etas.is_empty() {
            bail!("budget.etas must list at least one value");
        }
        for &eta in &self.budget.etas {
            self.budget.budget(eta).validate()?;
        }
        for p in [&self.immunize.input, &self.immunize.target_image]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                bail!("image {} does not exist", p.display());
            }
        }
        self.corpus_config().validate()?;
        Ok(())
    }

    pub fn scenario_or(&self, fallback: Scenario) -> Scenario {
        self.scenario.unwrap_or(fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory_and_unknown_keys_fail() {
        assert!(serde_json::from_str::<RunConfig>("{}").is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sed": 2}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 4, "scenario": "open"}"#).unwrap();
        assert_eq!(c.scenario, Some(Scenario::Open));
        assert_eq!(c.budget.etas.len(), 4);
        assert_eq!(c.train_config().seed, 4);
        assert_eq!(c, RunConfig::new(4).with_scenario(Scenario::Open));
        let c: RunConfig =
            serde_json::from_str(r#"{"seed": 4, "encoder": {"distance": "cosine"}}"#).unwrap();
        assert_eq!(c.encoder_config().widths, vec![8, 16]);
        assert!(
            serde_json::from_str::<RunConfig>(r#"{"seed": 4, "encoder": {"dim": 3}}"#).is_err()
        );
    }

    impl RunConfig {
        fn with_scenario(mut self, s: Scenario) -> Self {
            self.scenario = Some(s);
            self
        }
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::new(9);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(c.validate().is_ok());
    }
}
