use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{SplitMode, SplitRatios, SynthConfig};
use crate::error::{AstnError, Result};
use crate::evaluation::Aggregation;
use crate::model::{AstnConfig, DiscriminatorLevels, DiscriminatorVariant};
use crate::training::TrainConfig;
use crate::verification::SuiteOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub mode: SplitMode,
    pub ratios: SplitRatios,
    /// One train/test split per seed; the seed also drives initialization
    /// and batch sampling of that cell.
    pub seeds: Vec<u64>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            mode: SplitMode::SubjectLevel,
            ratios: SplitRatios::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// One row of the model matrix. Unset fields inherit from the base
/// model, training and split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub bidirectional: bool,
    pub use_discriminator: bool,
    #[serde(default)]
    pub adversarial_scale: Option<f64>,
    #[serde(default)]
    pub discriminator_variant: Option<DiscriminatorVariant>,
    #[serde(default)]
    pub discriminator_levels: Option<DiscriminatorLevels>,
    #[serde(default)]
    pub split_mode: Option<SplitMode>,
}

impl Variant {
    pub fn new(name: &str, bidirectional: bool, use_discriminator: bool) -> Self {
        Variant {
            name: name.to_string(),
            bidirectional,
            use_discriminator,
            adversarial_scale: None,
            discriminator_variant: None,
            discriminator_levels: None,
            split_mode: None,
        }
    }

    pub fn model(&self, base: &AstnConfig) -> AstnConfig {
        AstnConfig {
            bidirectional: self.bidirectional,
            discriminator_variant: self.discriminator_variant.unwrap_or(base.discriminator_variant),
            discriminator_levels: self.discriminator_levels.unwrap_or(base.discriminator_levels),
            ..base.clone()
        }
    }

    pub fn train(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            use_discriminator: self.use_discriminator,
            adversarial_scale: self.adversarial_scale.unwrap_or(base.adversarial_scale),
            seed,
            ..base.clone()
        }
    }

    pub fn split_mode(&self, base: SplitMode) -> SplitMode {
        self.split_mode.unwrap_or(base)
    }
}

/// The four forward/bidirectional × with/without discriminator rows.
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::new("forward", false, false),
        Variant::new("forward+disc", false, true),
        Variant::new("bidirectional", true, false),
        Variant::new("bidirectional+disc", true, true),
    ]
}

/// Which trials of a split a command looks at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSet {
    Train,
    Validation,
    #[default]
    Test,
    All,
}

impl TrialSet {
    pub fn name(self) -> &'static str {
        match self {
            TrialSet::Train => "train",
            TrialSet::Validation => "validation",
            TrialSet::Test => "test",
            TrialSet::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Existing cohort file; when absent the cohort is synthesized.
    pub cohort: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: AstnConfig,
    pub train: TrainConfig,
    pub split: SplitSettings,
    pub variants: Vec<Variant>,
    /// Scales visited by `sweep-lambda`, applied to the first variant.
    pub lambdas: Vec<f64>,
    pub aggregation: Aggregation,
    /// Model checkpoint read by `eval` and `project`.
    pub checkpoint: Option<PathBuf>,
    pub trials: TrialSet,
    /// Iterations between resumable training snapshots; 0 disables them.
    pub snapshot_every: usize,
    pub grad_check: SuiteOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cohort: None,
            synth: SynthConfig::default(),
            model: AstnConfig::default(),
            train: TrainConfig::default(),
            split: SplitSettings::default(),
            variants: default_variants(),
            lambdas: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0],
            aggregation: Aggregation::Micro,
            checkpoint: None,
            trials: TrialSet::Test,
            snapshot_every: 100,
            grad_check: SuiteOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config and applies `dotted.path=value` overrides.
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AstnError::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| AstnError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| AstnError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.cohort, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.split.seeds.is_empty() {
            return Err(AstnError::Config("split.seeds is empty".into()));
        }
        if self.variants.is_empty() {
            return Err(AstnError::Config("no variants".into()));
        }
        let mut names: Vec<&str> = self.variants.iter().map(|v| v.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(AstnError::Config("variant names must be unique".into()));
        }
        for v in &self.variants {
            if v.name.is_empty() || v.name.contains(['/', '\\']) {
                return Err(AstnError::Config(format!("variant name {:?} is not a valid directory name", v.name)));
            }
            v.model(&self.model).validate()?;
            v.train(&self.train, 0).validate()?;
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(AstnError::Config(format!("lambdas must be finite and >= 0: {:?}", self.lambdas)));
        }
        for p in [&self.cohort, &self.checkpoint].into_iter().flatten() {
            if !p.is_file() {
                return Err(AstnError::Config(format!("{} does not exist", p.display())));
            }
        }
        self.grad_check.validate()
    }
}

/// Sets `path.to.field` (array indices allowed) to `value`, parsed as JSON
/// when possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| AstnError::Config(format!("override {assignment:?} is not path=value")))?;
    if path.is_empty() {
        return Err(AstnError::Config(format!("override {assignment:?} has an empty path")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(key.to_string(), parsed);
                    return Ok(());
                }
                map.entry(key.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| AstnError::Config(format!("{path}: {key:?} is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| AstnError::Config(format!("{path}: index {idx} out of range ({len} items)")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => return Err(AstnError::Config(format!("{path}: {key:?} is not inside an object or array"))),
        };
    }
    unreachable!("loop returns on the last key")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_reach_nested_fields() {
        let mut v = json!({"train": {"seed": 1}, "variants": [{"name": "a"}]});
        apply_override(&mut v, "train.seed=7").unwrap();
        apply_override(&mut v, "model.hidden_dim=12").unwrap();
        apply_override(&mut v, "variants.0.name=b").unwrap();
        apply_override(&mut v, "split.mode=\"trial_level\"").unwrap();
        assert_eq!(v["train"]["seed"], 7);
        assert_eq!(v["model"]["hidden_dim"], 12);
        assert_eq!(v["variants"][0]["name"], "b");
        assert_eq!(v["split"]["mode"], "trial_level");
        assert!(apply_override(&mut v, "variants.3.name=x").is_err());
        assert!(apply_override(&mut v, "train.seed.x=1").is_err());
        assert!(apply_override(&mut v, "noequals").is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad: std::result::Result<ExperimentConfig, _> = serde_json::from_value(json!({"train": {"iters": 3}}));
        assert!(bad.is_err());
        let ok: ExperimentConfig = serde_json::from_value(json!({"train": {"max_iterations": 3}})).unwrap();
        assert_eq!(ok.train.max_iterations, 3);
        ok.validate().unwrap();
    }

    #[test]
    fn variant_inherits_unset_fields() {
        let base = TrainConfig {
            adversarial_scale: 2.0,
            ..TrainConfig::default()
        };
        let v = Variant::new("x", true, true);
        assert_eq!(v.train(&base, 4).adversarial_scale, 2.0);
        assert_eq!(v.train(&base, 4).seed, 4);
        assert_eq!(v.split_mode(SplitMode::TrialLevel), SplitMode::TrialLevel);
    }
}
