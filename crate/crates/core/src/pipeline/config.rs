use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::association::{DEFAULT_CANDIDATE_WINDOW, DEFAULT_TARGET_WINDOW};
use crate::clustering::AttachRule;
use crate::error::{Error, Result};
use crate::events::{DEFAULT_EXCLUDE_BELOW, DEFAULT_MIN_DURATION, DEFAULT_ON_THRESHOLD, DEFAULT_PEAK_QUANTILE};
use crate::features::DEFAULT_DCC_THRESHOLD;
use crate::forecaster::{ModelConfig, TrainConfig};

/// Where the household comes from: a synthetic spec or metered CSV files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub synth: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsConfig {
    pub on_threshold: f64,
    pub min_duration: usize,
    pub exclude_below: f64,
    pub peak_quantile: f64,
}

impl Default for EventsConfig {
    fn default() -> Self {
        EventsConfig {
            on_threshold: DEFAULT_ON_THRESHOLD,
            min_duration: DEFAULT_MIN_DURATION,
            exclude_below: DEFAULT_EXCLUDE_BELOW,
            peak_quantile: DEFAULT_PEAK_QUANTILE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    /// `T_e`, seconds.
    pub target_window: i64,
    /// `T_s`, seconds.
    pub candidate_window: i64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        AssociationSection {
            target_window: DEFAULT_TARGET_WINDOW,
            candidate_window: DEFAULT_CANDIDATE_WINDOW,
        }
    }
}

/// Cluster count: chosen by silhouette or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KMode {
    #[default]
    Auto,
    Fixed(usize),
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Auto => f.write_str("auto"),
            KMode::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(KMode::Auto),
            other => other
                .parse()
                .map(KMode::Fixed)
                .map_err(|_| Error::Config(format!("k must be `auto` or an integer, got {other:?}"))),
        }
    }
}

impl Serialize for KMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KMode::Auto => s.serialize_str("auto"),
            KMode::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Fixed(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Fixed(k) => Ok(KMode::Fixed(k)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub k: KMode,
    pub seed: u64,
    pub attach_excluded: AttachRule,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        ClusteringSection {
            k: KMode::Auto,
            seed: 7,
            attach_excluded: AttachRule::Smallest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub threshold: f64,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        FeaturesSection {
            threshold: DEFAULT_DCC_THRESHOLD,
        }
    }
}

/// A named preset (`"small"`, `"large"`) or an explicit shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(ModelPreset),
    Custom(ModelConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    Small,
    Large,
}

impl ModelChoice {
    /// Presets take the window from the forecast section.
    pub fn resolve(&self, window_days: usize) -> ModelConfig {
        match self {
            ModelChoice::Preset(ModelPreset::Small) => ModelConfig::small(window_days),
            ModelChoice::Preset(ModelPreset::Large) => ModelConfig::large(window_days),
            ModelChoice::Custom(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Forecast grid step, seconds.
    pub step: i64,
    pub train_months: u32,
    pub window_days: usize,
    pub cluster_model: ModelChoice,
    pub overall_model: ModelChoice,
    /// Base seed for parameter initialization.
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            step: 7200,
            train_months: 23,
            window_days: 7,
            cluster_model: ModelChoice::Preset(ModelPreset::Small),
            overall_model: ModelChoice::Preset(ModelPreset::Large),
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

/// Every stage parameter. Paths are resolved against the config file's
/// directory when loaded from disk.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub events: EventsConfig,
    pub association: AssociationSection,
    pub clustering: ClusteringSection,
    pub features: FeaturesSection,
    pub forecast: ForecastSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.input.synth.as_mut() {
            fix(p);
        }
        if let Some(p) = self.input.schema.as_mut() {
            fix(p);
        }
        self.input.data.iter_mut().for_each(fix);
    }

    /// Overlay the keys present in the file at `path` onto `self`. Keys the
    /// file does not mention keep their current values.
    pub fn overlay_file(&self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let present: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let file = toml::Value::try_from(Self::load(path)?).expect("config serializes");
        let mut base = toml::Value::try_from(self).expect("config serializes");
        overlay(&mut base, &file, &present);
        base.try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every section before any stage runs.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.input.synth, self.input.data.is_empty()) {
            (Some(_), false) => return bad("input: set either `synth` or `data`, not both".into()),
            (None, false) if self.input.schema.is_none() => return bad("input: `data` needs a `schema`".into()),
            _ => {}
        }
        let e = &self.events;
        if !(e.on_threshold > 0.0) || e.min_duration == 0 || !(e.exclude_below > 0.0) {
            return bad("events: on_threshold and min_duration must be positive, exclude_below positive".into());
        }
        if !(0.0..=1.0).contains(&e.peak_quantile) {
            return bad(format!("events: peak_quantile {} outside [0, 1]", e.peak_quantile));
        }
        crate::association::AssociationConfig::new(self.association.target_window, self.association.candidate_window)?;
        if let KMode::Fixed(k) = self.clustering.k {
            if k < 1 {
                return bad("clustering: k must be at least 1".into());
            }
        }
        if !(0.0..=1.0).contains(&self.features.threshold) {
            return bad(format!("features: threshold {} outside [0, 1]", self.features.threshold));
        }
        let f = &self.forecast;
        if f.step <= 0 || crate::data::SECONDS_PER_DAY % f.step != 0 {
            return bad(format!("forecast: step {} must divide a day", f.step));
        }
        if f.train_months == 0 || f.window_days == 0 {
            return bad("forecast: train_months and window_days must be positive".into());
        }
        let slots = (crate::data::SECONDS_PER_DAY / f.step) as usize;
        for (name, m) in [("cluster_model", f.cluster_model), ("overall_model", f.overall_model)] {
            let m = m.resolve(f.window_days);
            m.validate()?;
            if m.output_slots != slots {
                return bad(format!(
                    "forecast: {name} emits {} slots but the {}-second grid has {slots} per day",
                    m.output_slots, f.step
                ));
            }
        }
        f.train.validate()
    }
}

fn overlay(base: &mut toml::Value, file: &toml::Value, present: &toml::Table) {
    let (Some(base), Some(file)) = (base.as_table_mut(), file.as_table()) else {
        return;
    };
    for (key, raw) in present {
        let Some(value) = file.get(key) else { continue };
        match (raw, base.get_mut(key)) {
            (toml::Value::Table(sub), Some(slot @ toml::Value::Table(_))) if value.is_table() => overlay(slot, value, sub),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.forecast.overall_model.resolve(7), ModelConfig::large(7));
    }

    #[test]
    fn parses_sections() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [input]
            synth = "house.toml"
            [clustering]
            k = 4
            attach_excluded = 2
            [forecast]
            train_months = 2
            cluster_model = "large"
            [forecast.train]
            max_epochs = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.clustering.k, KMode::Fixed(4));
        assert_eq!(cfg.clustering.attach_excluded, AttachRule::Index(2));
        assert_eq!(cfg.forecast.train.max_epochs, 5);
        assert_eq!(cfg.forecast.train.batch_size, 32);
        assert_eq!(cfg.forecast.cluster_model, ModelChoice::Preset(ModelPreset::Large));
        cfg.validate().unwrap();
    }

    #[test]
    fn file_keys_override_only_what_they_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[input]\nsynth = \"h.toml\"\n[events]\non_threshold = 9.0\n[forecast.train]\nmax_epochs = 4\n").unwrap();
        let mut flags = PipelineConfig::default();
        flags.events.on_threshold = 30.0;
        flags.events.min_duration = 5;
        flags.forecast.train.patience = 3;
        let merged = flags.overlay_file(&path).unwrap();
        assert_eq!(merged.events.on_threshold, 9.0);
        assert_eq!(merged.events.min_duration, 5);
        assert_eq!(merged.forecast.train.max_epochs, 4);
        assert_eq!(merged.forecast.train.patience, 3);
        assert_eq!(merged.input.synth, Some(dir.path().join("h.toml")));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(PipelineConfig::from_toml("[events]\nbogus = 1").is_err());
        let mut cfg = PipelineConfig::default();
        cfg.association.target_window = 90000;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.forecast.step = 3600;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.input.data = vec!["a.csv".into()];
        assert!(cfg.validate().is_err());
        assert_eq!("auto".parse::<KMode>().unwrap(), KMode::Auto);
        assert!("two".parse::<KMode>().is_err());
    }
}
