//! Experiment configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key may appear
//! at most once; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use glandseg_core::data::AugmentParams;
use glandseg_core::optim::NadamConfig;
use glandseg_core::train::TrainConfig;
use glandseg_core::{BlockKind, UNetConfig};

use crate::error::{Error, Result};

/// Every key accepted in a config file, in the order they are written.
pub const KEYS: [&str; 20] = [
    "data_dir",
    "output_dir",
    "test_dir",
    "block_kind",
    "depth",
    "base_filters",
    "input_side",
    "input_channels",
    "num_classes",
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "folds",
    "use_augmentation",
    "use_border_class",
    "border_width",
    "max_translation",
    "rotation_degrees",
    "mirror_probability",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Held-out cohort evaluated by a model retrained on all CV data.
    pub test_dir: Option<PathBuf>,
    pub block_kind: BlockKind,
    pub depth: usize,
    pub base_filters: usize,
    pub input_side: usize,
    pub input_channels: usize,
    /// Defaults to the block family's rate when unset.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub folds: usize,
    pub use_augmentation: bool,
    pub use_border_class: bool,
    /// Structuring-element radius of the border band.
    pub border_width: usize,
    pub augment: AugmentParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            test_dir: None,
            block_kind: BlockKind::Basic,
            depth: 5,
            base_filters: 64,
            input_side: 256,
            input_channels: 3,
            learning_rate: None,
            epochs: 250,
            batch_size: 8,
            seed: 0,
            folds: 4,
            use_augmentation: false,
            use_border_class: false,
            border_width: 1,
            augment: AugmentParams::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn num_classes(&self) -> usize {
        if self.use_border_class {
            3
        } else {
            2
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.block_kind.default_learning_rate())
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            block_kind: self.block_kind,
            depth: self.depth,
            base_filters: self.base_filters,
            num_classes: self.num_classes(),
            input_side: self.input_side,
            input_channels: self.input_channels,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            optimizer: NadamConfig::with_learning_rate(self.learning_rate()),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            augment: self.use_augmentation.then_some(self.augment),
        }
    }

    pub fn border(&self) -> Option<usize> {
        self.use_border_class.then_some(self.border_width)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "test_dir" => {
                self.test_dir = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "block_kind" => {
                self.block_kind = BlockKind::parse(value).ok_or_else(|| {
                    Error::Config(format!(
                        "block_kind: expected basic, rb or mrb, got {value:?}"
                    ))
                })?
            }
            "depth" => self.depth = parse(key, value)?,
            "base_filters" => self.base_filters = parse(key, value)?,
            "input_side" => self.input_side = parse(key, value)?,
            "input_channels" => self.input_channels = parse(key, value)?,
            "num_classes" => {
                let n: usize = parse(key, value)?;
                if n != 2 && n != 3 {
                    return Err(Error::Config(format!(
                        "num_classes must be 2 or 3, got {n}"
                    )));
                }
                self.use_border_class = n == 3;
            }
            "learning_rate" => self.learning_rate = Some(parse(key, value)?),
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "use_augmentation" => self.use_augmentation = parse_bool(key, value)?,
            "use_border_class" => self.use_border_class = parse_bool(key, value)?,
            "border_width" => self.border_width = parse(key, value)?,
            "max_translation" => self.augment.max_translation = parse(key, value)?,
            "rotation_degrees" => self.augment.rotation_degrees = parse(key, value)?,
            "mirror_probability" => self.augment.mirror_probability = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} given twice", n + 1)));
            }
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut config = Self::default();
        config
            .apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {lr}"
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(String::from(
                "epochs and batch_size must be at least 1",
            )));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!(
                "folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.use_border_class && self.border_width == 0 {
            return Err(Error::Config(String::from(
                "border_width must be at least 1",
            )));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        self.augment.validate()?;
        self.unet().validate()?;
        Ok(())
    }

    /// Fully resolved config in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Path| p.display().to_string();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("data_dir", path(&self.data_dir));
        put("output_dir", path(&self.output_dir));
        put(
            "test_dir",
            self.test_dir.as_deref().map(path).unwrap_or_default(),
        );
        put("block_kind", self.block_kind.name().into());
        put("depth", self.depth.to_string());
        put("base_filters", self.base_filters.to_string());
        put("input_side", self.input_side.to_string());
        put("input_channels", self.input_channels.to_string());
        put("num_classes", self.num_classes().to_string());
        put("learning_rate", self.learning_rate().to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("folds", self.folds.to_string());
        put("use_augmentation", self.use_augmentation.to_string());
        put("use_border_class", self.use_border_class.to_string());
        put("border_width", self.border_width.to_string());
        put("max_translation", self.augment.max_translation.to_string());
        put(
            "rotation_degrees",
            self.augment.rotation_degrees.to_string(),
        );
        put(
            "mirror_probability",
            self.augment.mirror_probability.to_string(),
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut config = ExperimentConfig::default();
        config
            .apply_text(
                "# ablation\nblock_kind = rb\nuse_border_class = true\n\nepochs=3\ntest_dir = t\n",
            )
            .unwrap();
        assert_eq!(config.block_kind, BlockKind::Residual);
        assert_eq!(config.num_classes(), 3);
        assert_eq!(config.learning_rate(), 5e-4);
        let mut back = ExperimentConfig::default();
        back.apply_text(&config.to_text()).unwrap();
        assert_eq!(back.to_text(), config.to_text());
        assert_eq!(back.test_dir, Some(PathBuf::from("t")));
    }

    #[test]
    fn every_key_is_written_once() {
        let text = ExperimentConfig::default().to_text();
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        assert_eq!(keys, KEYS);
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = ExperimentConfig::default();
        assert!(c.apply_text("depth = 3\ndepth = 4").is_err());
        assert!(c.apply_text("colour = red").is_err());
        assert!(c.apply_text("just words").is_err());
        assert!(c.apply_text("use_augmentation = maybe").is_err());
    }

    #[test]
    fn multires_defaults_to_lower_rate() {
        let mut c = ExperimentConfig::default();
        c.set("block_kind", "mrb").unwrap();
        assert_eq!(c.learning_rate(), 1e-4);
        c.set("learning_rate", "0.01").unwrap();
        assert_eq!(c.learning_rate(), 0.01);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::default();
        c.validate().unwrap();
        c.learning_rate = Some(0.0);
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            input_side: 100,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
