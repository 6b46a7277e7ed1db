//! Flat `key = value` configuration files.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Recognized keys:
//!
//! | key | meaning |
//! |---|---|
//! | `preset` | `desk` or `full` training schedule and geometry |
//! | `crop_size`, `trunk_channels` | search-region resolution and refinement width |
//! | `batch_size`, `epochs`, `iterations_per_epoch` | training schedule |
//! | `learning_rate`, `decay_factor`, `decay_interval` | ADAM step size and its step decay (epochs) |
//! | `pair_range`, `perturbation`, `region_jitter`, `scale_jitter` | training sample construction |
//! | `validation_samples`, `seed` | validation set size, RNG seed |
//! | `frame_width`, `frame_height`, `sequence_length` | synthetic sequence shape |
//! | `k`, `foreground_cap`, `background_cap` | feature-set matching |
//! | `lambda`, `update_rate`, `cosine_window` | correlation filter |
//! | `alpha`, `box_method`, `size_smoothing` | box fitting and size update |
//! | `ablation` | tracker variant name |
//! | `skip`, `burn_in` | reset protocol constants |

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::boxfit::BoxFitMethod;
use crate::error::{Error, Result};
use crate::eval::ResetConfig;
use crate::features::Geometry;
use crate::tracker::{Ablation, TrackerConfig};
use crate::train::TrainingConfig;

const TRAINING_KEYS: &[&str] = &[
    "preset",
    "crop_size",
    "trunk_channels",
    "batch_size",
    "epochs",
    "iterations_per_epoch",
    "learning_rate",
    "decay_factor",
    "decay_interval",
    "pair_range",
    "perturbation",
    "region_jitter",
    "scale_jitter",
    "validation_samples",
    "seed",
    "frame_width",
    "frame_height",
    "sequence_length",
];
const TRACKER_KEYS: &[&str] = &[
    "k",
    "foreground_cap",
    "background_cap",
    "lambda",
    "update_rate",
    "cosine_window",
    "alpha",
    "box_method",
    "size_smoothing",
    "ablation",
];
const EVAL_KEYS: &[&str] = &["skip", "burn_in"];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !is_known(k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            values.insert(k.to_string(), v.to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set a value, as a command-line flag does.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !is_known(key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.into(), value.into());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`"))))
            .transpose()
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.values
            .get(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
            })
            .transpose()
    }

    pub fn training(&self) -> Result<TrainingConfig> {
        let mut c = match self.get_str("preset") {
            None | Some("desk") => TrainingConfig::desk(),
            Some("full") => TrainingConfig::full(),
            Some(p) => return Err(Error::Config(format!("unknown preset `{p}`; expected desk or full"))),
        };
        set(&mut c.geometry.crop_size, self.get("crop_size")?);
        set(&mut c.geometry.trunk_channels, self.get("trunk_channels")?);
        set(&mut c.batch_size, self.get("batch_size")?);
        set(&mut c.epochs, self.get("epochs")?);
        set(&mut c.iterations_per_epoch, self.get("iterations_per_epoch")?);
        set(&mut c.adam.learning_rate, self.get("learning_rate")?);
        set(&mut c.adam.decay_factor, self.get("decay_factor")?);
        set(&mut c.adam.decay_interval_epochs, self.get("decay_interval")?);
        set(&mut c.pair_range, self.get("pair_range")?);
        set(&mut c.perturbation, self.get("perturbation")?);
        set(&mut c.region_jitter, self.get("region_jitter")?);
        set(&mut c.scale_jitter, self.get("scale_jitter")?);
        set(&mut c.validation_samples, self.get("validation_samples")?);
        set(&mut c.seed, self.get("seed")?);
        set(&mut c.synth.width, self.get("frame_width")?);
        set(&mut c.synth.height, self.get("frame_height")?);
        set(&mut c.synth.length, self.get("sequence_length")?);
        if let Some(k) = self.get("k")? {
            c.gim.k = k;
        }
        c.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Ok(self.training()?.geometry)
    }

    pub fn tracker(&self) -> Result<TrackerConfig> {
        let mut c = TrackerConfig::default();
        set(&mut c.gim.k, self.get("k")?);
        set(&mut c.gim.foreground_cap, self.get("foreground_cap")?);
        set(&mut c.gim.background_cap, self.get("background_cap")?);
        set(&mut c.gim.seed, self.get("seed")?);
        set(&mut c.dcf.lambda, self.get("lambda")?);
        set(&mut c.dcf.update_rate, self.get("update_rate")?);
        set(&mut c.dcf.cosine_window, self.get_bool("cosine_window")?);
        set(&mut c.alpha, self.get("alpha")?);
        set(&mut c.size_smoothing, self.get("size_smoothing")?);
        if let Some(m) = self.get_str("box_method") {
            c.box_method = match m {
                "optimized" => BoxFitMethod::Optimized,
                "min-area" => BoxFitMethod::MinArea,
                "min-max" => BoxFitMethod::MinMax,
                _ => return Err(Error::Config(format!("unknown box_method `{m}`; expected optimized, min-area or min-max"))),
            };
        }
        if let Some(a) = self.get_str("ablation") {
            c = Ablation::parse(a)?.apply(c);
        }
        if c.gim.k == 0 || c.gim.foreground_cap == 0 || c.gim.background_cap == 0 {
            return Err(Error::Config("k and the feature-set caps must be positive".into()));
        }
        if !(c.dcf.lambda > 0.0) || !(0.0..=1.0).contains(&c.dcf.update_rate) || !(0.0..=1.0).contains(&c.size_smoothing) {
            return Err(Error::Config("lambda must be positive; update_rate and size_smoothing in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&c.alpha) {
            return Err(Error::Config("alpha must lie in [0, 1]".into()));
        }
        Ok(c)
    }

    pub fn reset(&self) -> Result<ResetConfig> {
        let mut c = ResetConfig::default();
        set(&mut c.skip, self.get("skip")?);
        set(&mut c.burn_in, self.get("burn_in")?);
        Ok(c)
    }
}

fn is_known(k: &str) -> bool {
    TRAINING_KEYS.contains(&k) || TRACKER_KEYS.contains(&k) || EVAL_KEYS.contains(&k)
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}
