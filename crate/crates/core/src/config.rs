//! Line-based `key = value` experiment files.
//!
//! `#` starts a comment. Every key has a default, unknown keys are errors
//! and a key may appear at most once. [`ExperimentConfig::to_text`] writes
//! every key, so a saved file pins the full experiment.

use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use crate::dataset::TrainDegradation;
use crate::degrade::{parse_combos, ComboName, SecondOrderConfig};
use crate::dropout::{DropoutVariant, WeightFormatPolicy};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{LrSchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub train_degradation: TrainDegradation,
    /// Inclusion probability used when `train_degradation` is second order.
    pub include_prob: f64,
    pub patches_per_image: usize,
    pub eval_combos: Vec<ComboName>,
}

impl DataConfig {
    /// The training degradation with `include_prob` applied.
    pub fn degradation(&self) -> TrainDegradation {
        match &self.train_degradation {
            TrainDegradation::SecondOrder(c) => {
                TrainDegradation::SecondOrder(SecondOrderConfig { include_prob: self.include_prob, ..*c })
            }
            other => other.clone(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_degradation: TrainDegradation::default(),
            include_prob: SecondOrderConfig::default().include_prob,
            patches_per_image: 8,
            eval_combos: ComboName::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Every key with its documented default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("num_blocks", "4", "residual blocks B (>= 2)"),
    ("channels", "16", "feature channels C"),
    ("scale", "2", "upscaling factor, 2 or 4"),
    ("midpoint_split", "auto", "first block using vector w; auto = B / 2"),
    ("final_dropout_p", "0.5", "rate of the channel dropout before the last conv"),
    ("reduction", "4", "channel reduction of the implicit weight predictor"),
    ("p", "0.5", "drop rate of the per-block dropout"),
    ("variant", "explicit", "none | standard | adaptive_fixed | explicit | implicit"),
    ("w_init", "0.7", "initial w of the fixed and explicit variants"),
    ("w_format", "split", "implicit w format: split | value | vector"),
    ("total_iters", "2000", "training iterations T"),
    ("batch_size", "16", "patches per iteration"),
    ("patch_size", "32", "LR patch side"),
    ("lr0", "0.0002", "initial learning rate"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("eps", "1e-8", "Adam epsilon"),
    ("seed", "0", "master seed for init, masks, data and batches"),
    ("anneal_interval", "auto", "iterations between block annealings; auto = T / (B + 1)"),
    ("lr_schedule", "cosine", "learning-rate schedule"),
    ("w_log_every", "100", "period of w_trace.csv rows"),
    ("train_degradation", "clean,blur", "combo list or second_order"),
    ("include_prob", "0.5", "second_order: inclusion probability per op and pass"),
    ("patches_per_image", "8", "training patches cropped per HR image"),
    ("eval_combos", "all", "combos used by eval"),
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Config { line, msg: format!("{key}: cannot parse `{value}`: {e}") })
}

fn parse_auto<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(line, key, value).map(Some)
    }
}

fn auto_text<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config { line, msg: format!("duplicate key `{key}`") });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; `line` is only used in error messages.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "num_blocks" => m.num_blocks = parse_value(line, key, value)?,
            "channels" => m.channels = parse_value(line, key, value)?,
            "scale" => m.scale = parse_value(line, key, value)?,
            "midpoint_split" => m.midpoint_split = parse_auto(line, key, value)?,
            "final_dropout_p" => m.final_dropout_p = parse_value(line, key, value)?,
            "reduction" => m.reduction = parse_value(line, key, value)?,
            "p" => m.dropout.p = parse_value(line, key, value)?,
            "variant" => m.dropout.variant = parse_value::<DropoutVariant>(line, key, value)?,
            "w_init" => m.dropout.w_init = parse_value(line, key, value)?,
            "w_format" => m.dropout.w_format = parse_value::<WeightFormatPolicy>(line, key, value)?,
            "total_iters" => t.total_iters = parse_value(line, key, value)?,
            "batch_size" => t.batch_size = parse_value(line, key, value)?,
            "patch_size" => t.patch_size = parse_value(line, key, value)?,
            "lr0" => t.lr0 = parse_value(line, key, value)?,
            "beta1" => t.beta1 = parse_value(line, key, value)?,
            "beta2" => t.beta2 = parse_value(line, key, value)?,
            "eps" => t.eps = parse_value(line, key, value)?,
            "seed" => t.seed = parse_value(line, key, value)?,
            "anneal_interval" => t.anneal_interval = parse_auto(line, key, value)?,
            "lr_schedule" => t.lr_schedule = parse_value::<LrSchedule>(line, key, value)?,
            "w_log_every" => t.w_log_every = parse_value(line, key, value)?,
            "train_degradation" => self.data.train_degradation = parse_value(line, key, value)?,
            "include_prob" => {
                let prob: f64 = parse_value(line, key, value)?;
                if !(0.0..=1.0).contains(&prob) {
                    return Err(Error::Config { line, msg: format!("include_prob = {prob} outside [0, 1]") });
                }
                self.data.include_prob = prob;
            }
            "patches_per_image" => self.data.patches_per_image = parse_value(line, key, value)?,
            "eval_combos" => {
                self.data.eval_combos = parse_combos(value).map_err(|msg| Error::Config { line, msg })?
            }
            _ => return Err(Error::Config { line, msg: format!("unknown key `{key}`") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.patches_per_image == 0 {
            return Err(Error::invalid("config", "patches_per_image must be positive"));
        }
        if self.data.eval_combos.is_empty() {
            return Err(Error::invalid("config", "eval_combos is empty"));
        }
        Ok(())
    }

    /// Full text form; `parse(to_text())` returns an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let combos: Vec<&str> = self.data.eval_combos.iter().map(|c| c.as_str()).collect();
        let values: Vec<(&str, String)> = vec![
            ("num_blocks", m.num_blocks.to_string()),
            ("channels", m.channels.to_string()),
            ("scale", m.scale.to_string()),
            ("midpoint_split", auto_text(&m.midpoint_split)),
            ("final_dropout_p", fmt_f64(m.final_dropout_p)),
            ("reduction", m.reduction.to_string()),
            ("p", fmt_f64(m.dropout.p)),
            ("variant", m.dropout.variant.to_string()),
            ("w_init", fmt_f64(m.dropout.w_init)),
            ("w_format", m.dropout.w_format.as_str().to_string()),
            ("total_iters", t.total_iters.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("patch_size", t.patch_size.to_string()),
            ("lr0", fmt_f64(t.lr0)),
            ("beta1", fmt_f64(t.beta1)),
            ("beta2", fmt_f64(t.beta2)),
            ("eps", fmt_f64(t.eps)),
            ("seed", t.seed.to_string()),
            ("anneal_interval", auto_text(&t.anneal_interval)),
            ("lr_schedule", t.lr_schedule.to_string()),
            ("w_log_every", t.w_log_every.to_string()),
            ("train_degradation", self.data.train_degradation.to_string()),
            ("include_prob", fmt_f64(self.data.include_prob)),
            ("patches_per_image", self.data.patches_per_image.to_string()),
            ("eval_combos", combos.join(",")),
        ];
        values.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Comment-annotated defaults, suitable as a starting config file.
pub fn default_config_text() -> String {
    let mut s = String::new();
    for (key, default, doc) in KEYS {
        s.push_str(&format!("# {doc}\n{key} = {default}\n"));
    }
    s
}
