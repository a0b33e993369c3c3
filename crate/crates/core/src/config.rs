//! Experiment configuration: a flat `key = value` text document.
//!
//! Lines starting with `#` are comments. Keys absent from the file take the
//! defaults below; unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which adversarial branches are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// No adaptation.
    #[serde(rename = "NA")]
    Na,
    /// Image-level (pyramid pooling output) adaptation only.
    #[serde(rename = "IA")]
    Ia,
    /// Feature-level (fused feature) adaptation only.
    #[serde(rename = "FA")]
    Fa,
    /// Both adaptation branches.
    #[serde(rename = "FULL")]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Na, Variant::Ia, Variant::Fa, Variant::Full];

    pub fn uses_image_level(self) -> bool {
        matches!(self, Variant::Ia | Variant::Full)
    }

    pub fn uses_feature_level(self) -> bool {
        matches!(self, Variant::Fa | Variant::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Na => "NA",
            Variant::Ia => "IA",
            Variant::Fa => "FA",
            Variant::Full => "FULL",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NA" => Ok(Variant::Na),
            "IA" => Ok(Variant::Ia),
            "FA" => Ok(Variant::Fa),
            "FULL" => Ok(Variant::Full),
            other => Err(format!("unknown variant `{other}` (expected NA, IA, FA or FULL)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Weight of the Dice term in the segmentation loss.
    pub alpha: f64,
    /// Weight of the image-level adversarial term.
    pub lambda_img: f64,
    /// Weight of the feature-level adversarial term.
    pub lambda_feat: f64,
    pub base_lr: f64,
    pub total_epochs: usize,
    /// Epochs at `base_lr` before the linear decay to zero.
    pub constant_epochs: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub num_classes: usize,
    pub variant: Variant,
    pub seed: u64,
    pub deterministic: bool,
    pub dice_smooth: f64,
    /// Multiplier on every internal channel count (clamped to at least 8).
    pub channel_width_scale: f64,
    pub crops_per_image: usize,
    pub flip_augment: bool,
    /// Also push source features toward the target label in the generator update.
    pub adv_symmetric: bool,
    pub checkpoint_every: usize,
    pub adam_beta1_g: f64,
    pub adam_beta2_g: f64,
    pub adam_beta1_d: f64,
    pub adam_beta2_d: f64,
    /// Sliding-window size at evaluation; defaults to `crop_size`.
    pub eval_window: Option<usize>,
    /// Sliding-window stride; defaults to half the window.
    pub eval_stride: Option<usize>,
    pub threshold: f64,
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 1.0,
            lambda_img: 0.002,
            lambda_feat: 0.005,
            base_lr: 1e-3,
            total_epochs: 300,
            constant_epochs: 150,
            batch_size: 4,
            crop_size: 256,
            num_classes: 2,
            variant: Variant::Full,
            seed: 0,
            deterministic: true,
            dice_smooth: 1.0,
            channel_width_scale: 1.0,
            crops_per_image: 4,
            flip_augment: false,
            adv_symmetric: false,
            checkpoint_every: 25,
            adam_beta1_g: 0.9,
            adam_beta2_g: 0.999,
            adam_beta1_d: 0.5,
            adam_beta2_d: 0.999,
            eval_window: None,
            eval_stride: None,
            threshold: 0.5,
            source_manifest: PathBuf::new(),
            target_manifest: PathBuf::new(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(key, format!("`{value}` is not a boolean"))),
    }
}

/// Accepts `0.25` as well as `1/4`.
fn parse_ratio(key: &str, value: &str) -> Result<f64> {
    match value.split_once('/') {
        Some((n, d)) => {
            let n: f64 = parse_num(key, n.trim())?;
            let d: f64 = parse_num(key, d.trim())?;
            if d == 0.0 {
                return Err(Error::invalid(key, "zero denominator"));
            }
            Ok(n / d)
        }
        None => parse_num(key, value),
    }
}

fn parse_optional(key: &str, value: &str) -> Result<Option<usize>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

impl ExperimentConfig {
    /// Keys understood by [`set`](Self::set), in serialization order.
    pub const KEYS: [&'static str; 28] = [
        "alpha",
        "lambda_img",
        "lambda_feat",
        "base_lr",
        "total_epochs",
        "constant_epochs",
        "batch_size",
        "crop_size",
        "num_classes",
        "variant",
        "seed",
        "deterministic",
        "dice_smooth",
        "channel_width_scale",
        "crops_per_image",
        "flip_augment",
        "adv_symmetric",
        "checkpoint_every",
        "adam_beta1_g",
        "adam_beta2_g",
        "adam_beta1_d",
        "adam_beta2_d",
        "eval_window",
        "eval_stride",
        "threshold",
        "source_manifest",
        "target_manifest",
        "output_dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "alpha" => self.alpha = parse_num(key, value)?,
            "lambda_img" => self.lambda_img = parse_num(key, value)?,
            "lambda_feat" => self.lambda_feat = parse_num(key, value)?,
            "base_lr" => self.base_lr = parse_num(key, value)?,
            "total_epochs" => self.total_epochs = parse_num(key, value)?,
            "constant_epochs" => self.constant_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "crop_size" => self.crop_size = parse_num(key, value)?,
            "num_classes" => self.num_classes = parse_num(key, value)?,
            "variant" => self.variant = value.parse().map_err(|m| Error::invalid(key, m))?,
            "seed" => self.seed = parse_num(key, value)?,
            "deterministic" => self.deterministic = parse_bool(key, value)?,
            "dice_smooth" => self.dice_smooth = parse_num(key, value)?,
            "channel_width_scale" => self.channel_width_scale = parse_ratio(key, value)?,
            "crops_per_image" => self.crops_per_image = parse_num(key, value)?,
            "flip_augment" => self.flip_augment = parse_bool(key, value)?,
            "adv_symmetric" => self.adv_symmetric = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "adam_beta1_g" => self.adam_beta1_g = parse_num(key, value)?,
            "adam_beta2_g" => self.adam_beta2_g = parse_num(key, value)?,
            "adam_beta1_d" => self.adam_beta1_d = parse_num(key, value)?,
            "adam_beta2_d" => self.adam_beta2_d = parse_num(key, value)?,
            "eval_window" => self.eval_window = parse_optional(key, value)?,
            "eval_stride" => self.eval_stride = parse_optional(key, value)?,
            "threshold" => self.threshold = parse_num(key, value)?,
            "source_manifest" => self.source_manifest = PathBuf::from(value),
            "target_manifest" => self.target_manifest = PathBuf::from(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::invalid(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| {
            Error::invalid(assignment, "override must have the form key=value")
        })?;
        self.set(k.trim(), v)
    }

    /// Parses a document without validating it.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: i + 1,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let v = match v.split_once(" #") {
                Some((v, _)) => v,
                None => v,
            };
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("alpha", self.alpha),
            ("lambda_img", self.lambda_img),
            ("lambda_feat", self.lambda_feat),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(key, format!("{v} must be a finite value >= 0")));
            }
        }
        for (key, v) in [
            ("base_lr", self.base_lr),
            ("dice_smooth", self.dice_smooth),
            ("channel_width_scale", self.channel_width_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(key, format!("{v} must be positive")));
            }
        }
        for (key, v) in [
            ("total_epochs", self.total_epochs),
            ("constant_epochs", self.constant_epochs),
            ("batch_size", self.batch_size),
            ("crop_size", self.crop_size),
            ("crops_per_image", self.crops_per_image),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return Err(Error::invalid(key, "must be a positive integer"));
            }
        }
        if self.constant_epochs > self.total_epochs {
            return Err(Error::invalid(
                "constant_epochs",
                format!(
                    "{} exceeds total_epochs {}",
                    self.constant_epochs, self.total_epochs
                ),
            ));
        }
        if !self.crop_size.is_multiple_of(8) {
            return Err(Error::invalid(
                "crop_size",
                format!("{} is not divisible by 8", self.crop_size),
            ));
        }
        if self.num_classes != 2 {
            return Err(Error::invalid("num_classes", "only binary segmentation (2) is supported"));
        }
        for (key, v) in [
            ("adam_beta1_g", self.adam_beta1_g),
            ("adam_beta2_g", self.adam_beta2_g),
            ("adam_beta1_d", self.adam_beta1_d),
            ("adam_beta2_d", self.adam_beta2_d),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(key, format!("{v} must lie in [0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold", "must lie in [0, 1]"));
        }
        let window = self.window();
        if !window.is_multiple_of(8) || window == 0 {
            return Err(Error::invalid(
                "eval_window",
                format!("{window} is not a positive multiple of 8"),
            ));
        }
        let stride = self.stride();
        if stride == 0 || stride > window {
            return Err(Error::invalid(
                "eval_stride",
                format!("{stride} must lie in 1..={window}"),
            ));
        }
        Ok(())
    }

    /// `(lambda_img, lambda_feat)` after the variant's zeroing rules.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        (
            if self.variant.uses_image_level() { self.lambda_img } else { 0.0 },
            if self.variant.uses_feature_level() { self.lambda_feat } else { 0.0 },
        )
    }

    pub fn window(&self) -> usize {
        self.eval_window.unwrap_or(self.crop_size)
    }

    pub fn stride(&self) -> usize {
        self.eval_stride.unwrap_or(self.window() / 2)
    }

    /// Canonical text form; every key is written so the output is self-contained.
    pub fn to_config_string(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("alpha", self.alpha.to_string());
        line("lambda_img", self.lambda_img.to_string());
        line("lambda_feat", self.lambda_feat.to_string());
        line("base_lr", self.base_lr.to_string());
        line("total_epochs", self.total_epochs.to_string());
        line("constant_epochs", self.constant_epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("crop_size", self.crop_size.to_string());
        line("num_classes", self.num_classes.to_string());
        line("variant", self.variant.to_string());
        line("seed", self.seed.to_string());
        line("deterministic", self.deterministic.to_string());
        line("dice_smooth", self.dice_smooth.to_string());
        line("channel_width_scale", self.channel_width_scale.to_string());
        line("crops_per_image", self.crops_per_image.to_string());
        line("flip_augment", self.flip_augment.to_string());
        line("adv_symmetric", self.adv_symmetric.to_string());
        line("checkpoint_every", self.checkpoint_every.to_string());
        line("adam_beta1_g", self.adam_beta1_g.to_string());
        line("adam_beta2_g", self.adam_beta2_g.to_string());
        line("adam_beta1_d", self.adam_beta1_d.to_string());
        line("adam_beta2_d", self.adam_beta2_d.to_string());
        line("eval_window", opt(self.eval_window));
        line("eval_stride", opt(self.eval_stride));
        line("threshold", self.threshold.to_string());
        line("source_manifest", self.source_manifest.display().to_string());
        line("target_manifest", self.target_manifest.display().to_string());
        line("output_dir", self.output_dir.display().to_string());
        s
    }

    /// Stable 64-bit identity of the run-defining settings. `output_dir` is
    /// excluded so a run can be resumed from a different location.
    pub fn config_hash(&self) -> u64 {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_config_string().as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_config_string()).map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_with_overrides(path, &[])
}

/// Reads a file, applies `key=value` overrides, then validates.
pub fn load_config_with_overrides(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ExperimentConfig::parse_unvalidated(&text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Learning rate for `epoch`: constant for the first `constant_epochs`, then
/// linear to zero at `total_epochs`.
pub fn lr_at_epoch(cfg: &ExperimentConfig, epoch: usize) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::Precondition(format!(
            "epoch {epoch} is outside 0..={}",
            cfg.total_epochs
        )));
    }
    if epoch < cfg.constant_epochs {
        return Ok(cfg.base_lr);
    }
    let decay = (cfg.total_epochs - cfg.constant_epochs) as f64;
    if decay == 0.0 {
        return Ok(0.0);
    }
    Ok(cfg.base_lr * ((cfg.total_epochs - epoch) as f64 / decay))
}
