//! Training configuration: one validated record for every hyperparameter,
//! loaded from a flat `key = value` text file.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder/decoder architecture sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub decoder_dim: usize,
    pub decoder_depth: usize,
    pub mlp_ratio: usize,
    /// Standardize reconstruction targets per patch (off by default).
    pub norm_pix_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            depth: 4,
            heads: 4,
            decoder_dim: 64,
            decoder_depth: 2,
            mlp_ratio: 4,
            norm_pix_targets: false,
        }
    }
}

/// All pipeline hyperparameters in one validated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the [CLS] alignment loss.
    pub gamma1: f64,
    /// Weight of the multi-positive contrastive loss.
    pub gamma2: f64,
    pub n_poses_per_batch: usize,
    pub m_variations: usize,
    pub mask_ratio: f64,
    pub patch_size: usize,
    /// (height, width) of training images.
    pub image_hw: (usize, usize),
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub grad_accum_steps: usize,
    pub use_pose_token: bool,
    pub use_mpc_loss: bool,
    /// Full augmentation set; `false` keeps only flip + crop.
    pub strong_aug: bool,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            gamma1: 0.05,
            gamma2: 0.05,
            n_poses_per_batch: 8,
            m_variations: 4,
            mask_ratio: 0.75,
            patch_size: 8,
            image_hw: (64, 48),
            base_lr: 2.4e-3,
            weight_decay: 0.05,
            warmup_epochs: 3,
            total_epochs: 30,
            grad_accum_steps: 1,
            use_pose_token: true,
            use_mpc_loss: true,
            strong_aug: true,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invariant("tau", "must be > 0"));
        }
        if !(self.gamma1 >= 0.0) {
            return Err(Error::invariant("gamma1", "must be >= 0"));
        }
        if !(self.gamma2 >= 0.0) {
            return Err(Error::invariant("gamma2", "must be >= 0"));
        }
        if self.n_poses_per_batch == 0 {
            return Err(Error::invariant("n_poses_per_batch", "must be >= 1"));
        }
        if self.m_variations < 2 {
            return Err(Error::invariant(
                "m_variations",
                "must be >= 2 (a group with one image has no positive pair)",
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::invariant("mask_ratio", "must lie in (0, 1)"));
        }
        if self.patch_size == 0 {
            return Err(Error::invariant("patch_size", "must be >= 1"));
        }
        let (h, w) = self.image_hw;
        if h == 0 || w == 0 {
            return Err(Error::invariant("image_hw", "must be positive"));
        }
        if h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(Error::invariant(
                "image_hw",
                format!("({h}, {w}) not divisible by patch_size {}", self.patch_size),
            ));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::invariant("base_lr", "must be > 0"));
        }
        if !(self.weight_decay > 0.0) {
            return Err(Error::invariant("weight_decay", "must be > 0"));
        }
        if self.warmup_epochs == 0 {
            return Err(Error::invariant("warmup_epochs", "must be >= 1"));
        }
        if self.total_epochs == 0 {
            return Err(Error::invariant("total_epochs", "must be >= 1"));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::invariant(
                "warmup_epochs",
                "must not exceed total_epochs",
            ));
        }
        if self.grad_accum_steps == 0 {
            return Err(Error::invariant("grad_accum_steps", "must be >= 1"));
        }
        if self.model.heads == 0 {
            return Err(Error::invariant("heads", "must be >= 1"));
        }
        if self.model.embed_dim == 0 || self.model.embed_dim % self.model.heads != 0 {
            return Err(Error::invariant(
                "embed_dim",
                "must be positive and divisible by heads",
            ));
        }
        if self.model.depth == 0 || self.model.decoder_depth == 0 {
            return Err(Error::invariant("depth", "encoder/decoder depth must be >= 1"));
        }
        if self.model.decoder_dim == 0 {
            return Err(Error::invariant("decoder_dim", "must be >= 1"));
        }
        if self.model.mlp_ratio == 0 {
            return Err(Error::invariant("mlp_ratio", "must be >= 1"));
        }
        Ok(())
    }

    /// Number of patches in the grid.
    pub fn num_patches(&self) -> usize {
        (self.image_hw.0 / self.patch_size) * (self.image_hw.1 / self.patch_size)
    }

    /// Patch grid shape as (rows, cols).
    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.image_hw.0 / self.patch_size,
            self.image_hw.1 / self.patch_size,
        )
    }
}

/// The three pipeline variants selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// [POSE] token + multi-positive contrastive loss.
    GenPoccl,
    /// Multi-positive contrastive loss on the [CLS] token, no [POSE] token.
    GenPoccl0,
    /// Masked reconstruction + [CLS] alignment only.
    BaselineHap,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genpoccl" => Ok(Variant::GenPoccl),
            "genpoccl0" => Ok(Variant::GenPoccl0),
            "baseline-hap" => Ok(Variant::BaselineHap),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected genpoccl|genpoccl0|baseline-hap)"
            ))),
        }
    }
}

impl Variant {
    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Variant::GenPoccl => {
                cfg.use_pose_token = true;
                cfg.use_mpc_loss = true;
            }
            Variant::GenPoccl0 => {
                cfg.use_pose_token = false;
                cfg.use_mpc_loss = true;
            }
            Variant::BaselineHap => {
                cfg.use_pose_token = false;
                cfg.use_mpc_loss = false;
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::GenPoccl => "genpoccl",
            Variant::GenPoccl0 => "genpoccl0",
            Variant::BaselineHap => "baseline-hap",
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "key `{key}`: expected true/false, got `{value}`"
        ))),
    }
}

/// Parse a flat `key = value` config text. Unknown keys are rejected;
/// missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "tau" => cfg.tau = parse_value(key, value)?,
            "gamma1" => cfg.gamma1 = parse_value(key, value)?,
            "gamma2" => cfg.gamma2 = parse_value(key, value)?,
            "n_poses_per_batch" => cfg.n_poses_per_batch = parse_value(key, value)?,
            "m_variations" => cfg.m_variations = parse_value(key, value)?,
            "mask_ratio" => cfg.mask_ratio = parse_value(key, value)?,
            "patch_size" => cfg.patch_size = parse_value(key, value)?,
            "image_h" => cfg.image_hw.0 = parse_value(key, value)?,
            "image_w" => cfg.image_hw.1 = parse_value(key, value)?,
            "base_lr" => cfg.base_lr = parse_value(key, value)?,
            "weight_decay" => cfg.weight_decay = parse_value(key, value)?,
            "warmup_epochs" => cfg.warmup_epochs = parse_value(key, value)?,
            "total_epochs" => cfg.total_epochs = parse_value(key, value)?,
            "grad_accum_steps" => cfg.grad_accum_steps = parse_value(key, value)?,
            "use_pose_token" => cfg.use_pose_token = parse_bool(key, value)?,
            "use_mpc_loss" => cfg.use_mpc_loss = parse_bool(key, value)?,
            "strong_aug" => cfg.strong_aug = parse_bool(key, value)?,
            "seed" => cfg.seed = parse_value(key, value)?,
            "embed_dim" => cfg.model.embed_dim = parse_value(key, value)?,
            "depth" => cfg.model.depth = parse_value(key, value)?,
            "heads" => cfg.model.heads = parse_value(key, value)?,
            "decoder_dim" => cfg.model.decoder_dim = parse_value(key, value)?,
            "decoder_depth" => cfg.model.decoder_depth = parse_value(key, value)?,
            "mlp_ratio" => cfg.model.mlp_ratio = parse_value(key, value)?,
            "norm_pix_targets" => cfg.model.norm_pix_targets = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Load and validate a [`TrainConfig`] from a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omitted_tau_defaults_to_point_two() {
        let cfg = parse_config("gamma1 = 0.1\n").unwrap();
        assert_eq!(cfg.tau, 0.2);
        assert_eq!(cfg.gamma1, 0.1);
    }

    #[test]
    fn zero_tau_is_rejected_with_field_name() {
        let err = parse_config("tau = 0\n").unwrap_err();
        assert!(err.to_string().contains("tau"), "{err}");
    }

    #[test]
    fn baseline_hap_style_config_is_valid() {
        let cfg = parse_config("gamma2 = 0\nuse_mpc_loss = false\nuse_pose_token = false\n").unwrap();
        assert_eq!(cfg.gamma2, 0.0);
        assert!(!cfg.use_mpc_loss);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(parse_config("taus = 0.5\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_config("# comment\n\ntau = 0.5 # inline\n").unwrap();
        assert_eq!(cfg.tau, 0.5);
    }

    #[test]
    fn every_single_field_violation_is_rejected() {
        let cases: Vec<(&str, TrainConfig)> = vec![
            ("tau", {
                let mut c = TrainConfig::default();
                c.tau = 0.0;
                c
            }),
            ("tau", {
                let mut c = TrainConfig::default();
                c.tau = -1.0;
                c
            }),
            ("gamma1", {
                let mut c = TrainConfig::default();
                c.gamma1 = -0.1;
                c
            }),
            ("gamma2", {
                let mut c = TrainConfig::default();
                c.gamma2 = -0.1;
                c
            }),
            ("n_poses_per_batch", {
                let mut c = TrainConfig::default();
                c.n_poses_per_batch = 0;
                c
            }),
            ("m_variations", {
                let mut c = TrainConfig::default();
                c.m_variations = 1;
                c
            }),
            ("mask_ratio", {
                let mut c = TrainConfig::default();
                c.mask_ratio = 0.0;
                c
            }),
            ("mask_ratio", {
                let mut c = TrainConfig::default();
                c.mask_ratio = 1.0;
                c
            }),
            ("patch_size", {
                let mut c = TrainConfig::default();
                c.patch_size = 0;
                c
            }),
            ("image_hw", {
                let mut c = TrainConfig::default();
                c.image_hw = (60, 48); // 60 % 8 != 0
                c
            }),
            ("base_lr", {
                let mut c = TrainConfig::default();
                c.base_lr = 0.0;
                c
            }),
            ("weight_decay", {
                let mut c = TrainConfig::default();
                c.weight_decay = 0.0;
                c
            }),
            ("warmup_epochs", {
                let mut c = TrainConfig::default();
                c.warmup_epochs = 0;
                c
            }),
            ("warmup_epochs", {
                let mut c = TrainConfig::default();
                c.warmup_epochs = c.total_epochs + 1;
                c
            }),
            ("total_epochs", {
                let mut c = TrainConfig::default();
                c.total_epochs = 0;
                c
            }),
            ("grad_accum_steps", {
                let mut c = TrainConfig::default();
                c.grad_accum_steps = 0;
                c
            }),
            ("embed_dim", {
                let mut c = TrainConfig::default();
                c.model.embed_dim = 130; // not divisible by 4 heads
                c
            }),
            ("heads", {
                let mut c = TrainConfig::default();
                c.model.heads = 0;
                c
            }),
            ("depth", {
                let mut c = TrainConfig::default();
                c.model.depth = 0;
                c
            }),
            ("decoder_dim", {
                let mut c = TrainConfig::default();
                c.model.decoder_dim = 0;
                c
            }),
            ("depth", {
                let mut c = TrainConfig::default();
                c.model.decoder_depth = 0;
                c
            }),
            ("mlp_ratio", {
                let mut c = TrainConfig::default();
                c.model.mlp_ratio = 0;
                c
            }),
        ];
        assert!(TrainConfig::default().validate().is_ok());
        for (field, cfg) in cases {
            let err = cfg.validate().expect_err(field);
            assert!(
                err.to_string().contains(field),
                "violation of `{field}` reported as `{err}`"
            );
        }
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in [Variant::GenPoccl, Variant::GenPoccl0, Variant::BaselineHap] {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("x".parse::<Variant>().is_err());
    }
}
