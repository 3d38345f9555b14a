//! Flat `key = value` run configuration. `#` starts a comment.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use oazr_core::geometry::{Intrinsics, NoiseParams, RigSpec};
use oazr_core::model::ModelConfig;
use oazr_core::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub frames: usize,
    pub views: usize,
    pub levels: usize,
    pub branch_dim: usize,
    pub heads: usize,
    pub encoder_dim: usize,
    pub joint_dim: usize,
    pub text_dim: usize,
    pub train: TrainConfig,
    pub noise: NoiseParams,
    pub rig: RigSpec,
    pub data: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        let train = TrainConfig {
            pretrain_epochs: 10,
            finetune_epochs: 5,
            ..TrainConfig::default()
        };
        Self {
            seed: 0,
            frames: 150,
            views: 12,
            levels: m.levels,
            branch_dim: m.branch_dim,
            heads: m.heads,
            encoder_dim: m.encoder_dim,
            joint_dim: m.joint_dim,
            text_dim: m.text_dim,
            train,
            noise: NoiseParams::default(),
            rig: RigSpec::default(),
            data: None,
            table: None,
            catalog: None,
            out: None,
        }
    }
}

/// Keys accepted by [`RunConfig::parse`], with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed"),
    ("frames", "frames kept per motion"),
    ("views", "cameras in the rig; must be 12"),
    ("L", "orientation encoding levels"),
    ("D", "branch width; must equal L"),
    ("heads", "attention heads"),
    ("D_e", "token width"),
    ("D_j", "joint space width"),
    ("D_t", "text embedding width"),
    ("mu", "contrastive margin"),
    ("lambda_pretrain", "loss mix while pretraining"),
    ("lambda_finetune", "loss mix while finetuning"),
    ("lr", "learning rate"),
    ("lr_decay_epoch", "epoch from which the decayed rate applies"),
    ("lr_decay_factor", "learning-rate decay factor"),
    ("batch_pairs", "anchors per batch"),
    ("epochs", "total epochs"),
    ("finetune_epochs", "how many of `epochs` finetune on per-bin texts"),
    ("record_wall_time", "true to log elapsed seconds, false to log 0"),
    ("p_outlier", "keypoint outlier probability"),
    ("sigma", "keypoint noise std in pixels"),
    ("bbox_margin", "outlier box growth"),
    ("rig_radius", "camera circle radius in meters"),
    ("rig_height", "camera height in meters"),
    ("focal", "focal length in pixels"),
    ("cx", "principal point x"),
    ("cy", "principal point y"),
    ("data", "dataset path"),
    ("table", "embedding table path"),
    ("catalog", "description catalog path"),
    ("out", "output path"),
];

/// Long help for `--config` options.
pub fn keys_help() -> String {
    let mut s = String::from("Run configuration: `key = value` lines, `#` comments. Keys:\n");
    for (k, d) in KEYS {
        s += &format!("  {k:<17} {d}\n");
    }
    s
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut epochs: Option<usize> = None;
        let mut finetune: Option<usize> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                bail!("line {}: `{key}` set twice", i + 1);
            }
            let t = &mut cfg.train;
            let r = match key {
                "seed" => num(key, value).map(|v| cfg.seed = v),
                "frames" => num(key, value).map(|v| cfg.frames = v),
                "views" => num(key, value).map(|v| cfg.views = v),
                "L" => num(key, value).map(|v| cfg.levels = v),
                "D" => num(key, value).map(|v| cfg.branch_dim = v),
                "heads" => num(key, value).map(|v| cfg.heads = v),
                "D_e" => num(key, value).map(|v| cfg.encoder_dim = v),
                "D_j" => num(key, value).map(|v| cfg.joint_dim = v),
                "D_t" => num(key, value).map(|v| cfg.text_dim = v),
                "mu" => num(key, value).map(|v| t.mu = v),
                "lambda_pretrain" => num(key, value).map(|v| t.lambda_pretrain = v),
                "lambda_finetune" => num(key, value).map(|v| t.lambda_finetune = v),
                "lr" => num(key, value).map(|v| t.adam.lr = v),
                "lr_decay_epoch" => num(key, value).map(|v| t.adam.decay_epoch = v),
                "lr_decay_factor" => num(key, value).map(|v| t.adam.decay_factor = v),
                "batch_pairs" => num(key, value).map(|v| t.batch_pairs = v),
                "epochs" => num(key, value).map(|v| epochs = Some(v)),
                "finetune_epochs" => num(key, value).map(|v| finetune = Some(v)),
                "record_wall_time" => num(key, value).map(|v| t.record_wall_time = v),
                "p_outlier" => num(key, value).map(|v| cfg.noise.p_outlier = v),
                "sigma" => num(key, value).map(|v| cfg.noise.sigma = v),
                "bbox_margin" => num(key, value).map(|v| cfg.noise.bbox_margin = v),
                "rig_radius" => num(key, value).map(|v| cfg.rig.radius = v),
                "rig_height" => num(key, value).map(|v| cfg.rig.height = v),
                "focal" => num(key, value).map(|v| cfg.rig.intrinsics.focal = v),
                "cx" => num(key, value).map(|v| cfg.rig.intrinsics.cx = v),
                "cy" => num(key, value).map(|v| cfg.rig.intrinsics.cy = v),
                "data" => {
                    cfg.data = Some(value.into());
                    Ok(())
                }
                "table" => {
                    cfg.table = Some(value.into());
                    Ok(())
                }
                "catalog" => {
                    cfg.catalog = Some(value.into());
                    Ok(())
                }
                "out" => {
                    cfg.out = Some(value.into());
                    Ok(())
                }
                _ => Err(anyhow!("unknown key `{key}`")),
            };
            r.with_context(|| format!("line {}", i + 1))?;
        }
        let epochs = epochs.unwrap_or(cfg.train.epochs());
        let finetune = finetune.unwrap_or(cfg.train.finetune_epochs.min(epochs));
        if finetune > epochs {
            bail!("finetune_epochs {finetune} exceeds epochs {epochs}");
        }
        cfg.train.pretrain_epochs = epochs - finetune;
        cfg.train.finetune_epochs = finetune;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views != 12 {
            bail!("views must be 12, the rig has one camera per orientation bin");
        }
        if self.frames == 0 {
            bail!("frames must be at least 1");
        }
        let Intrinsics { focal, cx, cy } = self.rig.intrinsics;
        if !(focal > 0.0 && focal.is_finite() && cx.is_finite() && cy.is_finite()) {
            bail!("focal must be positive and the principal point finite");
        }
        if !(self.rig.radius > 0.0 && self.rig.radius.is_finite() && self.rig.height.is_finite()) {
            bail!("rig_radius must be positive and rig_height finite");
        }
        self.noise.validate()?;
        self.train.validate()?;
        self.model_config(2).validate()?;
        Ok(())
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            levels: self.levels,
            branch_dim: self.branch_dim,
            heads: self.heads,
            encoder_dim: self.encoder_dim,
            joint_dim: self.joint_dim,
            text_dim: self.text_dim,
            num_classes,
            ..ModelConfig::new(num_classes)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}
