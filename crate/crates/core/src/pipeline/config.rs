use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diffcore::OptimizerKind;
use crate::error::{Error, Result};
use crate::keygesture::{DEFAULT_MAX_TEMPLATES, DEFAULT_TAU};
use crate::latentlab::{Centering, Strategy, DEFAULT_COS_MIN, DEFAULT_EPSILON_PERCENTILE, DEFAULT_NORM_BAND};
use crate::synthface::MIN_SIZE;
use crate::vaegan::{Architecture, TrainingConfig};

/// Every tunable of a pipeline run. Loaded from `key = value` files.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sprite_size: usize,
    pub subjects: u32,
    pub frames_per_subject: u32,
    /// Schedule CSV; `None` draws a random schedule from `seed`.
    pub schedule: Option<PathBuf>,
    pub event_min_len: u32,
    pub event_max_len: u32,
    pub base_noise: f64,
    pub tau: f64,
    pub max_templates: usize,
    pub latent_dim: usize,
    pub channels: Vec<usize>,
    pub feature_layer: usize,
    pub gamma: f64,
    pub beta: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub lr_discriminator: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of key frames withheld from training for evaluation.
    pub holdout_fraction: f64,
    pub epsilon_percentile: f64,
    pub cos_min: f64,
    pub norm_band: (f64, f64),
    pub strategy: Strategy,
    pub centering: Centering,
    /// Neutral frames used for the attribute-transfer evaluation.
    pub transfer_frames: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        RunConfig {
            sprite_size: t.architecture.image_size,
            subjects: 20,
            frames_per_subject: 300,
            schedule: None,
            event_min_len: 20,
            event_max_len: 60,
            base_noise: 0.02,
            tau: DEFAULT_TAU,
            max_templates: DEFAULT_MAX_TEMPLATES,
            latent_dim: t.architecture.latent_dim,
            channels: t.architecture.channels.clone(),
            feature_layer: t.architecture.feature_layer,
            gamma: t.gamma,
            beta: t.beta,
            lr_encoder: t.lr_encoder,
            lr_decoder: t.lr_decoder,
            lr_discriminator: t.lr_discriminator,
            optimizer: t.optimizer,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: 0,
            holdout_fraction: 0.15,
            epsilon_percentile: DEFAULT_EPSILON_PERCENTILE,
            cos_min: DEFAULT_COS_MIN,
            norm_band: DEFAULT_NORM_BAND,
            strategy: Strategy::DiffOfMeans,
            centering: Centering::PerSubject,
            transfer_frames: 50,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

impl RunConfig {
    /// Assign one key. `lr` / `learning_rate` set all three learning rates.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "sprite_size" => self.sprite_size = parse_num(key, v)?,
            "subjects" => self.subjects = parse_num(key, v)?,
            "frames_per_subject" => self.frames_per_subject = parse_num(key, v)?,
            "schedule" => self.schedule = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "event_min_len" => self.event_min_len = parse_num(key, v)?,
            "event_max_len" => self.event_max_len = parse_num(key, v)?,
            "base_noise" => self.base_noise = parse_num(key, v)?,
            "tau" => self.tau = parse_num(key, v)?,
            "max_templates" => self.max_templates = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "channels" => self.channels = parse_list(key, v)?,
            "feature_layer" => self.feature_layer = parse_num(key, v)?,
            "gamma" => self.gamma = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "lr_encoder" => self.lr_encoder = parse_num(key, v)?,
            "lr_decoder" => self.lr_decoder = parse_num(key, v)?,
            "lr_discriminator" => self.lr_discriminator = parse_num(key, v)?,
            "lr" | "learning_rate" => {
                let lr = parse_num(key, v)?;
                (self.lr_encoder, self.lr_decoder, self.lr_discriminator) = (lr, lr, lr);
            }
            "optimizer" => self.optimizer = v.parse().map_err(|e: Error| format!("`{key}`: {e}"))?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "holdout_fraction" => self.holdout_fraction = parse_num(key, v)?,
            "epsilon_percentile" => self.epsilon_percentile = parse_num(key, v)?,
            "cos_min" => self.cos_min = parse_num(key, v)?,
            "norm_band" => {
                let b: Vec<f64> = parse_list(key, v)?;
                if b.len() != 2 {
                    return Err(format!("`{key}` takes two values `lo, hi`, got {}", b.len()));
                }
                self.norm_band = (b[0], b[1]);
            }
            "strategy" => self.strategy = v.parse().map_err(|e: Error| format!("`{key}`: {e}"))?,
            "centering" => self.centering = v.parse().map_err(|e: Error| format!("`{key}`: {e}"))?,
            "transfer_frames" => self.transfer_frames = parse_num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment. Keys not present
    /// keep their defaults. The result is validated.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| Error::Parse { path: origin.to_string(), line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value).map_err(perr)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse` of the output reproduces `self`.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("sprite_size", self.sprite_size.to_string());
        kv("subjects", self.subjects.to_string());
        kv("frames_per_subject", self.frames_per_subject.to_string());
        kv("schedule", self.schedule.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("event_min_len", self.event_min_len.to_string());
        kv("event_max_len", self.event_max_len.to_string());
        kv("base_noise", self.base_noise.to_string());
        kv("tau", self.tau.to_string());
        kv("max_templates", self.max_templates.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("channels", join(&self.channels));
        kv("feature_layer", self.feature_layer.to_string());
        kv("gamma", self.gamma.to_string());
        kv("beta", self.beta.to_string());
        kv("lr_encoder", self.lr_encoder.to_string());
        kv("lr_decoder", self.lr_decoder.to_string());
        kv("lr_discriminator", self.lr_discriminator.to_string());
        kv("optimizer", self.optimizer.as_str().to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("holdout_fraction", self.holdout_fraction.to_string());
        kv("epsilon_percentile", self.epsilon_percentile.to_string());
        kv("cos_min", self.cos_min.to_string());
        kv("norm_band", format!("{}, {}", self.norm_band.0, self.norm_band.1));
        kv("strategy", self.strategy.as_str().to_string());
        kv("centering", self.centering.as_str().to_string());
        kv("transfer_frames", self.transfer_frames.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        s
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            image_size: self.sprite_size,
            channels: self.channels.clone(),
            latent_dim: self.latent_dim,
            feature_layer: self.feature_layer,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            architecture: self.architecture(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_encoder: self.lr_encoder,
            lr_decoder: self.lr_decoder,
            lr_discriminator: self.lr_discriminator,
            gamma: self.gamma,
            beta: self.beta,
            optimizer: self.optimizer,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            seed: self.seed,
        }
    }

    /// Check every value against the owning module's preconditions.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::validation(msg));
        if self.sprite_size < MIN_SIZE {
            return fail(format!("sprite_size = {} must be ≥ {MIN_SIZE}", self.sprite_size));
        }
        if self.subjects == 0 {
            return fail("subjects = 0 must be ≥ 1".into());
        }
        if self.frames_per_subject == 0 {
            return fail("frames_per_subject = 0 must be ≥ 1".into());
        }
        if self.schedule.is_none() {
            let segment = self.frames_per_subject / 3;
            if self.event_min_len == 0 || self.event_min_len > self.event_max_len || self.event_max_len + 4 > segment {
                return fail(format!(
                    "event_min_len = {}, event_max_len = {} must satisfy 1 ≤ min ≤ max ≤ frames_per_subject/3 − 4 = {}",
                    self.event_min_len,
                    self.event_max_len,
                    segment as i64 - 4
                ));
            }
        }
        if !(self.base_noise >= 0.0 && self.base_noise.is_finite()) {
            return fail(format!("base_noise = {} must be ≥ 0", self.base_noise));
        }
        if !(-1.0..=1.0).contains(&self.tau) {
            return fail(format!("tau = {} must lie in [-1, 1]", self.tau));
        }
        if self.max_templates == 0 {
            return fail("max_templates = 0 must be ≥ 1".into());
        }
        if !(self.holdout_fraction >= 0.0 && self.holdout_fraction < 1.0) {
            return fail(format!("holdout_fraction = {} must lie in [0, 1)", self.holdout_fraction));
        }
        if !(self.epsilon_percentile > 0.0 && self.epsilon_percentile < 100.0) {
            return fail(format!("epsilon_percentile = {} must lie in (0, 100)", self.epsilon_percentile));
        }
        if !(self.cos_min > 0.0 && self.cos_min <= 1.0) {
            return fail(format!("cos_min = {} must lie in (0, 1]", self.cos_min));
        }
        let (lo, hi) = self.norm_band;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return fail(format!("norm_band = [{lo}, {hi}] must satisfy 0 < lo ≤ hi"));
        }
        if self.feature_layer == 0 || self.feature_layer > self.channels.len() {
            return fail(format!("feature_layer = {} must lie in [1, {}]", self.feature_layer, self.channels.len()));
        }
        if self.transfer_frames == 0 {
            return fail("transfer_frames = 0 must be ≥ 1".into());
        }
        self.training().validate()
    }
}

/// Read and validate a config file. A relative `schedule` path is taken
/// relative to the config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
    if let Some(s) = &cfg.schedule {
        if s.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.schedule = Some(dir.join(s));
            }
        }
    }
    Ok(cfg)
}
