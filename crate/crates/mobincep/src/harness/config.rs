//! Run configuration: a flat `key = value` text format in which every key
//! has a default, so an empty config is a runnable (synthetic-data) run.
//! The resolved snapshot is written into every run directory and embedded
//! in checkpoints for provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{AugmentConfig, SplitSpec, SynthSpec};
use crate::error::Error;
use crate::loss::{ClusterConfig, LossWeights, RegularizerOptions};
use crate::optim::AmsgradConfig;
use crate::Result;

#[derive(Clone, Debug)]
pub struct RunConfig {
    // model
    pub width_divisor: usize,
    pub input_size: usize,
    // loss
    pub gamma1: f64,
    pub gamma2: f64,
    pub scatter_mean: bool,
    pub eps_den: f64,
    pub buffer_capacity: usize,
    /// Warm-up threshold as a multiple of the class count.
    pub warmup_per_class: usize,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    // optimizer
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub bias_correction: bool,
    // training protocol
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub repeats: usize,
    pub folds: usize,
    pub seed: u64,
    pub split: (u32, u32, u32),
    pub stratified: bool,
    // augmentation
    pub augment: bool,
    pub rotation_deg: f64,
    pub flip_prob: f64,
    pub crop_min_area: f64,
    pub translate_frac: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub shear_deg: f64,
    // data: a directory (multi-domain `root/<domain>/<class>/` or
    // single-domain `root/<class>/`), else the synthetic generator
    pub data_root: Option<PathBuf>,
    pub synth_domains: usize,
    pub synth_classes: Vec<usize>,
    pub synth_per_class: usize,
    pub synth_size: usize,
    pub synth_noise: f64,
    // output
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            width_divisor: 1,
            input_size: 224,
            gamma1: 0.01,
            gamma2: 0.01,
            scatter_mean: false,
            eps_den: 1e-8,
            buffer_capacity: 512,
            warmup_per_class: 4,
            kmeans_max_iters: 20,
            kmeans_tol: 1e-6,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.0,
            bias_correction: true,
            batch_size: 4,
            epochs: 200,
            patience: 20,
            repeats: 5,
            folds: 5,
            seed: 0,
            split: (60, 20, 20),
            stratified: true,
            augment: true,
            rotation_deg: 30.0,
            flip_prob: 0.5,
            crop_min_area: 0.8,
            translate_frac: 0.1,
            scale_lo: 0.9,
            scale_hi: 1.1,
            shear_deg: 10.0,
            data_root: None,
            synth_domains: 3,
            synth_classes: vec![3, 2, 4],
            synth_per_class: 40,
            synth_size: 64,
            synth_noise: 0.3,
            out_dir: PathBuf::from("runs/run"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut map = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    line_no + 1
                ))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        cfg.apply(&map)?;
        Ok(cfg)
    }

    /// Apply overrides (used by both file parsing and CLI flags).
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("bad value `{value}` for key `{key}`")))
        }
        match key {
            "width_divisor" => self.width_divisor = parse(key, value)?,
            "input_size" => self.input_size = parse(key, value)?,
            "gamma1" => self.gamma1 = parse(key, value)?,
            "gamma2" => self.gamma2 = parse(key, value)?,
            "scatter_mean" => self.scatter_mean = parse(key, value)?,
            "eps_den" => self.eps_den = parse(key, value)?,
            "buffer_capacity" => self.buffer_capacity = parse(key, value)?,
            "warmup_per_class" => self.warmup_per_class = parse(key, value)?,
            "kmeans_max_iters" => self.kmeans_max_iters = parse(key, value)?,
            "kmeans_tol" => self.kmeans_tol = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "bias_correction" => self.bias_correction = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "folds" => self.folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split" => {
                let spec = crate::data::parse_split(value)?;
                self.split = (spec.train_pct, spec.val_pct, spec.test_pct);
            }
            "stratified" => self.stratified = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "rotation_deg" => self.rotation_deg = parse(key, value)?,
            "flip_prob" => self.flip_prob = parse(key, value)?,
            "crop_min_area" => self.crop_min_area = parse(key, value)?,
            "translate_frac" => self.translate_frac = parse(key, value)?,
            "scale_lo" => self.scale_lo = parse(key, value)?,
            "scale_hi" => self.scale_hi = parse(key, value)?,
            "shear_deg" => self.shear_deg = parse(key, value)?,
            "data_root" => {
                self.data_root = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "synth_domains" => self.synth_domains = parse(key, value)?,
            "synth_classes" => {
                self.synth_classes = value
                    .split(',')
                    .map(|p| parse("synth_classes", p.trim()))
                    .collect::<Result<_>>()?;
            }
            "synth_per_class" => self.synth_per_class = parse(key, value)?,
            "synth_size" => self.synth_size = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.repeats == 0 || self.folds == 0 {
            return Err(Error::config("repeats and folds must be at least 1"));
        }
        if self.split.0 + self.split.1 + self.split.2 != 100 {
            return Err(Error::config("split percentages must sum to 100"));
        }
        if self.synth_classes.len() != self.synth_domains {
            return Err(Error::config(format!(
                "synth_domains = {} but synth_classes lists {} counts",
                self.synth_domains,
                self.synth_classes.len()
            )));
        }
        Ok(())
    }

    /// The resolved snapshot written into run directories. Parsing it back
    /// reproduces this config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("width_divisor", self.width_divisor.to_string());
        kv("input_size", self.input_size.to_string());
        kv("gamma1", format!("{}", self.gamma1));
        kv("gamma2", format!("{}", self.gamma2));
        kv("scatter_mean", self.scatter_mean.to_string());
        kv("eps_den", format!("{:e}", self.eps_den));
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("warmup_per_class", self.warmup_per_class.to_string());
        kv("kmeans_max_iters", self.kmeans_max_iters.to_string());
        kv("kmeans_tol", format!("{:e}", self.kmeans_tol));
        kv("lr", format!("{:e}", self.lr));
        kv("beta1", format!("{}", self.beta1));
        kv("beta2", format!("{}", self.beta2));
        kv("adam_epsilon", format!("{:e}", self.adam_epsilon));
        kv("weight_decay", format!("{}", self.weight_decay));
        kv("bias_correction", self.bias_correction.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("repeats", self.repeats.to_string());
        kv("folds", self.folds.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "split",
            format!("{}/{}/{}", self.split.0, self.split.1, self.split.2),
        );
        kv("stratified", self.stratified.to_string());
        kv("augment", self.augment.to_string());
        kv("rotation_deg", format!("{}", self.rotation_deg));
        kv("flip_prob", format!("{}", self.flip_prob));
        kv("crop_min_area", format!("{}", self.crop_min_area));
        kv("translate_frac", format!("{}", self.translate_frac));
        kv("scale_lo", format!("{}", self.scale_lo));
        kv("scale_hi", format!("{}", self.scale_hi));
        kv("shear_deg", format!("{}", self.shear_deg));
        kv(
            "data_root",
            self.data_root
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("synth_domains", self.synth_domains.to_string());
        kv(
            "synth_classes",
            self.synth_classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("synth_per_class", self.synth_per_class.to_string());
        kv("synth_size", self.synth_size.to_string());
        kv("synth_noise", format!("{}", self.synth_noise));
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn split_spec(&self) -> SplitSpec {
        let mut spec = SplitSpec::new(self.split.0, self.split.1, self.split.2)
            .expect("validated percentages");
        spec.seed = self.seed;
        spec.stratified = self.stratified;
        spec
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            rotation_deg: self.rotation_deg as f32,
            flip_prob: self.flip_prob as f32,
            crop_min_area: self.crop_min_area as f32,
            translate_frac: self.translate_frac as f32,
            scale_lo: self.scale_lo as f32,
            scale_hi: self.scale_hi as f32,
            shear_deg: self.shear_deg as f32,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            domains: self.synth_domains,
            classes_per_domain: self.synth_classes.clone(),
            images_per_class: self.synth_per_class,
            image_size: self.synth_size,
            noise: self.synth_noise,
            seed: self.seed,
        }
    }

    pub fn optimizer_config(&self) -> AmsgradConfig<f32> {
        AmsgradConfig {
            lr: self.lr as f32,
            beta1: self.beta1 as f32,
            beta2: self.beta2 as f32,
            epsilon: self.adam_epsilon as f32,
            weight_decay: self.weight_decay as f32,
            bias_correction: self.bias_correction,
        }
    }

    pub fn regularizer_options(&self) -> RegularizerOptions<f32> {
        RegularizerOptions {
            weights: LossWeights {
                gamma1: self.gamma1 as f32,
                gamma2: self.gamma2 as f32,
            },
            eps_den: self.eps_den as f32,
            scatter_mean: self.scatter_mean,
        }
    }

    pub fn cluster_config(&self, num_classes: usize, latent_dim: usize) -> ClusterConfig {
        ClusterConfig {
            num_classes,
            latent_dim,
            buffer_capacity: self.buffer_capacity,
            min_fill: self.warmup_per_class * num_classes,
            kmeans_max_iters: self.kmeans_max_iters,
            kmeans_tol: self.kmeans_tol,
        }
    }
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_runnable_defaults() {
        let cfg = RunConfig::from_text("").unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.repeats, 5);
        assert_eq!(cfg.split, (60, 20, 20));
        assert!(cfg.data_root.is_none());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.gamma1 = 0.0;
        cfg.split = (20, 20, 60);
        cfg.synth_classes = vec![2, 2];
        cfg.synth_domains = 2;
        cfg.data_root = Some(PathBuf::from("/tmp/data"));
        let text = cfg.to_text();
        let parsed = RunConfig::from_text(&text).unwrap();
        assert_eq!(parsed.gamma1, 0.0);
        assert_eq!(parsed.split, (20, 20, 60));
        assert_eq!(parsed.synth_classes, vec![2, 2]);
        assert_eq!(parsed.data_root, Some(PathBuf::from("/tmp/data")));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(
            RunConfig::from_text("no_such_key = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_text("batch_size = many"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_text("split = 50/30/30"),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = RunConfig::from_text("# a comment\n\nseed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }
}
