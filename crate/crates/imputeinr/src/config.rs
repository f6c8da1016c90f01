//! Run configuration: model hyperparameters, training settings, and the
//! three ablation switches, with a plain key=value file format.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity used inside the INR residual network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `sin(omega * x)`, the default for representational fidelity.
    Sine,
    Relu,
}

/// Unit convention for reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsScale {
    /// Original data units (destandardized before scoring).
    Raw,
    /// Z-scored units.
    Standardized,
}

impl fmt::Display for MetricsScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsScale::Raw => write!(f, "raw"),
            MetricsScale::Standardized => write!(f, "standardized"),
        }
    }
}

/// Every knob of the pipeline in one place. Field defaults follow the
/// reference hyperparameters; everything is overridable from a config file
/// and again from CLI flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    // Windowing
    pub window: usize,
    pub stride: usize,

    // Multi-scale encoder
    pub kernel_sizes: Vec<usize>,
    pub conv_channels: usize,
    pub patch_len: usize,
    pub d_model: usize,

    // Transformer hypernetwork
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ff_mult: usize,

    // INR function
    pub trend_degree: usize,
    pub fourier_terms: usize,
    pub hidden: usize,
    pub global_layers: usize,
    pub group_layers: usize,
    pub activation: Activation,
    pub omega_first: f64,

    // Variable clustering
    pub epsilon: f64,
    /// Contiguous group count used when clustering is disabled but the
    /// grouped residual is still on.
    pub fallback_groups: usize,

    // Training
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,

    // Ablation switches
    pub multi_scale: bool,
    pub clustering: bool,
    pub grouping: bool,

    // Reporting
    pub metrics_scale: MetricsScale,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            window: 96,
            stride: 96,
            kernel_sizes: vec![3, 5, 7],
            conv_channels: 16,
            patch_len: 8,
            d_model: 64,
            n_blocks: 6,
            n_heads: 4,
            ff_mult: 4,
            trend_degree: 3,
            fourier_terms: 8,
            hidden: 16,
            global_layers: 1,
            group_layers: 1,
            activation: Activation::Sine,
            omega_first: 30.0,
            epsilon: 0.5,
            fallback_groups: 2,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 16,
            mask_rate: 0.2,
            grad_clip: 1.0,
            seed: 0,
            multi_scale: true,
            clustering: true,
            grouping: true,
            metrics_scale: MetricsScale::Raw,
        }
    }
}

impl Config {
    /// Check cross-field invariants that individual setters cannot see.
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("window and stride must be positive".into()));
        }
        if self.patch_len == 0 || !self.window.is_multiple_of(self.patch_len) {
            return Err(Error::Config(format!(
                "patch_len {} must divide window {}",
                self.patch_len, self.window
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("kernel_sizes must be nonempty".into()));
        }
        for &k in &self.kernel_sizes {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!(
                    "kernel size {k} must be odd and positive"
                )));
            }
        }
        if self.conv_channels == 0 {
            return Err(Error::Config("conv_channels must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if self.global_layers == 0 || self.group_layers == 0 {
            return Err(Error::Config(
                "global_layers and group_layers must be at least 1".into(),
            ));
        }
        if self.fallback_groups == 0 {
            return Err(Error::Config("fallback_groups must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config("mask_rate must lie in [0,1]".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::Config("epsilon must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Apply one `key=value` assignment. Unknown keys are errors so typos
    /// in config files fail loudly.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
        }
        match key {
            "window" => self.window = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "kernel_sizes" => {
                let mut sizes = Vec::new();
                for part in value.split(',') {
                    sizes.push(num::<usize>(key, part.trim())?);
                }
                self.kernel_sizes = sizes;
            }
            "conv_channels" => self.conv_channels = num(key, value)?,
            "patch_len" => self.patch_len = num(key, value)?,
            "d_model" => self.d_model = num(key, value)?,
            "n_blocks" => self.n_blocks = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "ff_mult" => self.ff_mult = num(key, value)?,
            "trend_degree" => self.trend_degree = num(key, value)?,
            "fourier_terms" => self.fourier_terms = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "global_layers" => self.global_layers = num(key, value)?,
            "group_layers" => self.group_layers = num(key, value)?,
            "activation" => {
                self.activation = match value {
                    "sine" => Activation::Sine,
                    "relu" => Activation::Relu,
                    other => {
                        return Err(Error::Config(format!(
                            "activation must be sine or relu, got {other:?}"
                        )))
                    }
                }
            }
            "omega_first" => self.omega_first = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "fallback_groups" => self.fallback_groups = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "mask_rate" => self.mask_rate = num(key, value)?,
            "grad_clip" => self.grad_clip = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "multi_scale" => self.multi_scale = parse_bool(key, value)?,
            "clustering" => self.clustering = parse_bool(key, value)?,
            "grouping" => self.grouping = parse_bool(key, value)?,
            "metrics_scale" => {
                self.metrics_scale = match value {
                    "raw" => MetricsScale::Raw,
                    "standardized" => MetricsScale::Standardized,
                    other => {
                        return Err(Error::Config(format!(
                            "metrics_scale must be raw or standardized, got {other:?}"
                        )))
                    }
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a key=value file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_file(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::Config(format!(
            "invalid boolean {other:?} for key {key:?}"
        ))),
    }
}
