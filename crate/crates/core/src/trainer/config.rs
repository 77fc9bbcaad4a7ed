use std::fs;
use std::path::Path;

use crate::error::{DrimError, Result};
use crate::extractor::{LogitInit, RoutingConfig, RoutingGradient};
use crate::ingest::NegativeDist;
use crate::numeric::AdamConfig;
use crate::regularizers::{DivSign, Separator, SeparatorKind};

/// Every knob of data preparation, the model and the optimizer.
///
/// Serialized as flat `key=value` lines; the same keys are accepted in
/// config files and echoed into checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub k: usize,
    pub max_len: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub n_neg: usize,
    pub neg_dist: NegativeDist,
    pub batch: usize,
    pub epochs: usize,
    pub separator: SeparatorKind,
    pub lambda: f64,
    pub div_sign: DivSign,
    pub routing_iterations: usize,
    pub routing_init: LogitInit,
    pub routing_gradient: RoutingGradient,
    pub user_profile: bool,
    pub train_frac: f64,
    pub min_item: u64,
    pub min_user: u64,
    pub exclude_history: bool,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 36,
            k: 4,
            max_len: 10,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            n_neg: 5,
            neg_dist: NegativeDist::PopularityPow,
            batch: 128,
            epochs: 10,
            separator: SeparatorKind::Diverse,
            lambda: 0.1,
            div_sign: DivSign::Corrected,
            routing_iterations: 3,
            routing_init: LogitInit::Gaussian { std: 1.0 },
            routing_gradient: RoutingGradient::StopGradient,
            user_profile: false,
            train_frac: 0.8,
            min_item: 1,
            min_user: 1,
            exclude_history: true,
            seed: 0,
            threads: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DrimError::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(DrimError::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub fn routing(&self) -> RoutingConfig {
        RoutingConfig {
            k: self.k,
            iterations: self.routing_iterations,
            logit_init: self.routing_init,
            gradient: self.routing_gradient,
        }
    }

    pub fn separator(&self) -> Separator {
        Separator {
            kind: self.separator,
            lambda: self.lambda,
            div_sign: self.div_sign,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("k", self.k),
            ("max_len", self.max_len),
            ("n_neg", self.n_neg),
            ("batch", self.batch),
            ("routing_iterations", self.routing_iterations),
            ("threads", self.threads),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DrimError::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(DrimError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.separator == SeparatorKind::Diverse && self.lambda > 0.0 && self.k < 2 {
            return Err(DrimError::Config("the div separator needs k >= 2".into()));
        }
        if self.min_item == 0 || self.min_user == 0 {
            return Err(DrimError::Config("min counts must be at least 1".into()));
        }
        self.separator().validate()?;
        self.routing().validate()
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dim" | "d" => self.dim = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "n_neg" | "neg" => self.n_neg = parse(key, value)?,
            "neg_dist" => self.neg_dist = value.parse()?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "separator" => self.separator = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "div_sign" => self.div_sign = value.parse()?,
            "routing_iterations" => self.routing_iterations = parse(key, value)?,
            "routing_init" => self.routing_init = value.parse()?,
            "routing_gradient" => self.routing_gradient = value.parse()?,
            "user_profile" => self.user_profile = parse_bool(key, value)?,
            "train_frac" => self.train_frac = parse(key, value)?,
            "min_item" => self.min_item = parse(key, value)?,
            "min_user" => self.min_user = parse(key, value)?,
            "exclude_history" => self.exclude_history = parse_bool(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            other => return Err(DrimError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DrimError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DrimError::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let pairs: Vec<(&str, String)> = vec![
            ("dim", self.dim.to_string()),
            ("k", self.k.to_string()),
            ("max_len", self.max_len.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("n_neg", self.n_neg.to_string()),
            ("neg_dist", self.neg_dist.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("separator", self.separator.to_string()),
            ("lambda", self.lambda.to_string()),
            ("div_sign", self.div_sign.to_string()),
            ("routing_iterations", self.routing_iterations.to_string()),
            ("routing_init", self.routing_init.to_string()),
            ("routing_gradient", self.routing_gradient.to_string()),
            ("user_profile", self.user_profile.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("min_item", self.min_item.to_string()),
            ("min_user", self.min_user.to_string()),
            ("exclude_history", self.exclude_history.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}
