//! Run configuration: defaults, config-file parsing and the resolved-config
//! writer.
//!
//! Precedence, lowest to highest: built-in defaults, config file, the
//! output-root environment variable, command-line flags. With no file and
//! no flags the defaults describe the reference pipeline: SMOTE(k=5),
//! 100 epochs, batch 64, learning rate 0.01, dropout 0.4, 70/10/20 split,
//! seeds 42, 43, ... across 5 runs.

use std::fs;
use std::path::{Path, PathBuf};

use vmclass::balance::BalanceMethod;
use vmclass::selection::{CorrelationTarget, Policy};
use vmclass::train::HyperParams;
use vmclass::{Error, Result};

/// Environment variable naming the output root; a `--output-dir` flag
/// overrides it.
pub const OUTPUT_ENV: &str = "VMCLASS_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [data]
    pub input: Option<PathBuf>,
    pub synthetic_n: Option<usize>,
    pub synthetic_seed: u64,
    pub synthetic_ratio: f64,
    pub synthetic_noise: f64,
    pub skip_bad_rows: bool,
    // [balance]
    pub balance: String,
    pub smote_k: usize,
    pub balance_seed: u64,
    // [split]
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub split_seed: u64,
    // [train]
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub n_runs: usize,
    pub base_seed: u64,
    // [select]
    pub policy: String,
    pub select_seed: u64,
    pub correlation_target: String,
    // [output]
    pub output_dir: PathBuf,
    // [flags]
    pub drop_id_features: bool,
    pub train_only_normalization: bool,
    pub train_only_smote: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic_n: None,
            synthetic_seed: 42,
            synthetic_ratio: 0.5,
            synthetic_noise: 0.0,
            skip_bad_rows: false,
            balance: "smote".into(),
            smote_k: BalanceMethod::DEFAULT_SMOTE_K,
            balance_seed: 42,
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
            split_seed: 42,
            epochs: 100,
            batch_size: 64,
            lr: 0.01,
            dropout: 0.4,
            n_runs: 5,
            base_seed: 42,
            policy: "classifier_first".into(),
            select_seed: 42,
            correlation_target: "others_sum".into(),
            output_dir: PathBuf::from("out"),
            drop_id_features: false,
            train_only_normalization: false,
            train_only_smote: false,
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("config key '{key}': expected {want}, got '{value}'"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, want: &str) -> Result<T> {
    value.parse().map_err(|_| bad_value(key, value, want))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

impl RunConfig {
    /// Defaults, overlaid with the config file (if any) and then the output
    /// root from the environment (if set).
    pub fn from_sources(config_path: Option<&Path>, env_output: Option<&str>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_path {
            cfg.apply_file(path)?;
        }
        if let Some(dir) = env_output {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    /// Plain-text config: `key=value` lines under `[section]` headers;
    /// `#` starts a comment. Section headers are organizational, keys are
    /// globally unique.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "synthetic_n" => self.synthetic_n = Some(parse_num(key, value, "a row count")?),
            "synthetic_seed" => self.synthetic_seed = parse_num(key, value, "a seed")?,
            "synthetic_ratio" => self.synthetic_ratio = parse_num(key, value, "a fraction")?,
            "synthetic_noise" => self.synthetic_noise = parse_num(key, value, "a fraction")?,
            "skip_bad_rows" => self.skip_bad_rows = parse_bool(key, value)?,
            "method" | "balance" => self.balance = value.to_string(),
            "smote_k" => self.smote_k = parse_num(key, value, "a neighbor count")?,
            "balance_seed" => self.balance_seed = parse_num(key, value, "a seed")?,
            "train_frac" => self.train_frac = parse_num(key, value, "a fraction")?,
            "val_frac" => self.val_frac = parse_num(key, value, "a fraction")?,
            "test_frac" => self.test_frac = parse_num(key, value, "a fraction")?,
            "split_seed" => self.split_seed = parse_num(key, value, "a seed")?,
            "epochs" => self.epochs = parse_num(key, value, "an epoch count")?,
            "batch_size" => self.batch_size = parse_num(key, value, "a batch size")?,
            "lr" => self.lr = parse_num(key, value, "a learning rate")?,
            "dropout" => self.dropout = parse_num(key, value, "a rate in [0,1)")?,
            "n_runs" => self.n_runs = parse_num(key, value, "a run count")?,
            "base_seed" => self.base_seed = parse_num(key, value, "a seed")?,
            "policy" => self.policy = value.to_string(),
            "select_seed" => self.select_seed = parse_num(key, value, "a seed")?,
            "correlation_target" => self.correlation_target = value.to_string(),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "drop_id_features" => self.drop_id_features = parse_bool(key, value)?,
            "train_only_normalization" => self.train_only_normalization = parse_bool(key, value)?,
            "train_only_smote" => self.train_only_smote = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.balance_method()?;
        self.correlation()?;
        Policy::parse(&self.policy)?;
        self.hyperparams().validate()?;
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadFractions(sum));
        }
        Ok(())
    }

    pub fn balance_method(&self) -> Result<BalanceMethod> {
        BalanceMethod::from_name(&self.balance, self.smote_k)
    }

    pub fn correlation(&self) -> Result<CorrelationTarget> {
        match self.correlation_target.as_str() {
            "others_sum" => Ok(CorrelationTarget::OthersSum),
            "host_total" => Ok(CorrelationTarget::HostTotal),
            other => Err(Error::Config(format!(
                "unknown correlation_target '{other}'; valid: others_sum, host_total"
            ))),
        }
    }

    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            dropout: self.dropout,
            seed: self.base_seed,
            balance: self
                .balance_method()
                .unwrap_or(BalanceMethod::Smote { k: self.smote_k }),
        }
    }

    /// Canonical text form; parsing it back reproduces this config.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        s.push_str("[data]\n");
        if let Some(input) = &self.input {
            s.push_str(&format!("input={}\n", input.display()));
        }
        if let Some(n) = self.synthetic_n {
            s.push_str(&format!("synthetic_n={n}\n"));
        }
        s.push_str(&format!("synthetic_seed={}\n", self.synthetic_seed));
        s.push_str(&format!("synthetic_ratio={}\n", self.synthetic_ratio));
        s.push_str(&format!("synthetic_noise={}\n", self.synthetic_noise));
        s.push_str(&format!("skip_bad_rows={}\n", self.skip_bad_rows));
        s.push_str("\n[balance]\n");
        s.push_str(&format!("method={}\n", self.balance));
        s.push_str(&format!("smote_k={}\n", self.smote_k));
        s.push_str(&format!("balance_seed={}\n", self.balance_seed));
        s.push_str("\n[split]\n");
        s.push_str(&format!("train_frac={}\n", self.train_frac));
        s.push_str(&format!("val_frac={}\n", self.val_frac));
        s.push_str(&format!("test_frac={}\n", self.test_frac));
        s.push_str(&format!("split_seed={}\n", self.split_seed));
        s.push_str("\n[train]\n");
        s.push_str(&format!("epochs={}\n", self.epochs));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("lr={}\n", self.lr));
        s.push_str(&format!("dropout={}\n", self.dropout));
        s.push_str(&format!("n_runs={}\n", self.n_runs));
        s.push_str(&format!("base_seed={}\n", self.base_seed));
        s.push_str("\n[select]\n");
        s.push_str(&format!("policy={}\n", self.policy));
        s.push_str(&format!("select_seed={}\n", self.select_seed));
        s.push_str(&format!("correlation_target={}\n", self.correlation_target));
        s.push_str("\n[output]\n");
        s.push_str(&format!("output_dir={}\n", self.output_dir.display()));
        s.push_str("\n[flags]\n");
        s.push_str(&format!("drop_id_features={}\n", self.drop_id_features));
        s.push_str(&format!(
            "train_only_normalization={}\n",
            self.train_only_normalization
        ));
        s.push_str(&format!("train_only_smote={}\n", self.train_only_smote));
        s
    }

    pub fn write_resolved(&self, path: &Path) -> Result<()> {
        fs::write(path, self.resolved_text()).map_err(|e| Error::io(path, e))
    }

    /// `<output_dir>/<sub>`, created if missing.
    pub fn ensure_dir(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.output_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}
