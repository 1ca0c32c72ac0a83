//! `key = value` configuration with per-key provenance.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ldmnet::trainer::{Regularizer, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Default,
    Preset,
    File,
    Flag,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Default => "default",
            Provenance::Preset => "preset",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    Mnist,
    /// Two Gaussian blobs in the plane; no files needed.
    Blobs,
}

impl FromStr for Dataset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "mnist" => Ok(Dataset::Mnist),
            "blobs" => Ok(Dataset::Blobs),
            _ => Err(CliError::Config(format!("dataset must be mnist or blobs, got {s:?}"))),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Mnist => "mnist",
            Dataset::Blobs => "blobs",
        })
    }
}

/// Every key accepted in a config file or through `--set`.
pub const KEYS: &[&str] = &[
    "batch",
    "center_inputs",
    "data_dir",
    "dataset",
    "dropout_rate",
    "epochs",
    "epochs_phase1",
    "epochs_phase2",
    "eval_every",
    "init_std",
    "input_scale",
    "knn",
    "lambda_tilde",
    "log_energy",
    "lr0",
    "m_epochs",
    "momentum",
    "mu",
    "n_per_class",
    "out",
    "pcg_max_mults",
    "pcg_tol",
    "regularizer",
    "seed",
    "sigma_rank",
    "test_limit",
    "weight_decay",
];

/// MNIST hyperparameters `(n_per_class, lambda_tilde, mu, w)` tuned per
/// training-set size.
pub const MNIST_PRESETS: [(usize, f64, f64, f64); 7] = [
    (50, 0.05, 0.01, 0.1),
    (100, 0.05, 0.01, 0.05),
    (400, 0.01, 0.01, 0.01),
    (700, 0.01, 0.01, 0.005),
    (1000, 0.005, 0.01, 0.005),
    (3000, 0.001, 0.01, 0.001),
    (6000, 0.001, 0.01, 0.001),
];

/// MNIST input handling `(input_scale, center_inputs, init_std)`: raw
/// 0-255 intensities minus the per-pixel training mean, with a small
/// Gaussian init. The preset regularization weights were tuned at this
/// scale.
pub const MNIST_INPUT_PRESET: (f64, bool, f64) = (255.0, true, 0.01);

/// The preset row for the largest tabulated size not above `n_per_class`
/// (the smallest row for anything below 50).
pub fn preset_for(n_per_class: usize) -> (f64, f64, f64) {
    let row = MNIST_PRESETS
        .iter()
        .rev()
        .find(|r| r.0 <= n_per_class)
        .unwrap_or(&MNIST_PRESETS[0]);
    (row.1, row.2, row.3)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: Dataset,
    pub n_per_class: usize,
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
    /// Evaluate on at most this many test samples; 0 keeps all.
    pub test_limit: usize,
    /// Pixels in `[0, 1]` are multiplied by this after centering.
    pub input_scale: f64,
    /// Subtract the per-pixel mean of the training subset.
    pub center_inputs: bool,
    pub provenance: BTreeMap<&'static str, Provenance>,
}

impl RunConfig {
    pub fn provenance_of(&self, key: &str) -> Provenance {
        self.provenance.get(key).copied().unwrap_or(Provenance::Default)
    }

    /// The resolved configuration as `key = value  # provenance` lines,
    /// readable back as a config file.
    pub fn dump(&self) -> String {
        let t = &self.train;
        let values: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.to_string()),
            ("n_per_class", self.n_per_class.to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("out", self.out.display().to_string()),
            ("test_limit", self.test_limit.to_string()),
            ("input_scale", self.input_scale.to_string()),
            ("center_inputs", self.center_inputs.to_string()),
            ("init_std", t.init_std.map_or("he".to_string(), |s| s.to_string())),
            ("regularizer", t.regularizer.to_string()),
            ("lambda_tilde", t.lambda_tilde.to_string()),
            ("mu", t.mu.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("dropout_rate", t.dropout_rate.to_string()),
            ("lr0", t.lr0.to_string()),
            ("epochs_phase1", t.epochs_phase1.to_string()),
            ("epochs_phase2", t.epochs_phase2.to_string()),
            ("batch", t.batch.to_string()),
            ("momentum", t.momentum.to_string()),
            ("knn", t.knn.to_string()),
            ("sigma_rank", t.sigma_rank.to_string()),
            ("m_epochs", t.m_epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("pcg_tol", t.pcg.tol.to_string()),
            ("pcg_max_mults", t.pcg.max_mults.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("log_energy", t.log_energy.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in values {
            if k == "data_dir" && v.is_empty() {
                continue;
            }
            out.push_str(&format!("{k} = {v}  # {}\n", self.provenance_of(k)));
        }
        out
    }
}

/// Splits config text into `(key, value)` pairs. Blank lines and `#`
/// comments are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value, got {line:?}", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse {value:?} for key {key}")))
}

/// Resolves defaults, size presets, file entries and flag entries, in that
/// order of increasing precedence.
pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut layered: BTreeMap<&'static str, (String, Provenance)> = BTreeMap::new();
    for (pairs, prov) in [(file, Provenance::File), (flags, Provenance::Flag)] {
        for (k, v) in pairs {
            let key = KEYS
                .iter()
                .find(|&&known| known == k)
                .ok_or_else(|| CliError::Config(format!("unknown key: {k}")))?;
            layered.insert(key, (v.clone(), prov));
        }
    }
    if layered.contains_key("epochs")
        && (layered.contains_key("epochs_phase1") || layered.contains_key("epochs_phase2"))
    {
        return Err(CliError::Config(
            "set either epochs or epochs_phase1/epochs_phase2, not both".into(),
        ));
    }

    let mut provenance = BTreeMap::new();
    let get = |key: &'static str| layered.get(key);
    let mut train = TrainConfig::default();
    let mut n_per_class = 50;
    if let Some((v, p)) = get("n_per_class") {
        n_per_class = parse_value("n_per_class", v)?;
        provenance.insert("n_per_class", *p);
    }
    let (lt, mu, w) = preset_for(n_per_class);
    train.lambda_tilde = lt;
    train.mu = mu;
    train.weight_decay = w;
    for key in ["lambda_tilde", "mu", "weight_decay"] {
        provenance.insert(key, Provenance::Preset);
    }

    let mut dataset = Dataset::Mnist;
    let mut data_dir = None;
    let mut out = PathBuf::from("runs");
    let mut test_limit = 0;
    let mut input_scale = 1.0;
    let mut center_inputs = false;
    for (&key, (value, prov)) in &layered {
        provenance.insert(key, *prov);
        match key {
            "n_per_class" => {}
            "dataset" => dataset = value.parse()?,
            "data_dir" => data_dir = Some(PathBuf::from(value)),
            "out" => out = PathBuf::from(value),
            "test_limit" => test_limit = parse_value(key, value)?,
            "input_scale" => input_scale = parse_value(key, value)?,
            "center_inputs" => center_inputs = parse_value(key, value)?,
            "init_std" => {
                train.init_std = match value.as_str() {
                    "he" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "regularizer" => {
                train.regularizer = value
                    .parse::<Regularizer>()
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
            "lambda_tilde" => train.lambda_tilde = parse_value(key, value)?,
            "mu" => train.mu = parse_value(key, value)?,
            "weight_decay" => train.weight_decay = parse_value(key, value)?,
            "dropout_rate" => train.dropout_rate = parse_value(key, value)?,
            "lr0" => train.lr0 = parse_value(key, value)?,
            "epochs" => {
                let total: usize = parse_value(key, value)?;
                train.epochs_phase1 = (2 * total).div_ceil(3);
                train.epochs_phase2 = total - train.epochs_phase1;
                provenance.insert("epochs_phase1", *prov);
                provenance.insert("epochs_phase2", *prov);
            }
            "epochs_phase1" => train.epochs_phase1 = parse_value(key, value)?,
            "epochs_phase2" => train.epochs_phase2 = parse_value(key, value)?,
            "batch" => train.batch = parse_value(key, value)?,
            "momentum" => train.momentum = parse_value(key, value)?,
            "knn" => train.knn = parse_value(key, value)?,
            "sigma_rank" => train.sigma_rank = parse_value(key, value)?,
            "m_epochs" => train.m_epochs = parse_value(key, value)?,
            "seed" => train.seed = parse_value(key, value)?,
            "pcg_tol" => train.pcg.tol = parse_value(key, value)?,
            "pcg_max_mults" => train.pcg.max_mults = parse_value(key, value)?,
            "eval_every" => train.eval_every = parse_value(key, value)?,
            "log_energy" => train.log_energy = parse_value(key, value)?,
            other => unreachable!("key {other} is listed but not handled"),
        }
    }
    if dataset == Dataset::Mnist {
        let (scale, center, std) = MNIST_INPUT_PRESET;
        if !layered.contains_key("input_scale") {
            input_scale = scale;
            provenance.insert("input_scale", Provenance::Preset);
        }
        if !layered.contains_key("center_inputs") {
            center_inputs = center;
            provenance.insert("center_inputs", Provenance::Preset);
        }
        if !layered.contains_key("init_std") {
            train.init_std = Some(std);
            provenance.insert("init_std", Provenance::Preset);
        }
    }
    if !(input_scale.is_finite() && input_scale > 0.0) {
        return Err(CliError::Config(format!(
            "input_scale must be positive, got {input_scale}"
        )));
    }
    if train.init_std.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
        return Err(CliError::Config("init_std must be positive or \"he\"".into()));
    }
    train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if n_per_class == 0 {
        return Err(CliError::Config("n_per_class must be positive".into()));
    }
    Ok(RunConfig {
        train,
        dataset,
        n_per_class,
        data_dir,
        out,
        test_limit,
        input_scale,
        center_inputs,
        provenance,
    })
}

/// Reads `path` (if any) and resolves it against `flags`.
pub fn parse_config(path: Option<&Path>, flags: &[(String, String)]) -> Result<RunConfig, CliError> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_pairs(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };
    resolve(&file, flags)
}
