//! Command implementations behind the `ldmnet` binary.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ldmnet::data::{
    export_features_csv, load_idx, pca_project, sample_per_class, two_blobs, InputTransform, LabeledSet,
};
use ldmnet::nn::{checkpoint, Network, NetworkSpec};
use ldmnet::trainer::{evaluate, network_for, train, Evaluation, Regularizer, TrainConfig, TrainedModel};

pub use config::{parse_config, Dataset, Provenance, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ldmnet::Error),
}

/// Separation of the synthetic blob centres, in units of their spread.
const BLOB_SEPARATION: f64 = 4.0;
const BLOB_HIDDEN: usize = 16;

/// Training subset and test set for a run, after the configured input
/// transform (fitted on the training subset).
pub fn load_data(cfg: &RunConfig) -> Result<(LabeledSet, LabeledSet), CliError> {
    let (train, test) = load_raw(cfg)?;
    let transform = InputTransform::fit(&train, cfg.input_scale, cfg.center_inputs)?;
    Ok((transform.apply(&train)?, transform.apply(&test)?))
}

fn load_raw(cfg: &RunConfig) -> Result<(LabeledSet, LabeledSet), CliError> {
    match cfg.dataset {
        Dataset::Mnist => {
            let dir = cfg
                .data_dir
                .clone()
                .or_else(|| std::env::var_os("LDMNET_MNIST_DIR").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("data/mnist"));
            let full = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let mut test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            if cfg.test_limit > 0 && cfg.test_limit < test.len() {
                let idx: Vec<usize> = (0..cfg.test_limit).collect();
                test = test.subset(&idx, &format!("first {} samples", cfg.test_limit));
            }
            let train = sample_per_class(&full, cfg.n_per_class, cfg.train.seed)?;
            Ok((train, test))
        }
        Dataset::Blobs => {
            let seed = cfg.train.seed;
            let train = two_blobs(cfg.n_per_class, BLOB_SEPARATION, seed);
            let test_n = if cfg.test_limit > 0 {
                cfg.test_limit.div_ceil(2)
            } else {
                500
            };
            let test = two_blobs(test_n, BLOB_SEPARATION, seed.wrapping_add(1));
            Ok((train, test))
        }
    }
}

/// Base network for a dataset; the trainer adds dropout where needed.
pub fn base_network(dataset: Dataset) -> NetworkSpec {
    match dataset {
        Dataset::Mnist => NetworkSpec::mnist(0.0),
        Dataset::Blobs => NetworkSpec::mlp(2, BLOB_HIDDEN, 2, 0.0),
    }
    .expect("built-in network is valid")
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| ldmnet::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| ldmnet::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub model: TrainedModel,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Trains one model and writes `model.ckpt`, `log.csv` and
/// `config.txt` under the output directory.
pub fn run_train(cfg: &RunConfig) -> Result<TrainOutputs, CliError> {
    let (train_set, test_set) = load_data(cfg)?;
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("config.txt"), &cfg.dump())?;
    let (model, log) = train(&cfg.train, &base_network(cfg.dataset), &train_set, Some(&test_set))?;
    let checkpoint_path = cfg.out.join("model.ckpt");
    checkpoint::save(&checkpoint_path, model.network.params())?;
    let log_path = cfg.out.join("log.csv");
    log.write_csv(&log_path)?;
    Ok(TrainOutputs {
        model,
        checkpoint: checkpoint_path,
        log: log_path,
    })
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Network, CliError> {
    let params = checkpoint::load(path)?;
    let spec = network_for(&base_network(cfg.dataset), &cfg.train)?;
    Ok(Network::with_params(spec, params)?)
}

/// Train and test metrics of a saved model.
pub fn run_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<(Evaluation, Evaluation), CliError> {
    let (train_set, test_set) = load_data(cfg)?;
    let net = load_model(cfg, checkpoint_path)?;
    Ok((evaluate(&net, &train_set)?, evaluate(&net, &test_set)?))
}

/// Writes test-set features with their 2-D PCA projection to
/// `features.csv` under the output directory.
pub fn run_export(cfg: &RunConfig, checkpoint_path: &Path) -> Result<PathBuf, CliError> {
    let (_, test_set) = load_data(cfg)?;
    let net = load_model(cfg, checkpoint_path)?;
    let (_, features) = net.predict(&test_set.images, 250)?;
    let pca = pca_project(&features, 2)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("features.csv");
    export_features_csv(&path, &features, &test_set.labels, &pca.projection)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub regularizer: Regularizer,
    /// `None` when the run diverged.
    pub result: Option<CompareResult>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareResult {
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl CompareResult {
    pub fn generalization_gap(&self) -> f64 {
        self.test_loss - self.train_loss
    }
}

pub const COMPARE_ORDER: [Regularizer; 3] = [Regularizer::WeightDecay, Regularizer::Dropout, Regularizer::LdmNet];

/// Trains each regularizer on the same subset, sequentially. A run that
/// diverges yields a failure row instead of aborting the table.
pub fn run_compare(cfg: &RunConfig) -> Result<Vec<CompareRow>, CliError> {
    let (train_set, test_set) = load_data(cfg)?;
    ensure_dir(&cfg.out)?;
    write_file(&cfg.out.join("config.txt"), &cfg.dump())?;
    let base = base_network(cfg.dataset);
    let mut rows = Vec::new();
    for reg in COMPARE_ORDER {
        let tc = TrainConfig {
            regularizer: reg,
            ..cfg.train.clone()
        };
        log::info!("compare: training {reg}");
        match train(&tc, &base, &train_set, Some(&test_set)) {
            Ok((model, log)) => {
                log.write_csv(&cfg.out.join(format!("log_{reg}.csv")))?;
                let test = model.test.expect("test set was given");
                rows.push(CompareRow {
                    regularizer: reg,
                    result: Some(CompareResult {
                        test_acc: test.accuracy,
                        train_loss: model.train.mean_loss,
                        test_loss: test.mean_loss,
                    }),
                    failure: None,
                });
            }
            Err(e @ ldmnet::Error::Diverged { .. }) => {
                log::error!("compare: {reg} failed: {e}");
                rows.push(CompareRow {
                    regularizer: reg,
                    result: None,
                    failure: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_file(&cfg.out.join("compare.csv"), &compare_csv(&rows))?;
    Ok(rows)
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("regularizer,status,test_acc,train_loss,test_loss,generalization_gap\n");
    for r in rows {
        match &r.result {
            Some(c) => writeln!(
                out,
                "{},ok,{},{},{},{}",
                r.regularizer,
                c.test_acc,
                c.train_loss,
                c.test_loss,
                c.generalization_gap()
            ),
            None => writeln!(out, "{},FAILED,,,,", r.regularizer),
        }
        .expect("string write");
    }
    out
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!("{:<14} {:>10} {:>10}\n", "regularizer", "test acc", "gap");
    for r in rows {
        match &r.result {
            Some(c) => writeln!(
                out,
                "{:<14} {:>9.2}% {:>10.4}",
                r.regularizer.name(),
                100.0 * c.test_acc,
                c.generalization_gap()
            ),
            None => writeln!(out, "{:<14} {:>10} {:>10}", r.regularizer.name(), "FAILED", "-"),
        }
        .expect("string write");
    }
    out
}
