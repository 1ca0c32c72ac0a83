//! The alternating training loop and its baselines.
//!
//! Every outer iteration rebuilds the class-masked graph over the current
//! `(input, feature)` cloud, solves for the smoothed coordinates `alpha`,
//! runs `m_epochs` of SGD with the augmented pull towards `alpha - Z`, and
//! finally moves the duals `Z` by the remaining gap. The weight-decay,
//! dropout and unregularized baselines run the same loop with the graph
//! machinery switched off.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::graph::{ManifoldGraph, PointCloud};
use crate::nn::{
    augmented_gradient, sgd_momentum_step, softmax_loss_batch, LayerSpec, Mode, Network, NetworkSpec, OptState, Tensor,
};
use crate::pim::{assemble_system, solve_alpha, PcgSettings};

/// Rows per chunk when running the whole training or test set forward.
const PREDICT_CHUNK: usize = 250;

// Independent ChaCha streams drawn from the one configured seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    LdmNet,
    WeightDecay,
    Dropout,
    None,
}

impl Regularizer {
    pub const ALL: [Regularizer; 4] = [
        Regularizer::LdmNet,
        Regularizer::WeightDecay,
        Regularizer::Dropout,
        Regularizer::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::LdmNet => "ldmnet",
            Regularizer::WeightDecay => "weight_decay",
            Regularizer::Dropout => "dropout",
            Regularizer::None => "none",
        }
    }
}

impl fmt::Display for Regularizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldmnet" => Ok(Regularizer::LdmNet),
            "weight_decay" => Ok(Regularizer::WeightDecay),
            "dropout" => Ok(Regularizer::Dropout),
            "none" => Ok(Regularizer::None),
            _ => Err(Error::config(format!(
                "unknown regularizer {s:?} (expected ldmnet, weight_decay, dropout or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_tilde: f64,
    pub mu: f64,
    /// Weight-decay coefficient `w`; only applied by the weight-decay
    /// regularizer.
    pub weight_decay: f64,
    /// Drop rate of the dropout baseline.
    pub dropout_rate: f64,
    pub lr0: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch: usize,
    pub momentum: f64,
    pub knn: usize,
    pub sigma_rank: usize,
    /// SGD epochs per outer iteration.
    pub m_epochs: usize,
    pub seed: u64,
    /// Fixed standard deviation for the initial weights; `None` scales by
    /// fan-in.
    pub init_std: Option<f64>,
    pub regularizer: Regularizer,
    pub pcg: PcgSettings,
    /// Evaluate on the test set every this many outer iterations; 0 means
    /// only after the last one.
    pub eval_every: usize,
    /// Build the graph for baselines too so the feature energy is logged.
    pub log_energy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_tilde: 0.05,
            mu: 0.01,
            weight_decay: 0.1,
            dropout_rate: 0.5,
            lr0: 0.001,
            epochs_phase1: 200,
            epochs_phase2: 100,
            batch: 100,
            momentum: 0.9,
            knn: 20,
            sigma_rank: 10,
            m_epochs: 2,
            seed: 0,
            init_std: None,
            regularizer: Regularizer::LdmNet,
            pcg: PcgSettings::default(),
            eval_every: 0,
            log_energy: false,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }

    pub fn outer_iterations(&self) -> usize {
        self.total_epochs().div_ceil(self.m_epochs.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch", self.batch),
            ("knn", self.knn),
            ("sigma_rank", self.sigma_rank),
            ("m_epochs", self.m_epochs),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.total_epochs() == 0 {
            return Err(Error::config("the epoch budget must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.regularizer == Regularizer::LdmNet
            && !(self.lambda_tilde > 0.0 && self.mu > 0.0 && self.lambda_tilde.is_finite() && self.mu.is_finite())
        {
            return Err(Error::config(format!(
                "ldmnet needs positive lambda_tilde and mu, got {} and {}",
                self.lambda_tilde, self.mu
            )));
        }
        if self.regularizer == Regularizer::Dropout && !(self.dropout_rate > 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::config(format!(
                "dropout_rate must be in (0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.pcg.tol > 0.0) || self.pcg.max_mults == 0 {
            return Err(Error::config("PCG tolerance and multiplication cap must be positive"));
        }
        Ok(())
    }

    /// Weight-decay coefficient actually applied by the optimizer.
    pub fn effective_weight_decay(&self) -> f64 {
        if self.regularizer == Regularizer::WeightDecay {
            self.weight_decay
        } else {
            0.0
        }
    }
}

/// Learning rate for a zero-based SGD epoch: `lr0` during the first phase,
/// a tenth of it afterwards.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch < config.epochs_phase1 {
        config.lr0
    } else {
        config.lr0 / 10.0
    }
}

/// The smoothed coordinates and duals, with counters recording when they
/// are touched.
///
/// Both matrices may only be written between SGD phases and only read
/// inside them (or by the dual update itself).
#[derive(Debug, Clone)]
pub struct AdmmState {
    alpha: Tensor,
    z: Tensor,
    outer_iter: usize,
    in_sgd: bool,
    access: AccessCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounts {
    pub reads_in_sgd: usize,
    pub reads_outside_sgd: usize,
    pub writes_at_boundary: usize,
    pub writes_in_sgd: usize,
}

impl AdmmState {
    /// Zero `alpha` and `Z` for `n` samples with `d2` feature coordinates.
    pub fn new(n: usize, d2: usize) -> Self {
        AdmmState {
            alpha: Tensor::zeros(&[n, d2]),
            z: Tensor::zeros(&[n, d2]),
            outer_iter: 0,
            in_sgd: false,
            access: AccessCounts::default(),
        }
    }

    pub fn outer_iter(&self) -> usize {
        self.outer_iter
    }

    pub fn access(&self) -> AccessCounts {
        self.access
    }

    pub fn alpha(&mut self) -> &Tensor {
        self.note_read();
        &self.alpha
    }

    pub fn z(&mut self) -> &Tensor {
        self.note_read();
        &self.z
    }

    /// `f - Z`, the targets of the smoothing solve.
    pub fn targets(&mut self, features: &Tensor) -> Result<Tensor> {
        self.note_read();
        features.same_shape(&self.z)?;
        let data = features.data().iter().zip(self.z.data()).map(|(f, z)| f - z).collect();
        Tensor::new(features.shape().to_vec(), data)
    }

    pub fn set_alpha(&mut self, alpha: Tensor) -> Result<()> {
        alpha.same_shape(&self.alpha)?;
        self.note_write();
        self.alpha = alpha;
        Ok(())
    }

    pub fn begin_sgd(&mut self) {
        self.in_sgd = true;
    }

    pub fn end_sgd(&mut self) {
        self.in_sgd = false;
    }

    /// Rows `idx` of `alpha` and `Z`, for one mini-batch.
    pub fn batch(&mut self, idx: &[usize]) -> (Tensor, Tensor) {
        self.note_read();
        (self.alpha.select_rows(idx), self.z.select_rows(idx))
    }

    fn note_read(&mut self) {
        if self.in_sgd {
            self.access.reads_in_sgd += 1;
        } else {
            self.access.reads_outside_sgd += 1;
        }
    }

    fn note_write(&mut self) {
        if self.in_sgd {
            self.access.writes_in_sgd += 1;
        } else {
            self.access.writes_at_boundary += 1;
        }
    }
}

/// `Z <- Z + alpha_new - features_new`, closing one outer iteration.
pub fn dual_update(state: &mut AdmmState, alpha_new: &Tensor, features_new: &Tensor) -> Result<()> {
    state.z.same_shape(alpha_new)?;
    state.z.same_shape(features_new)?;
    state.note_write();
    for ((z, a), f) in state
        .z
        .data_mut()
        .iter_mut()
        .zip(alpha_new.data())
        .zip(features_new.data())
    {
        *z += a - f;
    }
    state.outer_iter += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy and mean softmax loss of precomputed logits.
pub fn score_logits(logits: &Tensor, labels: &[usize]) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::structural("cannot score an empty set"));
    }
    let (mean_loss, _) = softmax_loss_batch(logits, labels)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        mean_loss,
    })
}

/// Eval-mode accuracy and mean loss of `net` on `data`.
pub fn evaluate(net: &Network, data: &LabeledSet) -> Result<Evaluation> {
    let (logits, _) = net.predict(&data.images, PREDICT_CHUNK)?;
    score_logits(&logits, &data.labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub outer_iter: usize,
    /// SGD epochs completed so far.
    pub epoch: usize,
    /// Mean mini-batch softmax loss over the last epoch of the iteration.
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    /// Sum over feature coordinates of `f^T L f` on this iteration's graph.
    pub dirichlet_energy: Option<f64>,
    pub pcg_max_iters: Option<usize>,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub access: AccessCounts,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "outer_iter,epoch,train_loss,test_loss,test_acc,dirichlet_energy,pcg_max_iters,wall_ms";

    pub fn to_csv(&self) -> String {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.outer_iter,
                r.epoch,
                r.train_loss,
                opt(r.test_loss),
                opt(r.test_acc),
                opt(r.dirichlet_energy),
                opt(r.pcg_max_iters),
                r.wall_ms
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub regularizer: Regularizer,
    /// Eval-mode metrics on the full training set after the last epoch.
    pub train: Evaluation,
    pub test: Option<Evaluation>,
}

impl TrainedModel {
    /// Test loss minus training loss, when a test set was given.
    pub fn generalization_gap(&self) -> Option<f64> {
        self.test.map(|t| t.mean_loss - self.train.mean_loss)
    }
}

/// The network the given regularizer trains: dropout layers are inserted
/// after the feature layer for the dropout baseline and stripped otherwise.
pub fn network_for(base: &NetworkSpec, config: &TrainConfig) -> Result<NetworkSpec> {
    let mut layers: Vec<LayerSpec> = base
        .layers
        .iter()
        .filter(|l| !matches!(l, LayerSpec::Dropout { .. }))
        .cloned()
        .collect();
    let removed_before_feature = base.layers[..=base.feature_layer]
        .iter()
        .filter(|l| matches!(l, LayerSpec::Dropout { .. }))
        .count();
    let feature_layer = base.feature_layer - removed_before_feature;
    if config.regularizer == Regularizer::Dropout {
        layers.insert(
            feature_layer + 1,
            LayerSpec::Dropout {
                rate: config.dropout_rate,
            },
        );
    }
    NetworkSpec::new(base.input_shape.clone(), layers, feature_layer)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random generators used by a run, split so that e.g. adding dropout does
/// not shift the sample order.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            init: stream_rng(seed, STREAM_INIT),
            shuffle: stream_rng(seed, STREAM_SHUFFLE),
            dropout: stream_rng(seed, STREAM_DROPOUT),
        }
    }
}

fn features_cloud(data: &LabeledSet, features: &Tensor) -> Result<PointCloud> {
    PointCloud::new(
        data.images.data(),
        data.input_dim(),
        features.data(),
        features.row_len(),
        &data.labels,
    )
}

/// Trains `spec` (adjusted by [`network_for`]) on `train`, evaluating on
/// `test` when given.
pub fn train(
    config: &TrainConfig,
    spec: &NetworkSpec,
    train: &LabeledSet,
    test: Option<&LabeledSet>,
) -> Result<(TrainedModel, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let spec = network_for(spec, config)?;
    if spec.input_len() != train.input_dim() {
        return Err(Error::structural(format!(
            "network takes {} inputs per sample, data has {}",
            spec.input_len(),
            train.input_dim()
        )));
    }
    if train.num_classes > spec.num_classes() {
        return Err(Error::structural(format!(
            "data has {} classes, network predicts {}",
            train.num_classes,
            spec.num_classes()
        )));
    }

    let mut rngs = RunRngs::new(config.seed);
    let mut net = Network::init_gaussian(spec, config.init_std, &mut rngs.init)?;
    let mut opt = OptState::new(&net, config.lr0, config.momentum, config.effective_weight_decay());
    let n = train.len();
    let ldm = config.regularizer == Regularizer::LdmNet;
    let mut admm = AdmmState::new(n, net.feature_dim());
    let mut order: Vec<usize> = (0..n).collect();
    let total_epochs = config.total_epochs();
    let outer = config.outer_iterations();
    let started = Instant::now();
    let mut log = TrainLog::default();

    // f at the start of the current outer iteration
    let mut features = if ldm || config.log_energy {
        Some(net.predict(&train.images, PREDICT_CHUNK)?.1)
    } else {
        None
    };
    let mut epoch = 0;
    for k in 0..outer {
        let mut energy = None;
        let mut pcg_max_iters = None;
        if let Some(f) = &features {
            let cloud = features_cloud(train, f)?;
            let graph = ManifoldGraph::build(&cloud, config.knn, true, config.sigma_rank)?;
            energy = Some(graph.feature_energy(&cloud)?);
            if ldm {
                let system = assemble_system(&graph.laplacian, &graph.weights, config.mu, config.lambda_tilde)?;
                let targets = admm.targets(f)?;
                let solution = solve_alpha(&system, &targets, config.pcg)?;
                pcg_max_iters = Some(solution.max_iterations());
                admm.set_alpha(solution.alpha)?;
            }
        }

        admm.begin_sgd();
        let mut last_epoch_loss = f64::NAN;
        let epochs_here = config.m_epochs.min(total_epochs - epoch);
        for _ in 0..epochs_here {
            opt.learning_rate = lr_schedule(epoch, config);
            order.shuffle(&mut rngs.shuffle);
            let mut loss_sum = 0.0;
            for idx in order.chunks(config.batch) {
                let x = train.images.select_rows(idx);
                let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
                let pass = net.forward(&x, Mode::Train, &mut rngs.dropout)?;
                let (loss, dlogits) = softmax_loss_batch(pass.logits(), &labels)?;
                if !loss.is_finite() {
                    let msg = format!("non-finite training loss at outer iteration {k}");
                    log::error!("{msg}");
                    return Err(Error::Diverged { epoch, msg });
                }
                loss_sum += loss * idx.len() as f64;
                let extra = if ldm {
                    let (alpha, z) = admm.batch(idx);
                    let mut g = augmented_gradient(&pass.feature(), &z, &alpha, config.mu)?;
                    let scale = 1.0 / idx.len() as f64;
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                    Some(g)
                } else {
                    None
                };
                let grads = net.backward(&pass, &dlogits, extra.as_ref(), false)?;
                sgd_momentum_step(&mut net, &grads.params, &mut opt)?;
            }
            last_epoch_loss = loss_sum / n as f64;
            epoch += 1;
        }
        admm.end_sgd();

        if ldm || config.log_energy {
            let f_new = net.predict(&train.images, PREDICT_CHUNK)?.1;
            if !f_new.is_finite() {
                let msg = format!("non-finite features after outer iteration {k}");
                log::error!("{msg}");
                return Err(Error::Diverged { epoch, msg });
            }
            if ldm {
                let alpha = admm.alpha().clone();
                dual_update(&mut admm, &alpha, &f_new)?;
            }
            features = Some(f_new);
        }

        let last = k + 1 == outer;
        let due = config.eval_every > 0 && (k + 1) % config.eval_every == 0;
        let test_eval = match test {
            Some(t) if last || due => Some(evaluate(&net, t)?),
            _ => None,
        };
        let row = LogRow {
            outer_iter: k,
            epoch,
            train_loss: last_epoch_loss,
            test_loss: test_eval.map(|e| e.mean_loss),
            test_acc: test_eval.map(|e| e.accuracy),
            dirichlet_energy: energy,
            pcg_max_iters,
            wall_ms: started.elapsed().as_millis(),
        };
        log::info!(
            "[{}] iter {k} epoch {epoch} loss {:.5}{}",
            config.regularizer,
            last_epoch_loss,
            test_eval
                .map(|e| format!(" test acc {:.4}", e.accuracy))
                .unwrap_or_default()
        );
        log.rows.push(row);
    }

    log.access = admm.access();
    let train_eval = evaluate(&net, train)?;
    let test_eval = match test {
        Some(t) => Some(match log.rows.last().and_then(|r| r.test_acc.zip(r.test_loss)) {
            Some((accuracy, mean_loss)) => Evaluation { accuracy, mean_loss },
            None => evaluate(&net, t)?,
        }),
        None => None,
    };
    Ok((
        TrainedModel {
            network: net,
            regularizer: config.regularizer,
            train: train_eval,
            test: test_eval,
        },
        log,
    ))
}

/// Class-masked Dirichlet energy of `features` on a kNN graph built from
/// the features alone, divided by `n` times their total variance. Smaller
/// values mean features vary less between same-class neighbours relative
/// to their overall spread.
pub fn normalized_feature_energy(features: &Tensor, labels: &[usize], knn: usize, sigma_rank: usize) -> Result<f64> {
    let n = features.rows();
    let d2 = features.row_len();
    let cloud = PointCloud::new(&[], 0, features.data(), d2, labels)?;
    let graph = ManifoldGraph::build(&cloud, knn, true, sigma_rank)?;
    let energy = graph.feature_energy(&cloud)?;
    let mut variance = 0.0;
    for j in 0..d2 {
        let col = features.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        variance += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    }
    if !(variance > 0.0) {
        return Err(Error::numeric("features have zero variance"));
    }
    Ok(energy / (n as f64 * variance))
}
