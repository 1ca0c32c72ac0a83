//! Reference implementations shared by the integration tests, written the
//! slow, obvious way.

#![allow(dead_code)]

use ldmnet::data::LabeledSet;
use ldmnet::nn::{sgd_momentum_step, softmax_loss_batch, LayerSpec, Mode, Network, NetworkSpec, OptState, Tensor};
use ldmnet::trainer::{lr_schedule, RunRngs, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Output of the nested-loop forward pass.
pub struct OracleOutput {
    pub logits: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    /// ReLU signs and pooling winners; a finite-difference step that changes
    /// this crossed a kink.
    pub pattern: Vec<usize>,
}

/// Forward pass with explicit loops over every index. Dropout masks are
/// drawn from `ChaCha8Rng::seed_from_u64(dropout_seed)` in layer order,
/// sample-major, one uniform per unit.
pub fn oracle_forward(spec: &NetworkSpec, params: &[Tensor], x: &Tensor, dropout_seed: Option<u64>) -> OracleOutput {
    let batch = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
    let mut acts: Vec<Vec<f64>> = (0..batch).map(|b| x.row(b).to_vec()).collect();
    let mut shape = spec.input_shape.clone();
    let mut p = 0;
    let mut pattern = Vec::new();
    let mut features = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                size,
                stride,
                pad,
            } => {
                let (h, w) = (shape[1], shape[2]);
                let oh = (h + 2 * pad - size) / stride + 1;
                let ow = (w + 2 * pad - size) / stride + 1;
                let (wt, bias) = (params[p].data(), params[p + 1].data());
                p += 2;
                for a in acts.iter_mut() {
                    let mut out = vec![0.0; out_channels * oh * ow];
                    for co in 0..out_channels {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let mut s = bias[co];
                                for ci in 0..in_channels {
                                    for ki in 0..size {
                                        for kj in 0..size {
                                            let ii = (oi * stride + ki) as isize - pad as isize;
                                            let jj = (oj * stride + kj) as isize - pad as isize;
                                            if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= w {
                                                continue;
                                            }
                                            s += wt[((co * in_channels + ci) * size + ki) * size + kj]
                                                * a[(ci * h + ii as usize) * w + jj as usize];
                                        }
                                    }
                                }
                                out[(co * oh + oi) * ow + oj] = s;
                            }
                        }
                    }
                    *a = out;
                }
                shape = vec![out_channels, oh, ow];
            }
            LayerSpec::MaxPool { size, stride, pad } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let oh = (h + 2 * pad - size) / stride + 1;
                let ow = (w + 2 * pad - size) / stride + 1;
                for a in acts.iter_mut() {
                    let mut out = vec![0.0; c * oh * ow];
                    for ch in 0..c {
                        for oi in 0..oh {
                            for oj in 0..ow {
                                let mut best: Option<(f64, usize)> = None;
                                for ki in 0..size {
                                    for kj in 0..size {
                                        let ii = (oi * stride + ki) as isize - pad as isize;
                                        let jj = (oj * stride + kj) as isize - pad as isize;
                                        if ii < 0 || jj < 0 || ii as usize >= h || jj as usize >= w {
                                            continue;
                                        }
                                        let idx = (ch * h + ii as usize) * w + jj as usize;
                                        if best.is_none_or(|(v, _)| a[idx] > v) {
                                            best = Some((a[idx], idx));
                                        }
                                    }
                                }
                                let (v, idx) = best.expect("window overlaps the input");
                                out[(ch * oh + oi) * ow + oj] = v;
                                pattern.push(idx);
                            }
                        }
                    }
                    *a = out;
                }
                shape = vec![c, oh, ow];
            }
            LayerSpec::Relu => {
                for a in acts.iter_mut() {
                    for v in a.iter_mut() {
                        pattern.push(usize::from(*v > 0.0));
                        *v = v.max(0.0);
                    }
                }
            }
            LayerSpec::Dropout { rate } => {
                if dropout_seed.is_some() && rate > 0.0 {
                    for a in acts.iter_mut() {
                        for v in a.iter_mut() {
                            let drop = rng.random::<f64>() < rate;
                            *v = if drop { 0.0 } else { *v / (1.0 - rate) };
                        }
                    }
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (wt, bias) = (params[p].data(), params[p + 1].data());
                p += 2;
                for a in acts.iter_mut() {
                    let out: Vec<f64> = (0..outputs)
                        .map(|o| bias[o] + (0..inputs).map(|i| wt[o * inputs + i] * a[i]).sum::<f64>())
                        .collect();
                    *a = out;
                }
                shape = vec![outputs];
            }
            LayerSpec::SoftmaxLoss => {}
        }
        if l == spec.feature_layer {
            features = acts.clone();
        }
    }
    OracleOutput {
        logits: acts,
        features,
        pattern,
    }
}

/// `-log softmax(z)[y]` computed in the textbook two-pass way.
pub fn oracle_softmax_loss(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
    -(z[y] - m - s.ln())
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// The `k` nearest other points to `q` by squared distance, ties to the
/// lower index.
pub fn brute_knn(points: &[f64], dim: usize, q: usize, k: usize, labels: Option<&[usize]>) -> Vec<(usize, f64)> {
    let n = points.len() / dim;
    let pq = &points[q * dim..(q + 1) * dim];
    let mut all: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != q && labels.is_none_or(|l| l[j] == l[q]))
        .map(|j| {
            let pj = &points[j * dim..(j + 1) * dim];
            (pq.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), j)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d, j)| (j, d)).collect()
}

/// Mini-batch SGD with momentum on the plain softmax loss, written out
/// without the trainer. Uses the same seeded streams as the trainer so the
/// two can be compared bit for bit.
pub fn plain_sgd(config: &TrainConfig, spec: &NetworkSpec, data: &LabeledSet) -> Network {
    let mut rngs = RunRngs::new(config.seed);
    let mut net = Network::init(spec.clone(), &mut rngs.init).unwrap();
    let mut opt = OptState::new(&net, config.lr0, config.momentum, 0.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.total_epochs() {
        opt.learning_rate = lr_schedule(epoch, config);
        order.shuffle(&mut rngs.shuffle);
        for idx in order.chunks(config.batch) {
            let x = data.images.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let pass = net.forward(&x, Mode::Train, &mut rngs.dropout).unwrap();
            let (_, dl) = softmax_loss_batch(pass.logits(), &y).unwrap();
            let g = net.backward(&pass, &dl, None, false).unwrap();
            sgd_momentum_step(&mut net, &g.params, &mut opt).unwrap();
        }
    }
    net
}

/// Two-class logistic regression by full-batch gradient descent; returns
/// accuracy on `test`.
pub fn logistic_regression_accuracy(train: &LabeledSet, test: &LabeledSet) -> f64 {
    let d = train.input_dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let n = train.len() as f64;
    for _ in 0..2000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..train.len() {
            let x = train.images.row(i);
            let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - train.labels[i] as f64;
            gb += r / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += r * xi / n;
            }
        }
        b -= 0.5 * gb;
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= 0.5 * g;
        }
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let z: f64 = b + test.images.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            usize::from(z > 0.0) == test.labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Directory holding the four MNIST IDX files.
pub fn mnist_dir() -> std::path::PathBuf {
    std::env::var_os("LDMNET_MNIST_DIR")
        .map(Into::into)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}
