use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::gemm::{gemm, Mat};
use super::spec::{LayerSpec, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, activations cached for backward.
    Train,
    /// Dropout is the identity.
    Eval,
}

/// A network description together with its parameters.
///
/// Parameters are stored as `(weight, bias)` pairs in layer order. Every
/// parameter update bumps a generation counter so a forward pass taken
/// before the update cannot be fed to [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Tensor>,
    // layer index -> offset of its weight in `params`
    param_offsets: Vec<Option<usize>>,
    generation: u64,
}

/// Per-layer state needed by backward.
#[derive(Debug, Clone)]
enum LayerCache {
    None,
    /// Patch matrix, `(batch * P) x K`.
    Conv(Vec<f64>),
    /// Flat input index of the max for every output element.
    Pool(Vec<usize>),
    /// Per-unit multiplier: 0 or `1 / (1 - rate)`.
    Dropout(Vec<f64>),
}

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `acts[i]` enters layer `i`; the last entry is the logits.
    acts: Vec<Tensor>,
    caches: Vec<LayerCache>,
    feature_layer: usize,
    mode: Mode,
    generation: u64,
}

impl ForwardPass {
    pub fn logits(&self) -> &Tensor {
        self.acts.last().expect("forward pass has activations")
    }

    /// Output of the feature layer, `batch x d2`.
    pub fn feature(&self) -> Tensor {
        let f = &self.acts[self.feature_layer + 1];
        f.clone()
            .reshape(&[f.rows(), f.row_len()])
            .expect("same number of values")
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.acts[0].rows()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Network::params`].
    pub params: Vec<Tensor>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Tensor>,
}

impl Network {
    /// Zero biases and Gaussian weights with standard deviation
    /// `sqrt(2 / fan_in)`.
    pub fn init(spec: NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        Network::init_gaussian(spec, None, rng)
    }

    /// Like [`Network::init`], but a given `std` replaces the fan-in scaling
    /// for every layer.
    pub fn init_gaussian(spec: NetworkSpec, std: Option<f64>, rng: &mut impl Rng) -> Result<Self> {
        if let Some(s) = std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config(format!("initial weight std must be positive, got {s}")));
            }
        }
        let shapes = spec.shapes()?;
        let mut params = Vec::new();
        let mut param_offsets = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            match layer.param_shapes() {
                Some((w_shape, b_shape)) => {
                    param_offsets.push(Some(params.len()));
                    let std = std.unwrap_or_else(|| (2.0 / layer.fan_in() as f64).sqrt());
                    let normal = Normal::new(0.0, std).expect("positive standard deviation");
                    let n: usize = w_shape.iter().product();
                    let w: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
                    params.push(Tensor::new(w_shape, w)?);
                    params.push(Tensor::zeros(&b_shape));
                }
                None => param_offsets.push(None),
            }
        }
        Ok(Network {
            spec,
            shapes,
            params,
            param_offsets,
            generation: 0,
        })
    }

    /// Builds a network with the given parameters, checking their shapes.
    pub fn with_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::init(spec, &mut rng)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::structural(format!(
                "network has {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, (new, old)) in params.iter().zip(&self.params).enumerate() {
            if new.shape() != old.shape() {
                return Err(Error::structural(format!(
                    "parameter {i} has shape {:?}, expected {:?}",
                    new.shape(),
                    old.shape()
                )));
            }
        }
        self.params = params;
        self.generation += 1;
        Ok(())
    }

    /// Mutable access to the parameters; invalidates outstanding forward passes.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.generation += 1;
        &mut self.params
    }

    /// Whether parameter `i` is a weight (as opposed to a bias).
    pub fn is_weight(&self, i: usize) -> bool {
        i % 2 == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes[self.spec.feature_layer + 1].iter().product()
    }

    pub fn num_classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1][0]
    }

    /// Runs `x` (`batch x input_shape`) through every layer before the loss.
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<ForwardPass> {
        let per_sample = self.spec.input_len();
        if x.shape().is_empty() || x.row_len() != per_sample {
            return Err(Error::structural(format!(
                "input shape {:?} does not match network input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        let batch = x.rows();
        let n_layers = self.spec.layers.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut caches = Vec::with_capacity(n_layers);
        let mut shape = vec![batch];
        shape.extend_from_slice(&self.spec.input_shape);
        acts.push(x.clone().reshape(&shape)?);

        for l in 0..n_layers {
            let input = &acts[l];
            let in_shape = &self.shapes[l];
            let out_shape = &self.shapes[l + 1];
            let (out, cache) = match self.spec.layers[l] {
                LayerSpec::Conv { stride, pad, size, .. } => {
                    let p = self.param_offsets[l].expect("conv has params");
                    conv_forward(
                        input,
                        &self.params[p],
                        &self.params[p + 1],
                        in_shape,
                        out_shape,
                        size,
                        stride,
                        pad,
                    )
                }
                LayerSpec::MaxPool { size, stride, pad } => pool_forward(input, in_shape, out_shape, size, stride, pad),
                LayerSpec::Relu => {
                    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
                    (Tensor::new(input.shape().to_vec(), data)?, LayerCache::None)
                }
                LayerSpec::Dropout { rate } => {
                    let (out, mask) = dropout_forward(input, rate, mode, rng)?;
                    (out, mask.map_or(LayerCache::None, LayerCache::Dropout))
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let p = self.param_offsets[l].expect("dense has params");
                    let mut y = vec![0.0; batch * outputs];
                    for row in y.chunks_mut(outputs) {
                        row.copy_from_slice(self.params[p + 1].data());
                    }
                    gemm(
                        Mat::new(input.data(), batch, inputs),
                        Mat::new(self.params[p].data(), outputs, inputs).t(),
                        1.0,
                        &mut y,
                    );
                    (Tensor::new(vec![batch, outputs], y)?, LayerCache::None)
                }
                LayerSpec::SoftmaxLoss => unreachable!("loss layer is never run forward"),
            };
            acts.push(out);
            caches.push(if mode == Mode::Train { cache } else { LayerCache::None });
        }
        Ok(ForwardPass {
            acts,
            caches,
            feature_layer: self.spec.feature_layer,
            mode,
            generation: self.generation,
        })
    }

    /// Logits and features in eval mode, processed in chunks of `chunk` rows.
    pub fn predict(&self, x: &Tensor, chunk: usize) -> Result<(Tensor, Tensor)> {
        let n = x.rows();
        let k = self.num_classes();
        let d2 = self.feature_dim();
        let mut logits = Vec::with_capacity(n * k);
        let mut features = Vec::with_capacity(n * d2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let pass = self.forward(&x.select_rows(&idx), Mode::Eval, &mut rng)?;
            logits.extend_from_slice(pass.logits().data());
            features.extend_from_slice(pass.feature().data());
            start = end;
        }
        Ok((Tensor::new(vec![n, k], logits)?, Tensor::new(vec![n, d2], features)?))
    }

    /// Backpropagates `dlogits` (`batch x classes`) and adds
    /// `extra_feature_grad` (`batch x d2`) to the gradient arriving at the
    /// feature layer's output.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        dlogits: &Tensor,
        extra_feature_grad: Option<&Tensor>,
        want_input_grad: bool,
    ) -> Result<Gradients> {
        if pass.generation != self.generation {
            return Err(Error::structural(
                "stale forward pass: parameters changed since it was computed",
            ));
        }
        if pass.mode != Mode::Train {
            return Err(Error::structural("backward needs a train-mode forward pass"));
        }
        let batch = pass.batch_size();
        if dlogits.shape() != [batch, self.num_classes()] {
            return Err(Error::structural(format!(
                "dlogits shape {:?}, expected {:?}",
                dlogits.shape(),
                [batch, self.num_classes()]
            )));
        }
        if let Some(g) = extra_feature_grad {
            if g.shape() != [batch, self.feature_dim()] {
                return Err(Error::structural(format!(
                    "extra feature gradient shape {:?}, expected {:?}",
                    g.shape(),
                    [batch, self.feature_dim()]
                )));
            }
        }

        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let n_layers = self.spec.layers.len() - 1;
        let mut delta = dlogits.data().to_vec();
        for l in (0..n_layers).rev() {
            if l == self.spec.feature_layer {
                if let Some(g) = extra_feature_grad {
                    for (d, e) in delta.iter_mut().zip(g.data()) {
                        *d += e;
                    }
                }
            }
            let need_input = l > 0 || want_input_grad;
            let input = &pass.acts[l];
            let output = &pass.acts[l + 1];
            delta = match (&self.spec.layers[l], &pass.caches[l]) {
                (&LayerSpec::Conv { stride, pad, size, .. }, LayerCache::Conv(cols)) => {
                    let p = self.param_offsets[l].expect("conv has params");
                    let (dw, rest) = grads.split_at_mut(p + 1);
                    conv_backward(
                        &delta,
                        cols,
                        &self.params[p],
                        &mut dw[p],
                        &mut rest[0],
                        &self.shapes[l],
                        &self.shapes[l + 1],
                        batch,
                        size,
                        stride,
                        pad,
                        need_input,
                    )
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool(argmax)) => {
                    let mut dx = vec![0.0; input.len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += delta[o];
                    }
                    dx
                }
                (LayerSpec::Relu, _) => delta
                    .iter()
                    .zip(output.data())
                    .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
                    .collect(),
                (LayerSpec::Dropout { .. }, LayerCache::Dropout(mask)) => {
                    delta.iter().zip(mask).map(|(d, m)| d * m).collect()
                }
                (LayerSpec::Dropout { .. }, LayerCache::None) => delta,
                (&LayerSpec::Dense { inputs, outputs }, _) => {
                    let p = self.param_offsets[l].expect("dense has params");
                    // dW = delta^T x, db = column sums, dx = delta W
                    gemm(
                        Mat::new(&delta, batch, outputs).t(),
                        Mat::new(input.data(), batch, inputs),
                        1.0,
                        grads[p].data_mut(),
                    );
                    let db = grads[p + 1].data_mut();
                    for row in delta.chunks(outputs) {
                        for (b, d) in db.iter_mut().zip(row) {
                            *b += d;
                        }
                    }
                    if need_input {
                        let mut dx = vec![0.0; batch * inputs];
                        gemm(
                            Mat::new(&delta, batch, outputs),
                            Mat::new(self.params[p].data(), outputs, inputs),
                            0.0,
                            &mut dx,
                        );
                        dx
                    } else {
                        Vec::new()
                    }
                }
                (layer, _) => {
                    return Err(Error::structural(format!("missing cache for layer {l} ({layer})")));
                }
            };
        }
        let input = if want_input_grad {
            Some(Tensor::new(pass.acts[0].shape().to_vec(), delta)?)
        } else {
            None
        };
        Ok(Gradients { params: grads, input })
    }
}

/// Convolution as one batched product: the patches of every sample are
/// stacked into a `(batch * P) x K` matrix and multiplied by `W^T`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    in_shape: &[usize],
    out_shape: &[usize],
    size: usize,
    stride: usize,
    pad: usize,
) -> (Tensor, LayerCache) {
    let batch = input.rows();
    let (cin, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let k = cin * size * size;
    let p = oh * ow;
    let mut cols = vec![0.0; batch * p * k];
    for b in 0..batch {
        let col = &mut cols[b * p * k..(b + 1) * p * k];
        im2row(input.row(b), col, cin, h, w, size, stride, pad, oh, ow);
    }
    // (batch * P) x cout
    let mut yt = vec![0.0; batch * p * cout];
    for row in yt.chunks_mut(cout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        Mat::new(&cols, batch * p, k),
        Mat::new(weight.data(), cout, k).t(),
        1.0,
        &mut yt,
    );
    let mut out = vec![0.0; batch * cout * p];
    for b in 0..batch {
        let src = &yt[b * p * cout..(b + 1) * p * cout];
        let dst = &mut out[b * cout * p..(b + 1) * cout * p];
        for pos in 0..p {
            for c in 0..cout {
                dst[c * p + pos] = src[pos * cout + c];
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(out_shape);
    (
        Tensor::new(shape, out).expect("conv output size"),
        LayerCache::Conv(cols),
    )
}

/// Writes the `P x K` patch matrix of one sample: row `pos` holds the
/// receptive field of output position `pos`, zero where it hits padding.
#[allow(clippy::too_many_arguments)]
fn im2row(
    x: &[f64],
    col: &mut [f64],
    cin: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let k = cin * size * size;
    for oi in 0..oh {
        for oj in 0..ow {
            let dst = &mut col[(oi * ow + oj) * k..(oi * ow + oj + 1) * k];
            for c in 0..cin {
                for ki in 0..size {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    for kj in 0..size {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        dst[(c * size + ki) * size + kj] =
                            if ii >= 0 && (ii as usize) < h && jj >= 0 && (jj as usize) < w {
                                x[(c * h + ii as usize) * w + jj as usize]
                            } else {
                                0.0
                            };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    delta: &[f64],
    cols: &[f64],
    weight: &Tensor,
    dweight: &mut Tensor,
    dbias: &mut Tensor,
    in_shape: &[usize],
    out_shape: &[usize],
    batch: usize,
    size: usize,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Vec<f64> {
    let (cin, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let k = cin * size * size;
    let p = oh * ow;
    // (batch * P) x cout view of the incoming gradient
    let mut dyt = vec![0.0; batch * p * cout];
    for b in 0..batch {
        let src = &delta[b * cout * p..(b + 1) * cout * p];
        let dst = &mut dyt[b * p * cout..(b + 1) * p * cout];
        for c in 0..cout {
            for pos in 0..p {
                dst[pos * cout + c] = src[c * p + pos];
            }
        }
    }
    gemm(
        Mat::new(&dyt, batch * p, cout).t(),
        Mat::new(cols, batch * p, k),
        1.0,
        dweight.data_mut(),
    );
    let db = dbias.data_mut();
    for row in dyt.chunks(cout) {
        for (b, d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
    if !need_input {
        return Vec::new();
    }
    let mut dcols = vec![0.0; batch * p * k];
    gemm(
        Mat::new(&dyt, batch * p, cout),
        Mat::new(weight.data(), cout, k),
        0.0,
        &mut dcols,
    );
    let mut dx = vec![0.0; batch * cin * h * w];
    for b in 0..batch {
        let dxb = &mut dx[b * cin * h * w..(b + 1) * cin * h * w];
        for oi in 0..oh {
            for oj in 0..ow {
                let pos = oi * ow + oj;
                let src = &dcols[(b * p + pos) * k..(b * p + pos + 1) * k];
                for c in 0..cin {
                    for ki in 0..size {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for kj in 0..size {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            dxb[(c * h + ii as usize) * w + jj as usize] += src[(c * size + ki) * size + kj];
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(
    input: &Tensor,
    in_shape: &[usize],
    out_shape: &[usize],
    size: usize,
    stride: usize,
    pad: usize,
) -> (Tensor, LayerCache) {
    let batch = input.rows();
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    let x = input.data();
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ki in 0..size {
                        let ii = (oi * stride + ki) as isize - pad as isize;
                        if ii < 0 || ii as usize >= h {
                            continue;
                        }
                        for kj in 0..size {
                            let jj = (oj * stride + kj) as isize - pad as isize;
                            if jj < 0 || jj as usize >= w {
                                continue;
                            }
                            let idx = base + ii as usize * w + jj as usize;
                            // first maximum wins
                            if x[idx] > best || best_idx == usize::MAX {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let mut shape = vec![batch];
    shape.extend_from_slice(out_shape);
    (
        Tensor::new(shape, out).expect("pool output size"),
        LayerCache::Pool(argmax),
    )
}

/// Inverted dropout: in train mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; eval mode is the
/// identity. Returns the multiplier mask when one was drawn.
pub fn dropout_apply(x: &Tensor, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Tensor> {
    dropout_forward(x, rate, mode, rng).map(|(t, _)| t)
}

fn dropout_forward(x: &Tensor, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_loss_batch;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn conv_pool_spec() -> NetworkSpec {
        NetworkSpec::new(
            vec![2, 6, 5],
            vec![
                LayerSpec::Conv {
                    in_channels: 2,
                    out_channels: 3,
                    size: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    size: 2,
                    stride: 1,
                    pad: 0,
                },
                LayerSpec::Dense {
                    inputs: 3 * 2 * 2,
                    outputs: 4,
                },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 4, outputs: 3 },
                LayerSpec::SoftmaxLoss,
            ],
            4,
        )
        .unwrap()
    }

    fn random_input(n: usize, len: usize, seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, len], (0..n * len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_loops() {
        let spec = conv_pool_spec();
        let net = Network::init(spec, &mut rng()).unwrap();
        let x = random_input(3, 60, 1);
        let pass = net.forward(&x, Mode::Eval, &mut rng()).unwrap();
        let (w, b) = (&net.params()[0], &net.params()[1]);
        let y = &pass.acts[1];
        for s in 0..3 {
            let xs = x.row(s);
            for co in 0..3 {
                for oi in 0..3 {
                    for oj in 0..3 {
                        let mut acc = b.data()[co];
                        for ci in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let ii = (oi * 2 + ki) as isize - 1;
                                    let jj = (oj * 2 + kj) as isize - 1;
                                    if (0..6).contains(&ii) && (0..5).contains(&jj) {
                                        acc += w.data()[((co * 2 + ci) * 3 + ki) * 3 + kj]
                                            * xs[(ci * 6 + ii as usize) * 5 + jj as usize];
                                    }
                                }
                            }
                        }
                        let got = y.row(s)[(co * 3 + oi) * 3 + oj];
                        assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn pool_takes_first_maximum() {
        let spec = NetworkSpec::new(
            vec![1, 2, 2],
            vec![
                LayerSpec::MaxPool {
                    size: 2,
                    stride: 2,
                    pad: 0,
                },
                LayerSpec::Dense { inputs: 1, outputs: 2 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 2, outputs: 2 },
                LayerSpec::SoftmaxLoss,
            ],
            2,
        )
        .unwrap();
        let net = Network::init(spec, &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 4], vec![1.0, 3.0, 3.0, -2.0]).unwrap();
        let pass = net.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(pass.acts[1].data(), &[3.0]);
        match &pass.caches[0] {
            LayerCache::Pool(idx) => assert_eq!(idx, &vec![1]),
            other => panic!("unexpected cache {other:?}"),
        }
    }

    #[test]
    fn small_finite_difference_check() {
        let net = Network::init(conv_pool_spec(), &mut rng()).unwrap();
        let x = random_input(2, 60, 2);
        let labels = [0, 2];
        let loss_of = |n: &Network, x: &Tensor| {
            let pass = n.forward(x, Mode::Eval, &mut rng()).unwrap();
            softmax_loss_batch(pass.logits(), &labels).unwrap().0
        };
        let pass = net.forward(&x, Mode::Train, &mut rng()).unwrap();
        let (_, dl) = softmax_loss_batch(pass.logits(), &labels).unwrap();
        let g = net.backward(&pass, &dl, None, true).unwrap();
        let h = 1e-5;
        for t in 0..net.params().len() {
            for i in (0..net.params()[t].len()).step_by(7) {
                let mut plus = net.clone();
                plus.params_mut()[t].data_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[t].data_mut()[i] -= h;
                let fd = (loss_of(&plus, &x) - loss_of(&minus, &x)) / (2.0 * h);
                let an = g.params[t].data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {t}[{i}]: {fd} vs {an}"
                );
            }
        }
        let gx = g.input.unwrap();
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss_of(&net, &xp) - loss_of(&net, &xm)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn backward_guards() {
        let mut net = Network::init(conv_pool_spec(), &mut rng()).unwrap();
        let x = random_input(1, 60, 3);
        let eval = net.forward(&x, Mode::Eval, &mut rng()).unwrap();
        let dl = Tensor::zeros(&[1, 3]);
        assert!(net.backward(&eval, &dl, None, false).is_err());
        let train = net.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert!(net.backward(&train, &Tensor::zeros(&[2, 3]), None, false).is_err());
        assert!(net.backward(&train, &dl, Some(&Tensor::zeros(&[1, 5])), false).is_err());
        net.params_mut();
        assert!(net.backward(&train, &dl, None, false).is_err());
    }

    #[test]
    fn extra_gradient_enters_at_feature_layer() {
        let net = Network::init(conv_pool_spec(), &mut rng()).unwrap();
        let x = random_input(1, 60, 4);
        let pass = net.forward(&x, Mode::Train, &mut rng()).unwrap();
        let zero = Tensor::zeros(&[1, 3]);
        let extra = Tensor::filled(&[1, 4], 1.0);
        let g = net.backward(&pass, &zero, Some(&extra), false).unwrap();
        // classifier after the feature layer sees nothing
        assert!(g.params[4].data().iter().all(|&v| v == 0.0));
        assert!(g.params[5].data().iter().all(|&v| v == 0.0));
        // the dense layer feeding the feature gets the bias gradient through the ReLU
        let feature = pass.feature();
        for (j, &db) in g.params[3].data().iter().enumerate() {
            assert_eq!(db, if feature.data()[j] > 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = Tensor::filled(&[1, 10000], 1.0);
        let y = dropout_apply(&x, 0.5, Mode::Train, &mut rng()).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!((4700..5300).contains(&zeros));
        assert_eq!(dropout_apply(&x, 0.5, Mode::Eval, &mut rng()).unwrap(), x);
        assert!(dropout_apply(&x, 1.0, Mode::Train, &mut rng()).is_err());
    }

    #[test]
    fn he_initialization_scale() {
        let net = Network::init(NetworkSpec::mnist(0.0).unwrap(), &mut rng()).unwrap();
        let w = &net.params()[4];
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 800.0).abs() < 0.05 * 2.0 / 800.0);
        assert!(net.params()[5].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn set_params_checks_shapes() {
        let mut net = Network::init(conv_pool_spec(), &mut rng()).unwrap();
        let mut p = net.params().to_vec();
        assert!(net.set_params(p[..2].to_vec()).is_err());
        p[0] = Tensor::zeros(&[1]);
        assert!(net.set_params(p).is_err());
        let same = net.params().to_vec();
        let again = Network::with_params(net.spec().clone(), same.clone()).unwrap();
        assert_eq!(again.params(), &same[..]);
    }
}
