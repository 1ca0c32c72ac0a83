use std::fmt;

use crate::error::{Error, Result};

/// One entry in a network description. Parameterized layers carry both
/// their input and output widths so a spec can be checked on its own.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    /// Fully connected; flattens its input.
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Marks the end of the network; logits are the input to this layer.
    SoftmaxLoss,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape (without the batch axis) for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                size,
                stride,
                pad,
            } => {
                let [c, h, w] = spatial(input, "conv")?;
                if c != in_channels {
                    return Err(Error::structural(format!(
                        "conv expects {in_channels} input channels, got {c}"
                    )));
                }
                let (oh, ow) = window_output(h, w, size, stride, pad, "conv")?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::MaxPool { size, stride, pad } => {
                let [c, h, w] = spatial(input, "max pool")?;
                if pad >= size {
                    return Err(Error::structural("max pool padding must be smaller than its window"));
                }
                let (oh, ow) = window_output(h, w, size, stride, pad, "max pool")?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Dense { inputs, outputs } => {
                let flat: usize = input.iter().product();
                if flat != inputs {
                    return Err(Error::structural(format!(
                        "dense layer expects {inputs} inputs, got {flat} from shape {input:?}"
                    )));
                }
                Ok(vec![outputs])
            }
            LayerSpec::SoftmaxLoss => {
                let flat: usize = input.iter().product();
                if flat < 2 {
                    return Err(Error::structural("softmax loss needs at least two classes"));
                }
                Ok(vec![flat])
            }
        }
    }

    /// Shapes of `(weight, bias)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                size,
                ..
            } => Some((vec![out_channels, in_channels, size, size], vec![out_channels])),
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_channels, size, .. } => in_channels * size * size,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                size,
                stride,
                pad,
            } => write!(
                f,
                "conv {size}x{size}x{in_channels}x{out_channels} stride {stride} pad {pad}"
            ),
            LayerSpec::MaxPool { size, stride, pad } => {
                write!(f, "max pool {size}x{size} stride {stride} pad {pad}")
            }
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::Dropout { rate } => write!(f, "dropout {rate}"),
            LayerSpec::Dense { inputs, outputs } => write!(f, "dense {inputs}x{outputs}"),
            LayerSpec::SoftmaxLoss => write!(f, "softmax loss"),
        }
    }
}

fn spatial(input: &[usize], what: &str) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::structural(format!("{what} needs a CxHxW input, got {input:?}"))),
    }
}

fn window_output(h: usize, w: usize, size: usize, stride: usize, pad: usize, what: &str) -> Result<(usize, usize)> {
    if size == 0 || stride == 0 {
        return Err(Error::structural(format!("{what} window and stride must be positive")));
    }
    if h + 2 * pad < size || w + 2 * pad < size {
        return Err(Error::structural(format!(
            "{what} window {size} does not fit a {h}x{w} input with pad {pad}"
        )));
    }
    Ok(((h + 2 * pad - size) / stride + 1, (w + 2 * pad - size) / stride + 1))
}

/// Ordered layers plus the index of the layer whose output is the feature.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub feature_layer: usize,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, feature_layer: usize) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
            feature_layer,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// The MNIST network: three convolutions, two poolings, a ReLU whose
    /// 500-wide output is the feature, then a 500x10 classifier. A positive
    /// `dropout` inserts a dropout layer right after the feature ReLU.
    pub fn mnist(dropout: f64) -> Result<Self> {
        let mut layers = vec![
            LayerSpec::Conv {
                in_channels: 1,
                out_channels: 20,
                size: 5,
                stride: 1,
                pad: 0,
            },
            LayerSpec::MaxPool {
                size: 2,
                stride: 2,
                pad: 0,
            },
            LayerSpec::Conv {
                in_channels: 20,
                out_channels: 50,
                size: 5,
                stride: 1,
                pad: 0,
            },
            LayerSpec::MaxPool {
                size: 2,
                stride: 2,
                pad: 0,
            },
            LayerSpec::Conv {
                in_channels: 50,
                out_channels: 500,
                size: 4,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Relu,
        ];
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: dropout });
        }
        layers.push(LayerSpec::Dense {
            inputs: 500,
            outputs: 10,
        });
        layers.push(LayerSpec::SoftmaxLoss);
        NetworkSpec::new(vec![1, 28, 28], layers, 5)
    }

    /// Small fully connected net: `inputs -> hidden -> ReLU (feature) -> classes`.
    pub fn mlp(inputs: usize, hidden: usize, classes: usize, dropout: f64) -> Result<Self> {
        let mut layers = vec![
            LayerSpec::Dense {
                inputs,
                outputs: hidden,
            },
            LayerSpec::Relu,
        ];
        if dropout > 0.0 {
            layers.push(LayerSpec::Dropout { rate: dropout });
        }
        layers.push(LayerSpec::Dense {
            inputs: hidden,
            outputs: classes,
        });
        layers.push(LayerSpec::SoftmaxLoss);
        NetworkSpec::new(vec![1, 1, inputs], layers, 1)
    }

    /// Per-sample shape entering each layer, plus the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.last() != Some(&LayerSpec::SoftmaxLoss) {
            return Err(Error::structural("the last layer must be a softmax loss"));
        }
        if self.layers[..self.layers.len() - 1].contains(&LayerSpec::SoftmaxLoss) {
            return Err(Error::structural("softmax loss may only appear last"));
        }
        let last_param = self
            .layers
            .iter()
            .rposition(LayerSpec::has_params)
            .ok_or_else(|| Error::structural("network has no parameterized layer"))?;
        if self.feature_layer >= last_param {
            return Err(Error::structural(format!(
                "feature layer {} must precede the classifier at layer {last_param}",
                self.feature_layer
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("nonempty"))
                .map_err(|e| Error::structural(format!("layer {i} ({layer}): {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> usize {
        let shapes = self.shapes().expect("validated at construction");
        shapes[shapes.len() - 1][0]
    }

    pub fn feature_dim(&self) -> usize {
        let shapes = self.shapes().expect("validated at construction");
        shapes[self.feature_layer + 1].iter().product()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}
