//! Network architecture description and shape inference.

use crate::{Error, Result};

/// One layer of a feed-forward network. Dense and Conv2d layers carry no
/// bias term: the only trainable quantity anywhere is the per-weight
/// multiplier, and a bias would have no multiplier semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        window: usize,
    },
    Flatten,
}

impl LayerSpec {
    /// Number of mask parameters this layer contributes.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output } => input * output,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel,
            _ => 0,
        }
    }

    /// Input connections per output unit; determines the weight scale.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { input, .. } => Some(input),
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            _ => None,
        }
    }
}

/// An ordered list of layers plus the input shape they compose over.
///
/// Construction validates that adjacent layer shapes compose, so holding a
/// `NetworkTopology` is proof the architecture is well formed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Shape after each layer, starting with the input shape.
    shapes: Vec<Vec<usize>>,
}

impl NetworkTopology {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Topology(format!(
                "invalid input shape {input_shape:?}"
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (idx, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = infer_shape(cur, layer)
                .map_err(|msg| Error::Topology(format!("layer {idx}: {msg}")))?;
            shapes.push(next);
        }
        Ok(NetworkTopology {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Shape entering layer `i`; `shape_after(len)` is the output shape.
    pub fn shape_before(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Total number of mask parameters `n`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// `(layer index, offset, len)` for each weighted layer, in order.
    pub fn weighted_layers(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (i, l) in self.layers.iter().enumerate() {
            let count = l.param_count();
            if count > 0 {
                out.push((i, offset, count));
                offset += count;
            }
        }
        out
    }

    /// Classifier output width; the last dimension of the output shape.
    pub fn class_count(&self) -> usize {
        *self.output_shape().last().unwrap()
    }

    /// 784-256-10 multilayer perceptron over 28x28 single-channel images.
    pub fn mlp_small() -> Self {
        NetworkTopology::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 784,
                    output: 256,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: 256,
                    output: 10,
                },
            ],
        )
        .expect("mlp-s composes")
    }

    /// Two conv blocks with pooling and a dense head, over 28x28 images.
    pub fn conv_small() -> Self {
        NetworkTopology::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { window: 2 },
                LayerSpec::Conv2d {
                    in_channels: 8,
                    out_channels: 16,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { window: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 16 * 7 * 7,
                    output: 10,
                },
            ],
        )
        .expect("conv-s composes")
    }

    /// Look up a shipped reference architecture by its config id.
    pub fn by_id(id: &str) -> Option<Self> {
        match id {
            "mlp-s" => Some(Self::mlp_small()),
            "conv-s" => Some(Self::conv_small()),
            _ => None,
        }
    }
}

fn infer_shape(input: &[usize], layer: &LayerSpec) -> std::result::Result<Vec<usize>, String> {
    match *layer {
        LayerSpec::Dense {
            input: in_dim,
            output,
        } => {
            if input.len() != 1 {
                return Err(format!(
                    "dense layer needs a flat input, got shape {input:?} (insert flatten)"
                ));
            }
            if input[0] != in_dim {
                return Err(format!(
                    "dense layer expects {in_dim} inputs, got {}",
                    input[0]
                ));
            }
            if output == 0 {
                return Err("dense layer output must be positive".into());
            }
            Ok(vec![output])
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let [c, h, w] = match input {
                [c, h, w] => [*c, *h, *w],
                _ => return Err(format!("conv layer needs a CxHxW input, got {input:?}")),
            };
            if c != in_channels {
                return Err(format!(
                    "conv layer expects {in_channels} channels, got {c}"
                ));
            }
            if kernel == 0 || stride == 0 || out_channels == 0 {
                return Err("conv kernel, stride and out_channels must be positive".into());
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(format!(
                    "kernel {kernel} does not fit padded input {h}x{w} (padding {padding})"
                ));
            }
            let oh = (h + 2 * padding - kernel) / stride + 1;
            let ow = (w + 2 * padding - kernel) / stride + 1;
            Ok(vec![out_channels, oh, ow])
        }
        LayerSpec::Relu => Ok(input.to_vec()),
        LayerSpec::MaxPool2d { window } => {
            let [c, h, w] = match input {
                [c, h, w] => [*c, *h, *w],
                _ => return Err(format!("maxpool layer needs a CxHxW input, got {input:?}")),
            };
            if window == 0 {
                return Err("pool window must be positive".into());
            }
            if h % window != 0 || w % window != 0 {
                return Err(format!(
                    "pool window {window} does not divide input {h}x{w}"
                ));
            }
            Ok(vec![c, h / window, w / window])
        }
        LayerSpec::Flatten => Ok(vec![input.iter().product()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_small_shapes() {
        let t = NetworkTopology::mlp_small();
        assert_eq!(t.output_shape(), &[10]);
        assert_eq!(t.param_count(), 784 * 256 + 256 * 10);
        assert_eq!(t.class_count(), 10);
    }

    #[test]
    fn conv_small_shapes() {
        let t = NetworkTopology::conv_small();
        assert_eq!(t.output_shape(), &[10]);
        assert_eq!(t.param_count(), 8 * 9 + 16 * 8 * 9 + 784 * 10);
    }

    #[test]
    fn non_composing_shapes_rejected() {
        let err = NetworkTopology::new(
            vec![784],
            vec![LayerSpec::Dense {
                input: 100,
                output: 10,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("expects 100 inputs"));
    }

    #[test]
    fn dense_on_image_needs_flatten() {
        let err = NetworkTopology::new(
            vec![1, 28, 28],
            vec![LayerSpec::Dense {
                input: 784,
                output: 10,
            }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("flatten"));
    }

    #[test]
    fn pool_divisibility_enforced() {
        let err = NetworkTopology::new(vec![1, 7, 7], vec![LayerSpec::MaxPool2d { window: 2 }])
            .unwrap_err();
        assert!(err.to_string().contains("does not divide"));
    }

    #[test]
    fn weighted_layers_offsets() {
        let t = NetworkTopology::mlp_small();
        let w = t.weighted_layers();
        assert_eq!(w, vec![(1, 0, 784 * 256), (3, 784 * 256, 2560)]);
    }
}
