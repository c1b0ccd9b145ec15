//! Layer specifications and architecture-level shape algebra.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    /// Square kernel, unit stride, no padding.
    pub fn square(filters: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            filters,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            padding: 0,
        }
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel_volume(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d(Conv2dSpec),
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Softmax,
}

impl LayerSpec {
    pub fn is_weighted(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d(_) | LayerSpec::FullyConnected { .. }
        )
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Weight tensor shape: `[filters, in_channels, kh, kw]` or `[out, in]`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d(c) => Some(vec![c.filters, c.in_channels, c.kernel_h, c.kernel_w]),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    /// Number of output units (filters or neurons) of a weighted layer.
    pub fn units(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d(c) => Some(c.filters),
            LayerSpec::FullyConnected { out_features, .. } => Some(out_features),
            _ => None,
        }
    }
}

/// Per-sample activation shape. Fully connected outputs are `(features, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActShape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl ActShape {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub fn volume(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkArchitecture {
    pub input: ActShape,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl NetworkArchitecture {
    pub fn new(input: ActShape, layers: Vec<LayerSpec>, num_classes: usize) -> Result<Self> {
        let arch = Self {
            input,
            layers,
            num_classes,
        };
        arch.output_shapes()?;
        Ok(arch)
    }

    /// LeNet5 as distributed with Caffe: 20-50-800-500 with a 10-way classifier.
    pub fn lenet5_caffe() -> Self {
        Self::new(
            ActShape::new(1, 28, 28),
            vec![
                LayerSpec::Conv2d(Conv2dSpec::square(20, 1, 5)),
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::Conv2d(Conv2dSpec::square(50, 20, 5)),
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::FullyConnected {
                    in_features: 800,
                    out_features: 500,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    in_features: 500,
                    out_features: 10,
                },
                LayerSpec::Softmax,
            ],
            10,
        )
        .expect("lenet5 is well formed")
    }

    /// CIFAR-sized AlexNet variant (5x5 kernels for the first two convs, 3x3 after).
    pub fn alexnet_cifar() -> Self {
        let conv = |f, c, k, p| LayerSpec::Conv2d(Conv2dSpec::square(f, c, k).with_padding(p));
        let pool = LayerSpec::MaxPool {
            window: 2,
            stride: 2,
        };
        Self::new(
            ActShape::new(3, 32, 32),
            vec![
                conv(96, 3, 5, 2),
                LayerSpec::Relu,
                pool,
                conv(256, 96, 5, 2),
                LayerSpec::Relu,
                pool,
                conv(384, 256, 3, 1),
                LayerSpec::Relu,
                conv(384, 384, 3, 1),
                LayerSpec::Relu,
                conv(256, 384, 3, 1),
                LayerSpec::Relu,
                pool,
                LayerSpec::FullyConnected {
                    in_features: 4096,
                    out_features: 4096,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    in_features: 4096,
                    out_features: 10,
                },
                LayerSpec::Softmax,
            ],
            10,
        )
        .expect("alexnet is well formed")
    }

    /// Output shape of every layer, validating the whole chain on the way.
    pub fn output_shapes(&self) -> Result<Vec<ActShape>> {
        if self.num_classes == 0 {
            return Err(Error::Usage("num_classes must be positive".into()));
        }
        if self.input.volume() == 0 {
            return Err(Error::Usage("input shape has a zero extent".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Usage("architecture has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Conv2d(c) => {
                    if c.filters == 0
                        || c.in_channels == 0
                        || c.kernel_h == 0
                        || c.kernel_w == 0
                        || c.stride == 0
                    {
                        return Err(Error::dim(i, "conv2d dimensions must be positive"));
                    }
                    if c.in_channels != cur.c {
                        return Err(Error::dim(
                            i,
                            format!(
                                "conv2d expects {} input channels, got {}",
                                c.in_channels, cur.c
                            ),
                        ));
                    }
                    let (ph, pw) = (cur.h + 2 * c.padding, cur.w + 2 * c.padding);
                    if ph < c.kernel_h || pw < c.kernel_w {
                        return Err(Error::dim(i, "conv2d kernel larger than padded input"));
                    }
                    ActShape::new(
                        c.filters,
                        (ph - c.kernel_h) / c.stride + 1,
                        (pw - c.kernel_w) / c.stride + 1,
                    )
                }
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    if in_features == 0 || out_features == 0 {
                        return Err(Error::dim(i, "fully_connected dimensions must be positive"));
                    }
                    if in_features != cur.volume() {
                        return Err(Error::dim(
                            i,
                            format!(
                                "fully_connected expects {in_features} inputs, got {}",
                                cur.volume()
                            ),
                        ));
                    }
                    ActShape::new(out_features, 1, 1)
                }
                LayerSpec::MaxPool { window, stride } => {
                    if window == 0 || stride == 0 {
                        return Err(Error::dim(i, "max_pool window and stride must be positive"));
                    }
                    if cur.h < window || cur.w < window {
                        return Err(Error::dim(i, "max_pool window larger than input"));
                    }
                    ActShape::new(
                        cur.c,
                        (cur.h - window) / stride + 1,
                        (cur.w - window) / stride + 1,
                    )
                }
                LayerSpec::Relu => cur,
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::dim(
                            i,
                            "softmax is only supported as the final layer",
                        ));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        if cur.volume() != self.num_classes {
            return Err(Error::dim(
                self.layers.len() - 1,
                format!(
                    "network emits {} values for {} classes",
                    cur.volume(),
                    self.num_classes
                ),
            ));
        }
        Ok(shapes)
    }

    /// Indices (into `layers`) of conv2d and fully_connected layers.
    pub fn weighted_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_weighted())
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of weighted layers (`L`).
    pub fn weighted_count(&self) -> usize {
        self.layers.iter().filter(|l| l.is_weighted()).count()
    }

    /// Synapse count of each weighted layer (`I_l`).
    pub fn synapse_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| l.weight_shape())
            .map(|s| s.iter().product())
            .collect()
    }

    pub fn total_synapses(&self) -> usize {
        self.synapse_counts().iter().sum()
    }

    pub fn total_biases(&self) -> usize {
        self.layers.iter().filter_map(|l| l.units()).sum()
    }

    /// Index into `layers` of the last hidden fully connected layer, i.e. the
    /// one feeding the classifier.
    pub fn feature_layer(&self) -> Option<usize> {
        let fcs: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::FullyConnected { .. }))
            .map(|(i, _)| i)
            .collect();
        (fcs.len() >= 2).then(|| fcs[fcs.len() - 2])
    }

    /// Hyphen-separated summary: conv filter counts, then the flattened width
    /// entering the first fully connected layer, then the widths of the
    /// hidden fully connected layers. LeNet5-Caffe reads `20-50-800-500`.
    pub fn descriptor(&self) -> String {
        let mut parts = Vec::new();
        let mut fc_outs = Vec::new();
        let mut first_fc_in = None;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv2d(c) => parts.push(c.filters),
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    first_fc_in.get_or_insert(in_features);
                    fc_outs.push(out_features);
                }
                _ => {}
            }
        }
        // the classifier width is the class count, not part of the descriptor
        fc_outs.pop();
        parts.extend(first_fc_in);
        parts.extend(fc_outs);
        parts
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

impl fmt::Display for NetworkArchitecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet5_shapes_and_descriptor() {
        let arch = NetworkArchitecture::lenet5_caffe();
        let shapes = arch.output_shapes().unwrap();
        assert_eq!(shapes[0], ActShape::new(20, 24, 24));
        assert_eq!(shapes[3], ActShape::new(50, 4, 4));
        assert_eq!(arch.descriptor(), "20-50-800-500");
        assert_eq!(arch.weighted_count(), 4);
        assert_eq!(arch.synapse_counts(), vec![500, 25_000, 400_000, 5_000]);
        assert_eq!(arch.feature_layer(), Some(4));
    }

    #[test]
    fn alexnet_descriptor() {
        let arch = NetworkArchitecture::alexnet_cifar();
        assert_eq!(arch.descriptor(), "96-256-384-384-256-4096-4096");
    }

    #[test]
    fn incompatible_layers_name_the_offender() {
        let err = NetworkArchitecture::new(
            ActShape::new(1, 4, 4),
            vec![LayerSpec::FullyConnected {
                in_features: 15,
                out_features: 2,
            }],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { layer: 0, .. }));
    }

    #[test]
    fn softmax_must_be_last() {
        let err = NetworkArchitecture::new(
            ActShape::new(2, 1, 1),
            vec![
                LayerSpec::Softmax,
                LayerSpec::FullyConnected {
                    in_features: 2,
                    out_features: 2,
                },
            ],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { layer: 0, .. }));
    }
}
