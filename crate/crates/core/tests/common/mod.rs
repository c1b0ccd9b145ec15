#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stressnet::arch::{ActShape, Conv2dSpec, LayerSpec, NetworkArchitecture};
use stressnet::dna::SynapseStates;
use stressnet::nn::loss_and_gradients;
use stressnet::{LabeledDataset, ParameterSet, Tensor};

pub const MAX_PARAMS: usize = 500;

/// A small f64 network: conv, relu, max-pool, fc, relu, fc, softmax.
pub struct SmallNet {
    pub arch: NetworkArchitecture,
    pub params: ParameterSet<f64>,
}

fn param_count(arch: &NetworkArchitecture) -> usize {
    arch.total_synapses() + arch.total_biases()
}

/// Draws architectures until one fits under `MAX_PARAMS`, then fills it
/// with random weights, random biases and a random mask.
pub fn random_small_net(rng: &mut ChaCha8Rng) -> SmallNet {
    loop {
        let c = rng.gen_range(1..=2);
        let hw = rng.gen_range(6..=8);
        let conv = Conv2dSpec {
            filters: rng.gen_range(2..=3),
            in_channels: c,
            kernel_h: rng.gen_range(2..=3),
            kernel_w: rng.gen_range(2..=3),
            stride: rng.gen_range(1..=2),
            padding: rng.gen_range(0..=1),
        };
        let side_h = (hw + 2 * conv.padding - conv.kernel_h) / conv.stride + 1;
        let side_w = (hw + 2 * conv.padding - conv.kernel_w) / conv.stride + 1;
        if side_h < 2 || side_w < 2 {
            continue;
        }
        let flat = conv.filters * (side_h / 2) * (side_w / 2);
        let hidden = rng.gen_range(3..=6);
        let classes = rng.gen_range(2..=4);
        let arch = NetworkArchitecture::new(
            ActShape::new(c, hw, hw),
            vec![
                LayerSpec::Conv2d(conv),
                LayerSpec::Relu,
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::FullyConnected {
                    in_features: flat,
                    out_features: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    in_features: hidden,
                    out_features: classes,
                },
                LayerSpec::Softmax,
            ],
            classes,
        )
        .expect("generator builds consistent shapes");
        if param_count(&arch) > MAX_PARAMS {
            continue;
        }
        let mut params = ParameterSet::<f64>::init(&arch, rng);
        for layer in &mut params.layers {
            for b in layer.bias.data_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
            for m in &mut layer.mask {
                *m = rng.gen_bool(0.8);
            }
            layer.apply_mask();
        }
        return SmallNet { arch, params };
    }
}

pub fn random_batch(
    arch: &NetworkArchitecture,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<f64>, Vec<usize>) {
    let ActShape { c, h, w } = arch.input;
    let data = (0..n * c * h * w)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let labels = (0..n).map(|_| rng.gen_range(0..arch.num_classes)).collect();
    (Tensor::new(vec![n, c, h, w], data).unwrap(), labels)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-7)
}

/// Largest relative gap between analytic gradients and central differences
/// over every weight (masked ones included) and every bias.
pub fn max_gradient_error(net: &SmallNet, batch: &Tensor<f64>, labels: &[usize]) -> f64 {
    const H: f64 = 1e-6;
    let (_, grads) = loss_and_gradients(&net.arch, &net.params, batch, labels).unwrap();
    let loss_at =
        |p: &ParameterSet<f64>| loss_and_gradients(&net.arch, p, batch, labels).unwrap().0;
    let mut worst = 0.0f64;
    let mut probe = net.params.clone();
    for li in 0..net.params.layers.len() {
        for i in 0..net.params.layers[li].weights.len() {
            let orig = probe.layers[li].weights.data()[i];
            probe.layers[li].weights.data_mut()[i] = orig + H;
            let up = loss_at(&probe);
            probe.layers[li].weights.data_mut()[i] = orig - H;
            let down = loss_at(&probe);
            probe.layers[li].weights.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(grads.layers[li].weights.data()[i], numeric));
        }
        for i in 0..net.params.layers[li].bias.len() {
            let orig = probe.layers[li].bias.data()[i];
            probe.layers[li].bias.data_mut()[i] = orig + H;
            let up = loss_at(&probe);
            probe.layers[li].bias.data_mut()[i] = orig - H;
            let down = loss_at(&probe);
            probe.layers[li].bias.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(grads.layers[li].bias.data()[i], numeric));
        }
    }
    worst
}

/// `STRESSNET_MNIST_DIR`, or `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    std::env::var_os("STRESSNET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// LeNet5 with Glorot weights and random biases.
pub fn random_lenet(rng: &mut ChaCha8Rng) -> (NetworkArchitecture, ParameterSet<f32>) {
    let arch = NetworkArchitecture::lenet5_caffe();
    let mut params = ParameterSet::<f32>::init(&arch, rng);
    for layer in &mut params.layers {
        for b in layer.bias.data_mut() {
            *b = rng.gen_range(-0.2..0.2);
        }
    }
    (arch, params)
}

/// A synapse-state pattern that drops whole units (up to half of each
/// hidden layer) on top of scattered synapses. Classifier units stay.
pub fn random_states(params: &ParameterSet<f32>, rng: &mut ChaCha8Rng) -> SynapseStates {
    let last = params.layers.len() - 1;
    let layers = params
        .layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let units = layer.bias.len();
            let per_unit = layer.weights.len() / units;
            let unit_drop = if li == last {
                0.0
            } else {
                rng.gen_range(0.0..0.5)
            };
            let keep = rng.gen_range(0.5..1.0);
            let mut states = Vec::with_capacity(layer.weights.len());
            for _ in 0..units {
                let alive = !rng.gen_bool(unit_drop);
                for _ in 0..per_unit {
                    states.push(alive && rng.gen_bool(keep));
                }
            }
            states
        })
        .collect();
    SynapseStates { layers }
}

/// Four blob classes, one per quadrant of a small single-channel canvas.
pub fn blobs(n: usize, side: usize, rng: &mut ChaCha8Rng) -> LabeledDataset {
    let mut pixels = vec![0.0f32; n * side * side];
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % 4;
        let (r0, c0) = ((class / 2) * side / 2, (class % 2) * side / 2);
        for r in 0..side / 2 {
            for c in 0..side / 2 {
                pixels[s * side * side + (r0 + r) * side + c0 + c] = 0.8 + rng.gen_range(-0.2..0.2);
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, side, side], pixels).unwrap(), labels).unwrap()
}

/// conv(4,3x3) relu pool fc(.,8) relu fc(8,4): tiny enough to evolve in tests.
pub fn tiny_arch(side: usize) -> NetworkArchitecture {
    let conv_side = side - 2;
    let pooled = conv_side / 2;
    NetworkArchitecture::new(
        ActShape::new(1, side, side),
        vec![
            LayerSpec::Conv2d(Conv2dSpec::square(4, 1, 3)),
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                window: 2,
                stride: 2,
            },
            LayerSpec::FullyConnected {
                in_features: 4 * pooled * pooled,
                out_features: 8,
            },
            LayerSpec::Relu,
            LayerSpec::FullyConnected {
                in_features: 8,
                out_features: 4,
            },
            LayerSpec::Softmax,
        ],
        4,
    )
    .unwrap()
}
