//! Probabilistic genetic encoding of a trained network and synthesis of
//! offspring from it.
//!
//! Synapses are grouped into clusters: one per conv filter, one per fully
//! connected output neuron. The encoding assigns every synapse and every
//! cluster a survival probability derived from synaptic strength; the
//! environmental factor then rescales those probabilities so that the
//! expected survivor count of each layer is `F` times the parent's. An
//! offspring is drawn cluster-first, then synapse by synapse, and finally
//! materialized into a physically smaller architecture.

use rand::Rng;

use crate::arch::{ActShape, LayerSpec, NetworkArchitecture};
use crate::error::{Error, Result};
use crate::params::{LayerParams, ParameterSet};
use crate::stress::{keep_probability, layer_normalizer};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerClusters {
    pub clusters: usize,
    /// Synapses per cluster; cluster `c` owns `[c * size, (c + 1) * size)`.
    pub cluster_size: usize,
    /// Units of the classifier layer are the class outputs and cannot die.
    pub output_layer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMap {
    pub layers: Vec<LayerClusters>,
}

impl ClusterMap {
    pub fn total_clusters(&self) -> usize {
        self.layers.iter().map(|l| l.clusters).sum()
    }

    pub fn cluster_of(&self, layer: usize, synapse: usize) -> usize {
        synapse / self.layers[layer].cluster_size
    }
}

/// One cluster per filter / per output neuron. Weight tensors are stored
/// unit-major, so each cluster is a contiguous run of synapses.
pub fn build_clusters(arch: &NetworkArchitecture) -> ClusterMap {
    let weighted: Vec<&LayerSpec> = arch.layers.iter().filter(|l| l.is_weighted()).collect();
    let last = weighted.len().saturating_sub(1);
    ClusterMap {
        layers: weighted
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let shape = l.weight_shape().expect("weighted");
                LayerClusters {
                    clusters: shape[0],
                    cluster_size: shape[1..].iter().product(),
                    output_layer: i == last,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerProbabilities {
    pub synapse: Vec<f64>,
    pub cluster: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynapticProbabilityModel {
    pub layers: Vec<LayerProbabilities>,
    pub source_generation: usize,
}

impl SynapticProbabilityModel {
    /// Sum of synapse probabilities, i.e. expected survivors when every
    /// cluster survives.
    pub fn expected_synapses(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.synapse).sum()
    }

    /// Expected survivors under the two-stage draw.
    pub fn expected_joint(&self, clusters: &ClusterMap) -> f64 {
        self.layers
            .iter()
            .zip(&clusters.layers)
            .map(|(l, c)| {
                l.synapse
                    .chunks(c.cluster_size)
                    .zip(&l.cluster)
                    .map(|(syn, &cp)| cp * syn.iter().sum::<f64>())
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn present_synapses(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| &l.synapse)
            .filter(|&&p| p > 0.0)
            .count()
    }
}

/// Target ratio of offspring synapses to parent synapses, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct EnvironmentalFactor(f64);

impl EnvironmentalFactor {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Usage(format!(
                "environmental factor must lie in (0, 1], got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_layout<T: Scalar>(params: &ParameterSet<T>, clusters: &ClusterMap) -> Result<()> {
    if params.layers.len() != clusters.layers.len() {
        return Err(Error::Usage(
            "cluster map and parameters disagree on layer count".into(),
        ));
    }
    for (li, (p, c)) in params.layers.iter().zip(&clusters.layers).enumerate() {
        if p.weights.len() != c.clusters * c.cluster_size {
            return Err(Error::dim(
                li,
                "cluster map does not cover the layer's synapses",
            ));
        }
    }
    Ok(())
}

/// Strength-proportional encoding of trained (post-stress) weights.
///
/// A synapse is present when it is unmasked and non-zero; absent synapses
/// get probability 0 so offspring can never regrow them. Present synapses
/// get `exp(|w|/z - 1)`. A cluster gets `exp(mean(|w|/z) - 1)` with absent
/// slots counted as zero strength, or 0 if it has no present synapse.
pub fn encode_dna<T: Scalar>(
    params: &ParameterSet<T>,
    clusters: &ClusterMap,
    source_generation: usize,
) -> Result<SynapticProbabilityModel> {
    check_layout(params, clusters)?;
    let mut layers = Vec::with_capacity(params.layers.len());
    for (li, (p, c)) in params.layers.iter().zip(&clusters.layers).enumerate() {
        let z = layer_normalizer(p.weights.data(), &p.mask, li)?;
        let strength: Vec<f64> = p
            .weights
            .data()
            .iter()
            .zip(&p.mask)
            .map(|(w, &m)| if m { w.to_f64().abs() / z } else { 0.0 })
            .collect();
        let synapse: Vec<f64> = strength
            .iter()
            .map(|&s| {
                if s > 0.0 {
                    keep_probability(s, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let cluster = strength
            .chunks(c.cluster_size)
            .map(|slots| {
                if slots.iter().all(|&s| s == 0.0) {
                    0.0
                } else {
                    let mean = slots.iter().sum::<f64>() / slots.len() as f64;
                    (mean - 1.0).exp()
                }
            })
            .collect();
        layers.push(LayerProbabilities { synapse, cluster });
    }
    Ok(SynapticProbabilityModel {
        layers,
        source_generation,
    })
}

const BISECTION_STEPS: usize = 200;
/// Allowed gap between the calibrated ratio and `F`.
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

/// Finds `gamma` with `sum(min(1, gamma * F * p)) = F * count(p > 0)` and
/// returns the clamped probabilities.
fn calibrate(probs: &[f64], factor: f64, layer: usize) -> Result<Vec<f64>> {
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Usage(format!(
            "probability {bad} outside [0, 1] in layer {layer}"
        )));
    }
    let present = probs.iter().filter(|&&p| p > 0.0).count();
    if present == 0 {
        return Ok(probs.to_vec());
    }
    if factor == 1.0 {
        // only full saturation keeps every present synapse; bisection would
        // stop a rounding error short of it on large layers
        return Ok(probs
            .iter()
            .map(|&p| if p > 0.0 { 1.0 } else { 0.0 })
            .collect());
    }
    let target = factor * present as f64;
    let scaled = |gamma: f64| -> f64 {
        probs
            .iter()
            .map(|&p| (gamma * factor * p).min(1.0))
            .sum::<f64>()
    };
    let min_p = probs
        .iter()
        .copied()
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    // at `hi` every present synapse saturates, so scaled(hi) == present >= target
    let (mut lo, mut hi) = (0.0, (1.0 + 1e-9) / (factor * min_p));
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if scaled(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let out: Vec<f64> = probs
        .iter()
        .map(|&p| {
            let v = hi * factor * p;
            // rounding can leave a saturated entry one ulp short of 1
            if v >= 1.0 - 1e-12 {
                1.0
            } else {
                v
            }
        })
        .collect();
    let achieved = out.iter().sum::<f64>();
    if (achieved / present as f64 - factor).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Infeasible {
            layer,
            target,
            achievable: achieved,
        });
    }
    Ok(out)
}

/// Rescales the encoding so each layer's expected survivor ratio is `F`,
/// at synapse level and, for hidden layers, at cluster level.
pub fn apply_environment(
    model: &SynapticProbabilityModel,
    factor: EnvironmentalFactor,
    clusters: &ClusterMap,
) -> Result<SynapticProbabilityModel> {
    if model.layers.len() != clusters.layers.len() {
        return Err(Error::Usage(
            "cluster map and model disagree on layer count".into(),
        ));
    }
    let f = factor.value();
    let layers = model
        .layers
        .iter()
        .zip(&clusters.layers)
        .enumerate()
        .map(|(li, (l, c))| {
            let synapse = calibrate(&l.synapse, f, li)?;
            let cluster = if c.output_layer {
                l.cluster
                    .iter()
                    .map(|&p| if p > 0.0 { 1.0 } else { 0.0 })
                    .collect()
            } else {
                calibrate(&l.cluster, f, li)?
            };
            Ok(LayerProbabilities { synapse, cluster })
        })
        .collect::<Result<_>>()?;
    Ok(SynapticProbabilityModel {
        layers,
        source_generation: model.source_generation,
    })
}

/// Sampled existence state of every synapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapseStates {
    pub layers: Vec<Vec<bool>>,
}

impl SynapseStates {
    pub fn count(&self) -> usize {
        self.layers.iter().flatten().filter(|&&s| s).count()
    }
}

/// Two-stage draw: each cluster survives with its cluster probability, then
/// each synapse of a surviving cluster survives with its own probability.
pub fn sample_offspring(
    model: &SynapticProbabilityModel,
    clusters: &ClusterMap,
    rng: &mut impl Rng,
) -> Result<SynapseStates> {
    if model.layers.len() != clusters.layers.len() {
        return Err(Error::Usage(
            "cluster map and model disagree on layer count".into(),
        ));
    }
    let mut layers = Vec::with_capacity(model.layers.len());
    for (li, (l, c)) in model.layers.iter().zip(&clusters.layers).enumerate() {
        if l.synapse.len() != c.clusters * c.cluster_size || l.cluster.len() != c.clusters {
            return Err(Error::dim(li, "model does not match cluster map"));
        }
        let mut states = vec![false; l.synapse.len()];
        for (ci, &cp) in l.cluster.iter().enumerate() {
            if rng.gen::<f64>() >= cp {
                continue;
            }
            let range = ci * c.cluster_size..(ci + 1) * c.cluster_size;
            for (s, &p) in states[range.clone()].iter_mut().zip(&l.synapse[range]) {
                *s = rng.gen::<f64>() < p;
            }
        }
        layers.push(states);
    }
    Ok(SynapseStates { layers })
}

/// How a weighted layer's input columns map onto the previous weighted
/// layer's units.
#[derive(Debug, Clone, Copy)]
struct InputLink {
    /// Index into `layers` of the weighted layer.
    spec_index: usize,
    /// Contiguous columns of a weight row fed by one input unit: kh*kw for
    /// conv (`[c][kh][kw]` rows), the spatial size for a flattened feature
    /// map, 1 after another fully connected layer.
    group: usize,
    /// Inputs are data channels rather than units of another layer.
    is_first: bool,
}

fn links(arch: &NetworkArchitecture, shapes: &[ActShape]) -> Result<Vec<InputLink>> {
    let mut out = Vec::new();
    let mut prev_weighted: Option<usize> = None;
    for (i, layer) in arch.layers.iter().enumerate() {
        let ins = if i == 0 { arch.input } else { shapes[i - 1] };
        match *layer {
            LayerSpec::Conv2d(c) => {
                if let Some(p) = prev_weighted {
                    if !matches!(arch.layers[p], LayerSpec::Conv2d(_)) {
                        return Err(Error::dim(
                            i,
                            "conv2d after fully_connected is not supported",
                        ));
                    }
                }
                out.push(InputLink {
                    spec_index: i,
                    group: c.kernel_h * c.kernel_w,
                    is_first: prev_weighted.is_none(),
                });
                prev_weighted = Some(i);
            }
            LayerSpec::FullyConnected { .. } => {
                out.push(InputLink {
                    spec_index: i,
                    group: ins.h * ins.w,
                    is_first: prev_weighted.is_none(),
                });
                prev_weighted = Some(i);
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Value seen by the next weighted layer when a unit emits the constant
/// `v`: element-wise layers between the two weighted layers are applied.
fn propagate_constant<T: Scalar>(arch: &NetworkArchitecture, from: usize, to: usize, v: T) -> T {
    arch.layers[from + 1..to].iter().fold(v, |acc, l| match l {
        LayerSpec::Relu => {
            if acc > T::ZERO {
                acc
            } else {
                T::ZERO
            }
        }
        _ => acc,
    })
}

/// Turns sampled synapse states into an offspring network.
///
/// Weights are copied where a synapse survives and zeroed elsewhere. Units
/// that can no longer vary (no surviving input from a varying unit) are
/// removed and their constant output is folded into the biases of the next
/// layer; units whose output reaches no surviving downstream synapse are
/// removed outright. The classifier's units and the input channels of the
/// first layer are never removed.
pub fn materialize<T: Scalar>(
    states: &SynapseStates,
    parent_arch: &NetworkArchitecture,
    parent_params: &ParameterSet<T>,
) -> Result<(NetworkArchitecture, ParameterSet<T>)> {
    parent_params.validate(parent_arch)?;
    if states.layers.len() != parent_params.layers.len() {
        return Err(Error::Usage(
            "synapse states do not match parent layer count".into(),
        ));
    }
    for (li, (s, p)) in states.layers.iter().zip(&parent_params.layers).enumerate() {
        if s.len() != p.weights.len() {
            return Err(Error::dim(
                li,
                "synapse state length differs from weight count",
            ));
        }
    }
    let shapes = parent_arch.output_shapes()?;
    let links = links(parent_arch, &shapes)?;
    let n_layers = parent_params.layers.len();

    let masks: Vec<Vec<bool>> = states
        .layers
        .iter()
        .zip(&parent_params.layers)
        .map(|(s, p)| s.iter().zip(&p.mask).map(|(&a, &b)| a && b).collect())
        .collect();
    let units: Vec<usize> = parent_params.layers.iter().map(|p| p.bias.len()).collect();
    let row_len: Vec<usize> = parent_params
        .layers
        .iter()
        .zip(&units)
        .map(|(p, &u)| p.weights.len() / u)
        .collect();
    // input unit of column `col` in layer `l`
    let input_unit = |l: usize, col: usize| col / links[l].group;

    // forward pass: which units emit a constant
    let mut constant: Vec<Vec<bool>> = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let row = row_len[l];
        let flags = (0..units[l])
            .map(|u| {
                let m = &masks[l][u * row..(u + 1) * row];
                !m.iter().enumerate().any(|(col, &alive)| {
                    alive && (links[l].is_first || !constant[l - 1][input_unit(l, col)])
                })
            })
            .collect();
        constant.push(flags);
    }

    // backward pass: which varying units influence the classifier
    let mut needed: Vec<Vec<bool>> = vec![Vec::new(); n_layers];
    needed[n_layers - 1] = vec![true; units[n_layers - 1]];
    for l in (0..n_layers - 1).rev() {
        let mut flags = vec![false; units[l]];
        let next = l + 1;
        let row = row_len[next];
        for v in 0..units[next] {
            if !needed[next][v] || constant[next][v] {
                continue;
            }
            for (col, &alive) in masks[next][v * row..(v + 1) * row].iter().enumerate() {
                if alive {
                    flags[input_unit(next, col)] = true;
                }
            }
        }
        needed[l] = flags;
    }

    let keep: Vec<Vec<usize>> = (0..n_layers)
        .map(|l| {
            (0..units[l])
                .filter(|&u| l == n_layers - 1 || (needed[l][u] && !constant[l][u]))
                .collect()
        })
        .collect();
    if let Some(l) = keep.iter().position(|k| k.is_empty()) {
        return Err(Error::ExtinctLineage { layer: l });
    }

    // fold constant outputs forward into downstream biases
    let mut biases: Vec<Vec<T>> = parent_params
        .layers
        .iter()
        .map(|p| p.bias.data().to_vec())
        .collect();
    for l in 0..n_layers - 1 {
        let next = l + 1;
        let consts: Vec<(usize, T)> = (0..units[l])
            .filter(|&u| constant[l][u])
            .map(|u| {
                let v = propagate_constant(
                    parent_arch,
                    links[l].spec_index,
                    links[next].spec_index,
                    biases[l][u],
                );
                (u, v)
            })
            .filter(|&(_, v)| v != T::ZERO)
            .collect();
        if consts.is_empty() {
            continue;
        }
        let row = row_len[next];
        let group = links[next].group;
        let w = parent_params.layers[next].weights.data();
        for v in 0..units[next] {
            let mut acc = T::ZERO;
            for &(u, c) in &consts {
                let start = v * row + u * group;
                let s: T = w[start..start + group]
                    .iter()
                    .zip(&masks[next][start..start + group])
                    .map(|(&wi, &m)| if m { wi } else { T::ZERO })
                    .sum();
                acc += s * c;
            }
            biases[next][v] += acc;
        }
    }

    // rebuild
    let mut layers = parent_arch.layers.clone();
    let mut out_params = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let p = &parent_params.layers[l];
        let old_shape = p.weights.shape().to_vec();
        let kept_inputs: Vec<usize> = if links[l].is_first {
            (0..row_len[l] / links[l].group).collect()
        } else {
            keep[l - 1].clone()
        };
        let group = links[l].group;
        let new_row = kept_inputs.len() * group;
        let mut weights = Vec::with_capacity(keep[l].len() * new_row);
        let mut mask = Vec::with_capacity(keep[l].len() * new_row);
        for &u in &keep[l] {
            for &v in &kept_inputs {
                let start = u * row_len[l] + v * group;
                for i in start..start + group {
                    let m = masks[l][i];
                    mask.push(m);
                    weights.push(if m { p.weights.data()[i] } else { T::ZERO });
                }
            }
        }
        let spec_index = links[l].spec_index;
        let (shape, spec) = match layers[spec_index] {
            LayerSpec::Conv2d(mut c) => {
                c.filters = keep[l].len();
                c.in_channels = kept_inputs.len();
                (
                    vec![c.filters, c.in_channels, old_shape[2], old_shape[3]],
                    LayerSpec::Conv2d(c),
                )
            }
            LayerSpec::FullyConnected { .. } => (
                vec![keep[l].len(), new_row],
                LayerSpec::FullyConnected {
                    in_features: new_row,
                    out_features: keep[l].len(),
                },
            ),
            _ => unreachable!(),
        };
        layers[spec_index] = spec;
        let bias = keep[l].iter().map(|&u| biases[l][u]).collect();
        out_params.push(LayerParams {
            weights: Tensor::new(shape, weights)?,
            mask,
            bias: Tensor::new(vec![keep[l].len()], bias)?,
        });
    }
    let arch = NetworkArchitecture::new(parent_arch.input, layers, parent_arch.num_classes)?;
    let params = ParameterSet { layers: out_params };
    params.validate(&arch)?;
    Ok((arch, params))
}

/// Parent parameters with the sampled states applied as masks, structure
/// unchanged. Forward-equivalent to `materialize` for unpadded successors.
pub fn mask_only<T: Scalar>(states: &SynapseStates, parent: &ParameterSet<T>) -> ParameterSet<T> {
    let mut out = parent.clone();
    for (layer, s) in out.layers.iter_mut().zip(&states.layers) {
        for (m, &keep) in layer.mask.iter_mut().zip(s) {
            *m = *m && keep;
        }
        layer.apply_mask();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Conv2dSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lenet5_cluster_counts() {
        let map = build_clusters(&NetworkArchitecture::lenet5_caffe());
        let per_layer: Vec<usize> = map.layers.iter().map(|l| l.clusters).collect();
        assert_eq!(per_layer, vec![20, 50, 500, 10]);
        assert_eq!(map.layers[2].cluster_size, 800);
        assert_eq!(map.total_clusters(), 580);
        assert!(map.layers[3].output_layer && !map.layers[2].output_layer);
    }

    fn single_fc(w: Vec<f64>, rows: usize) -> ParameterSet<f64> {
        let cols = w.len() / rows;
        ParameterSet {
            layers: vec![LayerParams::dense(
                Tensor::new(vec![rows, cols], w).unwrap(),
                Tensor::zeros(vec![rows]),
            )],
        }
    }

    fn map_for(rows: usize, cols: usize) -> ClusterMap {
        ClusterMap {
            layers: vec![LayerClusters {
                clusters: rows,
                cluster_size: cols,
                output_layer: false,
            }],
        }
    }

    #[test]
    fn encoding_values() {
        // strengths {1, 0.5, 0.5, 0} relative to z = 2
        let params = single_fc(vec![2.0, -1.0, 1.0, 0.0], 1);
        let model = encode_dna(&params, &map_for(1, 4), 0).unwrap();
        let l = &model.layers[0];
        assert_eq!(l.synapse[0], 1.0);
        assert_eq!(l.synapse[3], 0.0);
        assert!((l.synapse[1] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((l.cluster[0] - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn masked_synapse_has_zero_probability() {
        let mut params = single_fc(vec![2.0, 1.5, 1.0, 0.5], 2);
        params.layers[0].mask[1] = false;
        let model = encode_dna(&params, &map_for(2, 2), 3).unwrap();
        assert_eq!(model.layers[0].synapse[1], 0.0);
        assert_eq!(model.source_generation, 3);
    }

    #[test]
    fn uniform_half_calibrates_to_factor() {
        let model = SynapticProbabilityModel {
            layers: vec![LayerProbabilities {
                synapse: vec![0.5; 1000],
                cluster: vec![0.5; 10],
            }],
            source_generation: 0,
        };
        let f = EnvironmentalFactor::new(0.8).unwrap();
        let out = apply_environment(&model, f, &map_for(10, 100)).unwrap();
        assert!(out.layers[0]
            .synapse
            .iter()
            .all(|&p| (p - 0.8).abs() < 1e-9));
        assert!((out.expected_synapses() - 800.0).abs() < 1e-6);
    }

    #[test]
    fn unit_factor_saturates_and_zero_stays_zero() {
        let model = SynapticProbabilityModel {
            layers: vec![LayerProbabilities {
                synapse: vec![0.4, 0.0, 0.9, 1.0],
                cluster: vec![0.5, 0.7],
            }],
            source_generation: 0,
        };
        let one = apply_environment(
            &model,
            EnvironmentalFactor::new(1.0).unwrap(),
            &map_for(2, 2),
        )
        .unwrap();
        assert_eq!(one.layers[0].synapse, vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(one.layers[0].cluster, vec![1.0, 1.0]);
        let low = apply_environment(
            &model,
            EnvironmentalFactor::new(0.2).unwrap(),
            &map_for(2, 2),
        )
        .unwrap();
        assert_eq!(low.layers[0].synapse[1], 0.0);
    }

    #[test]
    fn factor_out_of_range_rejected() {
        assert!(EnvironmentalFactor::new(0.0).is_err());
        assert!(EnvironmentalFactor::new(1.01).is_err());
        assert!(EnvironmentalFactor::new(f64::NAN).is_err());
    }

    #[test]
    fn certain_probabilities_reproduce_parent_mask() {
        let model = SynapticProbabilityModel {
            layers: vec![LayerProbabilities {
                synapse: vec![1.0, 0.0, 1.0, 1.0],
                cluster: vec![1.0, 1.0],
            }],
            source_generation: 0,
        };
        let s =
            sample_offspring(&model, &map_for(2, 2), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(s.layers[0], vec![true, false, true, true]);
        let dead = SynapticProbabilityModel {
            layers: vec![LayerProbabilities {
                synapse: vec![1.0; 4],
                cluster: vec![0.0, 0.0],
            }],
            source_generation: 0,
        };
        let s = sample_offspring(&dead, &map_for(2, 2), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(s.count(), 0);
    }

    fn two_conv_net() -> (NetworkArchitecture, ParameterSet<f64>) {
        let arch = NetworkArchitecture::new(
            ActShape::new(1, 8, 8),
            vec![
                LayerSpec::Conv2d(Conv2dSpec::square(20, 1, 3)),
                LayerSpec::MaxPool {
                    window: 2,
                    stride: 2,
                },
                LayerSpec::Conv2d(Conv2dSpec::square(6, 20, 3)),
                LayerSpec::Relu,
                LayerSpec::FullyConnected {
                    in_features: 6,
                    out_features: 3,
                },
            ],
            3,
        )
        .unwrap();
        let params = ParameterSet::init(&arch, &mut ChaCha8Rng::seed_from_u64(4));
        (arch, params)
    }

    fn full_states(params: &ParameterSet<f64>) -> SynapseStates {
        SynapseStates {
            layers: params
                .layers
                .iter()
                .map(|l| vec![true; l.weights.len()])
                .collect(),
        }
    }

    #[test]
    fn all_ones_reproduces_parent() {
        let (arch, params) = two_conv_net();
        let (a, p) = materialize(&full_states(&params), &arch, &params).unwrap();
        assert_eq!(a, arch);
        assert_eq!(p, params);
    }

    #[test]
    fn zeroed_filter_is_removed_with_downstream_channel() {
        let (arch, params) = two_conv_net();
        let mut states = full_states(&params);
        states.layers[0][5 * 9..6 * 9]
            .iter_mut()
            .for_each(|s| *s = false);
        let (a, p) = materialize(&states, &arch, &params).unwrap();
        assert_eq!(a.descriptor(), "19-6-6");
        assert_eq!(p.layers[1].weights.shape(), &[6, 19, 3, 3]);
        // channel 6 of the parent becomes channel 5 of the offspring
        let parent_w = params.layers[1].weights.data();
        let child_w = p.layers[1].weights.data();
        assert_eq!(child_w[5 * 9..6 * 9], parent_w[6 * 9..7 * 9]);
    }

    #[test]
    fn emptied_layer_is_extinct() {
        let (arch, params) = two_conv_net();
        let mut states = full_states(&params);
        states.layers[1].iter_mut().for_each(|s| *s = false);
        assert!(matches!(
            materialize(&states, &arch, &params),
            Err(Error::ExtinctLineage { .. })
        ));
    }
}
