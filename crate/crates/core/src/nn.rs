//! Forward evaluation and reverse-mode gradients.
//!
//! Activations are NCHW, contiguous per sample. Convolutions are lowered to a
//! patch matrix (`[C*kh*kw, N*OH*OW]`) multiplied by the filter matrix. A
//! trailing softmax is fused into the cross-entropy loss, so `forward`
//! returns pre-softmax logits.

use rayon::prelude::*;

use crate::arch::{ActShape, Conv2dSpec, LayerSpec, NetworkArchitecture};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::{Scalar, Tensor};

/// Per weighted layer gradient, aligned with `ParameterSet::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub layers: Vec<LayerGrads<T>>,
}

enum Cache<T> {
    Conv { cols: Vec<T>, weights: Vec<T> },
    Fc { input: Vec<T>, weights: Vec<T> },
    Pool { argmax: Vec<u32> },
    Relu { output_positive: Vec<bool> },
    Passthrough,
}

struct Trace<T> {
    caches: Vec<Cache<T>>,
}

fn check_batch<T: Scalar>(arch: &NetworkArchitecture, batch: &Tensor<T>) -> Result<usize> {
    let s = batch.shape();
    let inp = arch.input;
    let ok = match s.len() {
        4 => s[1] == inp.c && s[2] == inp.h && s[3] == inp.w,
        2 => s[1] == inp.volume(),
        _ => false,
    };
    if !ok {
        return Err(Error::dim(
            0,
            format!(
                "batch shape {s:?} does not match input {}x{}x{}",
                inp.c, inp.h, inp.w
            ),
        ));
    }
    Ok(s[0])
}

fn im2col<T: Scalar>(
    spec: &Conv2dSpec,
    ins: ActShape,
    outs: ActShape,
    n: usize,
    input: &[T],
) -> Vec<T> {
    let p = outs.h * outs.w;
    let np = n * p;
    let k = spec.kernel_volume();
    let mut cols = vec![T::ZERO; k * np];
    let pad = spec.padding as isize;
    for c in 0..ins.c {
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let row_buf = &mut cols[row * np..(row + 1) * np];
                for s in 0..n {
                    let plane = &input[(s * ins.c + c) * ins.h * ins.w..][..ins.h * ins.w];
                    for oh in 0..outs.h {
                        let ih = (oh * spec.stride + ki) as isize - pad;
                        if ih < 0 || ih >= ins.h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * ins.w..][..ins.w];
                        let dst = &mut row_buf[s * p + oh * outs.w..][..outs.w];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * spec.stride + kj) as isize - pad;
                            if iw >= 0 && iw < ins.w as isize {
                                *d = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    spec: &Conv2dSpec,
    ins: ActShape,
    outs: ActShape,
    n: usize,
    cols: &[T],
) -> Vec<T> {
    let p = outs.h * outs.w;
    let np = n * p;
    let mut out = vec![T::ZERO; n * ins.volume()];
    let pad = spec.padding as isize;
    for c in 0..ins.c {
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
                let row_buf = &cols[row * np..(row + 1) * np];
                for s in 0..n {
                    let plane = &mut out[(s * ins.c + c) * ins.h * ins.w..][..ins.h * ins.w];
                    for oh in 0..outs.h {
                        let ih = (oh * spec.stride + ki) as isize - pad;
                        if ih < 0 || ih >= ins.h as isize {
                            continue;
                        }
                        let src = &row_buf[s * p + oh * outs.w..][..outs.w];
                        for (ow, &v) in src.iter().enumerate() {
                            let iw = (ow * spec.stride + kj) as isize - pad;
                            if iw >= 0 && iw < ins.w as isize {
                                plane[ih as usize * ins.w + iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn run<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    batch: &Tensor<T>,
    stop_after: Option<usize>,
    keep_trace: bool,
) -> Result<(Vec<T>, ActShape, Option<Trace<T>>)> {
    let n = check_batch(arch, batch)?;
    params.validate(arch)?;
    let shapes = arch.output_shapes()?;
    let mut act = batch.data().to_vec();
    let mut cur = arch.input;
    let mut caches = Vec::new();
    let mut wl = 0;
    let last = stop_after.unwrap_or(arch.layers.len() - 1);
    for (li, layer) in arch.layers.iter().enumerate().take(last + 1) {
        let outs = shapes[li];
        let (next, cache) = match *layer {
            LayerSpec::Conv2d(spec) => {
                let lp = &params.layers[wl];
                wl += 1;
                let weights = lp.effective_weights();
                let cols = im2col(&spec, cur, outs, n, &act);
                let p = outs.h * outs.w;
                let np = n * p;
                let k = spec.kernel_volume();
                let mut mat = vec![T::ZERO; spec.filters * np];
                T::gemm(
                    spec.filters,
                    k,
                    np,
                    T::ONE,
                    &weights,
                    (k as isize, 1),
                    &cols,
                    (np as isize, 1),
                    T::ZERO,
                    &mut mat,
                    (np as isize, 1),
                );
                let bias = lp.bias.data();
                let mut out = vec![T::ZERO; n * outs.volume()];
                for s in 0..n {
                    for f in 0..spec.filters {
                        let src = &mat[f * np + s * p..][..p];
                        let dst = &mut out[(s * spec.filters + f) * p..][..p];
                        for (d, &v) in dst.iter_mut().zip(src) {
                            *d = v + bias[f];
                        }
                    }
                }
                (out, Cache::Conv { cols, weights })
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                let lp = &params.layers[wl];
                wl += 1;
                let weights = lp.effective_weights();
                let mut out = vec![T::ZERO; n * out_features];
                let bias = lp.bias.data();
                for row in out.chunks_mut(out_features) {
                    row.copy_from_slice(bias);
                }
                T::gemm(
                    n,
                    in_features,
                    out_features,
                    T::ONE,
                    &act,
                    (in_features as isize, 1),
                    &weights,
                    (1, in_features as isize),
                    T::ONE,
                    &mut out,
                    (out_features as isize, 1),
                );
                (
                    out,
                    Cache::Fc {
                        input: act,
                        weights,
                    },
                )
            }
            LayerSpec::MaxPool { window, stride } => {
                let mut out = vec![T::ZERO; n * outs.volume()];
                let mut argmax = vec![0u32; out.len()];
                let plane_in = cur.h * cur.w;
                let plane_out = outs.h * outs.w;
                for sc in 0..n * cur.c {
                    let base = sc * plane_in;
                    for oh in 0..outs.h {
                        for ow in 0..outs.w {
                            let mut best = T::neg_infinity();
                            let mut best_idx = 0usize;
                            for di in 0..window {
                                for dj in 0..window {
                                    let idx = base + (oh * stride + di) * cur.w + ow * stride + dj;
                                    if act[idx] > best {
                                        best = act[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            let o = sc * plane_out + oh * outs.w + ow;
                            out[o] = best;
                            argmax[o] = best_idx as u32;
                        }
                    }
                }
                (out, Cache::Pool { argmax })
            }
            LayerSpec::Relu => {
                let mut positive = Vec::new();
                if keep_trace {
                    positive = act.iter().map(|&v| v > T::ZERO).collect();
                }
                let out = act
                    .into_iter()
                    .map(|v| if v > T::ZERO { v } else { T::ZERO })
                    .collect();
                (
                    out,
                    Cache::Relu {
                        output_positive: positive,
                    },
                )
            }
            LayerSpec::Softmax => (act, Cache::Passthrough),
        };
        act = next;
        cur = outs;
        if keep_trace {
            caches.push(cache);
        }
    }
    if act.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow(
            "forward produced a non-finite activation".into(),
        ));
    }
    Ok((act, cur, keep_trace.then_some(Trace { caches })))
}

/// Logits of shape `[batch, num_classes]`. Masked synapses contribute nothing
/// whatever value is stored for them.
pub fn forward<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (out, _, _) = run(arch, params, batch, None, false)?;
    let n = batch.shape()[0];
    Tensor::new(vec![n, arch.num_classes], out)
}

/// Activations right after `layer_index`, flattened per sample: `[batch, features]`.
pub fn forward_to<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    batch: &Tensor<T>,
    layer_index: usize,
) -> Result<Tensor<T>> {
    if layer_index >= arch.layers.len() {
        return Err(Error::Usage(format!(
            "layer index {layer_index} out of range ({} layers)",
            arch.layers.len()
        )));
    }
    let (out, shape, _) = run(arch, params, batch, Some(layer_index), false)?;
    let n = batch.shape()[0];
    Tensor::new(vec![n, shape.volume()], out)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to
/// every weight and bias. Gradients at masked synapses are exactly zero.
pub fn loss_and_gradients<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    batch: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Gradients<T>)> {
    let n = check_batch(arch, batch)?;
    if labels.len() != n {
        return Err(Error::Usage(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= arch.num_classes) {
        return Err(Error::Usage(format!(
            "label {bad} outside [0, {})",
            arch.num_classes
        )));
    }
    let (logits, _, trace) = run(arch, params, batch, None, true)?;
    let trace = trace.expect("trace requested");
    let k = arch.num_classes;
    let inv_n = T::from_f64(1.0 / n as f64);

    let mut loss = 0.0f64;
    let mut grad = vec![T::ZERO; logits.len()];
    for (s, (row, g)) in logits.chunks(k).zip(grad.chunks_mut(k)).enumerate() {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::ZERO;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        let log_sum = sum.ln() + max;
        loss += (log_sum - row[labels[s]]).to_f64();
        for gi in g.iter_mut() {
            *gi = *gi / sum * inv_n;
        }
        g[labels[s]] -= inv_n;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NumericalOverflow(format!(
            "loss evaluated to {loss}"
        )));
    }

    let shapes = arch.output_shapes()?;
    let mut layer_grads: Vec<Option<LayerGrads<T>>> = vec![None; params.layers.len()];
    let mut wl = params.layers.len();
    for (li, layer) in arch.layers.iter().enumerate().rev() {
        let outs = shapes[li];
        let ins = if li == 0 { arch.input } else { shapes[li - 1] };
        let need_input_grad = li > 0;
        grad = match (layer, &trace.caches[li]) {
            (LayerSpec::Conv2d(spec), Cache::Conv { cols, weights }) => {
                wl -= 1;
                let p = outs.h * outs.w;
                let np = n * p;
                let kv = spec.kernel_volume();
                let f = spec.filters;
                let mut dmat = vec![T::ZERO; f * np];
                let mut db = vec![T::ZERO; f];
                for s in 0..n {
                    for fi in 0..f {
                        let src = &grad[(s * f + fi) * p..][..p];
                        dmat[fi * np + s * p..][..p].copy_from_slice(src);
                        db[fi] += src.iter().copied().sum::<T>();
                    }
                }
                let mut dw = vec![T::ZERO; f * kv];
                T::gemm(
                    f,
                    np,
                    kv,
                    T::ONE,
                    &dmat,
                    (np as isize, 1),
                    cols,
                    (1, np as isize),
                    T::ZERO,
                    &mut dw,
                    (kv as isize, 1),
                );
                mask_grad(&mut dw, &params.layers[wl].mask);
                layer_grads[wl] = Some(LayerGrads {
                    weights: Tensor::new(params.layers[wl].weights.shape().to_vec(), dw)?,
                    bias: Tensor::new(vec![f], db)?,
                });
                if need_input_grad {
                    let mut dcols = vec![T::ZERO; kv * np];
                    T::gemm(
                        kv,
                        f,
                        np,
                        T::ONE,
                        weights,
                        (1, kv as isize),
                        &dmat,
                        (np as isize, 1),
                        T::ZERO,
                        &mut dcols,
                        (np as isize, 1),
                    );
                    col2im(spec, ins, outs, n, &dcols)
                } else {
                    Vec::new()
                }
            }
            (
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                },
                Cache::Fc { input, weights },
            ) => {
                wl -= 1;
                let (fin, fout) = (*in_features, *out_features);
                let mut dw = vec![T::ZERO; fout * fin];
                T::gemm(
                    fout,
                    n,
                    fin,
                    T::ONE,
                    &grad,
                    (1, fout as isize),
                    input,
                    (fin as isize, 1),
                    T::ZERO,
                    &mut dw,
                    (fin as isize, 1),
                );
                mask_grad(&mut dw, &params.layers[wl].mask);
                let mut db = vec![T::ZERO; fout];
                for row in grad.chunks(fout) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                layer_grads[wl] = Some(LayerGrads {
                    weights: Tensor::new(params.layers[wl].weights.shape().to_vec(), dw)?,
                    bias: Tensor::new(vec![fout], db)?,
                });
                if need_input_grad {
                    let mut dx = vec![T::ZERO; n * fin];
                    T::gemm(
                        n,
                        fout,
                        fin,
                        T::ONE,
                        &grad,
                        (fout as isize, 1),
                        weights,
                        (fin as isize, 1),
                        T::ZERO,
                        &mut dx,
                        (fin as isize, 1),
                    );
                    dx
                } else {
                    Vec::new()
                }
            }
            (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                let mut dx = vec![T::ZERO; n * ins.volume()];
                for (&g, &idx) in grad.iter().zip(argmax) {
                    dx[idx as usize] += g;
                }
                dx
            }
            (LayerSpec::Relu, Cache::Relu { output_positive }) => grad
                .iter()
                .zip(output_positive)
                .map(|(&g, &p)| if p { g } else { T::ZERO })
                .collect(),
            (LayerSpec::Softmax, Cache::Passthrough) => grad,
            _ => unreachable!("trace out of sync with architecture"),
        };
    }
    let layers = layer_grads
        .into_iter()
        .map(|g| g.expect("every weighted layer visited"))
        .collect();
    Ok((loss, Gradients { layers }))
}

fn mask_grad<T: Scalar>(grad: &mut [T], mask: &[bool]) {
    for (g, &m) in grad.iter_mut().zip(mask) {
        if !m {
            *g = T::ZERO;
        }
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_BATCH: usize = 500;

/// Fraction of samples whose arg-max logit differs from the label.
pub fn evaluate<T: Scalar>(
    arch: &NetworkArchitecture,
    params: &ParameterSet<T>,
    data: &LabeledDataset,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_BATCH).collect();
    let wrong = starts
        .par_iter()
        .map(|&start| -> Result<usize> {
            let end = (start + EVAL_BATCH).min(data.len());
            let batch = data.images_range::<T>(start, end);
            let logits = forward(arch, params, &batch)?;
            Ok(logits
                .data()
                .chunks(arch.num_classes)
                .zip(&data.labels()[start..end])
                .filter(|(row, &label)| argmax(row) != label)
                .count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wrong as f64 / data.len() as f64)
}
