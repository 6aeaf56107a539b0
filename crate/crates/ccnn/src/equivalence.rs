//! Real-valued layers and the construction mapping a complex network to
//! its restricted real counterpart.
//!
//! A complex kernel A + iB acting on input X + iY is reproduced by two
//! real kernels over the channel-stacked input [X, Y]: [A, -B] yields the
//! real part and [B, A] the imaginary part. Realified channels are blocked:
//! the first half of the channels carry real parts, the second half
//! imaginary parts. The equivalence holds per convolution layer and breaks
//! (deliberately) across ReLU and pooling.

use crate::error::{Error, Result};
use crate::layers::{ConvWeights, PoolKind, ProjectionKind};
use crate::loss::{logistic_loss, ScoredBatch};
use crate::network::{LayerSpec, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::{
    real_col2im_accumulate, real_im2col, slide_count, ComplexTensor, RealPatchMatrix, RealTensor,
};

// ---- realification -------------------------------------------------------

/// Split one complex kernel (in_ch, kh, kw) into the pair of real kernels
/// ([A, -B], [B, A]) over 2*in_ch channels; a complex bias a + ib maps to
/// the real biases (a, b) alongside.
pub fn realify_kernel(kernel: &ComplexTensor) -> (RealTensor, RealTensor) {
    let (ic, kh, kw) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let mut re_kernel = RealTensor::zeros(&[2 * ic, kh, kw]);
    let mut im_kernel = RealTensor::zeros(&[2 * ic, kh, kw]);
    let per = kh * kw;
    for c in 0..ic {
        for p in 0..per {
            let z = kernel.data()[c * per + p];
            // [A, -B]
            re_kernel.data_mut()[c * per + p] = z.re;
            re_kernel.data_mut()[(ic + c) * per + p] = -z.im;
            // [B, A]
            im_kernel.data_mut()[c * per + p] = z.im;
            im_kernel.data_mut()[(ic + c) * per + p] = z.re;
        }
    }
    (re_kernel, im_kernel)
}

/// Stack a complex (ch, h, w) tensor as a real (2ch, h, w) tensor with the
/// real-part channels first.
pub fn realify_tensor(t: &ComplexTensor) -> RealTensor {
    let (ch, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let mut out = RealTensor::zeros(&[2 * ch, h, w]);
    let plane = h * w;
    for c in 0..ch {
        for p in 0..plane {
            let z = t.data()[c * plane + p];
            out.data_mut()[c * plane + p] = z.re;
            out.data_mut()[(ch + c) * plane + p] = z.im;
        }
    }
    out
}

/// Realify a whole convolution layer: 2*out_ch kernels in blocked order
/// (all real-part kernels, then all imaginary-part kernels).
pub fn realify_conv(w: &ConvWeights) -> RealConvWeights {
    let oc = w.out_channels();
    let (ic, kh, kw) = (w.in_channels(), w.kernel_size().0, w.kernel_size().1);
    let mut kernels = RealTensor::zeros(&[2 * oc, 2 * ic, kh, kw]);
    let mut biases = RealTensor::zeros(&[2 * oc]);
    let per = 2 * ic * kh * kw;
    for k in 0..oc {
        let (re_k, im_k) = realify_kernel(&w.kernel(k));
        kernels.data_mut()[k * per..(k + 1) * per].copy_from_slice(re_k.data());
        kernels.data_mut()[(oc + k) * per..(oc + k + 1) * per].copy_from_slice(im_k.data());
        biases.data_mut()[k] = w.biases.data()[k].re;
        biases.data_mut()[oc + k] = w.biases.data()[k].im;
    }
    RealConvWeights {
        kernels,
        biases,
        stride: w.stride,
    }
}

// ---- real layers ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RealAffineWeights {
    /// out_dim x in_dim.
    pub weight: RealTensor,
    pub bias: RealTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealConvWeights {
    /// (out_channels, in_channels, kh, kw).
    pub kernels: RealTensor,
    pub biases: RealTensor,
    pub stride: usize,
}

impl RealConvWeights {
    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    fn as_affine(&self) -> RealAffineWeights {
        let oc = self.out_channels();
        let per = self.kernels.len() / oc;
        RealAffineWeights {
            weight: self.kernels.clone().reshape(&[oc, per]).expect("size-preserving"),
            bias: self.biases.clone(),
        }
    }
}

pub fn real_affine_forward(z: &RealTensor, w: &RealAffineWeights) -> Result<RealTensor> {
    let mut out = w.weight.matmul(z)?;
    let (m, n) = (out.rows(), out.cols());
    for i in 0..m {
        let b = w.bias.data()[i];
        for j in 0..n {
            let v = out.at2(i, j) + b;
            out.set2(i, j, v);
        }
    }
    Ok(out)
}

pub fn real_conv_forward_cached(
    input: &RealTensor,
    w: &RealConvWeights,
) -> Result<(RealTensor, RealPatchMatrix)> {
    if input.shape()[0] != w.in_channels() {
        return Err(Error::shape(
            &[w.in_channels()],
            &[input.shape()[0]],
            "conv input channels",
        ));
    }
    let patches = real_im2col(input, w.kernel_size(), w.stride)?;
    let out_mat = real_affine_forward(&patches.matrix, &w.as_affine())?;
    let out = out_mat.reshape(&[w.out_channels(), patches.out_rows, patches.out_cols])?;
    Ok((out, patches))
}

pub fn real_conv_forward(input: &RealTensor, w: &RealConvWeights) -> Result<RealTensor> {
    Ok(real_conv_forward_cached(input, w)?.0)
}

pub fn real_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.0
    }
}

pub fn real_relu_tensor(input: &RealTensor) -> RealTensor {
    let data = input.data().iter().map(|&x| real_relu(x)).collect();
    RealTensor::from_vec(input.shape(), data).expect("same shape")
}

#[derive(Debug, Clone)]
pub struct RealPoolOutput {
    pub output: RealTensor,
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Plain max pooling by value (the standard choice after a real ReLU),
/// ties to the earliest index in scan order. A zero window means global
/// pooling over the whole spatial extent.
pub fn real_max_pool(
    input: &RealTensor,
    window: (usize, usize),
    stride: usize,
) -> Result<RealPoolOutput> {
    let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww) = if window == (0, 0) { (h, w) } else { window };
    if wh > h || ww > w || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool window {wh}x{ww} does not fit a {h}x{w} input"
        )));
    }
    let oh = slide_count(h, wh, stride);
    let ow = slide_count(w, ww, stride);
    let mut output = RealTensor::zeros(&[ch, oh, ow]);
    let mut argmax = Vec::with_capacity(ch * oh * ow);
    let data = input.data();
    for c in 0..ch {
        for orow in 0..oh {
            for ocol in 0..ow {
                let (r0, c0) = (orow * stride, ocol * stride);
                let mut best_idx = (c * h + r0) * w + c0;
                let mut best = data[best_idx];
                for dr in 0..wh {
                    for dc in 0..ww {
                        let idx = (c * h + r0 + dr) * w + c0 + dc;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                output.data_mut()[(c * oh + orow) * ow + ocol] = best;
                argmax.push(best_idx);
            }
        }
    }
    Ok(RealPoolOutput {
        output,
        argmax,
        input_shape: input.shape().to_vec(),
    })
}

// ---- real backward passes --------------------------------------------------

#[derive(Debug, Clone)]
pub struct RealAffineGrads {
    pub weight: RealTensor,
    pub bias: RealTensor,
}

pub fn real_affine_backward(
    delta_next: &RealTensor,
    w: &RealAffineWeights,
    z: &RealTensor,
) -> Result<(RealTensor, RealAffineGrads)> {
    let delta_in = w.weight.transpose().matmul(delta_next)?;
    let grad_weight = delta_next.matmul_transposed_rhs(z)?;
    let grad_bias = delta_next.row_sums();
    Ok((
        delta_in,
        RealAffineGrads {
            weight: grad_weight,
            bias: grad_bias,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct RealConvGrads {
    pub kernels: RealTensor,
    pub biases: RealTensor,
}

pub fn real_conv_backward(
    delta_next: &RealTensor,
    w: &RealConvWeights,
    patches: &RealPatchMatrix,
) -> Result<(RealTensor, RealConvGrads)> {
    let windows = patches.out_rows * patches.out_cols;
    let expected = [w.out_channels(), patches.out_rows, patches.out_cols];
    if delta_next.shape() != expected {
        return Err(Error::shape(&expected, delta_next.shape(), "conv backward delta"));
    }
    let delta_mat = delta_next.clone().reshape(&[w.out_channels(), windows])?;
    let (delta_patches, grads) = real_affine_backward(&delta_mat, &w.as_affine(), &patches.matrix)?;
    let delta_input = real_col2im_accumulate(&RealPatchMatrix {
        matrix: delta_patches,
        source_index: patches.source_index.clone(),
        input_shape: patches.input_shape.clone(),
        out_rows: patches.out_rows,
        out_cols: patches.out_cols,
    })?;
    Ok((
        delta_input,
        RealConvGrads {
            kernels: grads.weight.reshape(w.kernels.shape())?,
            biases: grads.bias,
        },
    ))
}

pub fn real_relu_backward(delta_next: &RealTensor, input: &RealTensor) -> Result<RealTensor> {
    if delta_next.shape() != input.shape() {
        return Err(Error::shape(input.shape(), delta_next.shape(), "relu backward"));
    }
    let data = input
        .data()
        .iter()
        .zip(delta_next.data())
        .map(|(&x, &d)| if x >= 0.0 { d } else { 0.0 })
        .collect();
    RealTensor::from_vec(input.shape(), data)
}

pub fn real_pool_backward(
    delta_next: &RealTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<RealTensor> {
    if delta_next.len() != argmax.len() {
        return Err(Error::Format {
            what: "pool argmax map",
            detail: format!("{} winners for {} cells", argmax.len(), delta_next.len()),
        });
    }
    let mut out = RealTensor::zeros(input_shape);
    let data = out.data_mut();
    for (&src, &d) in argmax.iter().zip(delta_next.data()) {
        data[src] += d;
    }
    Ok(out)
}

// ---- real network -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum RealLayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    Relu,
    MaxPool {
        window: (usize, usize),
        stride: usize,
    },
    GlobalMaxPool,
    /// Fully connected layer over the flattened current value.
    Affine { out_dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealNetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<RealLayerSpec>,
}

impl RealNetworkSpec {
    /// Shape inference; the network must end with an affine layer whose
    /// output is the class-score vector.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur: Vec<usize> = self.input_shape.to_vec();
        let mut shapes = vec![cur.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                RealLayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if cur.len() != 3 || kernel.0 > cur[1] || kernel.1 > cur[2] {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: kernel {kernel:?} does not fit {cur:?}"
                        )));
                    }
                    vec![
                        *out_channels,
                        (cur[1] - kernel.0) / stride + 1,
                        (cur[2] - kernel.1) / stride + 1,
                    ]
                }
                RealLayerSpec::Relu => cur,
                RealLayerSpec::MaxPool { window, stride } => {
                    if cur.len() != 3 || window.0 > cur[1] || window.1 > cur[2] {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: pool window {window:?} does not fit {cur:?}"
                        )));
                    }
                    vec![
                        cur[0],
                        (cur[1] - window.0) / stride + 1,
                        (cur[2] - window.1) / stride + 1,
                    ]
                }
                RealLayerSpec::GlobalMaxPool => {
                    if cur.len() != 3 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: global pool needs a 3-D value, got {cur:?}"
                        )));
                    }
                    vec![cur[0], 1, 1]
                }
                RealLayerSpec::Affine { out_dim } => vec![*out_dim],
            };
            shapes.push(cur.clone());
        }
        match self.layers.last() {
            Some(RealLayerSpec::Affine { .. }) => Ok(shapes),
            _ => Err(Error::InvalidArgument(
                "real network must end with an affine layer".into(),
            )),
        }
    }

    pub fn score_count(&self) -> Result<usize> {
        Ok(self.infer_shapes()?.last().expect("non-empty")[0])
    }
}

/// Map a complex spec to its real counterpart: twice the conv channels,
/// sector ReLU to real ReLU, magnitude pooling to plain max pooling, and
/// the projection replaced by a trainable fully connected layer from the
/// doubled pooled scores to the class count.
pub fn build_real_counterpart(spec: &NetworkSpec) -> Result<RealNetworkSpec> {
    let classes = spec.score_count()?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for layer in &spec.layers {
        layers.push(match layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
            } => RealLayerSpec::Conv {
                out_channels: 2 * out_channels,
                kernel: *kernel,
                stride: *stride,
            },
            LayerSpec::SectorRelu(_) => RealLayerSpec::Relu,
            LayerSpec::Pool(p) => match p.kind {
                PoolKind::MaxMagnitude => RealLayerSpec::MaxPool {
                    window: p.window,
                    stride: p.stride,
                },
                PoolKind::GlobalMaxMagnitude => RealLayerSpec::GlobalMaxPool,
                PoolKind::Softmax(_) | PoolKind::DualSoftmax(_) => {
                    return Err(Error::InvalidArgument(
                        "no real counterpart defined for softmax pooling".into(),
                    ))
                }
            },
            LayerSpec::Projection(ProjectionKind::Magnitude)
            | LayerSpec::Projection(ProjectionKind::SquaredMagnitude) => {
                RealLayerSpec::Affine { out_dim: classes }
            }
        });
    }
    let out = RealNetworkSpec {
        input_shape: [
            2 * spec.input_shape[0],
            spec.input_shape[1],
            spec.input_shape[2],
        ],
        layers,
    };
    out.infer_shapes()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RealLayer {
    Conv(RealConvWeights),
    Relu,
    MaxPool { window: (usize, usize), stride: usize },
    GlobalMaxPool,
    Affine(RealAffineWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealNetwork {
    pub spec: RealNetworkSpec,
    pub layers: Vec<RealLayer>,
}

pub enum RealLayerCache {
    Conv(RealPatchMatrix),
    Relu(RealTensor),
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Affine(RealTensor),
}

pub struct RealForwardTrace {
    pub caches: Vec<RealLayerCache>,
    pub scores: Vec<f64>,
}

impl RealNetwork {
    /// Glorot-initialized (uniform, real scheme) network; biases zero.
    pub fn init(spec: &RealNetworkSpec, rng: &mut Rng) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let in_shape = &shapes[i];
            layers.push(match layer {
                RealLayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let in_ch = in_shape[0];
                    let fan_in = in_ch * kernel.0 * kernel.1;
                    let fan_out = out_channels * kernel.0 * kernel.1;
                    let kernels = real_glorot(
                        &[*out_channels, in_ch, kernel.0, kernel.1],
                        fan_in,
                        fan_out,
                        rng,
                    );
                    RealLayer::Conv(RealConvWeights {
                        kernels,
                        biases: RealTensor::zeros(&[*out_channels]),
                        stride: *stride,
                    })
                }
                RealLayerSpec::Relu => RealLayer::Relu,
                RealLayerSpec::MaxPool { window, stride } => RealLayer::MaxPool {
                    window: *window,
                    stride: *stride,
                },
                RealLayerSpec::GlobalMaxPool => RealLayer::GlobalMaxPool,
                RealLayerSpec::Affine { out_dim } => {
                    let in_dim: usize = in_shape.iter().product();
                    let weight = real_glorot(&[*out_dim, in_dim], in_dim, *out_dim, rng);
                    RealLayer::Affine(RealAffineWeights {
                        weight,
                        bias: RealTensor::zeros(&[*out_dim]),
                    })
                }
            });
        }
        Ok(RealNetwork {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn forward(&self, input: &RealTensor) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.scores)
    }

    pub fn forward_trace(&self, input: &RealTensor) -> Result<RealForwardTrace> {
        if input.shape() != self.spec.input_shape {
            return Err(Error::shape(
                &self.spec.input_shape,
                input.shape(),
                "network input",
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut value = input.clone();
        for layer in &self.layers {
            match layer {
                RealLayer::Conv(w) => {
                    let (out, patches) = real_conv_forward_cached(&value, w)?;
                    caches.push(RealLayerCache::Conv(patches));
                    value = out;
                }
                RealLayer::Relu => {
                    caches.push(RealLayerCache::Relu(value.clone()));
                    value = real_relu_tensor(&value);
                }
                RealLayer::MaxPool { window, stride } => {
                    let pooled = real_max_pool(&value, *window, *stride)?;
                    caches.push(RealLayerCache::Pool {
                        argmax: pooled.argmax,
                        input_shape: pooled.input_shape,
                    });
                    value = pooled.output;
                }
                RealLayer::GlobalMaxPool => {
                    let pooled = real_max_pool(&value, (0, 0), 1)?;
                    caches.push(RealLayerCache::Pool {
                        argmax: pooled.argmax,
                        input_shape: pooled.input_shape,
                    });
                    value = pooled.output;
                }
                RealLayer::Affine(w) => {
                    let flat_len = value.len();
                    let column = value.clone().reshape(&[flat_len, 1])?;
                    caches.push(RealLayerCache::Affine(column.clone()));
                    value = real_affine_forward(&column, w)?;
                    let out_dim = value.rows();
                    value = value.reshape(&[out_dim])?;
                }
            }
        }
        let scores = value.data().to_vec();
        Ok(RealForwardTrace { caches, scores })
    }

    /// Chained backward pass; gradients in `param_tensors` order.
    pub fn backward(&self, trace: &RealForwardTrace, score_delta: &[f64]) -> Result<Vec<RealTensor>> {
        let mut grads_rev: Vec<Vec<RealTensor>> = Vec::new();
        let mut delta =
            RealTensor::from_vec(&[score_delta.len(), 1], score_delta.to_vec())?;
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            match (layer, cache) {
                (RealLayer::Affine(w), RealLayerCache::Affine(z)) => {
                    let out_dim = w.weight.rows();
                    let d = delta.reshape(&[out_dim, 1])?;
                    let (din, g) = real_affine_backward(&d, w, z)?;
                    grads_rev.push(vec![g.weight, g.bias]);
                    delta = din;
                }
                (RealLayer::MaxPool { .. } | RealLayer::GlobalMaxPool, RealLayerCache::Pool { argmax, input_shape }) => {
                    let d = delta.reshape(&[argmax.len()])?;
                    let flat = RealTensor::from_vec(&[argmax.len()], d.data().to_vec())?;
                    delta = real_pool_backward(&flat, argmax, input_shape)?;
                }
                (RealLayer::Relu, RealLayerCache::Relu(z)) => {
                    let d = delta.reshape(z.shape())?;
                    delta = real_relu_backward(&d, z)?;
                }
                (RealLayer::Conv(w), RealLayerCache::Conv(patches)) => {
                    let d = delta.reshape(&[
                        w.out_channels(),
                        patches.out_rows,
                        patches.out_cols,
                    ])?;
                    let (din, g) = real_conv_backward(&d, w, patches)?;
                    grads_rev.push(vec![g.kernels, g.biases]);
                    delta = din;
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "forward cache kind does not match layer kind".into(),
                    ))
                }
            }
        }
        Ok(grads_rev.into_iter().rev().flatten().collect())
    }

    pub fn param_tensors(&self) -> Vec<RealTensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                RealLayer::Conv(w) => {
                    out.push(w.kernels.clone());
                    out.push(w.biases.clone());
                }
                RealLayer::Affine(w) => {
                    out.push(w.weight.clone());
                    out.push(w.bias.clone());
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_param_tensors(&mut self, params: &[RealTensor]) -> Result<()> {
        let mut it = params.iter();
        for layer in &mut self.layers {
            let slots: Vec<&mut RealTensor> = match layer {
                RealLayer::Conv(w) => vec![&mut w.kernels, &mut w.biases],
                RealLayer::Affine(w) => vec![&mut w.weight, &mut w.bias],
                _ => continue,
            };
            for slot in slots {
                let src = it.next().ok_or_else(|| {
                    Error::InvalidArgument("parameter list does not match network layout".into())
                })?;
                if src.shape() != slot.shape() {
                    return Err(Error::shape(slot.shape(), src.shape(), "parameter import"));
                }
                *slot = src.clone();
            }
        }
        if it.next().is_some() {
            return Err(Error::InvalidArgument(
                "parameter list does not match network layout".into(),
            ));
        }
        Ok(())
    }

    pub fn real_param_count(&self) -> usize {
        self.param_tensors().iter().map(RealTensor::len).sum()
    }

    /// Batched forward: convolutions and the trailing affine run as one
    /// stacked matrix product per layer; ReLU and pooling run per item.
    pub fn forward_batch(&self, inputs: &[&RealTensor], want_cache: bool) -> Result<RealBatchTrace> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for input in inputs {
            if input.shape() != self.spec.input_shape {
                return Err(Error::shape(
                    &self.spec.input_shape,
                    input.shape(),
                    "network input",
                ));
            }
        }
        let n = inputs.len();
        let mut caches = Vec::new();
        let mut values: Vec<RealTensor> = inputs.iter().map(|t| (*t).clone()).collect();
        for layer in &self.layers {
            match layer {
                RealLayer::Conv(w) => {
                    let refs: Vec<&RealTensor> = values.iter().collect();
                    let (outputs, cache) = real_conv_forward_batch(&refs, w)?;
                    if want_cache {
                        caches.push(RealBatchCache::Conv(cache));
                    }
                    values = outputs;
                }
                RealLayer::Relu => {
                    if want_cache {
                        caches.push(RealBatchCache::Relu(values.clone()));
                    }
                    for v in &mut values {
                        *v = real_relu_tensor(v);
                    }
                }
                RealLayer::MaxPool { .. } | RealLayer::GlobalMaxPool => {
                    let (window, stride) = match layer {
                        RealLayer::MaxPool { window, stride } => (*window, *stride),
                        _ => ((0, 0), 1),
                    };
                    let mut argmax = Vec::with_capacity(n);
                    let mut input_shape = Vec::new();
                    for v in &mut values {
                        let pooled = real_max_pool(v, window, stride)?;
                        input_shape = pooled.input_shape;
                        argmax.push(pooled.argmax);
                        *v = pooled.output;
                    }
                    if want_cache {
                        caches.push(RealBatchCache::Pool {
                            argmax,
                            input_shape,
                        });
                    }
                }
                RealLayer::Affine(w) => {
                    // Stack flattened items as columns: one product covers
                    // the batch.
                    let in_dim = values[0].len();
                    let mut stacked = RealTensor::zeros(&[in_dim, n]);
                    for (i, v) in values.iter().enumerate() {
                        if v.len() != in_dim {
                            return Err(Error::shape(&[in_dim], v.shape(), "affine batch"));
                        }
                        for (r, &x) in v.data().iter().enumerate() {
                            stacked.set2(r, i, x);
                        }
                    }
                    if want_cache {
                        caches.push(RealBatchCache::Affine(stacked.clone()));
                    }
                    let out = real_affine_forward(&stacked, w)?;
                    let out_dim = out.rows();
                    values = (0..n)
                        .map(|i| {
                            let data: Vec<f64> = (0..out_dim).map(|r| out.at2(r, i)).collect();
                            RealTensor::from_vec(&[out_dim], data).expect("column")
                        })
                        .collect();
                }
            }
        }
        let scores = values.into_iter().map(|v| v.data().to_vec()).collect();
        Ok(RealBatchTrace { caches, scores })
    }

    /// Batched backward; gradients summed over the batch in
    /// `param_tensors` order.
    pub fn backward_batch(
        &self,
        trace: &RealBatchTrace,
        score_deltas: &[Vec<f64>],
    ) -> Result<Vec<RealTensor>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward trace does not match network depth (was it cached?)".into(),
            ));
        }
        let n = score_deltas.len();
        let mut grads_rev: Vec<Vec<RealTensor>> = Vec::new();
        let mut deltas: Option<Vec<RealTensor>> = None;
        for (index, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            match (layer, cache) {
                (RealLayer::Affine(w), RealBatchCache::Affine(stacked)) => {
                    let out_dim = w.weight.rows();
                    let mut delta_mat = RealTensor::zeros(&[out_dim, n]);
                    match &deltas {
                        None => {
                            for (i, d) in score_deltas.iter().enumerate() {
                                for (r, &x) in d.iter().enumerate() {
                                    delta_mat.set2(r, i, x);
                                }
                            }
                        }
                        Some(ds) => {
                            for (i, d) in ds.iter().enumerate() {
                                for (r, &x) in d.data().iter().enumerate() {
                                    delta_mat.set2(r, i, x);
                                }
                            }
                        }
                    }
                    let (din, g) = real_affine_backward(&delta_mat, w, stacked)?;
                    grads_rev.push(vec![g.weight, g.bias]);
                    // Split the delta columns back into per-item tensors.
                    let in_dim = din.rows();
                    deltas = Some(
                        (0..n)
                            .map(|i| {
                                let data: Vec<f64> =
                                    (0..in_dim).map(|r| din.at2(r, i)).collect();
                                RealTensor::from_vec(&[in_dim], data).expect("column")
                            })
                            .collect(),
                    );
                }
                (
                    RealLayer::MaxPool { .. } | RealLayer::GlobalMaxPool,
                    RealBatchCache::Pool { argmax, input_shape },
                ) => {
                    let ds = deltas.take().ok_or_else(real_missing_delta)?;
                    deltas = Some(
                        ds.iter()
                            .zip(argmax)
                            .map(|(d, map)| {
                                let flat =
                                    RealTensor::from_vec(&[map.len()], d.data().to_vec())?;
                                real_pool_backward(&flat, map, input_shape)
                            })
                            .collect::<Result<_>>()?,
                    );
                }
                (RealLayer::Relu, RealBatchCache::Relu(zs)) => {
                    let ds = deltas.take().ok_or_else(real_missing_delta)?;
                    deltas = Some(
                        ds.iter()
                            .zip(zs)
                            .map(|(d, z)| {
                                let d = d.clone().reshape(z.shape())?;
                                real_relu_backward(&d, z)
                            })
                            .collect::<Result<_>>()?,
                    );
                }
                (RealLayer::Conv(w), RealBatchCache::Conv(cache)) => {
                    let ds = deltas.take().ok_or_else(real_missing_delta)?;
                    let shaped: Vec<RealTensor> = ds
                        .into_iter()
                        .map(|d| {
                            d.reshape(&[
                                w.out_channels(),
                                cache.geometry.out_rows,
                                cache.geometry.out_cols,
                            ])
                        })
                        .collect::<Result<_>>()?;
                    let refs: Vec<&RealTensor> = shaped.iter().collect();
                    // The first layer's input delta has no consumer.
                    if index == 0 {
                        let g = real_conv_backward_batch_weights_only(&refs, w, cache)?;
                        grads_rev.push(vec![g.kernels, g.biases]);
                        deltas = None;
                    } else {
                        let (din, g) = real_conv_backward_batch(&refs, w, cache)?;
                        grads_rev.push(vec![g.kernels, g.biases]);
                        deltas = Some(din);
                    }
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "forward cache kind does not match layer kind".into(),
                    ))
                }
            }
        }
        Ok(grads_rev.into_iter().rev().flatten().collect())
    }

    pub fn score_batch(&self, inputs: &[&RealTensor]) -> Result<(usize, Vec<f64>)> {
        let classes = self.spec.score_count()?;
        let n = inputs.len();
        let mut scores = vec![0.0; classes * n];
        for (chunk_index, chunk) in inputs.chunks(REAL_EVAL_CHUNK).enumerate() {
            let trace = self.forward_batch(chunk, false)?;
            for (j, item_scores) in trace.scores.iter().enumerate() {
                let item = chunk_index * REAL_EVAL_CHUNK + j;
                for (c, v) in item_scores.iter().enumerate() {
                    scores[c * n + item] = *v;
                }
            }
        }
        Ok((classes, scores))
    }

    pub fn loss_and_gradients(
        &self,
        inputs: &[&RealTensor],
        labels: &[usize],
    ) -> Result<(f64, Vec<RealTensor>)> {
        let classes = self.spec.score_count()?;
        let n = inputs.len();
        if labels.len() != n || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch of {n} inputs with {} labels",
                labels.len()
            )));
        }
        let trace = self.forward_batch(inputs, true)?;
        let mut scores = vec![0.0; classes * n];
        for (item, item_scores) in trace.scores.iter().enumerate() {
            for (c, v) in item_scores.iter().enumerate() {
                scores[c * n + item] = *v;
            }
        }
        let batch = ScoredBatch::new(classes, n, scores, labels.to_vec())?;
        let (loss, delta) = logistic_loss(&batch);
        let score_deltas: Vec<Vec<f64>> = (0..n)
            .map(|item| (0..classes).map(|c| delta[c * n + item]).collect())
            .collect();
        let grads = self.backward_batch(&trace, &score_deltas)?;
        Ok((loss, grads))
    }
}

const REAL_EVAL_CHUNK: usize = 250;

pub enum RealBatchCache {
    Conv(RealBatchConvCache),
    Relu(Vec<RealTensor>),
    Pool {
        argmax: Vec<Vec<usize>>,
        input_shape: Vec<usize>,
    },
    /// Flattened inputs stacked as columns.
    Affine(RealTensor),
}

pub struct RealBatchTrace {
    pub caches: Vec<RealBatchCache>,
    pub scores: Vec<Vec<f64>>,
}

fn real_missing_delta() -> Error {
    Error::InvalidArgument("backward reached a layer with no incoming delta".into())
}

/// Stacked patch matrices of a real batch over one shared index map.
pub struct RealBatchConvCache {
    pub geometry: crate::tensor::PatchGeometry,
    pub stacked: RealTensor,
    pub items: usize,
}

pub fn real_conv_forward_batch(
    inputs: &[&RealTensor],
    w: &RealConvWeights,
) -> Result<(Vec<RealTensor>, RealBatchConvCache)> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    if first.shape()[0] != w.in_channels() {
        return Err(Error::shape(
            &[w.in_channels()],
            &[first.shape()[0]],
            "conv input channels",
        ));
    }
    let geometry = crate::tensor::patch_geometry(first.shape(), w.kernel_size(), w.stride)?;
    let items = inputs.len();
    let windows = geometry.windows();
    let total_cols = items * windows;
    let mut stacked = RealTensor::zeros(&[geometry.patch_len, total_cols]);
    {
        let out = stacked.data_mut();
        for (i, input) in inputs.iter().enumerate() {
            if input.shape() != geometry.input_shape {
                return Err(Error::shape(&geometry.input_shape, input.shape(), "conv batch"));
            }
            let data = input.data();
            for row in 0..geometry.patch_len {
                let src_row = &geometry.source_index[row * windows..(row + 1) * windows];
                let dst = &mut out
                    [row * total_cols + i * windows..row * total_cols + (i + 1) * windows];
                for (d, &src) in dst.iter_mut().zip(src_row) {
                    *d = data[src];
                }
            }
        }
    }
    let out_all = real_affine_forward(&stacked, &w.as_affine())?;
    let oc = w.out_channels();
    let mut outputs = Vec::with_capacity(items);
    for i in 0..items {
        let mut item = RealTensor::zeros(&[oc, geometry.out_rows, geometry.out_cols]);
        let dst = item.data_mut();
        for k in 0..oc {
            let src = &out_all.data()
                [k * total_cols + i * windows..k * total_cols + (i + 1) * windows];
            dst[k * windows..(k + 1) * windows].copy_from_slice(src);
        }
        outputs.push(item);
    }
    Ok((
        outputs,
        RealBatchConvCache {
            geometry,
            stacked,
            items,
        },
    ))
}

fn real_stack_conv_deltas(
    deltas: &[&RealTensor],
    w: &RealConvWeights,
    cache: &RealBatchConvCache,
) -> Result<RealTensor> {
    let geometry = &cache.geometry;
    let windows = geometry.windows();
    let items = cache.items;
    if deltas.len() != items {
        return Err(Error::Format {
            what: "conv batch cache",
            detail: format!("{} deltas for {} cached items", deltas.len(), items),
        });
    }
    let oc = w.out_channels();
    let expected = [oc, geometry.out_rows, geometry.out_cols];
    let total_cols = items * windows;
    let mut delta_all = RealTensor::zeros(&[oc, total_cols]);
    let out = delta_all.data_mut();
    for (i, d) in deltas.iter().enumerate() {
        if d.shape() != expected {
            return Err(Error::shape(&expected, d.shape(), "conv backward delta"));
        }
        for k in 0..oc {
            out[k * total_cols + i * windows..k * total_cols + (i + 1) * windows]
                .copy_from_slice(&d.data()[k * windows..(k + 1) * windows]);
        }
    }
    Ok(delta_all)
}

pub fn real_conv_backward_batch_weights_only(
    deltas: &[&RealTensor],
    w: &RealConvWeights,
    cache: &RealBatchConvCache,
) -> Result<RealConvGrads> {
    let delta_all = real_stack_conv_deltas(deltas, w, cache)?;
    let grad_weight = delta_all.matmul_transposed_rhs(&cache.stacked)?;
    Ok(RealConvGrads {
        kernels: grad_weight.reshape(w.kernels.shape())?,
        biases: delta_all.row_sums(),
    })
}

pub fn real_conv_backward_batch(
    deltas: &[&RealTensor],
    w: &RealConvWeights,
    cache: &RealBatchConvCache,
) -> Result<(Vec<RealTensor>, RealConvGrads)> {
    let geometry = &cache.geometry;
    let windows = geometry.windows();
    let items = cache.items;
    let total_cols = items * windows;
    let delta_all = real_stack_conv_deltas(deltas, w, cache)?;
    let (delta_patches, grads) = real_affine_backward(&delta_all, &w.as_affine(), &cache.stacked)?;
    let mut input_deltas = Vec::with_capacity(items);
    for i in 0..items {
        let mut din = RealTensor::zeros(&geometry.input_shape);
        let out = din.data_mut();
        for row in 0..geometry.patch_len {
            let src_row = &geometry.source_index[row * windows..(row + 1) * windows];
            let cells = &delta_patches.data()
                [row * total_cols + i * windows..row * total_cols + (i + 1) * windows];
            for (&src, &v) in src_row.iter().zip(cells) {
                out[src] += v;
            }
        }
        input_deltas.push(din);
    }
    Ok((
        input_deltas,
        RealConvGrads {
            kernels: grads.weight.reshape(w.kernels.shape())?,
            biases: grads.bias,
        },
    ))
}

/// Real Glorot draw: uniform on +-sqrt(6/(fan_in+fan_out)).
pub fn real_glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> RealTensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut out = RealTensor::zeros(shape);
    for v in out.data_mut() {
        *v = rng.uniform_in(-limit, limit);
    }
    out
}
