//! Declarative network specs and the complex network they build: forward
//! evaluation with per-layer caches, the chained backward pass, and flat
//! parameter access for the optimizer and checkpoints.

use crate::backprop::{
    conv_backward, conv_backward_batch, conv_backward_batch_weights_only,
    dual_softmax_pool_backward, pool_backward, projection_backward, sector_relu_backward,
    softmax_pool_backward,
};
use crate::complex::Complex;
use crate::error::{Error, Result};
use crate::layers::{
    conv_forward_batch, conv_forward_cached, max_by_magnitude_pool, sector_relu_tensor,
    slide_windows_of, softmax_pool_tensor, BatchConvCache, ConvWeights, PoolKind, PoolSpec,
    ProjectionKind, SectorParams,
};
use crate::loss::{logistic_loss, ScoredBatch};
use crate::optim::glorot_init;
use crate::rng::Rng;
use crate::tensor::{ComplexTensor, PatchMatrix};

/// One layer of a network spec.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
    },
    SectorRelu(SectorParams),
    Pool(PoolSpec),
    Projection(ProjectionKind),
}

/// Sequence of layers over a fixed (channels, h, w) input. The final layer
/// must be a projection so the network emits real class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// The cell-detection architecture: two 5x5 convolutions, each followed
    /// by a sector ReLU and pooling (2x2 stride 1, then global), closed by
    /// a squared-magnitude projection. Channel counts are configurable.
    pub fn cell_detection(conv1_kernels: usize, conv2_kernels: usize) -> Self {
        NetworkSpec {
            input_shape: [1, 15, 15],
            layers: vec![
                LayerSpec::Conv {
                    out_channels: conv1_kernels,
                    kernel: (5, 5),
                    stride: 1,
                },
                LayerSpec::SectorRelu(SectorParams::first_quadrant()),
                LayerSpec::Pool(PoolSpec::max_magnitude((2, 2), 1)),
                LayerSpec::Conv {
                    out_channels: conv2_kernels,
                    kernel: (5, 5),
                    stride: 1,
                },
                LayerSpec::SectorRelu(SectorParams::first_quadrant()),
                LayerSpec::Pool(PoolSpec::global()),
                LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
            ],
        }
    }

    /// Shape of every intermediate value, ending with the score count.
    /// Validates that windows fit and the projection closes the network.
    pub fn infer_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = vec![self.input_shape];
        let mut cur = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if kernel.0 > cur[1] || kernel.1 > cur[2] {
                        return Err(Error::InvalidArgument(format!(
                            "layer {i}: kernel {kernel:?} does not fit {cur:?}"
                        )));
                    }
                    [
                        *out_channels,
                        (cur[1] - kernel.0) / stride + 1,
                        (cur[2] - kernel.1) / stride + 1,
                    ]
                }
                LayerSpec::SectorRelu(_) | LayerSpec::Projection(_) => cur,
                LayerSpec::Pool(spec) => match spec.kind {
                    PoolKind::GlobalMaxMagnitude => [cur[0], 1, 1],
                    _ => {
                        if spec.window.0 > cur[1] || spec.window.1 > cur[2] {
                            return Err(Error::InvalidArgument(format!(
                                "layer {i}: pool window {:?} does not fit {cur:?}",
                                spec.window
                            )));
                        }
                        [
                            cur[0],
                            (cur[1] - spec.window.0) / spec.stride + 1,
                            (cur[2] - spec.window.1) / spec.stride + 1,
                        ]
                    }
                },
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Projection(_)) => Ok(shapes),
            _ => Err(Error::InvalidArgument(
                "network must end with a projection layer".into(),
            )),
        }
    }

    /// Number of real class scores the network emits.
    pub fn score_count(&self) -> Result<usize> {
        let shapes = self.infer_shapes()?;
        let last = shapes.last().expect("at least the input shape");
        Ok(last[0] * last[1] * last[2])
    }
}

/// A spec layer with its weights (convolutions carry the only trainables).
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvWeights),
    SectorRelu(SectorParams),
    Pool(PoolSpec),
    Projection(ProjectionKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexNetwork {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// What each layer's backward pass needs from the matching forward call.
pub enum LayerCache {
    Conv(PatchMatrix),
    Relu(ComplexTensor),
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    SoftPool(ComplexTensor),
    Projection(ComplexTensor),
}

/// Forward trace of one input: the caches plus the real output scores.
pub struct ForwardTrace {
    pub caches: Vec<LayerCache>,
    pub scores: Vec<f64>,
}

impl ComplexNetwork {
    /// Glorot-initialized network; biases start at zero.
    pub fn init(spec: &NetworkSpec, rng: &mut Rng) -> Result<Self> {
        spec.infer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut in_channels = spec.input_shape[0];
        for layer in &spec.layers {
            layers.push(match layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let fan_in = in_channels * kernel.0 * kernel.1;
                    let fan_out = out_channels * kernel.0 * kernel.1;
                    let kernels = glorot_init(
                        &[*out_channels, in_channels, kernel.0, kernel.1],
                        fan_in,
                        fan_out,
                        rng,
                    );
                    let biases = ComplexTensor::zeros(&[*out_channels]);
                    in_channels = *out_channels;
                    Layer::Conv(ConvWeights::new(kernels, biases, *stride)?)
                }
                LayerSpec::SectorRelu(p) => Layer::SectorRelu(*p),
                LayerSpec::Pool(p) => Layer::Pool(*p),
                LayerSpec::Projection(k) => Layer::Projection(*k),
            });
        }
        Ok(ComplexNetwork {
            spec: spec.clone(),
            layers,
        })
    }

    /// Forward pass returning only the real scores.
    pub fn forward(&self, input: &ComplexTensor) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.scores)
    }

    /// Forward pass recording exactly what each backward pass needs.
    pub fn forward_trace(&self, input: &ComplexTensor) -> Result<ForwardTrace> {
        if input.shape() != self.spec.input_shape {
            return Err(Error::shape(
                &self.spec.input_shape,
                input.shape(),
                "network input",
            ));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut value = input.clone();
        let mut scores = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(w) => {
                    let (out, patches) = conv_forward_cached(&value, w)?;
                    caches.push(LayerCache::Conv(patches));
                    value = out;
                }
                Layer::SectorRelu(p) => {
                    caches.push(LayerCache::Relu(value.clone()));
                    value = sector_relu_tensor(&value, p);
                }
                Layer::Pool(spec) => match spec.kind {
                    PoolKind::MaxMagnitude | PoolKind::GlobalMaxMagnitude => {
                        let pooled = max_by_magnitude_pool(&value, spec)?;
                        caches.push(LayerCache::Pool {
                            argmax: pooled.argmax,
                            input_shape: pooled.input_shape,
                        });
                        value = pooled.output;
                    }
                    PoolKind::Softmax(_) | PoolKind::DualSoftmax(_) => {
                        caches.push(LayerCache::SoftPool(value.clone()));
                        value = softmax_pool_tensor(&value, spec)?;
                    }
                },
                Layer::Projection(kind) => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::InvalidArgument(
                            "projection must be the final layer".into(),
                        ));
                    }
                    caches.push(LayerCache::Projection(value.clone()));
                    scores = Some(crate::layers::projection_tensor(&value, *kind));
                }
            }
        }
        let scores = scores.ok_or_else(|| {
            Error::InvalidArgument("network must end with a projection layer".into())
        })?;
        Ok(ForwardTrace { caches, scores })
    }

    /// Chain the per-layer backward passes from the loss delta over the
    /// scores down to the first layer. Returns the weight gradients in
    /// `param_tensors` order.
    pub fn backward(&self, trace: &ForwardTrace, score_delta: &[f64]) -> Result<Vec<ComplexTensor>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward trace does not match network depth".into(),
            ));
        }
        // Gradients per conv layer, collected in reverse then flattened in
        // forward order.
        let mut conv_grads_rev: Vec<(ComplexTensor, ComplexTensor)> = Vec::new();
        let mut delta: Option<ComplexTensor> = None;
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            match (layer, cache) {
                (Layer::Projection(kind), LayerCache::Projection(z)) => {
                    delta = Some(projection_backward(score_delta, z, *kind)?);
                }
                (Layer::Pool(_), LayerCache::Pool { argmax, input_shape }) => {
                    let d = delta.take().ok_or_else(missing_delta)?;
                    delta = Some(pool_backward(&d, argmax, input_shape)?);
                }
                (Layer::Pool(spec), LayerCache::SoftPool(input)) => {
                    let d = delta.take().ok_or_else(missing_delta)?;
                    delta = Some(softmax_pool_backward_tensor(input, spec, &d)?);
                }
                (Layer::SectorRelu(p), LayerCache::Relu(z)) => {
                    let d = delta.take().ok_or_else(missing_delta)?;
                    delta = Some(sector_relu_backward(&d, z, p)?);
                }
                (Layer::Conv(w), LayerCache::Conv(patches)) => {
                    let d = delta.take().ok_or_else(missing_delta)?;
                    let (din, grads) = conv_backward(&d, w, patches)?;
                    conv_grads_rev.push((grads.kernels, grads.biases));
                    delta = Some(din);
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "forward cache kind does not match layer kind".into(),
                    ))
                }
            }
        }
        let mut out = Vec::with_capacity(conv_grads_rev.len() * 2);
        for (kernels, biases) in conv_grads_rev.into_iter().rev() {
            out.push(kernels);
            out.push(biases);
        }
        Ok(out)
    }

    /// Trainable tensors in a fixed order: kernels then biases per conv
    /// layer, in layer order.
    pub fn param_tensors(&self) -> Vec<ComplexTensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv(w) = layer {
                out.push(w.kernels.clone());
                out.push(w.biases.clone());
            }
        }
        out
    }

    pub fn set_param_tensors(&mut self, params: &[ComplexTensor]) -> Result<()> {
        let mut it = params.iter();
        for layer in &mut self.layers {
            if let Layer::Conv(w) = layer {
                let kernels = it.next().ok_or_else(param_count_err)?;
                let biases = it.next().ok_or_else(param_count_err)?;
                if kernels.shape() != w.kernels.shape() || biases.shape() != w.biases.shape() {
                    return Err(Error::shape(
                        w.kernels.shape(),
                        kernels.shape(),
                        "parameter import",
                    ));
                }
                w.kernels = kernels.clone();
                w.biases = biases.clone();
            }
        }
        if it.next().is_some() {
            return Err(param_count_err());
        }
        Ok(())
    }

    /// Real parameter count (each complex weight counts 2).
    pub fn real_param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| 2 * t.len()).sum()
    }

    /// Batched forward pass: convolutions run as one stacked matrix
    /// product over the whole batch; pointwise and pooling layers run per
    /// item. Returns per-item scores and, when requested, the caches for
    /// `backward_batch`.
    pub fn forward_batch(
        &self,
        inputs: &[&ComplexTensor],
        want_cache: bool,
    ) -> Result<BatchTrace> {
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
        let mut values: Vec<ComplexTensor> = inputs.iter().map(|t| (*t).clone()).collect();
        let mut scores: Option<Vec<Vec<f64>>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(w) => {
                    let refs: Vec<&ComplexTensor> = values.iter().collect();
                    let (outputs, cache) = conv_forward_batch(&refs, w)?;
                    if want_cache {
                        caches.push(BatchCache::Conv(cache));
                    }
                    values = outputs;
                }
                Layer::SectorRelu(p) => {
                    if want_cache {
                        caches.push(BatchCache::Relu(values.clone()));
                    }
                    for v in &mut values {
                        *v = sector_relu_tensor(v, p);
                    }
                }
                Layer::Pool(spec) => match spec.kind {
                    PoolKind::MaxMagnitude | PoolKind::GlobalMaxMagnitude => {
                        let mut argmax = Vec::with_capacity(n);
                        let mut input_shape = Vec::new();
                        for v in &mut values {
                            let pooled = max_by_magnitude_pool(v, spec)?;
                            input_shape = pooled.input_shape;
                            argmax.push(pooled.argmax);
                            *v = pooled.output;
                        }
                        if want_cache {
                            caches.push(BatchCache::Pool {
                                argmax,
                                input_shape,
                            });
                        }
                    }
                    PoolKind::Softmax(_) | PoolKind::DualSoftmax(_) => {
                        if want_cache {
                            caches.push(BatchCache::SoftPool(values.clone()));
                        }
                        for v in &mut values {
                            *v = softmax_pool_tensor(v, spec)?;
                        }
                    }
                },
                Layer::Projection(kind) => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::InvalidArgument(
                            "projection must be the final layer".into(),
                        ));
                    }
                    if want_cache {
                        caches.push(BatchCache::Projection(values.clone()));
                    }
                    scores = Some(
                        values
                            .iter()
                            .map(|v| crate::layers::projection_tensor(v, *kind))
                            .collect(),
                    );
                }
            }
        }
        let scores = scores.ok_or_else(|| {
            Error::InvalidArgument("network must end with a projection layer".into())
        })?;
        Ok(BatchTrace { caches, scores })
    }

    /// Batched backward pass; weight gradients come back summed over the
    /// batch in `param_tensors` order.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        score_deltas: &[Vec<f64>],
    ) -> Result<Vec<ComplexTensor>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::InvalidArgument(
                "forward trace does not match network depth (was it cached?)".into(),
            ));
        }
        let n = score_deltas.len();
        let mut conv_grads_rev: Vec<(ComplexTensor, ComplexTensor)> = Vec::new();
        let mut deltas: Option<Vec<ComplexTensor>> = None;
        for (index, (layer, cache)) in self.layers.iter().zip(&trace.caches).enumerate().rev() {
            match (layer, cache) {
                (Layer::Projection(kind), BatchCache::Projection(zs)) => {
                    if zs.len() != n {
                        return Err(Error::InvalidArgument(format!(
                            "{} score deltas for a batch of {}",
                            n,
                            zs.len()
                        )));
                    }
                    deltas = Some(
                        zs.iter()
                            .zip(score_deltas)
                            .map(|(z, d)| projection_backward(d, z, *kind))
                            .collect::<Result<_>>()?,
                    );
                }
                (Layer::Pool(_), BatchCache::Pool { argmax, input_shape }) => {
                    let ds = deltas.take().ok_or_else(missing_delta)?;
                    deltas = Some(
                        ds.iter()
                            .zip(argmax)
                            .map(|(d, map)| pool_backward(d, map, input_shape))
                            .collect::<Result<_>>()?,
                    );
                }
                (Layer::Pool(spec), BatchCache::SoftPool(inputs)) => {
                    let ds = deltas.take().ok_or_else(missing_delta)?;
                    deltas = Some(
                        inputs
                            .iter()
                            .zip(&ds)
                            .map(|(input, d)| softmax_pool_backward_tensor(input, spec, d))
                            .collect::<Result<_>>()?,
                    );
                }
                (Layer::SectorRelu(p), BatchCache::Relu(zs)) => {
                    let ds = deltas.take().ok_or_else(missing_delta)?;
                    deltas = Some(
                        ds.iter()
                            .zip(zs)
                            .map(|(d, z)| sector_relu_backward(d, z, p))
                            .collect::<Result<_>>()?,
                    );
                }
                (Layer::Conv(w), BatchCache::Conv(cache)) => {
                    let ds = deltas.take().ok_or_else(missing_delta)?;
                    let refs: Vec<&ComplexTensor> = ds.iter().collect();
                    // The first layer's input delta has no consumer.
                    if index == 0 {
                        let grads = conv_backward_batch_weights_only(&refs, w, cache)?;
                        conv_grads_rev.push((grads.kernels, grads.biases));
                        deltas = None;
                    } else {
                        let (din, grads) = conv_backward_batch(&refs, w, cache)?;
                        conv_grads_rev.push((grads.kernels, grads.biases));
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
        let mut out = Vec::with_capacity(conv_grads_rev.len() * 2);
        for (kernels, biases) in conv_grads_rev.into_iter().rev() {
            out.push(kernels);
            out.push(biases);
        }
        Ok(out)
    }

    /// Scores for a batch of inputs, as the classes x batch matrix the loss
    /// module consumes. Large batches are processed in chunks.
    pub fn score_batch(&self, inputs: &[&ComplexTensor]) -> Result<(usize, Vec<f64>)> {
        let classes = self.spec.score_count()?;
        let n = inputs.len();
        let mut scores = vec![0.0; classes * n];
        for (chunk_index, chunk) in inputs.chunks(EVAL_CHUNK).enumerate() {
            let trace = self.forward_batch(chunk, false)?;
            for (j, item_scores) in trace.scores.iter().enumerate() {
                let item = chunk_index * EVAL_CHUNK + j;
                for (c, v) in item_scores.iter().enumerate() {
                    scores[c * n + item] = *v;
                }
            }
        }
        Ok((classes, scores))
    }

    /// Mean logistic loss over a labeled batch and the gradients of every
    /// parameter, summed over the batch in a fixed order.
    pub fn loss_and_gradients(
        &self,
        inputs: &[&ComplexTensor],
        labels: &[usize],
    ) -> Result<(f64, Vec<ComplexTensor>)> {
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

/// Chunk size for batched evaluation passes, bounding the stacked patch
/// matrices' memory.
const EVAL_CHUNK: usize = 250;

/// Per-layer caches of a batched forward pass.
pub enum BatchCache {
    Conv(BatchConvCache),
    Relu(Vec<ComplexTensor>),
    Pool {
        argmax: Vec<Vec<usize>>,
        input_shape: Vec<usize>,
    },
    SoftPool(Vec<ComplexTensor>),
    Projection(Vec<ComplexTensor>),
}

pub struct BatchTrace {
    pub caches: Vec<BatchCache>,
    /// Per-item score vectors.
    pub scores: Vec<Vec<f64>>,
}

fn missing_delta() -> Error {
    Error::InvalidArgument("backward reached a layer with no incoming delta".into())
}

fn param_count_err() -> Error {
    Error::InvalidArgument("parameter list does not match network layout".into())
}

/// Backward of a softmax pooling layer over sliding windows: recompute
/// window membership from the spec and route the analytic per-window
/// deltas, summing where windows overlap.
fn softmax_pool_backward_tensor(
    input: &ComplexTensor,
    spec: &PoolSpec,
    delta_out: &ComplexTensor,
) -> Result<ComplexTensor> {
    let (alpha, dual) = match spec.kind {
        PoolKind::Softmax(a) => (a, false),
        PoolKind::DualSoftmax(a) => (a, true),
        _ => unreachable!("soft pool cache with non-softmax kind"),
    };
    let mut delta_in = ComplexTensor::zeros(input.shape());
    let windows = slide_windows_of(input.shape(), spec.window, spec.stride)?;
    if windows.len() != delta_out.len() {
        return Err(Error::Format {
            what: "softmax pool cache",
            detail: format!(
                "{} windows for {} output cells",
                windows.len(),
                delta_out.len()
            ),
        });
    }
    let data = input.data();
    let mut values: Vec<Complex> = Vec::new();
    for (cell, member_indices) in windows.iter().enumerate() {
        values.clear();
        values.extend(member_indices.iter().map(|&i| data[i]));
        let d = delta_out.data()[cell];
        let deltas = if dual {
            dual_softmax_pool_backward(d, &values, alpha)?
        } else {
            softmax_pool_backward(d, &values, alpha)?
        };
        let out = delta_in.data_mut();
        for (&idx, dv) in member_indices.iter().zip(deltas) {
            out[idx] += dv;
        }
    }
    Ok(delta_in)
}
