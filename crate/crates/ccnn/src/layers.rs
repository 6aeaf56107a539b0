//! Forward passes of the complex layer types: affine, convolution (as
//! reorganize / affine / reorganize), sector ReLU, magnitude and softmax
//! pooling, and the projection to real scores.

use crate::complex::{Complex, ZERO};
use crate::error::{Error, Result};
use crate::tensor::{
    dot, im2col, patch_geometry, slide_count, ComplexTensor, PatchGeometry, PatchMatrix,
};

/// Weights of a complex affine layer: out = W z + w_hat * 1^T.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineWeights {
    /// out_dim x in_dim.
    pub weight: ComplexTensor,
    /// Bias column, length out_dim.
    pub bias: ComplexTensor,
}

impl AffineWeights {
    pub fn new(weight: ComplexTensor, bias: ComplexTensor) -> Result<Self> {
        if weight.ndim() != 2 || bias.ndim() != 1 || bias.shape()[0] != weight.shape()[0] {
            return Err(Error::shape(
                &[weight.shape()[0]],
                bias.shape(),
                "affine bias",
            ));
        }
        Ok(AffineWeights { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Weights of a complex convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// (out_channels, in_channels, kh, kw).
    pub kernels: ComplexTensor,
    /// One complex bias per kernel, length out_channels.
    pub biases: ComplexTensor,
    pub stride: usize,
}

impl ConvWeights {
    pub fn new(kernels: ComplexTensor, biases: ComplexTensor, stride: usize) -> Result<Self> {
        if kernels.ndim() != 4 {
            return Err(Error::InvalidArgument(format!(
                "conv kernels must be (out, in, kh, kw), got {:?}",
                kernels.shape()
            )));
        }
        if biases.ndim() != 1 || biases.shape()[0] != kernels.shape()[0] {
            return Err(Error::shape(
                &[kernels.shape()[0]],
                biases.shape(),
                "conv biases",
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        Ok(ConvWeights {
            kernels,
            biases,
            stride,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    /// One kernel as an (in_channels, kh, kw) tensor.
    pub fn kernel(&self, k: usize) -> ComplexTensor {
        let (_, ic, kh, kw) = (
            self.kernels.shape()[0],
            self.kernels.shape()[1],
            self.kernels.shape()[2],
            self.kernels.shape()[3],
        );
        let per = ic * kh * kw;
        let data = self.kernels.data()[k * per..(k + 1) * per].to_vec();
        ComplexTensor::from_vec(&[ic, kh, kw], data).unwrap()
    }

    /// Kernels flattened to the (out_channels, in*kh*kw) matrix used by the
    /// affine view of convolution.
    pub fn as_affine(&self) -> AffineWeights {
        let oc = self.out_channels();
        let per = self.kernels.len() / oc;
        let weight = self
            .kernels
            .clone()
            .reshape(&[oc, per])
            .expect("kernel reshape is size-preserving");
        AffineWeights {
            weight,
            bias: self.biases.clone(),
        }
    }
}

/// Sector of the complex plane passed by the sector ReLU. The sector always
/// contains the positive real ray: theta1 <= 0 <= theta2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorParams {
    pub theta1: f64,
    pub theta2: f64,
}

impl SectorParams {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !(-std::f64::consts::PI < theta1 && theta1 <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta1 must lie in (-pi, 0], got {theta1}"
            )));
        }
        if !(0.0..std::f64::consts::PI).contains(&theta2) {
            return Err(Error::InvalidArgument(format!(
                "theta2 must lie in [0, pi), got {theta2}"
            )));
        }
        Ok(SectorParams { theta1, theta2 })
    }

    /// The first-quadrant default: pass z when Re(z) >= 0 and Im(z) >= 0.
    pub fn first_quadrant() -> Self {
        SectorParams {
            theta1: 0.0,
            theta2: std::f64::consts::FRAC_PI_2,
        }
    }

    /// Inclusive sector membership test; arg(0) = 0 always passes since
    /// theta1 <= 0 <= theta2. The default first-quadrant sector is exactly
    /// the sign test Re(z) >= 0 and Im(z) >= 0.
    pub fn passes(&self, z: Complex) -> bool {
        if self.theta1 == 0.0 && self.theta2 == std::f64::consts::FRAC_PI_2 {
            return z.re >= 0.0 && z.im >= 0.0;
        }
        let a = z.arg();
        self.theta1 <= a && a <= self.theta2
    }
}

/// Pooling flavor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolKind {
    MaxMagnitude,
    Softmax(f64),
    DualSoftmax(f64),
    /// Max-by-magnitude over the entire spatial extent, per channel.
    GlobalMaxMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: usize,
    pub kind: PoolKind,
}

impl PoolSpec {
    pub fn max_magnitude(window: (usize, usize), stride: usize) -> Self {
        PoolSpec {
            window,
            stride,
            kind: PoolKind::MaxMagnitude,
        }
    }

    pub fn global() -> Self {
        PoolSpec {
            window: (0, 0),
            stride: 1,
            kind: PoolKind::GlobalMaxMagnitude,
        }
    }
}

/// Projection from complex activations to real scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Magnitude,
    SquaredMagnitude,
}

// ---- forward passes ----------------------------------------------------

/// W z + w_hat * 1^T: the bias column is added to every column of the
/// product.
pub fn affine_forward(z: &ComplexTensor, w: &AffineWeights) -> Result<ComplexTensor> {
    if z.ndim() != 2 || z.shape()[0] != w.in_dim() {
        return Err(Error::shape(&[w.in_dim(), 0], z.shape(), "affine input"));
    }
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

/// Valid (no padding) complex convolution, computed literally as
/// im2col -> affine -> reshape. Returns the output tensor and the patch
/// matrix cache for the backward pass.
pub fn conv_forward_cached(
    input: &ComplexTensor,
    w: &ConvWeights,
) -> Result<(ComplexTensor, PatchMatrix)> {
    if input.ndim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "conv input must be (channels, h, w), got {:?}",
            input.shape()
        )));
    }
    if input.shape()[0] != w.in_channels() {
        return Err(Error::shape(
            &[w.in_channels()],
            &[input.shape()[0]],
            "conv input channels",
        ));
    }
    let (kh, kw) = w.kernel_size();
    let patches = im2col(input, (kh, kw), w.stride)?;
    let affine = w.as_affine();
    let out_mat = affine_forward(&patches.matrix, &affine)?;
    let out = out_mat.reshape(&[w.out_channels(), patches.out_rows, patches.out_cols])?;
    Ok((out, patches))
}

pub fn conv_forward(input: &ComplexTensor, w: &ConvWeights) -> Result<ComplexTensor> {
    Ok(conv_forward_cached(input, w)?.0)
}

/// Patch matrices of a whole batch stacked column-wise (item-major blocks)
/// over one shared index map. One matrix product then convolves every
/// item at once.
pub struct BatchConvCache {
    pub geometry: PatchGeometry,
    /// patch_len x (items * windows).
    pub stacked: ComplexTensor,
    pub items: usize,
}

pub fn conv_forward_batch(
    inputs: &[&ComplexTensor],
    w: &ConvWeights,
) -> Result<(Vec<ComplexTensor>, BatchConvCache)> {
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
    let geometry = patch_geometry(first.shape(), w.kernel_size(), w.stride)?;
    let items = inputs.len();
    let windows = geometry.windows();
    let total_cols = items * windows;
    let mut stacked = ComplexTensor::zeros(&[geometry.patch_len, total_cols]);
    {
        let out = stacked.data_mut();
        for (i, input) in inputs.iter().enumerate() {
            if input.shape() != geometry.input_shape {
                return Err(Error::shape(&geometry.input_shape, input.shape(), "conv batch"));
            }
            let data = input.data();
            for row in 0..geometry.patch_len {
                let src_row = &geometry.source_index[row * windows..(row + 1) * windows];
                let dst = &mut out[row * total_cols + i * windows..row * total_cols + (i + 1) * windows];
                for (d, &src) in dst.iter_mut().zip(src_row) {
                    *d = data[src];
                }
            }
        }
    }
    let out_all = affine_forward(&stacked, &w.as_affine())?;
    let oc = w.out_channels();
    let mut outputs = Vec::with_capacity(items);
    for i in 0..items {
        let mut item = ComplexTensor::zeros(&[oc, geometry.out_rows, geometry.out_cols]);
        let dst = item.data_mut();
        for k in 0..oc {
            let src = &out_all.data()[k * total_cols + i * windows..k * total_cols + (i + 1) * windows];
            dst[k * windows..(k + 1) * windows].copy_from_slice(src);
        }
        outputs.push(item);
    }
    Ok((
        outputs,
        BatchConvCache {
            geometry,
            stacked,
            items,
        },
    ))
}

/// Pass z when arg(z) lies in the closed sector, zero otherwise.
pub fn sector_relu(z: Complex, p: &SectorParams) -> Complex {
    if p.passes(z) {
        z
    } else {
        ZERO
    }
}

pub fn sector_relu_tensor(input: &ComplexTensor, p: &SectorParams) -> ComplexTensor {
    input.map(|z| sector_relu(z, p))
}

/// Result of a magnitude pooling pass: pooled values plus the flat input
/// index of each window's winner, for delta routing.
#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub output: ComplexTensor,
    /// Winner's flat index into the input tensor, one per output cell in
    /// row-major output order.
    pub argmax: Vec<usize>,
    pub input_shape: Vec<usize>,
}

/// Max-by-magnitude pooling. Ties break to the earliest index in row-major
/// scan order. `GlobalMaxMagnitude` pools the whole spatial extent of each
/// channel into one value.
pub fn max_by_magnitude_pool(input: &ComplexTensor, spec: &PoolSpec) -> Result<PoolOutput> {
    if input.ndim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "pooling input must be (channels, h, w), got {:?}",
            input.shape()
        )));
    }
    let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww, stride) = match spec.kind {
        PoolKind::MaxMagnitude => (spec.window.0, spec.window.1, spec.stride),
        PoolKind::GlobalMaxMagnitude => (h, w, 1),
        _ => {
            return Err(Error::InvalidArgument(
                "max_by_magnitude_pool handles magnitude kinds only".into(),
            ))
        }
    };
    if wh == 0 || ww == 0 || wh > h || ww > w || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool window {wh}x{ww} stride {stride} does not fit a {h}x{w} input"
        )));
    }
    let oh = slide_count(h, wh, stride);
    let ow = slide_count(w, ww, stride);
    let mut output = ComplexTensor::zeros(&[ch, oh, ow]);
    let mut argmax = Vec::with_capacity(ch * oh * ow);
    let data = input.data();

    for c in 0..ch {
        for orow in 0..oh {
            for ocol in 0..ow {
                let (r0, c0) = (orow * stride, ocol * stride);
                let mut best_idx = (c * h + r0) * w + c0;
                let mut best_mag = data[best_idx].magnitude_sq();
                for dr in 0..wh {
                    for dc in 0..ww {
                        let idx = (c * h + r0 + dr) * w + c0 + dc;
                        let mag = data[idx].magnitude_sq();
                        if mag > best_mag {
                            best_mag = mag;
                            best_idx = idx;
                        }
                    }
                }
                output.set(&[c, orow, ocol], data[best_idx]);
                argmax.push(best_idx);
            }
        }
    }

    Ok(PoolOutput {
        output,
        argmax,
        input_shape: input.shape().to_vec(),
    })
}

/// Stabilization shift for softmax exponents: a real constant that cancels
/// exactly in the quotient. Chosen so every exponent alpha*(Re z - c) is
/// non-positive regardless of the sign of alpha.
fn softmax_shift(values: &[Complex], alpha: f64) -> f64 {
    let mut it = values.iter().map(|z| z.re);
    let first = it.next().unwrap_or(0.0);
    if alpha >= 0.0 {
        it.fold(first, f64::max)
    } else {
        it.fold(first, f64::min)
    }
}

/// Normalized weights p_i = e^{alpha z_i} / sum_j e^{alpha z_j}, computed
/// with the stabilization shift.
pub(crate) fn softmax_weights(values: &[Complex], alpha: f64) -> Vec<Complex> {
    let c = softmax_shift(values, alpha);
    let exps: Vec<Complex> = values
        .iter()
        .map(|&z| Complex::new(alpha * (z.re - c), alpha * z.im).exp())
        .collect();
    let denom: Complex = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Softmax pooling: sum_i z_i e^{alpha z_i} / sum_j e^{alpha z_j}.
pub fn softmax_pool(values: &[Complex], alpha: f64) -> Result<Complex> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("softmax over empty window".into()));
    }
    if !alpha.is_finite() {
        return Err(Error::InvalidArgument("softmax alpha must be finite".into()));
    }
    let weights = softmax_weights(values, alpha);
    Ok(values
        .iter()
        .zip(&weights)
        .map(|(&z, &p)| z * p)
        .sum())
}

/// The transform z -> i * conj(z); an involution that swaps the real and
/// imaginary parts.
pub(crate) fn dual_transform(z: Complex) -> Complex {
    Complex::new(z.im, z.re)
}

/// Dual softmax pooling: softmax over the transformed values i*conj(z_i),
/// back-transformed so the operator selects by imaginary part and its
/// alpha -> 0 limit is the plain mean of the original values.
pub fn dual_softmax_pool(values: &[Complex], alpha: f64) -> Result<Complex> {
    let transformed: Vec<Complex> = values.iter().map(|&z| dual_transform(z)).collect();
    let pooled = softmax_pool(&transformed, alpha)?;
    Ok(dual_transform(pooled))
}

/// Pointwise projection to a real scalar.
pub fn projection(z: Complex, kind: ProjectionKind) -> f64 {
    match kind {
        ProjectionKind::Magnitude => z.magnitude(),
        ProjectionKind::SquaredMagnitude => z.magnitude_sq(),
    }
}

pub fn projection_tensor(input: &ComplexTensor, kind: ProjectionKind) -> Vec<f64> {
    input.data().iter().map(|&z| projection(z, kind)).collect()
}

/// Flat member indices of every sliding window over a (channels, h, w)
/// shape, one entry per output cell in row-major (channel, row, col) order.
pub fn slide_windows_of(
    shape: &[usize],
    window: (usize, usize),
    stride: usize,
) -> Result<Vec<Vec<usize>>> {
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || wh > h || ww > w || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "pool window {wh}x{ww} stride {stride} does not fit a {h}x{w} input"
        )));
    }
    let oh = slide_count(h, wh, stride);
    let ow = slide_count(w, ww, stride);
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        for orow in 0..oh {
            for ocol in 0..ow {
                let (r0, c0) = (orow * stride, ocol * stride);
                let mut members = Vec::with_capacity(wh * ww);
                for dr in 0..wh {
                    for dc in 0..ww {
                        members.push((c * h + r0 + dr) * w + c0 + dc);
                    }
                }
                out.push(members);
            }
        }
    }
    Ok(out)
}

/// Per-channel softmax pooling over sliding windows, returning the output
/// tensor. The backward pass recomputes window membership from the spec.
pub fn softmax_pool_tensor(input: &ComplexTensor, spec: &PoolSpec) -> Result<ComplexTensor> {
    let (alpha, dual) = match spec.kind {
        PoolKind::Softmax(a) => (a, false),
        PoolKind::DualSoftmax(a) => (a, true),
        _ => {
            return Err(Error::InvalidArgument(
                "softmax_pool_tensor handles softmax kinds only".into(),
            ))
        }
    };
    let windows = slide_windows_of(input.shape(), spec.window, spec.stride)?;
    let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww) = spec.window;
    let oh = slide_count(h, wh, spec.stride);
    let ow = slide_count(w, ww, spec.stride);
    debug_assert_eq!(windows.len(), ch * oh * ow);
    let data = input.data();
    let mut out_data = Vec::with_capacity(windows.len());
    let mut window_vals: Vec<Complex> = Vec::with_capacity(wh * ww);
    for members in &windows {
        window_vals.clear();
        window_vals.extend(members.iter().map(|&i| data[i]));
        let pooled = if dual {
            dual_softmax_pool(&window_vals, alpha)?
        } else {
            softmax_pool(&window_vals, alpha)?
        };
        out_data.push(pooled);
    }
    ComplexTensor::from_vec(&[ch, oh, ow], out_data)
}

/// Direct sliding-window convolution, kept as an independent reference path
/// for the im2col-based implementation.
pub fn conv_forward_direct(input: &ComplexTensor, w: &ConvWeights) -> Result<ComplexTensor> {
    let (ch, h, wid) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if ch != w.in_channels() {
        return Err(Error::shape(
            &[w.in_channels()],
            &[ch],
            "conv input channels",
        ));
    }
    let (kh, kw) = w.kernel_size();
    let oh = slide_count(h, kh, w.stride);
    let ow = slide_count(wid, kw, w.stride);
    let mut out = ComplexTensor::zeros(&[w.out_channels(), oh, ow]);
    for k in 0..w.out_channels() {
        let kernel = w.kernel(k);
        let bias = w.biases.data()[k];
        for orow in 0..oh {
            for ocol in 0..ow {
                let (r0, c0) = (orow * w.stride, ocol * w.stride);
                let mut patch = ComplexTensor::zeros(&[ch, kh, kw]);
                for c in 0..ch {
                    for dr in 0..kh {
                        for dc in 0..kw {
                            patch.set(&[c, dr, dc], input.at(&[c, r0 + dr, c0 + dc]));
                        }
                    }
                }
                out.set(&[k, orow, ocol], dot(&patch, &kernel)? + bias);
            }
        }
    }
    Ok(out)
}
