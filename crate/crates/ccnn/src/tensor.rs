//! Dense complex tensors and the patch reorganization used by convolution.
//!
//! Storage is flat row-major over the shape extents, with explicit
//! (channel, row, col) ordering for three-dimensional values. The dot
//! product is bilinear (no conjugation): `dot(Z, W) = sum_ij Z_ij * W_ij`.

use crate::complex::{Complex, ZERO};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<Complex>,
}

impl ComplexTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape_len(shape);
        ComplexTensor {
            shape: shape.to_vec(),
            data: vec![ZERO; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<Complex>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be >= 1, got {shape:?}"
            )));
        }
        if shape_len(shape) != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} needs {} elements, got {}",
                shape_len(shape),
                data.len()
            )));
        }
        Ok(ComplexTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 2-D tensor from nested rows; rows must be equally long.
    pub fn matrix(rows: &[Vec<Complex>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument(
                "matrix rows must be non-empty and equally long".into(),
            ));
        }
        Ok(ComplexTensor {
            shape: vec![r, c],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex> {
        self.data
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape_len(shape) != self.data.len() {
            return Err(Error::shape(shape, &self.shape, "reshape"));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> Complex {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: Complex) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, &ix) in index.iter().enumerate() {
            debug_assert!(ix < self.shape[i]);
            flat = flat * self.shape[i] + ix;
        }
        flat
    }

    pub fn map(&self, f: impl Fn(Complex) -> Complex) -> Self {
        ComplexTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        self.map(Complex::conj)
    }

    /// Frobenius norm, sqrt of the summed squared magnitudes.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.magnitude_sq()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|z| z.scale(s))
    }

    /// self += s * other, elementwise. Shapes must match.
    pub fn axpy(&mut self, s: f64, other: &ComplexTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape, "axpy"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b.scale(s);
        }
        Ok(())
    }

    pub fn add(&self, other: &ComplexTensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    // ---- 2-D helpers --------------------------------------------------

    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() needs a 2-D tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() needs a 2-D tensor");
        self.shape[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> Complex {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, value: Complex) {
        let w = self.shape[1];
        self.data[r * w + c] = value;
    }

    /// Matrix product of two 2-D tensors. For a left operand with several
    /// rows the right operand is split into real and imaginary planes so
    /// the inner loop runs over contiguous f64 streams; for very wide-flat
    /// products the split cost outweighs the gain and a row-blocked pass
    /// over the interleaved data wins.
    pub fn matmul(&self, rhs: &ComplexTensor) -> Result<ComplexTensor> {
        if self.ndim() != 2 || rhs.ndim() != 2 {
            return Err(Error::InvalidArgument("matmul needs 2-D tensors".into()));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::shape(&[k, n], &[k2, n], "matmul inner dimension"));
        }
        // The split path pays for its extra passes over rhs only when the
        // inner dimension is deep and there are enough output rows.
        if m >= 5 && k >= 8 {
            return self.matmul_split(rhs, m, k, n);
        }
        // Interleaved path, tiled over output columns so the working set
        // per tile stays cache-resident.
        let mut out = vec![ZERO; m * n];
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + MATMUL_TILE).min(n);
            let mut i0 = 0;
            while i0 < m {
                let i1 = (i0 + 4).min(m);
                for kk in 0..k {
                    let rhs_row = &rhs.data[kk * n + j0..kk * n + j1];
                    for i in i0..i1 {
                        let a = self.data[i * k + kk];
                        if a.re == 0.0 && a.im == 0.0 {
                            continue;
                        }
                        let out_row = &mut out[i * n + j0..i * n + j1];
                        for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                            *o += a * b;
                        }
                    }
                }
                i0 = i1;
            }
            j0 = j1;
        }
        Ok(ComplexTensor {
            shape: vec![m, n],
            data: out,
        })
    }

    fn matmul_split(
        &self,
        rhs: &ComplexTensor,
        m: usize,
        k: usize,
        n: usize,
    ) -> Result<ComplexTensor> {
        with_scratch(|scratch| {
            let (b_re, b_im) = scratch.split(&rhs.data);
            let mut o_re = vec![0.0f64; m * n];
            let mut o_im = vec![0.0f64; m * n];
            let mut j0 = 0;
            while j0 < n {
                let j1 = (j0 + MATMUL_TILE).min(n);
                for i in 0..m {
                    let or = &mut o_re[i * n + j0..i * n + j1];
                    let oi = &mut o_im[i * n + j0..i * n + j1];
                    for kk in 0..k {
                        let a = self.data[i * k + kk];
                        if a.re == 0.0 && a.im == 0.0 {
                            continue;
                        }
                        let br = &b_re[kk * n + j0..kk * n + j1];
                        let bi = &b_im[kk * n + j0..kk * n + j1];
                        for j in 0..j1 - j0 {
                            or[j] += a.re * br[j] - a.im * bi[j];
                            oi[j] += a.re * bi[j] + a.im * br[j];
                        }
                    }
                }
                j0 = j1;
            }
            let data = o_re
                .into_iter()
                .zip(o_im)
                .map(|(re, im)| Complex::new(re, im))
                .collect();
            Ok(ComplexTensor {
                shape: vec![m, n],
                data,
            })
        })
    }

    /// `self * rhs^H` without materializing the transpose: both operands
    /// stream row-contiguously over split planes.
    /// Shapes (m, k) x (n, k) -> (m, n).
    pub fn matmul_hermitian_rhs(&self, rhs: &ComplexTensor) -> Result<ComplexTensor> {
        if self.ndim() != 2 || rhs.ndim() != 2 {
            return Err(Error::InvalidArgument(
                "matmul_hermitian_rhs needs 2-D tensors".into(),
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (n, k2) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::shape(&[n, k], &[n, k2], "matmul inner dimension"));
        }
        with_scratch(|scratch| {
            let ((a_re, a_im), (b_re, b_im)) = scratch.split_pair(&self.data, &rhs.data);
            let mut out = vec![ZERO; m * n];
            // j outer: each (large) rhs row streams exactly once while the
            // m lhs rows stay cache-resident.
            for j in 0..n {
                let br = &b_re[j * k..(j + 1) * k];
                let bi = &b_im[j * k..(j + 1) * k];
                for i in 0..m {
                    let ar = &a_re[i * k..(i + 1) * k];
                    let ai = &a_im[i * k..(i + 1) * k];
                    let mut re = 0.0;
                    let mut im = 0.0;
                    // a * conj(b), accumulated over the row.
                    for t in 0..k {
                        re += ar[t] * br[t] + ai[t] * bi[t];
                        im += ai[t] * br[t] - ar[t] * bi[t];
                    }
                    out[i * n + j] = Complex::new(re, im);
                }
            }
            Ok(ComplexTensor {
                shape: vec![m, n],
                data: out,
            })
        })
    }

    /// Sum over each row of a 2-D tensor, as a column of length `rows`.
    pub fn row_sums(&self) -> ComplexTensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![ZERO; m];
        for (i, acc) in out.iter_mut().enumerate() {
            for j in 0..n {
                *acc += self.data[i * n + j];
            }
        }
        ComplexTensor {
            shape: vec![m],
            data: out,
        }
    }
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Column-tile width of the matrix kernels; sized so a tile of rhs rows,
/// output rows, and split planes stays within L2.
const MATMUL_TILE: usize = 1024;

/// A tensor's real and imaginary planes, borrowed from scratch storage.
type Planes<'a> = (&'a [f64], &'a [f64]);

/// Grow-only scratch planes for split-form matrix kernels, reused across
/// calls so the hot loops never reallocate.
struct Scratch {
    re: Vec<f64>,
    im: Vec<f64>,
    re2: Vec<f64>,
    im2: Vec<f64>,
}

fn fill_split(re: &mut Vec<f64>, im: &mut Vec<f64>, data: &[Complex]) {
    re.clear();
    im.clear();
    re.reserve(data.len());
    im.reserve(data.len());
    for z in data {
        re.push(z.re);
        im.push(z.im);
    }
}

impl Scratch {
    fn split(&mut self, data: &[Complex]) -> (&[f64], &[f64]) {
        fill_split(&mut self.re, &mut self.im, data);
        (&self.re, &self.im)
    }

    fn split_pair<'a>(&'a mut self, a: &[Complex], b: &[Complex]) -> (Planes<'a>, Planes<'a>) {
        fill_split(&mut self.re, &mut self.im, a);
        fill_split(&mut self.re2, &mut self.im2, b);
        ((&self.re, &self.im), (&self.re2, &self.im2))
    }
}

fn with_scratch<T>(f: impl FnOnce(&mut Scratch) -> T) -> T {
    thread_local! {
        static SCRATCH: std::cell::RefCell<Scratch> = const {
            std::cell::RefCell::new(Scratch {
                re: Vec::new(),
                im: Vec::new(),
                re2: Vec::new(),
                im2: Vec::new(),
            })
        };
    }
    SCRATCH.with(|s| f(&mut s.borrow_mut()))
}

/// Bilinear dot product `sum_ij Z_ij * W_ij`, with no conjugation.
pub fn dot(z: &ComplexTensor, w: &ComplexTensor) -> Result<Complex> {
    if z.shape() != w.shape() {
        return Err(Error::shape(z.shape(), w.shape(), "dot"));
    }
    let mut acc = ZERO;
    for (&a, &b) in z.data().iter().zip(w.data()) {
        acc += a * b;
    }
    Ok(acc)
}

/// Hermitian conjugate of a 2-D tensor: out[i, j] = conj(in[j, i]).
pub fn hermitian(w: &ComplexTensor) -> Result<ComplexTensor> {
    if w.ndim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "hermitian needs a 2-D tensor, got shape {:?}",
            w.shape()
        )));
    }
    let (m, n) = (w.rows(), w.cols());
    let mut out = ComplexTensor::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.set2(j, i, w.at2(i, j).conj());
        }
    }
    Ok(out)
}

/// Sliding-window reorganization of a (channels, h, w) tensor into a matrix
/// whose columns are flattened windows, plus the map from matrix cells back
/// to source indices (needed to route deltas back).
#[derive(Debug, Clone)]
pub struct PatchMatrix {
    /// (channels * wh * ww) x windows.
    pub matrix: ComplexTensor,
    /// Flat source index per matrix cell, in the matrix's row-major order.
    pub source_index: Vec<usize>,
    /// Shape of the tensor the patches came from.
    pub input_shape: Vec<usize>,
    /// Sliding-window grid: (rows of windows, cols of windows).
    pub out_rows: usize,
    pub out_cols: usize,
}

/// Number of valid sliding positions along one axis.
pub fn slide_count(extent: usize, window: usize, stride: usize) -> usize {
    (extent - window) / stride + 1
}

/// The index map of a sliding-window reorganization over one input shape:
/// identical for every tensor of that shape, so batched convolution
/// computes it once and shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGeometry {
    /// Flat source index per matrix cell, row-major over
    /// (patch_len, windows).
    pub source_index: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub patch_len: usize,
    pub out_rows: usize,
    pub out_cols: usize,
}

impl PatchGeometry {
    pub fn windows(&self) -> usize {
        self.out_rows * self.out_cols
    }
}

pub fn patch_geometry(
    shape: &[usize],
    window: (usize, usize),
    stride: usize,
) -> Result<PatchGeometry> {
    if shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "im2col needs a (channels, h, w) tensor, got shape {shape:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || wh > h || ww > w {
        return Err(Error::InvalidArgument(format!(
            "window {wh}x{ww} does not fit a {h}x{w} input"
        )));
    }
    let out_rows = slide_count(h, wh, stride);
    let out_cols = slide_count(w, ww, stride);
    let windows = out_rows * out_cols;
    let patch_len = ch * wh * ww;
    let mut source_index = vec![0usize; patch_len * windows];
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let col = orow * out_cols + ocol;
            let (r0, c0) = (orow * stride, ocol * stride);
            let mut row = 0;
            for c in 0..ch {
                for dr in 0..wh {
                    for dc in 0..ww {
                        source_index[row * windows + col] = (c * h + r0 + dr) * w + c0 + dc;
                        row += 1;
                    }
                }
            }
        }
    }
    Ok(PatchGeometry {
        source_index,
        input_shape: shape.to_vec(),
        patch_len,
        out_rows,
        out_cols,
    })
}

pub fn im2col(input: &ComplexTensor, window: (usize, usize), stride: usize) -> Result<PatchMatrix> {
    let geometry = patch_geometry(input.shape(), window, stride)?;
    let windows = geometry.windows();
    let mut matrix = ComplexTensor::zeros(&[geometry.patch_len, windows]);
    let data = input.data();
    for (cell, &src) in geometry.source_index.iter().enumerate() {
        matrix.data_mut()[cell] = data[src];
    }
    Ok(PatchMatrix {
        matrix,
        source_index: geometry.source_index,
        input_shape: geometry.input_shape,
        out_rows: geometry.out_rows,
        out_cols: geometry.out_cols,
    })
}

/// Adjoint of im2col: each source index receives the sum of every matrix
/// cell mapped to it; untouched indices stay zero.
pub fn col2im_accumulate(deltas: &PatchMatrix) -> Result<ComplexTensor> {
    let cells = deltas.matrix.len();
    if deltas.source_index.len() != cells {
        return Err(Error::Format {
            what: "patch matrix",
            detail: format!(
                "index map has {} entries for {} cells",
                deltas.source_index.len(),
                cells
            ),
        });
    }
    let mut out = ComplexTensor::zeros(&deltas.input_shape);
    let out_len = out.len();
    let out_data = out.data_mut();
    for (cell, &src) in deltas.source_index.iter().enumerate() {
        if src >= out_len {
            return Err(Error::Format {
                what: "patch matrix",
                detail: format!("source index {src} outside input of {out_len} elements"),
            });
        }
        out_data[src] += deltas.matrix.data()[cell];
    }
    Ok(out)
}

/// Dense real tensor with the same layout conventions as [`ComplexTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        RealTensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} does not fit {} elements",
                data.len()
            )));
        }
        Ok(RealTensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(shape, &self.shape, "reshape"));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, &ix) in index.iter().enumerate() {
            flat = flat * self.shape[i] + ix;
        }
        self.data[flat]
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        let w = self.shape[1];
        self.data[r * w + c] = v;
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn transpose(&self) -> RealTensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = RealTensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.set2(j, i, self.at2(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &RealTensor) -> Result<RealTensor> {
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::shape(&[k, n], &[k2, n], "matmul inner dimension"));
        }
        // Blocked over output rows and tiled over columns so each tile's
        // working set stays cache-resident.
        let mut out = vec![0.0; m * n];
        let mut j0 = 0;
        while j0 < n {
            let j1 = (j0 + MATMUL_TILE).min(n);
            let mut i0 = 0;
            while i0 < m {
                let i1 = (i0 + 4).min(m);
                for kk in 0..k {
                    let rhs_row = &rhs.data[kk * n + j0..kk * n + j1];
                    for i in i0..i1 {
                        let a = self.data[i * k + kk];
                        if a == 0.0 {
                            continue;
                        }
                        let out_row = &mut out[i * n + j0..i * n + j1];
                        for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                            *o += a * b;
                        }
                    }
                }
                i0 = i1;
            }
            j0 = j1;
        }
        Ok(RealTensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn row_sums(&self) -> RealTensor {
        let (m, n) = (self.rows(), self.cols());
        let data = (0..m)
            .map(|i| self.data[i * n..(i + 1) * n].iter().sum())
            .collect();
        RealTensor {
            shape: vec![m],
            data,
        }
    }

    /// `self * rhs^T` without materializing the transpose.
    /// Shapes (m, k) x (n, k) -> (m, n).
    pub fn matmul_transposed_rhs(&self, rhs: &RealTensor) -> Result<RealTensor> {
        let (m, k) = (self.shape[0], self.shape[1]);
        let (n, k2) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::shape(&[n, k], &[n, k2], "matmul inner dimension"));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                out[i * n + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Ok(RealTensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn axpy(&mut self, s: f64, other: &RealTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(&self.shape, &other.shape, "axpy"));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> RealTensor {
        RealTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Real counterpart of [`PatchMatrix`].
#[derive(Debug, Clone)]
pub struct RealPatchMatrix {
    pub matrix: RealTensor,
    pub source_index: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub out_rows: usize,
    pub out_cols: usize,
}

pub fn real_im2col(
    input: &RealTensor,
    window: (usize, usize),
    stride: usize,
) -> Result<RealPatchMatrix> {
    if input.ndim() != 3 {
        return Err(Error::InvalidArgument(format!(
            "im2col needs a (channels, h, w) tensor, got shape {:?}",
            input.shape()
        )));
    }
    let (ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || wh > h || ww > w || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {wh}x{ww} stride {stride} does not fit a {h}x{w} input"
        )));
    }
    let out_rows = slide_count(h, wh, stride);
    let out_cols = slide_count(w, ww, stride);
    let windows = out_rows * out_cols;
    let patch_len = ch * wh * ww;
    let mut matrix = RealTensor::zeros(&[patch_len, windows]);
    let mut source_index = vec![0usize; patch_len * windows];
    for orow in 0..out_rows {
        for ocol in 0..out_cols {
            let col = orow * out_cols + ocol;
            let (r0, c0) = (orow * stride, ocol * stride);
            let mut row = 0;
            for c in 0..ch {
                for dr in 0..wh {
                    for dc in 0..ww {
                        let src = (c * h + r0 + dr) * w + c0 + dc;
                        matrix.set2(row, col, input.data()[src]);
                        source_index[row * windows + col] = src;
                        row += 1;
                    }
                }
            }
        }
    }
    Ok(RealPatchMatrix {
        matrix,
        source_index,
        input_shape: input.shape().to_vec(),
        out_rows,
        out_cols,
    })
}

pub fn real_col2im_accumulate(deltas: &RealPatchMatrix) -> Result<RealTensor> {
    let mut out = RealTensor::zeros(&deltas.input_shape);
    let len = out.len();
    let data = out.data_mut();
    for (cell, &src) in deltas.source_index.iter().enumerate() {
        if src >= len {
            return Err(Error::Format {
                what: "patch matrix",
                detail: format!("source index {src} outside input of {len} elements"),
            });
        }
        data[src] += deltas.matrix.data()[cell];
    }
    Ok(out)
}
