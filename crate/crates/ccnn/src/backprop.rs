//! Reverse-mode gradients for every complex layer type.
//!
//! Deltas follow the convention `d = dl/dX + i dl/dY` for a real loss `l`
//! and layer values `Z = X + iY`; weight gradients are `dl/dA + i dl/dB`
//! for weights `W = A + iB`. For an affine layer the input delta is
//! `W^H d_next` and the weight gradient is `d_next Z^H`; activations go
//! through one general rule of which the holomorphic and projection forms
//! are specializations.

use crate::complex::{Complex, ZERO};
use crate::error::{Error, Result};
use crate::layers::{
    softmax_pool, softmax_weights, AffineWeights, ConvWeights, ProjectionKind, SectorParams,
};
use crate::tensor::{col2im_accumulate, hermitian, ComplexTensor, PatchMatrix};

/// Gradients of one affine layer, shape-matched to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub weight: ComplexTensor,
    pub bias: ComplexTensor,
}

/// Gradients of one convolution layer, shape-matched to its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: ComplexTensor,
    pub biases: ComplexTensor,
}

/// Input delta and weight gradients of an affine layer:
/// `d_in = W^H d_next`, `grad_W = d_next Z^H`, `grad_bias = d_next 1`.
pub fn affine_backward(
    delta_next: &ComplexTensor,
    w: &AffineWeights,
    z: &ComplexTensor,
) -> Result<(ComplexTensor, AffineGrads)> {
    if delta_next.ndim() != 2 || delta_next.shape()[0] != w.out_dim() {
        return Err(Error::shape(
            &[w.out_dim(), 0],
            delta_next.shape(),
            "affine backward delta",
        ));
    }
    if z.ndim() != 2 || z.shape()[0] != w.in_dim() || z.shape()[1] != delta_next.shape()[1] {
        return Err(Error::shape(
            &[w.in_dim(), delta_next.shape()[1]],
            z.shape(),
            "affine backward input",
        ));
    }
    let delta_in = hermitian(&w.weight)?.matmul(delta_next)?;
    let grad_weight = delta_next.matmul_hermitian_rhs(z)?;
    let grad_bias = delta_next.row_sums();
    Ok((
        delta_in,
        AffineGrads {
            weight: grad_weight,
            bias: grad_bias,
        },
    ))
}

/// Partial derivatives of an activation f = u + iv at one point, taken with
/// respect to the real coordinates x and y of its input.
#[derive(Debug, Clone, Copy)]
pub struct ActivationPartials {
    pub du_dx: f64,
    pub du_dy: f64,
    pub dv_dx: f64,
    pub dv_dy: f64,
}

/// The general (non-holomorphic) activation backward rule; the single entry
/// point all pointwise backward passes reduce to:
/// `d = Re(d_next) (u_x + i u_y) + Im(d_next) (v_x + i v_y)`.
pub fn activation_backward(delta_next: Complex, p: ActivationPartials) -> Complex {
    Complex::new(p.du_dx, p.du_dy).scale(delta_next.re)
        + Complex::new(p.dv_dx, p.dv_dy).scale(delta_next.im)
}

/// Holomorphic specialization: with the Cauchy-Riemann equations the
/// general rule collapses to `d = d_next * conj(f'(z))`.
pub fn holomorphic_activation_backward(delta_next: Complex, fprime: Complex) -> Complex {
    activation_backward(
        delta_next,
        ActivationPartials {
            du_dx: fprime.re,
            du_dy: -fprime.im,
            dv_dx: fprime.im,
            dv_dy: fprime.re,
        },
    )
}

/// Projection specialization (v = 0): `d = Re(d_next) (u_x + i u_y)`.
/// For the squared magnitude this is `2 Re(d_next) z`, defined everywhere;
/// the plain magnitude is rejected at z = 0.
pub fn projection_backward_point(
    delta_next_real: f64,
    z: Complex,
    kind: ProjectionKind,
) -> Result<Complex> {
    let partials = match kind {
        ProjectionKind::SquaredMagnitude => ActivationPartials {
            du_dx: 2.0 * z.re,
            du_dy: 2.0 * z.im,
            dv_dx: 0.0,
            dv_dy: 0.0,
        },
        ProjectionKind::Magnitude => {
            let m = z.magnitude();
            if m == 0.0 {
                return Err(Error::NonDifferentiable);
            }
            ActivationPartials {
                du_dx: z.re / m,
                du_dy: z.im / m,
                dv_dx: 0.0,
                dv_dy: 0.0,
            }
        }
    };
    Ok(activation_backward(Complex::real(delta_next_real), partials))
}

pub fn projection_backward(
    delta_next_real: &[f64],
    z_forward: &ComplexTensor,
    kind: ProjectionKind,
) -> Result<ComplexTensor> {
    if delta_next_real.len() != z_forward.len() {
        return Err(Error::shape(
            &[z_forward.len()],
            &[delta_next_real.len()],
            "projection backward delta",
        ));
    }
    let data = z_forward
        .data()
        .iter()
        .zip(delta_next_real)
        .map(|(&z, &d)| projection_backward_point(d, z, kind))
        .collect::<Result<Vec<_>>>()?;
    ComplexTensor::from_vec(z_forward.shape(), data)
}

/// Delta passes where the forward value passed the sector test (derivative
/// 1 on the pass branch, the subgradient choice at boundaries) and is zero
/// elsewhere.
pub fn sector_relu_backward(
    delta_next: &ComplexTensor,
    z_forward: &ComplexTensor,
    p: &SectorParams,
) -> Result<ComplexTensor> {
    if delta_next.shape() != z_forward.shape() {
        return Err(Error::shape(
            z_forward.shape(),
            delta_next.shape(),
            "relu backward delta",
        ));
    }
    let data = z_forward
        .data()
        .iter()
        .zip(delta_next.data())
        .map(|(&z, &d)| {
            if p.passes(z) {
                holomorphic_activation_backward(d, Complex::real(1.0))
            } else {
                ZERO
            }
        })
        .collect();
    ComplexTensor::from_vec(z_forward.shape(), data)
}

/// Route each output delta to its window's winner; winners shared by
/// overlapping windows accumulate.
pub fn pool_backward(
    delta_next: &ComplexTensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<ComplexTensor> {
    if delta_next.len() != argmax.len() {
        return Err(Error::Format {
            what: "pool argmax map",
            detail: format!(
                "{} winners for {} output cells",
                argmax.len(),
                delta_next.len()
            ),
        });
    }
    let mut out = ComplexTensor::zeros(input_shape);
    let len = out.len();
    let data = out.data_mut();
    for (&src, &d) in argmax.iter().zip(delta_next.data()) {
        if src >= len {
            return Err(Error::Format {
                what: "pool argmax map",
                detail: format!("winner index {src} outside input of {len} elements"),
            });
        }
        data[src] += d;
    }
    Ok(out)
}

/// Wirtinger derivative of the softmax quotient with respect to each input.
/// The pooled value s is holomorphic in every z_i with
/// `ds/dz_i = p_i (1 + alpha (z_i - s))`, so each input delta is
/// `d_next * conj(ds/dz_i)`.
pub fn softmax_pool_backward(
    delta_next: Complex,
    values: &[Complex],
    alpha: f64,
) -> Result<Vec<Complex>> {
    let s = softmax_pool(values, alpha)?;
    let weights = softmax_weights(values, alpha);
    Ok(values
        .iter()
        .zip(&weights)
        .map(|(&z, &p)| {
            let ds = p * (Complex::real(1.0) + (z - s).scale(alpha));
            holomorphic_activation_backward(delta_next, ds)
        })
        .collect())
}

/// Backward of the dual operator: the transform z -> i conj(z) swaps real
/// and imaginary parts, and so does its delta rule; the chain is
/// swap -> softmax backward over the transformed values -> swap.
pub fn dual_softmax_pool_backward(
    delta_next: Complex,
    values: &[Complex],
    alpha: f64,
) -> Result<Vec<Complex>> {
    let swap = |z: Complex| Complex::new(z.im, z.re);
    let transformed: Vec<Complex> = values.iter().map(|&z| swap(z)).collect();
    let inner = softmax_pool_backward(swap(delta_next), &transformed, alpha)?;
    Ok(inner.into_iter().map(swap).collect())
}

/// Convolution backward as the composition reshape -> affine backward ->
/// col2im. Kernel and bias gradients come from the affine view over the
/// cached patch matrix; the input delta is the accumulated reorganization
/// adjoint.
pub fn conv_backward(
    delta_next: &ComplexTensor,
    w: &ConvWeights,
    patches: &PatchMatrix,
) -> Result<(ComplexTensor, ConvGrads)> {
    let windows = patches.out_rows * patches.out_cols;
    let expected = [w.out_channels(), patches.out_rows, patches.out_cols];
    if delta_next.shape() != expected {
        return Err(Error::shape(&expected, delta_next.shape(), "conv backward delta"));
    }
    if patches.matrix.rows() != w.in_channels() * w.kernel_size().0 * w.kernel_size().1 {
        return Err(Error::Format {
            what: "conv patch cache",
            detail: format!(
                "patch rows {} do not match kernel size {:?}",
                patches.matrix.rows(),
                w.kernels.shape()
            ),
        });
    }
    let delta_mat = delta_next
        .clone()
        .reshape(&[w.out_channels(), windows])?;
    let affine = w.as_affine();
    let (delta_patches, grads) = affine_backward(&delta_mat, &affine, &patches.matrix)?;
    let delta_input = col2im_accumulate(&PatchMatrix {
        matrix: delta_patches,
        source_index: patches.source_index.clone(),
        input_shape: patches.input_shape.clone(),
        out_rows: patches.out_rows,
        out_cols: patches.out_cols,
    })?;
    let kernel_grads = grads.weight.reshape(w.kernels.shape())?;
    Ok((
        delta_input,
        ConvGrads {
            kernels: kernel_grads,
            biases: grads.bias,
        },
    ))
}

/// Weight and bias gradients of a batched convolution without the input
/// delta; the first layer of a network has no upstream consumer for it.
pub fn conv_backward_batch_weights_only(
    deltas: &[&ComplexTensor],
    w: &ConvWeights,
    cache: &crate::layers::BatchConvCache,
) -> Result<ConvGrads> {
    let delta_all = stack_conv_deltas(deltas, w, cache)?;
    let grad_weight = delta_all.matmul_hermitian_rhs(&cache.stacked)?;
    Ok(ConvGrads {
        kernels: grad_weight.reshape(w.kernels.shape())?,
        biases: delta_all.row_sums(),
    })
}

fn stack_conv_deltas(
    deltas: &[&ComplexTensor],
    w: &ConvWeights,
    cache: &crate::layers::BatchConvCache,
) -> Result<ComplexTensor> {
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
    let mut delta_all = ComplexTensor::zeros(&[oc, total_cols]);
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

/// Batched convolution backward over the stacked patch cache: one affine
/// backward yields the weight gradients already summed over the batch,
/// plus each item's input delta via the shared index map.
pub fn conv_backward_batch(
    deltas: &[&ComplexTensor],
    w: &ConvWeights,
    cache: &crate::layers::BatchConvCache,
) -> Result<(Vec<ComplexTensor>, ConvGrads)> {
    let geometry = &cache.geometry;
    let windows = geometry.windows();
    let items = cache.items;
    let total_cols = items * windows;
    let delta_all = stack_conv_deltas(deltas, w, cache)?;
    let affine = w.as_affine();
    let (delta_patches, grads) = affine_backward(&delta_all, &affine, &cache.stacked)?;

    let mut input_deltas = Vec::with_capacity(items);
    for i in 0..items {
        let mut din = ComplexTensor::zeros(&geometry.input_shape);
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
        ConvGrads {
            kernels: grads.weight.reshape(w.kernels.shape())?,
            biases: grads.bias,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::{Complex, I, ONE};
    use crate::layers::{
        affine_forward, conv_forward_cached, dual_softmax_pool, max_by_magnitude_pool,
        sector_relu_tensor, PoolSpec,
    };
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> ComplexTensor {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|_| c(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
            .collect();
        ComplexTensor::from_vec(shape, data).unwrap()
    }

    /// Central finite differences of a scalar loss with respect to every
    /// real coordinate of a tensor, assembled into the complex convention.
    fn finite_diff(
        tensor: &ComplexTensor,
        step: f64,
        mut loss: impl FnMut(&ComplexTensor) -> f64,
    ) -> ComplexTensor {
        let mut grad = ComplexTensor::zeros(tensor.shape());
        for i in 0..tensor.len() {
            let mut plus = tensor.clone();
            let mut minus = tensor.clone();
            plus.data_mut()[i].re += step;
            minus.data_mut()[i].re -= step;
            let d_re = (loss(&plus) - loss(&minus)) / (2.0 * step);

            let mut plus = tensor.clone();
            let mut minus = tensor.clone();
            plus.data_mut()[i].im += step;
            minus.data_mut()[i].im -= step;
            let d_im = (loss(&plus) - loss(&minus)) / (2.0 * step);

            grad.data_mut()[i] = c(d_re, d_im);
        }
        grad
    }

    fn assert_close(a: &ComplexTensor, b: &ComplexTensor, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            let denom = x.magnitude().max(y.magnitude()).max(1e-12);
            assert!(
                (*x - *y).magnitude() / denom < tol,
                "mismatch: {x} vs {y} (rel tol {tol})"
            );
        }
    }

    /// A smooth real test loss over a complex tensor: sum of squared
    /// magnitudes weighted by position, so deltas are easy to express.
    fn probe_loss(t: &ComplexTensor) -> f64 {
        t.data()
            .iter()
            .enumerate()
            .map(|(i, z)| (1.0 + 0.1 * i as f64) * z.magnitude_sq())
            .sum()
    }

    /// The delta of probe_loss: dl/dX + i dl/dY = 2 w_i z_i.
    fn probe_delta(t: &ComplexTensor) -> ComplexTensor {
        let data = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &z)| z.scale(2.0 * (1.0 + 0.1 * i as f64)))
            .collect();
        ComplexTensor::from_vec(t.shape(), data).unwrap()
    }

    #[test]
    fn affine_backward_direct_arithmetic() {
        // W = [[i]], d_next = [[1]], Z = [[2]]:
        // delta = W^H d = -i; grad_W = d Z^H = 2; grad_bias = 1.
        let w = AffineWeights::new(
            ComplexTensor::matrix(&[vec![I]]).unwrap(),
            ComplexTensor::zeros(&[1]),
        )
        .unwrap();
        let delta = ComplexTensor::matrix(&[vec![ONE]]).unwrap();
        let z = ComplexTensor::matrix(&[vec![c(2.0, 0.0)]]).unwrap();
        let (din, grads) = affine_backward(&delta, &w, &z).unwrap();
        assert_eq!(din.at2(0, 0), c(0.0, -1.0));
        assert_eq!(grads.weight.at2(0, 0), c(2.0, 0.0));
        assert_eq!(grads.bias.data()[0], ONE);
    }

    #[test]
    fn affine_backward_zero_delta() {
        let mut rng = Rng::seed_from(1);
        let w = AffineWeights::new(
            random_tensor(&[3, 4], &mut rng),
            random_tensor(&[3], &mut rng),
        )
        .unwrap();
        let z = random_tensor(&[4, 2], &mut rng);
        let delta = ComplexTensor::zeros(&[3, 2]);
        let (din, grads) = affine_backward(&delta, &w, &z).unwrap();
        assert!(din.data().iter().all(|&v| v == ZERO));
        assert!(grads.weight.data().iter().all(|&v| v == ZERO));
        assert!(grads.bias.data().iter().all(|&v| v == ZERO));
    }

    #[test]
    fn affine_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from(2);
        let w = AffineWeights::new(
            random_tensor(&[3, 4], &mut rng),
            random_tensor(&[3], &mut rng),
        )
        .unwrap();
        let z = random_tensor(&[4, 5], &mut rng);

        let loss_of = |weight: &ComplexTensor, bias: &ComplexTensor, input: &ComplexTensor| {
            let w = AffineWeights::new(weight.clone(), bias.clone()).unwrap();
            probe_loss(&affine_forward(input, &w).unwrap())
        };

        let out = affine_forward(&z, &w).unwrap();
        let (din, grads) = affine_backward(&probe_delta(&out), &w, &z).unwrap();

        let fd_w = finite_diff(&w.weight, 1e-5, |p| loss_of(p, &w.bias, &z));
        let fd_b = finite_diff(&w.bias, 1e-5, |p| loss_of(&w.weight, p, &z));
        let fd_z = finite_diff(&z, 1e-5, |p| loss_of(&w.weight, &w.bias, p));

        assert_close(&grads.weight, &fd_w, 1e-6);
        assert_close(&grads.bias, &fd_b, 1e-6);
        assert_close(&din, &fd_z, 1e-6);
    }

    #[test]
    fn holomorphic_backward_cases() {
        // identity: delta unchanged
        let d = c(0.3, -0.7);
        assert_eq!(holomorphic_activation_backward(d, ONE), d);
        // f' = i, d_next = 1 -> conj(i) = -i
        assert_eq!(holomorphic_activation_backward(ONE, I), c(0.0, -1.0));
    }

    #[test]
    fn holomorphic_backward_square_matches_finite_differences() {
        // f(z) = z^2 at z = 1 + i, through a real probe loss on the output.
        let z0 = c(1.0, 1.0);
        let weight = 1.3;
        let loss = |z: Complex| {
            let f = z * z;
            weight * f.magnitude_sq()
        };
        let h = 1e-6;
        let d_re = (loss(z0 + c(h, 0.0)) - loss(z0 - c(h, 0.0))) / (2.0 * h);
        let d_im = (loss(z0 + c(0.0, h)) - loss(z0 - c(0.0, h))) / (2.0 * h);

        let out = z0 * z0;
        let delta_out = out.scale(2.0 * weight);
        let fprime = z0.scale(2.0);
        let delta_in = holomorphic_activation_backward(delta_out, fprime);
        assert!((delta_in.re - d_re).abs() < 1e-6, "{} vs {}", delta_in.re, d_re);
        assert!((delta_in.im - d_im).abs() < 1e-6, "{} vs {}", delta_in.im, d_im);
    }

    #[test]
    fn relu_backward_pass_and_block() {
        let p = SectorParams::first_quadrant();
        let z = ComplexTensor::from_vec(&[2], vec![c(1.0, 2.0), c(-1.0, 2.0)]).unwrap();
        let d = ComplexTensor::from_vec(&[2], vec![c(0.5, 0.5), c(0.5, 0.5)]).unwrap();
        let out = sector_relu_backward(&d, &z, &p).unwrap();
        assert_eq!(out.data()[0], c(0.5, 0.5));
        assert_eq!(out.data()[1], ZERO);
    }

    #[test]
    fn relu_backward_matches_finite_differences() {
        let p = SectorParams::first_quadrant();
        let mut rng = Rng::seed_from(3);
        // Keep every coordinate away from the sector boundary.
        let data: Vec<Complex> = (0..12)
            .map(|_| {
                let re: f64 = rng.uniform_in(-1.0, 1.0);
                let im: f64 = rng.uniform_in(-1.0, 1.0);
                c(
                    re.signum() * (0.1 + re.abs()),
                    im.signum() * (0.1 + im.abs()),
                )
            })
            .collect();
        let z = ComplexTensor::from_vec(&[3, 4], data).unwrap();

        let out = sector_relu_tensor(&z, &p);
        let delta_in = sector_relu_backward(&probe_delta(&out), &z, &p).unwrap();
        let fd = finite_diff(&z, 1e-5, |t| probe_loss(&sector_relu_tensor(t, &p)));
        assert_close(&delta_in, &fd, 1e-6);
    }

    #[test]
    fn projection_backward_cases() {
        // squared, z = 3+4i, d = 1 -> 2z = 6+8i
        let d = projection_backward_point(1.0, c(3.0, 4.0), ProjectionKind::SquaredMagnitude)
            .unwrap();
        assert_eq!(d, c(6.0, 8.0));
        // squared at 0 -> 0 regardless of delta
        let d = projection_backward_point(7.0, ZERO, ProjectionKind::SquaredMagnitude).unwrap();
        assert_eq!(d, ZERO);
        // magnitude at 0 -> error
        assert!(projection_backward_point(1.0, ZERO, ProjectionKind::Magnitude).is_err());
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from(4);
        let z = random_tensor(&[2, 3], &mut rng);
        // loss = sum_i w_i |z_i|^2
        let weights: Vec<f64> = (0..z.len()).map(|i| 1.0 + 0.1 * i as f64).collect();
        let loss = |t: &ComplexTensor| -> f64 {
            t.data()
                .iter()
                .zip(&weights)
                .map(|(zv, w)| w * zv.magnitude_sq())
                .sum()
        };
        let delta = projection_backward(&weights, &z, ProjectionKind::SquaredMagnitude).unwrap();
        let fd = finite_diff(&z, 1e-5, loss);
        assert_close(&delta, &fd, 1e-6);
    }

    #[test]
    fn pool_backward_routes_to_winners() {
        // Non-overlapping 2x2 windows: one nonzero per window.
        let mut rng = Rng::seed_from(5);
        let input = random_tensor(&[1, 4, 4], &mut rng);
        let pooled = max_by_magnitude_pool(&input, &PoolSpec::max_magnitude((2, 2), 2)).unwrap();
        let d = random_tensor(&[1, 2, 2], &mut rng);
        let din = pool_backward(&d, &pooled.argmax, &pooled.input_shape).unwrap();
        let nonzero = din.data().iter().filter(|z| **z != ZERO).count();
        assert_eq!(nonzero, 4);
        for (cell, &src) in pooled.argmax.iter().enumerate() {
            assert_eq!(din.data()[src], d.data()[cell]);
        }
    }

    #[test]
    fn pool_backward_sums_shared_winner() {
        // 1x3 input with a dominant center: both 1x2 windows pick it.
        let input =
            ComplexTensor::from_vec(&[1, 1, 3], vec![c(0.1, 0.0), c(5.0, 0.0), c(0.2, 0.0)])
                .unwrap();
        let pooled = max_by_magnitude_pool(&input, &PoolSpec::max_magnitude((1, 2), 1)).unwrap();
        assert_eq!(pooled.argmax, vec![1, 1]);
        let d = ComplexTensor::from_vec(&[1, 1, 2], vec![c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let din = pool_backward(&d, &pooled.argmax, &pooled.input_shape).unwrap();
        assert_eq!(din.data()[1], c(3.0, 0.0));
    }

    #[test]
    fn pool_backward_overlap_matches_finite_differences() {
        // 3x3 input, window 2, stride 1; keep magnitudes well separated to
        // stay away from ties.
        let vals = [0.3, 1.1, 0.5, 2.0, 0.9, 1.6, 0.2, 1.3, 0.7];
        let data: Vec<Complex> = vals
            .iter()
            .enumerate()
            .map(|(i, &m)| Complex::from_polar(m, 0.31 * i as f64))
            .collect();
        let z = ComplexTensor::from_vec(&[1, 3, 3], data).unwrap();
        let spec = PoolSpec::max_magnitude((2, 2), 1);

        let pooled = max_by_magnitude_pool(&z, &spec).unwrap();
        let delta_out = probe_delta(&pooled.output);
        let din = pool_backward(&delta_out, &pooled.argmax, &pooled.input_shape).unwrap();
        let fd = finite_diff(&z, 1e-6, |t| {
            probe_loss(&max_by_magnitude_pool(t, &spec).unwrap().output)
        });
        assert_close(&din, &fd, 1e-6);
    }

    #[test]
    fn pool_backward_zero_delta() {
        let mut rng = Rng::seed_from(6);
        let input = random_tensor(&[1, 4, 4], &mut rng);
        let pooled = max_by_magnitude_pool(&input, &PoolSpec::max_magnitude((2, 2), 2)).unwrap();
        let d = ComplexTensor::zeros(&[1, 2, 2]);
        let din = pool_backward(&d, &pooled.argmax, &pooled.input_shape).unwrap();
        assert!(din.data().iter().all(|&z| z == ZERO));
    }

    #[test]
    fn pool_backward_rejects_stale_map() {
        let d = ComplexTensor::zeros(&[1, 2, 2]);
        assert!(pool_backward(&d, &[0, 1, 2], &[1, 4, 4]).is_err());
        assert!(pool_backward(&d, &[0, 1, 2, 99], &[1, 2, 2]).is_err());
    }

    #[test]
    fn softmax_backward_mean_case() {
        let vals = [c(0.4, 0.1), c(-0.2, 0.9), c(1.0, -0.3)];
        let d = c(0.6, -0.9);
        let deltas = softmax_pool_backward(d, &vals, 0.0).unwrap();
        for dv in &deltas {
            assert!((*dv - d.scale(1.0 / 3.0)).magnitude() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_single_element() {
        let deltas = softmax_pool_backward(c(0.5, 0.25), &[c(1.2, -0.4)], 3.0).unwrap();
        assert_eq!(deltas.len(), 1);
        assert!((deltas[0] - c(0.5, 0.25)).magnitude() < 1e-12);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let vals = [c(0.4, 0.1), c(-0.2, 0.9), c(1.0, -0.3), c(0.2, 0.2)];
        let alpha = 0.7;
        let tensor = ComplexTensor::from_vec(&[4], vals.to_vec()).unwrap();
        let loss = |t: &ComplexTensor| {
            let s = softmax_pool(t.data(), alpha).unwrap();
            1.3 * s.magnitude_sq() + 0.4 * s.re
        };
        let s = softmax_pool(&vals, alpha).unwrap();
        let delta_out = s.scale(2.0 * 1.3) + c(0.4, 0.0);
        let deltas = softmax_pool_backward(delta_out, &vals, alpha).unwrap();
        let analytic = ComplexTensor::from_vec(&[4], deltas).unwrap();
        let fd = finite_diff(&tensor, 1e-6, loss);
        assert_close(&analytic, &fd, 1e-6);
    }

    #[test]
    fn dual_softmax_backward_matches_finite_differences() {
        let vals = [c(0.4, 0.1), c(-0.2, 0.9), c(1.0, -0.3)];
        let alpha = 1.1;
        let tensor = ComplexTensor::from_vec(&[3], vals.to_vec()).unwrap();
        let loss = |t: &ComplexTensor| {
            let s = dual_softmax_pool(t.data(), alpha).unwrap();
            0.8 * s.magnitude_sq() - 0.3 * s.im
        };
        let s = dual_softmax_pool(&vals, alpha).unwrap();
        let delta_out = s.scale(2.0 * 0.8) + c(0.0, -0.3);
        let deltas = dual_softmax_pool_backward(delta_out, &vals, alpha).unwrap();
        let analytic = ComplexTensor::from_vec(&[3], deltas).unwrap();
        let fd = finite_diff(&tensor, 1e-6, loss);
        assert_close(&analytic, &fd, 1e-6);
    }

    #[test]
    fn conv_backward_one_by_one_kernel_gradient() {
        // grad_kernel for a 1x1 kernel is sum over positions of
        // delta * conj(input), by hand expansion of d_next Z^H.
        let mut rng = Rng::seed_from(7);
        let input = random_tensor(&[1, 3, 3], &mut rng);
        let w = ConvWeights::new(
            random_tensor(&[1, 1, 1, 1], &mut rng),
            random_tensor(&[1], &mut rng),
            1,
        )
        .unwrap();
        let (out, patches) = conv_forward_cached(&input, &w).unwrap();
        let delta = random_tensor(out.shape(), &mut rng);
        let (_, grads) = conv_backward(&delta, &w, &patches).unwrap();

        let expected: Complex = delta
            .data()
            .iter()
            .zip(input.data())
            .map(|(&d, &z)| d * z.conj())
            .sum();
        assert!((grads.kernels.data()[0] - expected).magnitude() < 1e-12);
        let bias_expected: Complex = delta.data().iter().copied().sum();
        assert!((grads.biases.data()[0] - bias_expected).magnitude() < 1e-12);
    }

    #[test]
    fn conv_backward_zero_input() {
        let mut rng = Rng::seed_from(8);
        let input = ComplexTensor::zeros(&[1, 4, 4]);
        let w = ConvWeights::new(
            random_tensor(&[2, 1, 2, 2], &mut rng),
            random_tensor(&[2], &mut rng),
            1,
        )
        .unwrap();
        let (out, patches) = conv_forward_cached(&input, &w).unwrap();
        let delta = random_tensor(out.shape(), &mut rng);
        let (_, grads) = conv_backward(&delta, &w, &patches).unwrap();
        assert!(grads.kernels.data().iter().all(|&z| z == ZERO));
        for k in 0..2 {
            let sum: Complex = (0..out.len() / 2)
                .map(|i| delta.data()[k * (out.len() / 2) + i])
                .sum();
            assert!((grads.biases.data()[k] - sum).magnitude() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from(9);
        let input = random_tensor(&[2, 6, 6], &mut rng);
        let kernels = random_tensor(&[2, 2, 3, 3], &mut rng);
        let biases = random_tensor(&[2], &mut rng);

        let loss_of = |kern: &ComplexTensor, bias: &ComplexTensor, inp: &ComplexTensor| {
            let w = ConvWeights::new(kern.clone(), bias.clone(), 1).unwrap();
            probe_loss(&crate::layers::conv_forward(inp, &w).unwrap())
        };

        let w = ConvWeights::new(kernels.clone(), biases.clone(), 1).unwrap();
        let (out, patches) = conv_forward_cached(&input, &w).unwrap();
        let (din, grads) = conv_backward(&probe_delta(&out), &w, &patches).unwrap();

        let fd_k = finite_diff(&kernels, 1e-5, |p| loss_of(p, &biases, &input));
        let fd_b = finite_diff(&biases, 1e-5, |p| loss_of(&kernels, p, &input));
        let fd_in = finite_diff(&input, 1e-5, |p| loss_of(&kernels, &biases, p));

        assert_close(&grads.kernels, &fd_k, 1e-6);
        assert_close(&grads.biases, &fd_b, 1e-6);
        assert_close(&din, &fd_in, 1e-6);
    }

    #[test]
    fn conv_backward_rejects_mismatched_cache() {
        let mut rng = Rng::seed_from(10);
        let input = random_tensor(&[1, 4, 4], &mut rng);
        let w = ConvWeights::new(
            random_tensor(&[1, 1, 2, 2], &mut rng),
            random_tensor(&[1], &mut rng),
            1,
        )
        .unwrap();
        let (_, patches) = conv_forward_cached(&input, &w).unwrap();
        let bad_delta = ComplexTensor::zeros(&[1, 2, 2]);
        assert!(conv_backward(&bad_delta, &w, &patches).is_err());
    }

    #[test]
    fn pool_mass_conservation_non_overlapping() {
        // Sum of |delta| is preserved when windows do not overlap.
        let mut rng = Rng::seed_from(11);
        let input = random_tensor(&[2, 4, 4], &mut rng);
        let pooled = max_by_magnitude_pool(&input, &PoolSpec::max_magnitude((2, 2), 2)).unwrap();
        let d = random_tensor(pooled.output.shape(), &mut rng);
        let din = pool_backward(&d, &pooled.argmax, &pooled.input_shape).unwrap();
        let sum_in: f64 = din.data().iter().map(|z| z.magnitude()).sum();
        let sum_out: f64 = d.data().iter().map(|z| z.magnitude()).sum();
        assert!((sum_in - sum_out).abs() < 1e-12);
    }

    #[test]
    fn backward_is_linear_in_delta() {
        let mut rng = Rng::seed_from(12);
        let input = random_tensor(&[1, 5, 5], &mut rng);
        let w = ConvWeights::new(
            random_tensor(&[2, 1, 3, 3], &mut rng),
            random_tensor(&[2], &mut rng),
            1,
        )
        .unwrap();
        let (out, patches) = conv_forward_cached(&input, &w).unwrap();
        let delta = random_tensor(out.shape(), &mut rng);
        let (din1, g1) = conv_backward(&delta, &w, &patches).unwrap();
        let (din2, g2) = conv_backward(&delta.scaled(2.0), &w, &patches).unwrap();
        assert_close(&din2, &din1.scaled(2.0), 1e-12);
        assert_close(&g2.kernels, &g1.kernels.scaled(2.0), 1e-12);
        assert_close(&g2.biases, &g1.biases.scaled(2.0), 1e-12);
    }
}
