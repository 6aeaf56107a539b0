//! Independent finite-difference oracle for all gradients.
//!
//! Central differences over every real coordinate (real and imaginary
//! parts separately) of every parameter tensor, assembled into the complex
//! gradient convention and compared against backpropagation at a relative
//! tolerance. Networks whose forward values sit too close to a ReLU sector
//! boundary or a pooling tie are resampled rather than excluded, so reports
//! stay complete.

use crate::complex::Complex;
use crate::error::Result;
use crate::layers::{PoolKind, SectorParams};
use crate::network::{ComplexNetwork, Layer, NetworkSpec};
use crate::rng::Rng;
use crate::tensor::ComplexTensor;

/// Outcome of one analytic-vs-numeric comparison.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Relative error per real coordinate, flattened over the parameter
    /// list (tensor index, element index, 0 = re / 1 = im).
    pub errors: Vec<(usize, usize, u8, f64)>,
    pub max_error: f64,
    pub worst: Option<(usize, usize, u8)>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn describe(&self) -> String {
        match self.worst {
            Some((t, i, part, ..)) => format!(
                "max rel err {:.3e} at tensor {t} element {i} ({}) vs tolerance {:.1e}: {}",
                self.max_error,
                if part == 0 { "re" } else { "im" },
                self.tolerance,
                if self.passed { "pass" } else { "FAIL" }
            ),
            None => "empty comparison".to_string(),
        }
    }
}

/// Central finite differences of a scalar loss with respect to every real
/// coordinate of `params`, step `h`, assembled as `dl/dA + i dl/dB`.
pub fn finite_diff_grads<F>(
    params: &[ComplexTensor],
    step: f64,
    mut loss: F,
) -> Result<Vec<ComplexTensor>>
where
    F: FnMut(&[ComplexTensor]) -> Result<f64>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut work: Vec<ComplexTensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut grad = ComplexTensor::zeros(params[t].shape());
        for i in 0..params[t].len() {
            let original = params[t].data()[i];

            work[t].data_mut()[i] = Complex::new(original.re + step, original.im);
            let plus = loss(&work)?;
            work[t].data_mut()[i] = Complex::new(original.re - step, original.im);
            let minus = loss(&work)?;
            let d_re = (plus - minus) / (2.0 * step);

            work[t].data_mut()[i] = Complex::new(original.re, original.im + step);
            let plus = loss(&work)?;
            work[t].data_mut()[i] = Complex::new(original.re, original.im - step);
            let minus = loss(&work)?;
            let d_im = (plus - minus) / (2.0 * step);

            work[t].data_mut()[i] = original;
            grad.data_mut()[i] = Complex::new(d_re, d_im);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Elementwise relative errors between analytic and numeric gradients,
/// with the denominator max(|a|, |b|, 1e-12).
pub fn compare(
    analytic: &[ComplexTensor],
    numeric: &[ComplexTensor],
    tolerance: f64,
) -> Result<GradReport> {
    if analytic.len() != numeric.len() {
        return Err(crate::error::Error::InvalidArgument(format!(
            "{} analytic tensors vs {} numeric",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut errors = Vec::new();
    let mut max_error = 0.0f64;
    let mut worst = None;
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if a.shape() != n.shape() {
            return Err(crate::error::Error::shape(
                a.shape(),
                n.shape(),
                "gradient comparison",
            ));
        }
        for i in 0..a.len() {
            let av = a.data()[i];
            let nv = n.data()[i];
            for (part, x, y) in [(0u8, av.re, nv.re), (1u8, av.im, nv.im)] {
                let denom = x.abs().max(y.abs()).max(1e-12);
                let err = (x - y).abs() / denom;
                errors.push((t, i, part, err));
                if err > max_error {
                    max_error = err;
                    worst = Some((t, i, part));
                }
            }
        }
    }
    Ok(GradReport {
        errors,
        max_error,
        worst,
        tolerance,
        passed: max_error < tolerance,
    })
}

/// How close a forward pass comes to a non-differentiable point: the
/// smallest distance of any ReLU input to its sector boundary and the
/// smallest magnitude gap between a pooling window's two leading values.
/// Used to resample configurations before finite-difference checks.
pub fn boundary_margin(net: &ComplexNetwork, input: &ComplexTensor) -> Result<f64> {
    let mut value = input.clone();
    let mut margin = f64::INFINITY;
    for layer in &net.layers {
        match layer {
            Layer::Conv(w) => value = crate::layers::conv_forward(&value, w)?,
            Layer::SectorRelu(p) => {
                for &v in value.data() {
                    margin = margin.min(sector_boundary_distance(v, p));
                }
                value = crate::layers::sector_relu_tensor(&value, p);
            }
            Layer::Pool(spec) => match spec.kind {
                PoolKind::MaxMagnitude | PoolKind::GlobalMaxMagnitude => {
                    let window = match spec.kind {
                        PoolKind::GlobalMaxMagnitude => (value.shape()[1], value.shape()[2]),
                        _ => spec.window,
                    };
                    let windows =
                        crate::layers::slide_windows_of(value.shape(), window, spec.stride)?;
                    for members in windows {
                        // Only nonzero magnitudes can trade places under a
                        // small perturbation; ReLU-blocked zeros stay zero.
                        let mut best = f64::NEG_INFINITY;
                        let mut second = f64::NEG_INFINITY;
                        for &idx in &members {
                            let m = value.data()[idx].magnitude();
                            if m == 0.0 {
                                continue;
                            }
                            if m > best {
                                second = best;
                                best = m;
                            } else if m > second {
                                second = m;
                            }
                        }
                        if second.is_finite() {
                            margin = margin.min(best - second);
                        }
                    }
                    value = crate::layers::max_by_magnitude_pool(&value, spec)?.output;
                }
                _ => value = crate::layers::softmax_pool_tensor(&value, spec)?,
            },
            Layer::Projection(_) => {}
        }
    }
    Ok(margin)
}

/// Distance from z to the boundary of the pass sector: the closer of the
/// two boundary rays (distance to a ray, not a line).
fn sector_boundary_distance(z: Complex, p: &SectorParams) -> f64 {
    let d1 = ray_distance(z, p.theta1);
    let d2 = ray_distance(z, p.theta2);
    d1.min(d2)
}

fn ray_distance(z: Complex, theta: f64) -> f64 {
    let (ux, uy) = (theta.cos(), theta.sin());
    let proj = (z.re * ux + z.im * uy).max(0.0);
    let (px, py) = (proj * ux, proj * uy);
    ((z.re - px).powi(2) + (z.im - py).powi(2)).sqrt()
}

/// Build a random network and batch for the spec, resampling until every
/// forward value stays at least `margin` away from ReLU boundaries and
/// pooling ties, then compare backprop against finite differences.
pub fn check_network(
    spec: &NetworkSpec,
    batch_size: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradReport> {
    let mut rng = Rng::seed_from(seed);
    let margin = 1e-6;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let net = ComplexNetwork::init(spec, &mut rng)?;
        let inputs: Vec<ComplexTensor> = (0..batch_size)
            .map(|_| {
                let len: usize = spec.input_shape.iter().product();
                let data = (0..len)
                    .map(|_| Complex::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
                    .collect();
                ComplexTensor::from_vec(&spec.input_shape, data).unwrap()
            })
            .collect();
        let classes = spec.score_count()?;
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.below(classes)).collect();

        let clear = inputs
            .iter()
            .map(|inp| boundary_margin(&net, inp))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .all(|m| m > margin);
        if !clear {
            if attempt > 200 {
                return Err(crate::error::Error::InvalidArgument(
                    "could not sample a boundary-free configuration".into(),
                ));
            }
            continue;
        }

        let refs: Vec<&ComplexTensor> = inputs.iter().collect();
        let (_, analytic) = net.loss_and_gradients(&refs, &labels)?;

        let params = net.param_tensors();
        let mut probe = net.clone();
        let numeric = finite_diff_grads(&params, step, |p| {
            probe.set_param_tensors(p)?;
            let (loss, _) = {
                let (classes, scores) = probe.score_batch(&refs)?;
                let batch =
                    crate::loss::ScoredBatch::new(classes, refs.len(), scores, labels.clone())?;
                crate::loss::logistic_loss(&batch)
            };
            Ok(loss)
        })?;

        return compare(&analytic, &numeric, tolerance);
    }
}

/// Named small network specs covering every complex layer type, used by
/// the command-line gradient check and the acceptance suite.
pub fn builtin_specs() -> Vec<(&'static str, NetworkSpec)> {
    use crate::layers::{PoolSpec, ProjectionKind, SectorParams};
    use crate::network::LayerSpec;

    let conv = |out, k, stride| LayerSpec::Conv {
        out_channels: out,
        kernel: (k, k),
        stride,
    };
    vec![
        (
            "affine (1x1 conv) + squared projection",
            NetworkSpec {
                input_shape: [3, 1, 1],
                layers: vec![conv(3, 1, 1), LayerSpec::Projection(ProjectionKind::SquaredMagnitude)],
            },
        ),
        (
            "conv + squared projection",
            NetworkSpec {
                input_shape: [2, 5, 5],
                layers: vec![conv(2, 3, 1), LayerSpec::Projection(ProjectionKind::SquaredMagnitude)],
            },
        ),
        (
            "conv + magnitude projection",
            NetworkSpec {
                input_shape: [1, 4, 4],
                layers: vec![conv(2, 2, 1), LayerSpec::Projection(ProjectionKind::Magnitude)],
            },
        ),
        (
            "conv + sector relu",
            NetworkSpec {
                input_shape: [1, 5, 5],
                layers: vec![
                    conv(2, 3, 1),
                    LayerSpec::SectorRelu(SectorParams::first_quadrant()),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "conv + wide-sector relu",
            NetworkSpec {
                input_shape: [1, 4, 4],
                layers: vec![
                    conv(2, 2, 1),
                    LayerSpec::SectorRelu(SectorParams::new(-1.0, 2.0).unwrap()),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "conv + overlapping max-magnitude pool",
            NetworkSpec {
                input_shape: [1, 5, 5],
                layers: vec![
                    conv(2, 2, 1),
                    LayerSpec::Pool(PoolSpec::max_magnitude((2, 2), 1)),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "conv + softmax pool",
            NetworkSpec {
                input_shape: [1, 5, 5],
                layers: vec![
                    conv(2, 2, 1),
                    LayerSpec::Pool(PoolSpec {
                        window: (2, 2),
                        stride: 2,
                        kind: crate::layers::PoolKind::Softmax(0.7),
                    }),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "conv + dual softmax pool",
            NetworkSpec {
                input_shape: [1, 5, 5],
                layers: vec![
                    conv(2, 2, 1),
                    LayerSpec::Pool(PoolSpec {
                        window: (2, 2),
                        stride: 2,
                        kind: crate::layers::PoolKind::DualSoftmax(1.1),
                    }),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "conv + global pool",
            NetworkSpec {
                input_shape: [1, 6, 6],
                layers: vec![
                    conv(2, 3, 1),
                    LayerSpec::Pool(PoolSpec::global()),
                    LayerSpec::Projection(ProjectionKind::SquaredMagnitude),
                ],
            },
        ),
        (
            "full experiment network",
            NetworkSpec::cell_detection(3, 2),
        ),
    ]
}

/// Boundary margin for the real counterpart: ReLU inputs near zero and
/// near-ties between the two leading positive values of a pooling window.
pub fn real_boundary_margin(
    net: &crate::equivalence::RealNetwork,
    input: &crate::tensor::RealTensor,
) -> Result<f64> {
    use crate::equivalence::{real_conv_forward, real_max_pool, real_relu_tensor, RealLayer};
    let mut value = input.clone();
    let mut margin = f64::INFINITY;
    for layer in &net.layers {
        match layer {
            RealLayer::Conv(w) => value = real_conv_forward(&value, w)?,
            RealLayer::Relu => {
                for &x in value.data() {
                    margin = margin.min(x.abs());
                }
                value = real_relu_tensor(&value);
            }
            RealLayer::MaxPool { .. } | RealLayer::GlobalMaxPool => {
                let (window, stride) = match layer {
                    RealLayer::MaxPool { window, stride } => (*window, *stride),
                    _ => ((value.shape()[1], value.shape()[2]), 1),
                };
                let windows = crate::layers::slide_windows_of(value.shape(), window, stride)?;
                for members in windows {
                    // Post-ReLU zeros stay zero under perturbation; only
                    // positive values can trade places.
                    let mut best = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    for &idx in &members {
                        let v = value.data()[idx];
                        if v <= 0.0 {
                            continue;
                        }
                        if v > best {
                            second = best;
                            best = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                    if second.is_finite() {
                        margin = margin.min(best - second);
                    }
                }
                value = real_max_pool(&value, window, stride)?.output;
            }
            RealLayer::Affine(w) => {
                let len = value.len();
                let column = value.clone().reshape(&[len, 1])?;
                let out = crate::equivalence::real_affine_forward(&column, w)?;
                let rows = out.rows();
                value = out.reshape(&[rows])?;
            }
        }
    }
    Ok(margin)
}

/// Finite-difference check of the real counterpart network, with the same
/// resample-on-boundary policy as the complex check.
pub fn check_real_network(
    spec: &crate::equivalence::RealNetworkSpec,
    batch_size: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradReport> {
    use crate::equivalence::RealNetwork;
    use crate::tensor::RealTensor;

    let mut rng = Rng::seed_from(seed);
    let margin = 1e-6;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let net = RealNetwork::init(spec, &mut rng)?;
        let inputs: Vec<RealTensor> = (0..batch_size)
            .map(|_| {
                let len: usize = spec.input_shape.iter().product();
                let data = (0..len).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                RealTensor::from_vec(&spec.input_shape, data).unwrap()
            })
            .collect();
        let classes = spec.score_count()?;
        let labels: Vec<usize> = (0..batch_size).map(|_| rng.below(classes)).collect();

        let clear = inputs
            .iter()
            .map(|inp| real_boundary_margin(&net, inp))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .all(|m| m > margin);
        if !clear {
            if attempt > 200 {
                return Err(crate::error::Error::InvalidArgument(
                    "could not sample a boundary-free configuration".into(),
                ));
            }
            continue;
        }

        let refs: Vec<&RealTensor> = inputs.iter().collect();
        let (_, analytic) = net.loss_and_gradients(&refs, &labels)?;

        let params = net.param_tensors();
        let mut probe = net.clone();
        let mut loss_at = |p: &[RealTensor]| -> Result<f64> {
            probe.set_param_tensors(p)?;
            let (classes, scores) = probe.score_batch(&refs)?;
            let batch = crate::loss::ScoredBatch::new(classes, refs.len(), scores, labels.clone())?;
            Ok(crate::loss::logistic_loss(&batch).0)
        };

        let mut numeric = Vec::with_capacity(params.len());
        let mut work = params.clone();
        for t in 0..params.len() {
            let mut grad = RealTensor::zeros(params[t].shape());
            for i in 0..params[t].len() {
                let original = params[t].data()[i];
                work[t].data_mut()[i] = original + step;
                let plus = loss_at(&work)?;
                work[t].data_mut()[i] = original - step;
                let minus = loss_at(&work)?;
                work[t].data_mut()[i] = original;
                grad.data_mut()[i] = (plus - minus) / (2.0 * step);
            }
            numeric.push(grad);
        }

        // Compare via the shared report over real coordinates.
        let wrap = |ts: &[RealTensor]| -> Vec<ComplexTensor> {
            ts.iter()
                .map(|t| {
                    ComplexTensor::from_vec(
                        t.shape(),
                        t.data().iter().map(|&x| Complex::real(x)).collect(),
                    )
                    .unwrap()
                })
                .collect()
        };
        return compare(&wrap(&analytic), &wrap(&numeric), tolerance);
    }
}
