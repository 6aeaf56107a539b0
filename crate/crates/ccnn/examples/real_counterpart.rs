//! The restricted-real-convolution construction: one complex kernel
//! A + iB becomes the real kernel pair [A, -B], [B, A] over channel-stacked
//! inputs. The equivalence is exact per convolution layer and breaks,
//! deliberately, across the nonlinear layers.
//!
//! ```bash
//! cargo run --release -p ccnn --example real_counterpart
//! ```

use ccnn::equivalence::{
    build_real_counterpart, realify_conv, realify_tensor, real_conv_forward, real_relu_tensor,
    RealNetwork,
};
use ccnn::layers::{conv_forward, sector_relu_tensor, ConvWeights, SectorParams};
use ccnn::network::{ComplexNetwork, NetworkSpec};
use ccnn::rng::Rng;
use ccnn::tensor::ComplexTensor;
use ccnn::Complex;

fn random_tensor(shape: &[usize], rng: &mut Rng) -> ComplexTensor {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| Complex::new(rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)))
        .collect();
    ComplexTensor::from_vec(shape, data).unwrap()
}

fn main() -> ccnn::Result<()> {
    let mut rng = Rng::seed_from(5);

    // Per-layer equivalence: the realified convolution reproduces the
    // complex one's real and imaginary output channels.
    let input = random_tensor(&[2, 6, 6], &mut rng);
    let weights = ConvWeights::new(
        random_tensor(&[3, 2, 3, 3], &mut rng),
        random_tensor(&[3], &mut rng),
        1,
    )?;
    let complex_out = conv_forward(&input, &weights)?;
    let real_out = real_conv_forward(&realify_tensor(&input), &realify_conv(&weights))?;
    let mut worst = 0.0f64;
    let plane = complex_out.len() / 3;
    for k in 0..3 {
        for p in 0..plane {
            let z = complex_out.data()[k * plane + p];
            worst = worst
                .max((z.re - real_out.data()[k * plane + p]).abs())
                .max((z.im - real_out.data()[(3 + k) * plane + p]).abs());
        }
    }
    println!("conv equivalence: max |complex - realified| = {worst:.2e}");

    // Across the sector ReLU the two models diverge: the complex ReLU
    // zeroes a fourth-quadrant value entirely, the real ReLU keeps its
    // positive component.
    let z = ComplexTensor::from_vec(&[1, 1, 1], vec![Complex::new(1.0, -1.0)])?;
    let complex_relu = sector_relu_tensor(&z, &SectorParams::first_quadrant());
    let real_relu = real_relu_tensor(&realify_tensor(&z));
    println!(
        "relu divergence on 1-i: complex -> {}, stacked real -> [{}, {}]",
        complex_relu.data()[0],
        real_relu.data()[0],
        real_relu.data()[1]
    );

    // The counterpart of the experiment architecture doubles the channels
    // and swaps the projection for a trainable affine layer.
    let spec = NetworkSpec::cell_detection(8, 2);
    let real_spec = build_real_counterpart(&spec)?;
    let complex_net = ComplexNetwork::init(&spec, &mut rng)?;
    let real_net = RealNetwork::init(&real_spec, &mut rng)?;
    println!(
        "parameters: complex {} real coordinates, counterpart {}",
        complex_net.real_param_count(),
        real_net.real_param_count()
    );
    Ok(())
}
