//! Tour of the complex layer forward passes: convolution, sector ReLU,
//! the pooling family, and the projection to real scores.
//!
//! ```bash
//! cargo run --release -p ccnn --example complex_layers
//! ```

use ccnn::layers::{
    conv_forward, dual_softmax_pool, max_by_magnitude_pool, projection, sector_relu,
    softmax_pool, ConvWeights, PoolSpec, ProjectionKind, SectorParams,
};
use ccnn::tensor::ComplexTensor;
use ccnn::Complex;

fn main() -> ccnn::Result<()> {
    // A 1-channel 2x2 complex input convolved with the single 1x1 kernel i.
    let input = ComplexTensor::from_vec(
        &[1, 2, 2],
        vec![
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 1.0),
            Complex::new(0.0, -1.0),
            Complex::new(2.0, 0.0),
        ],
    )?;
    let weights = ConvWeights::new(
        ComplexTensor::from_vec(&[1, 1, 1, 1], vec![Complex::new(0.0, 1.0)])?,
        ComplexTensor::zeros(&[1]),
        1,
    )?;
    let out = conv_forward(&input, &weights)?;
    println!("conv([[1, i], [-i, 2]], kernel = [i]):");
    for row in 0..2 {
        println!("  {}  {}", out.at(&[0, row, 0]), out.at(&[0, row, 1]));
    }

    // The sector ReLU passes values whose argument lies in the closed
    // first quadrant and zeroes everything else.
    let sector = SectorParams::first_quadrant();
    println!("\nsector ReLU over the default first quadrant:");
    for z in [
        Complex::new(1.0, 2.0),
        Complex::new(-1.0, 2.0),
        Complex::new(2.0, -0.5),
        Complex::new(0.0, 5.0),
    ] {
        println!("  relu({z}) = {}", sector_relu(z, &sector));
    }

    // Max-by-magnitude pooling keeps the largest-magnitude member, so a
    // window of {-5, 2} pools to -5 where a plain max would give 2.
    let window = ComplexTensor::from_vec(
        &[1, 1, 2],
        vec![Complex::real(-5.0), Complex::real(2.0)],
    )?;
    let pooled = max_by_magnitude_pool(&window, &PoolSpec::max_magnitude((1, 2), 1))?;
    println!("\nmax-by-magnitude of {{-5, 2}} = {}", pooled.output.data()[0]);

    // Softmax pooling interpolates between min, mean, and max.
    let values = [
        Complex::new(1.0, 0.0),
        Complex::new(2.0, 0.0),
        Complex::new(10.0, 0.0),
    ];
    println!("\nsoftmax pooling of {{1, 2, 10}}:");
    for alpha in [-50.0, 0.0, 5.0] {
        println!("  alpha {alpha:>5}: {}", softmax_pool(&values, alpha)?);
    }

    // The dual operator selects by imaginary part instead.
    let mixed = [Complex::new(1.0, 5.0), Complex::new(2.0, 0.0)];
    println!(
        "\ndual softmax of {{1+5i, 2}} at alpha 50: {}",
        dual_softmax_pool(&mixed, 50.0)?
    );

    // The projection layer turns complex activations into real scores and
    // is invariant to a global phase.
    let z = Complex::new(3.0, 4.0);
    println!(
        "\n|3+4i|^2 = {}, |e^{{0.7i}} (3+4i)|^2 = {}",
        projection(z, ProjectionKind::SquaredMagnitude),
        projection(z * Complex::cis(0.7), ProjectionKind::SquaredMagnitude)
    );
    Ok(())
}
