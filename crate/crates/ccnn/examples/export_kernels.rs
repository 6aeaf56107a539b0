//! Export first-layer kernels as CSV, magnitude (PGM) and phase (PPM)
//! maps, here for a planted kernel matched to a synthetic cell center.
//!
//! ```bash
//! cargo run --release -p ccnn --example export_kernels
//! ```

use ccnn::checkpoint::{Checkpoint, ModelState};
use ccnn::export::{export_kernels, first_layer_kernels, radial_gradient_patch};
use ccnn::layers::ConvWeights;
use ccnn::network::{ComplexNetwork, Layer, NetworkSpec};
use ccnn::rng::Rng;
use ccnn::tensor::ComplexTensor;

fn main() -> ccnn::Result<()> {
    // Plant conj(cell-center patch) as kernel 0; a network that detects
    // cell centers learns kernels of exactly this shape.
    let patch = radial_gradient_patch(5, 2.0);
    let spec = NetworkSpec::cell_detection(2, 2);
    let mut net = ComplexNetwork::init(&spec, &mut Rng::seed_from(3))?;
    if let Layer::Conv(w) = &mut net.layers[0] {
        let mut kernels = w.kernels.clone();
        for (i, &z) in patch.conj().data().iter().enumerate() {
            kernels.data_mut()[i] = z;
        }
        *w = ConvWeights::new(kernels, w.biases.clone(), w.stride)?;
    }
    let momentum = net
        .param_tensors()
        .iter()
        .map(|t| ComplexTensor::zeros(t.shape()))
        .collect();
    let checkpoint = Checkpoint {
        iteration: 0,
        rng_state: Rng::seed_from(4).state(),
        model: ModelState::Complex { net, momentum },
    };

    for k in first_layer_kernels(&checkpoint)? {
        println!(
            "kernel {}: mean magnitude {:.4}, display phase constant {:+.4} rad",
            k.index, k.mean_magnitude, k.phase_constant
        );
    }

    let out = std::env::temp_dir().join("ccnn_kernel_export");
    let written = export_kernels(&checkpoint, &out)?;
    println!("\nwrote {} files:", written.len());
    for path in written.iter().take(4) {
        println!("  {}", path.display());
    }
    println!("  ...");
    Ok(())
}
