//! Bit-exact checkpoint round trips: a run split across a save/restore
//! matches the uninterrupted run byte for byte, including the generator
//! state driving minibatch selection.
//!
//! ```bash
//! cargo run --release -p ccnn --example checkpoint_resume
//! ```

use ccnn::checkpoint::{decode_checkpoint, encode_checkpoint};
use ccnn::config::ExperimentConfig;
use ccnn::train::{train_model, DataPair, ModelKind};

fn main() -> ccnn::Result<()> {
    let config = ExperimentConfig {
        images_per_split: 1,
        iterations: 40,
        batch_size: 20,
        conv1_kernels: 2,
        conv2_kernels: 2,
        ..Default::default()
    };
    let data = DataPair::generate(&config)?;

    let full = train_model(ModelKind::Complex, &config, &data, None)?;
    let full_bytes = encode_checkpoint(&full.checkpoint);
    println!("uninterrupted 40-iteration run: {} checkpoint bytes", full_bytes.len());

    let mut half_config = config.clone();
    half_config.iterations = 20;
    let half = train_model(ModelKind::Complex, &half_config, &data, None)?;
    let half_bytes = encode_checkpoint(&half.checkpoint);

    // The encoded state round-trips exactly.
    let reloaded = decode_checkpoint(&half_bytes)?;
    assert_eq!(encode_checkpoint(&reloaded), half_bytes);
    println!("halfway checkpoint round-trips exactly at iteration {}", reloaded.iteration);

    let resumed = train_model(ModelKind::Complex, &config, &data, Some(reloaded))?;
    let resumed_bytes = encode_checkpoint(&resumed.checkpoint);
    assert_eq!(resumed_bytes, full_bytes);
    println!("resumed run matches the uninterrupted checkpoint bit for bit");
    Ok(())
}
