//! Short end-to-end training demo on a reduced dataset: the complex model
//! and its real counterpart, trained with SGD + Nesterov momentum.
//!
//! The full desk-scale experiment runs through the command line instead:
//! `ccnn gen-data`, `ccnn train`, `ccnn trials`.
//!
//! ```bash
//! cargo run --release -p ccnn --example train_cell_detection
//! ```

use ccnn::config::ExperimentConfig;
use ccnn::train::{train_model, DataPair, ModelKind};

fn main() -> ccnn::Result<()> {
    let config = ExperimentConfig {
        images_per_split: 4,
        iterations: 600,
        batch_size: 50,
        conv1_kernels: 4,
        conv2_kernels: 2,
        eval_every_epochs: 2,
        seed: 9,
        ..Default::default()
    };
    let data = DataPair::generate(&config)?;
    println!(
        "dataset: {} train / {} test patches, cell fraction {:.3}",
        data.train.patches.len(),
        data.test.patches.len(),
        data.train.cell_fraction()
    );

    for kind in [ModelKind::Complex, ModelKind::Real] {
        let run = train_model(kind, &config, &data, None)?;
        println!("\n{} model:", kind.name());
        println!("  iter   epoch  train_loss  test_loss  train_acc");
        for row in run.metrics.iter().step_by(3) {
            println!(
                "  {:>5}  {:>5}  {:>9.4}  {:>9.4}  {:>8.3}",
                row.iteration, row.epoch, row.train_loss, row.test_loss, row.train_acc
            );
        }
        let last = run.final_row();
        println!(
            "  final: train {:.4}/{:.3}, test {:.4}/{:.3}, gap {:+.4}",
            last.train_loss,
            last.train_acc,
            last.test_loss,
            last.test_acc,
            last.test_loss - last.train_loss
        );
    }
    Ok(())
}
