use ccnn::config::ExperimentConfig;
use ccnn::rng::derive_seed;
use ccnn::train::{train_model, DataPair, ModelKind};

fn main() {
    let base = ExperimentConfig {
        cells_min: 20,
        cells_max: 30,
        radius_min: 5.0,
        radius_max: 7.0,
        intensity_min: 0.85,
        noise_sigma: 0.02,
        eval_every_epochs: 25,
        real_lr: 0.01,
        conv1_kernels: 12,
        ..Default::default()
    };
    let data = DataPair::generate(&base).unwrap();
    println!("fraction {:.3}", data.train.cell_fraction());
    for (lr, drop) in [(0.005f64, 1000u64), (0.005, 2000), (0.01, 1000), (0.02, 2000)] {
        let mut c = base.clone();
        c.complex_lr = lr;
        c.complex_lr_after = lr / 10.0;
        c.complex_lr_drop_iteration = drop;
        c.seed = derive_seed(42, 0x7472_0001); // the trial that showed life
        let run = train_model(ModelKind::Complex, &c, &data, None).unwrap();
        let r = run.final_row();
        let track: Vec<String> = run.metrics.iter().map(|m| format!("{:.2}", m.train_loss)).collect();
        println!(
            "cx lr {lr} drop {drop}: train {:.4}/{:.3} test {:.4} gap {:+.4} | {}",
            r.train_loss, r.train_acc, r.test_loss, r.test_loss - r.train_loss,
            track.join(" ")
        );
    }
}
