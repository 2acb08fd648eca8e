use nnuzoo::data::{generate_synthetic, split_dataset, AugmentConfig, SynthSpec};
use nnuzoo::models::{build_model, tiny_width, ArchitectureId, ModelConfig};
use nnuzoo::train::{train_loop, OptimizerKind, TrainConfig};

fn main() {
    let spec = SynthSpec { noise_sigma: 0.0, ..Default::default() };
    let ds = generate_synthetic(&spec, 60, 11).unwrap();
    let (train, val) = split_dataset(&ds, 0.8, 17).unwrap();
    for arch in [ArchitectureId::U2NetS, ArchitectureId::Ss2d2NetS] {
        let config = ModelConfig {
            arch,
            in_channels: 1,
            num_classes: 3,
            input_hw: (64, 64),
            seed: 5,
            width: tiny_width(arch),
        };
        let mut model = build_model::<f32>(arch, &config).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            optimizer: OptimizerKind::adam(1e-3),
            augment: AugmentConfig::default(),
            seed: 3,
            ..Default::default()
        };
        let t0 = std::time::Instant::now();
        let hist = train_loop(&mut model, &train, &val, &cfg, None).unwrap();
        println!("{}: {:.1}s for 4 epochs", arch.name(), t0.elapsed().as_secs_f64());
        for e in &hist.epochs {
            println!("  epoch {} lr {:.5} train {:.4} val {:.4} dice {:.4}", e.epoch, e.lr, e.train_loss, e.val_loss, e.val_dice);
        }
    }
}
