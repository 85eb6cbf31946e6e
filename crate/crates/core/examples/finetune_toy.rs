//! Fine-tunes the mask decoder of the surrogate backbone on a synthetic set
//! and checks that the frozen encoder is untouched.
//!
//! cargo run --release --example finetune_toy -- [epochs]

use pavesam::dataio::load_manifest;
use pavesam::dataio::synthetic::{write_toy_dataset, ToyConfig};
use pavesam::model::{BackboneBundle, BackboneConfig};
use pavesam::training::{finetune, RunOptions, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10);
    let dir = tempfile::tempdir()?;
    let manifest = load_manifest(&write_toy_dataset(
        dir.path(),
        &ToyConfig {
            n_images: 8,
            ..Default::default()
        },
    )?)?;

    let mut bundle = BackboneBundle::random(BackboneConfig::surrogate())?;
    let encoder_before = bundle.encoder_digest();
    let config = TrainConfig {
        epochs,
        learning_rate: 1e-3,
        ..Default::default()
    };
    let out = dir.path().join("run");
    let outcome = finetune(
        &manifest,
        &mut bundle,
        &config,
        &RunOptions {
            out_dir: Some(out.clone()),
            ..Default::default()
        },
    )?;
    for r in &outcome.history {
        println!("epoch {:>3}  loss {:.4}  train DSC {:.4}", r.epoch, r.loss, r.train_dsc);
    }
    println!("encoder unchanged: {}", bundle.encoder_digest() == encoder_before);
    println!("checkpoints: {:?}", std::fs::read_dir(&out)?.filter_map(|e| e.ok()).map(|e| e.file_name()).collect::<Vec<_>>());
    Ok(())
}
