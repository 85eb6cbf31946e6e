//! Scores a briefly fine-tuned surrogate on the held-out toy images, then
//! renders an improvement table and a model comparison table.
//!
//! cargo run --release --example evaluate

use pavesam::dataio::load_manifest;
use pavesam::dataio::synthetic::{write_toy_dataset, ToyConfig};
use pavesam::evaluation::{evaluate_dataset, improvement_table, render_comparison, ComparisonRow};
use pavesam::model::{BackboneBundle, BackboneConfig};
use pavesam::training::{finetune, RunOptions, TrainConfig};
use pavesam::Split;

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = load_manifest(&write_toy_dataset(dir.path(), &ToyConfig::default())?)?;

    let baseline = BackboneBundle::random(BackboneConfig::surrogate())?;
    let mut tuned = baseline.clone();
    let config = TrainConfig {
        epochs: 8,
        learning_rate: 1e-3,
        ..Default::default()
    };
    finetune(&manifest, &mut tuned, &config, &RunOptions::default())?;

    let before = evaluate_dataset(&baseline, &manifest, Split::Test, 0.5)?;
    let after = evaluate_dataset(&tuned, &manifest, Split::Test, 0.5)?;
    print!("{}", after.to_table());
    println!();
    print!("{}", improvement_table(&after, &before)?.to_table());
    println!();

    let rows = [("untrained", &before), ("fine-tuned", &after)]
        .into_iter()
        .filter_map(|(name, r)| r.aggregate.as_ref().map(|m| ComparisonRow::from_summary(name, m)));
    print!("{}", render_comparison(rows)?.to_table());
    Ok(())
}
