//! Generates a synthetic pavement dataset, reloads its manifest and derives
//! box prompts from the rasterized instance masks.
//!
//! cargo run --example toy_dataset -- /tmp/toy

use std::path::PathBuf;

use pavesam::dataio::synthetic::{write_toy_dataset, ToyConfig};
use pavesam::dataio::{load_manifest, mask_box, read_mask, write_mask};

fn main() -> anyhow::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("pavesam_toy"));
    let cfg = ToyConfig {
        n_images: 8,
        max_instances: 2,
        ..Default::default()
    };
    let manifest = load_manifest(&write_toy_dataset(&dir, &cfg)?)?;
    let (train, test) = manifest.split_counts();
    println!("{} images: {train} train / {test} test", manifest.len());
    for (class, n) in manifest.class_counts() {
        println!("  {class}: {n}");
    }

    let record = &manifest.records[0];
    let masks = dir.join("masks");
    std::fs::create_dir_all(&masks)?;
    for (k, inst) in record.instances.iter().enumerate() {
        let mask = record.instance_mask(k)?;
        let path = masks.join(format!("{}_{k}.png", record.id));
        write_mask(&path, &mask)?;
        let reread = read_mask(&path)?;
        println!(
            "{}#{k} {}: annotated box {} -> mask box {} ({} px)",
            record.id,
            inst.class,
            inst.bbox,
            mask_box(&reread)?,
            reread.count_ones()
        );
    }
    Ok(())
}
