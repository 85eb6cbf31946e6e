//! Complexity report for the surrogate backbone (with timings) and the
//! ViT-B architecture (counts and FLOPs only).
//!
//! cargo run --release --example profile

use pavesam::model::{BackboneBundle, BackboneConfig, FreezePolicy};
use pavesam::profiler::{count_parameters, profile, ProfileOptions};

fn main() -> anyhow::Result<()> {
    let surrogate = BackboneBundle::random(BackboneConfig::surrogate())?;
    println!("surrogate");
    print!("{}", profile(&surrogate, ProfileOptions::default())?.to_table());

    let vit = BackboneBundle::random(BackboneConfig::vit_b())?;
    let p = count_parameters(&vit, FreezePolicy::default());
    println!("\nViT-B: {} parameters, {} trainable", p.total, p.trainable);
    let report = profile(
        &vit,
        ProfileOptions {
            measure_fps: false,
            ..Default::default()
        },
    )?;
    print!("{}", report.to_table());
    Ok(())
}
