//! Evaluates every training loss and segmentation metric on a small
//! hand-made prediction.
//!
//! cargo run --example losses_and_metrics

use ndarray::array;
use pavesam::evaluation::{binarize, confusion, MetricSummary};
use pavesam::losses::{bce_loss, combined_loss, dice_loss, focal_tversky_loss, tversky_index, TverskyParams};
use pavesam::{BinaryMask, ProbabilityMask};

fn main() -> anyhow::Result<()> {
    let truth = BinaryMask::from_array(array![[0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 1, 0]])?;
    let pred = ProbabilityMask::from_array(array![
        [0.1, 0.8, 0.7, 0.2],
        [0.3, 0.9, 0.4, 0.1],
        [0.0, 0.2, 0.6, 0.6]
    ])?;

    let tversky = TverskyParams::default();
    println!("bce            {:.5}", bce_loss(&truth, &pred)?.value);
    println!("dice           {:.5}", dice_loss(&truth, &pred)?.value);
    println!("bce + dice     {:.5}", combined_loss(&truth, &pred)?.value);
    println!(
        "tversky index  {:.5} (alpha {}, beta {})",
        tversky_index(&truth, &pred, tversky)?,
        tversky.alpha,
        tversky.beta
    );
    println!(
        "focal tversky  {:.5} (gamma {:.4})",
        focal_tversky_loss(&truth, &pred, tversky)?.value,
        tversky.gamma
    );

    let hard = binarize(&pred, 0.5)?;
    let counts = confusion(&hard, &truth)?;
    let m = MetricSummary::from_counts(&counts);
    println!("\nat threshold 0.5: tp {} fp {} fn {} tn {}", counts.tp, counts.fp, counts.fn_, counts.tn);
    println!(
        "DSC {:.3}  P {:.3}  R {:.3}  F1 {:.3}  IoU {:.3}  mIoU {:.3}",
        m.dsc, m.precision, m.recall, m.f1, m.iou_foreground, m.iou_mean
    );
    Ok(())
}
