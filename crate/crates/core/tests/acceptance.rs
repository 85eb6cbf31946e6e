//! Desk acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over every gated criterion.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use image::RgbImage;
use ndarray::Array2;
use pavesam::dataio::{extract_box, map_box, resize_and_pad, Direction, ResizeTransform};
use pavesam::evaluation::{confusion, evaluate_dataset, improvement_table, MetricSummary};
use pavesam::losses::{
    bce_loss, combined_loss, dice_coefficient, dice_loss, focal_tversky_loss, tversky_index, LossValue, TverskyParams,
};
use pavesam::model::{load_backbone, BackboneConfig, FreezePolicy};
use pavesam::profiler::count_parameters;
use pavesam::training::{finetune, RunOptions, TrainConfig};
use pavesam::{BinaryMask, BoundingBox, Error, ProbabilityMask, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Optional path to the pretrained ViT-B weights (safetensors).
const VIT_B_ENV: &str = "PAVESAM_VIT_B_CHECKPOINT";

struct Outcome {
    name: &'static str,
    gated: bool,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        name,
        gated: true,
        pass,
        detail,
    }
}

fn bool_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Vec<bool>> {
    let density: f64 = match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.0..1.0),
    };
    (0..h).map(|_| (0..w).map(|_| rng.gen_bool(density)).collect()).collect()
}

fn to_mask(g: &[Vec<bool>]) -> BinaryMask {
    BinaryMask::from_fn(g.len(), g[0].len(), |r, c| g[r][c])
}

/// Brute-force metrics straight from pixel counts.
fn oracle_metrics(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> [f64; 6] {
    let (mut tp, mut fp, mut fn_, mut tn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (pr, tr) in pred.iter().zip(truth) {
        for (&p, &t) in pr.iter().zip(tr) {
            match (p, t) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                (false, false) => tn += 1.0,
            }
        }
    }
    let dsc = if tp + fp + fn_ == 0.0 { 1.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
    let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
    let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let fg = if tp + fp + fn_ == 0.0 { 1.0 } else { tp / (tp + fp + fn_) };
    let bg = if tn + fp + fn_ == 0.0 { 1.0 } else { tn / (tn + fp + fn_) };
    [dsc, precision, recall, f1, fg, (fg + bg) / 2.0]
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let pred = bool_grid(&mut rng, 32, 32);
        let truth = bool_grid(&mut rng, 32, 32);
        let ours = MetricSummary::from_counts(&confusion(&to_mask(&pred), &to_mask(&truth)).unwrap()).values();
        for (a, b) in ours.iter().zip(oracle_metrics(&pred, &truth)) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "metric oracle equivalence",
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("200 pairs, max |diff| {worst:.1e} (tol 1e-9), {:.2}s (limit 10s)", elapsed.as_secs_f64()),
    )
}

fn random_inputs(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (BinaryMask, ProbabilityMask) {
    let y = BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(0.4));
    let p = ProbabilityMask::from_array(Array2::from_shape_fn((h, w), |_| rng.gen_range(0.05..0.95))).unwrap();
    (y, p)
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let half = TverskyParams::new(0.5, 0.5, 1.0).unwrap();
    let (mut combined, mut focal, mut index) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let h = rng.gen_range(1..16);
        let w = rng.gen_range(1..16);
        let (y, p) = random_inputs(&mut rng, h, w);
        let bce = bce_loss(&y, &p).unwrap().value;
        let dice = dice_loss(&y, &p).unwrap().value;
        combined = combined.max((combined_loss(&y, &p).unwrap().value - (bce + dice)).abs());
        focal = focal.max((focal_tversky_loss(&y, &p, half).unwrap().value - dice).abs());
        index = index.max((tversky_index(&y, &p, half).unwrap() - dice_coefficient(&y, &p).unwrap()).abs());
    }
    outcome(
        "loss identities",
        combined <= 1e-12 && focal <= 1e-9 && index <= 1e-12,
        format!("combined-(bce+dice) {combined:.1e} (1e-12), focal-tversky-dice {focal:.1e} (1e-9), tversky-dice coefficient {index:.1e} (1e-12)"),
    )
}

type LossFn = Box<dyn Fn(&BinaryMask, &ProbabilityMask) -> LossValue>;

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let losses: Vec<(&str, LossFn)> = vec![
        ("bce", Box::new(|y, p| bce_loss(y, p).unwrap())),
        ("dice", Box::new(|y, p| dice_loss(y, p).unwrap())),
        ("bce+dice", Box::new(|y, p| combined_loss(y, p).unwrap())),
        ("focal_tversky", Box::new(|y, p| focal_tversky_loss(y, p, TverskyParams::default()).unwrap())),
        (
            "focal_tversky(0.5,0.5,1)",
            Box::new(|y, p| focal_tversky_loss(y, p, TverskyParams::new(0.5, 0.5, 1.0).unwrap()).unwrap()),
        ),
    ];
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_name = "";
    for _ in 0..50 {
        let (y, p) = random_inputs(&mut rng, 6, 6);
        for (name, f) in &losses {
            let analytic = f(&y, &p).gradient;
            for (idx, &a) in analytic.indexed_iter() {
                let shifted = |d: f64| {
                    let mut q = p.clone().into_array();
                    q[idx] += d;
                    f(&y, &ProbabilityMask::from_array(q).unwrap()).value
                };
                let numeric = (shifted(step) - shifted(-step)) / (2.0 * step);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                if rel > worst {
                    worst = rel;
                    worst_name = name;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        "gradient checks",
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "{} losses x 50 inputs, max rel err {worst:.1e} ({worst_name}, tol 1e-4), {:.2}s (limit 30s)",
            losses.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn box_extraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0usize;
    let mut all_ones = 0usize;
    for i in 0..500 {
        let h = rng.gen_range(1..40);
        let w = rng.gen_range(1..40);
        let bytes = if i % 10 == 0 {
            all_ones += 1;
            Array2::from_elem((h, w), 1u8)
        } else {
            let density: f64 = rng.gen_range(0.0..0.3);
            Array2::from_shape_fn((h, w), |_| {
                if rng.gen_bool(density) {
                    rng.gen_range(2..=255)
                } else {
                    rng.gen_range(0..=1)
                }
            })
        };
        let mut scan: Option<[i64; 4]> = None;
        for r in 0..h {
            for c in 0..w {
                if bytes[[r, c]] > 1 {
                    let (x, y) = (c as i64, r as i64);
                    scan = Some(match scan {
                        None => [x, y, x, y],
                        Some(b) => [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)],
                    });
                }
            }
        }
        let ok = match (extract_box(&bytes), scan) {
            (Ok(b), Some(s)) => b.to_array() == s,
            (Err(Error::EmptyMask), None) => true,
            _ => false,
        };
        if !ok {
            mismatches += 1;
        }
    }
    outcome(
        "box extraction",
        mismatches == 0,
        format!("500 masks ({all_ones} all-1), {mismatches} mismatches against min/max scan"),
    )
}

fn geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut shapes_ok = true;
    for (h, w) in [(1014, 2011), (1, 1), (1024, 1024), (37, 5), (300, 700)] {
        let (out, _) = resize_and_pad(&RgbImage::new(w, h), 1024);
        shapes_ok &= (out.width(), out.height()) == (1024, 1024) && out.as_raw().len() == 1024 * 1024 * 3;
    }
    let frame = ResizeTransform::new(1014, 2011, 1024);
    let frame_ok = (frame.content_height(), frame.content_width(), frame.pad_bottom) == (516, 1024, 508);
    let mut drift = 0i64;
    for _ in 0..100 {
        let (h, w) = if rng.gen_bool(0.5) {
            (1014, 2011)
        } else {
            (rng.gen_range(16..2048), rng.gen_range(16..2048))
        };
        let t = ResizeTransform::new(h, w, 1024);
        let (x0, x1) = ordered(&mut rng, w);
        let (y0, y1) = ordered(&mut rng, h);
        let b = BoundingBox::raw(x0, y0, x1, y1);
        let back = map_box(map_box(b, &t, Direction::Forward), &t, Direction::Inverse);
        for (u, v) in b.to_array().iter().zip(back.to_array()) {
            drift = drift.max((u - v).abs());
        }
    }
    outcome(
        "geometry",
        shapes_ok && frame_ok && drift <= 1,
        format!(
            "1024x1024x3 outputs {shapes_ok}; 1014x2011 -> content {}x{} pad_bottom {}; max round-trip drift {drift}px (limit 1)",
            frame.content_height(),
            frame.content_width(),
            frame.pad_bottom
        ),
    )
}

fn ordered(rng: &mut ChaCha8Rng, n: usize) -> (i64, i64) {
    let a = rng.gen_range(0..n as i64);
    let b = rng.gen_range(0..n as i64);
    (a.min(b), a.max(b))
}

fn toy_overfit(dir: &Path) -> Outcome {
    let start = Instant::now();
    let manifest = toy_manifest(dir, 20, 0.75, 0);
    let mut bundle = surrogate();
    let before = digests(&bundle);
    let config = TrainConfig {
        epochs: 20,
        learning_rate: TOY_LR,
        ..Default::default()
    };
    let run = finetune(&manifest, &mut bundle, &config, &RunOptions::default());
    let after = digests(&bundle);
    let elapsed = start.elapsed();
    let (train, _) = manifest.split_counts();
    let dsc = run
        .as_ref()
        .ok()
        .and_then(|_| evaluate_dataset(&bundle, &manifest, Split::Train, 0.5).ok())
        .and_then(|r| r.aggregate)
        .map(|a| a.dsc)
        .unwrap_or(f64::NAN);
    // the encoder and prompt encoder are both frozen under the default policy
    let frozen_same = before[..2] == after[..2];
    outcome(
        "toy overfit",
        run.is_ok() && dsc >= 0.85 && frozen_same && elapsed < Duration::from_secs(300),
        format!(
            "{train} train images, {} epochs at lr {}, train DSC {dsc:.4} (>= 0.85), frozen digests identical {frozen_same}, {:.0}s (limit 300s)",
            config.epochs,
            config.learning_rate,
            elapsed.as_secs_f64()
        ),
    )
}

fn table_arithmetic() -> Outcome {
    let average = |pairs: &[(f64, f64)]| {
        let (a, b) = dsc_reports(pairs);
        improvement_table(&a, &b).unwrap().average_delta
    };
    let t3 = average(&DSC_PAIRS_15);
    let t4 = average(&DSC_PAIRS_11);
    outcome(
        "table arithmetic",
        (t3 - AVERAGE_GAIN_15).abs() <= 5e-4 && (t4 - AVERAGE_GAIN_11).abs() <= 5e-4,
        format!("15 pairs -> {t3:.5} (0.3117 +/- 0.0005); 11 pairs -> {t4:.5} (0.35715 +/- 0.0005)"),
    )
}

fn profiler_counts() -> Vec<Outcome> {
    let b = surrogate();
    let p = count_parameters(&b, FreezePolicy::default());
    let c = p.by_component;
    let hand = surrogate_hand_count();
    let mut out = vec![outcome(
        "profiler: surrogate hand count",
        (c.image_encoder, c.prompt_encoder, c.mask_decoder) == hand
            && c.image_encoder + c.prompt_encoder + c.mask_decoder == p.total,
        format!("{} = {} + {} + {} (hand count {:?})", p.total, c.image_encoder, c.prompt_encoder, c.mask_decoder, hand),
    )];
    match std::env::var(VIT_B_ENV) {
        Ok(path) => {
            let pass;
            let detail;
            let mut total_m = f64::NAN;
            match load_backbone(&path, BackboneConfig::vit_b()) {
                Ok(vit) => {
                    let v = count_parameters(&vit, FreezePolicy::default());
                    let decoder_m = v.trainable as f64 / 1e6;
                    total_m = v.total as f64 / 1e6;
                    pass = (decoder_m - 3.87).abs() / 3.87 <= 0.05;
                    detail = format!("trainable decoder {decoder_m:.3}M (3.87M +/- 5%)");
                }
                Err(e) => {
                    pass = false;
                    detail = format!("cannot load {path}: {e}");
                }
            }
            out.push(outcome("profiler: pretrained decoder count", pass, detail));
            out.push(Outcome {
                name: "profiler: pretrained total count",
                gated: false,
                pass: (total_m - 136.0).abs() / 136.0 <= 0.05,
                detail: format!("total {total_m:.2}M vs published 136M +/- 5% (known discrepancy, not gated)"),
            });
        }
        Err(_) => out.push(Outcome {
            name: "profiler: pretrained checkpoint",
            gated: false,
            pass: true,
            detail: format!("SKIPPED: set {VIT_B_ENV} to a ViT-B safetensors file"),
        }),
    }
    out
}

/// Same layer arithmetic as the profiler integration test, kept independent
/// of the library's own counting.
fn surrogate_hand_count() -> (usize, usize, usize) {
    let linear = |i: usize, o: usize| i * o + o;
    let attention = |c: usize, internal: usize| 3 * linear(c, internal) + linear(internal, c);
    let mlp = |dims: &[usize]| dims.windows(2).map(|w| linear(w[0], w[1])).sum::<usize>();
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let encoder = conv(3, 32, 4) + conv(32, 64, 2) + conv(64, 256, 2) + 2 * 256;
    let prompt = 6 * 256;
    let c = 256;
    let layer = attention(c, 256 / 8) + 2 * attention(c, 256 / 16) + mlp(&[c, 32, c]) + 4 * 2 * c;
    let transformer = 2 * layer + attention(c, 256 / 16) + 2 * c;
    let tokens = c + 4 * c;
    let upscaling = (c * 16 * 4 + 16) + 2 * 16 + (16 * 8 * 4 + 8);
    let hyper = 4 * mlp(&[c, 32, 32, 8]);
    let iou = mlp(&[c, 32, 32, 4]);
    (encoder, prompt, transformer + tokens + upscaling + hyper + iou)
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_pavesam"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism(dir: &Path) -> Outcome {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = dir.join("data");
    let manifest = dir.join("manifest.jsonl");
    let mut ok = cli(&["ingest", "--toy", &s(&data), "--toy-images", "4", "--out", &s(&manifest)]);
    let mut histories = Vec::new();
    let mut evals = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(format!("train_{run}"));
        ok &= cli(&[
            "train", "--manifest", &s(&manifest), "--out", &s(&out), "--epochs", "2", "--seed", "7",
            "--learning-rate", "0.001",
        ]);
        histories.push(std::fs::read(out.join("history.jsonl")).unwrap_or_default());
        let eval_out = dir.join(format!("eval_{run}"));
        ok &= cli(&[
            "eval", "--manifest", &s(&manifest), "--checkpoint", &s(&dir.join("train_a/final.ckpt")), "--split",
            "test", "--out", &s(&eval_out),
        ]);
        let read = |f: &str| std::fs::read(eval_out.join(f)).unwrap_or_default();
        evals.push((read("metrics.jsonl"), read("metrics.txt")));
    }
    let same_history = !histories[0].is_empty() && histories[0] == histories[1];
    let same_eval = !evals[0].0.is_empty() && evals[0] == evals[1];
    outcome(
        "determinism",
        ok && same_history && same_eval,
        format!("CLI runs succeeded {ok}; history.jsonl identical {same_history}; eval outputs identical {same_eval}"),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = vec![
        metric_oracle(),
        loss_identities(),
        gradient_checks(),
        box_extraction(),
        geometry(),
        toy_overfit(&dir.path().join("toy")),
        table_arithmetic(),
    ];
    results.extend(profiler_counts());
    results.push(determinism(&dir.path().join("cli")));
    results.push(Outcome {
        name: "extended Crack500 reproduction",
        gated: false,
        pass: true,
        detail: "DOCUMENTED: requires the pretrained checkpoint and a GPU; see the README reproduction section".into(),
    });

    for r in &results {
        let status = match (r.gated, r.pass) {
            (true, true) => "PASS",
            (true, false) => "FAIL",
            (false, true) => "INFO",
            (false, false) => "INFO (not met)",
        };
        // written to the raw handle so the lines survive libtest output capture
        writeln!(std::io::stderr(), "[{status}] {}: {}", r.name, r.detail).unwrap();
    }
    let failed: Vec<&str> = results.iter().filter(|r| r.gated && !r.pass).map(|r| r.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
