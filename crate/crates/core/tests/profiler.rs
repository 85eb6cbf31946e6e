use pavesam::model::{BackboneBundle, BackboneConfig, FreezePolicy};
use pavesam::profiler::{
    count_parameters, estimate_flops, measure_fps, profile, total_flops, trace_layers, ProfileOptions, TimedComponent,
};

fn linear(i: usize, o: usize) -> usize {
    i * o + o
}

fn attention(c: usize, internal: usize) -> usize {
    3 * linear(c, internal) + linear(internal, c)
}

fn mlp(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| linear(w[0], w[1])).sum()
}

/// Surrogate counts written out from the layer dimensions it declares.
fn surrogate_hand_count() -> (usize, usize, usize) {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
    let encoder = conv(3, 32, 4) + conv(32, 64, 2) + conv(64, 256, 2) + 2 * 256;

    // four point-type embeddings, the not-a-point and no-mask embeddings
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

#[test]
fn surrogate_counts_match_the_hand_count() {
    let b = BackboneBundle::random(BackboneConfig::surrogate()).unwrap();
    let p = count_parameters(&b, FreezePolicy::default());
    let (enc, prompt, dec) = surrogate_hand_count();
    assert_eq!(p.by_component.image_encoder, enc);
    assert_eq!(p.by_component.prompt_encoder, prompt);
    assert_eq!(p.by_component.mask_decoder, dec);
    assert_eq!(p.total, enc + prompt + dec);
    assert_eq!(p.trainable, dec);
    assert!(p.total < 1_000_000);
    assert_eq!(b.trainable_parameters(FreezePolicy::default()).count, dec);
    assert_eq!(count_parameters(&b, FreezePolicy::all_frozen()).trainable, 0);
    assert!(b.trainable_parameters(FreezePolicy::all_frozen()).names.is_empty());
}

#[test]
fn flops_double_with_batch() {
    let b = BackboneBundle::random(BackboneConfig::surrogate()).unwrap();
    let one = total_flops(&trace_layers(&b, 1)).unwrap();
    let two = total_flops(&trace_layers(&b, 2)).unwrap();
    assert!(one > 0);
    assert_eq!(two, 2 * one);
}

#[test]
fn vit_b_architecture_counts_and_flops() {
    let b = BackboneBundle::random(BackboneConfig::vit_b()).unwrap();
    let p = count_parameters(&b, FreezePolicy::default());
    // totals of the reference PyTorch implementation of this architecture
    assert_eq!(p.by_component.image_encoder, 89_670_912);
    assert_eq!(p.by_component.prompt_encoder, 6_220);
    assert_eq!(p.by_component.mask_decoder, 4_058_340);
    assert_eq!(p.total, 93_735_472);
    let decoder_m = p.trainable as f64 / 1e6;
    assert!((decoder_m - 3.87).abs() / 3.87 <= 0.05, "{decoder_m}");
    let gmacs = estimate_flops(&b).unwrap() / 2.0;
    assert!((gmacs - 487.0).abs() / 487.0 <= 0.15, "{gmacs} GMACs");
}

#[test]
fn prompt_encoder_is_faster_than_image_encoder_and_timings_are_stable() {
    let b = BackboneBundle::random(BackboneConfig::surrogate()).unwrap();
    let prompt = measure_fps(&b, TimedComponent::PromptEncoder, 2, 20).unwrap();
    let image = measure_fps(&b, TimedComponent::ImageEncoder, 2, 10).unwrap();
    assert!(prompt.fps > image.fps);
    assert!(!image.device.is_empty());
    // stability gate on the heaviest component; the first pair may include
    // warm-up noise on a shared machine, so allow one retry
    let stable = (0..2).any(|_| {
        let a = measure_fps(&b, TimedComponent::ImageEncoder, 2, 10).unwrap().fps;
        let c = measure_fps(&b, TimedComponent::ImageEncoder, 2, 10).unwrap().fps;
        (a - c).abs() / a.max(c) < 0.2
    });
    assert!(stable);
}

#[test]
fn report_components_sum_to_total() {
    let b = BackboneBundle::random(BackboneConfig::surrogate()).unwrap();
    let r = profile(
        &b,
        ProfileOptions {
            measure_fps: false,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(r.params_by_component.total(), r.params_total);
    assert!(r.fps_by_component.is_none());
    let table = r.to_table();
    assert!(table.contains("GFLOPs") && table.contains("Parameters(M)") && table.contains("Model size(MB"));
    // stored tensors are the parameters plus the frozen 2x128 positional-encoding matrix
    let stored = r.params_total + 2 * 128;
    assert!((r.model_size_mb - stored as f64 * 4.0 / 1e6).abs() < 1e-9);
}
