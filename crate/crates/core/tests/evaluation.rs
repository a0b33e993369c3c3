use dapnet_core::config::Variant;
use dapnet_core::data::{generate_synthetic_dataset, load_manifest, Domain, DomainSample, Style, SynthSpec};
use dapnet_core::evaluation::*;
use dapnet_core::networks::SegmentationNetwork;
use dapnet_core::{ExperimentConfig, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Emits the ground-truth mask.
struct Oracle;

impl Predictor for Oracle {
    fn foreground(&self, s: &DomainSample) -> Result<Vec<f32>> {
        Ok(s.mask.as_ref().unwrap().iter().map(|&m| m as f32).collect())
    }
}

/// Predicts background everywhere.
struct Background;

impl Predictor for Background {
    fn foreground(&self, s: &DomainSample) -> Result<Vec<f32>> {
        Ok(vec![0.0; s.height() * s.width()])
    }
}

/// Reads its prediction from the sign of the first image channel.
struct FromImage;

impl Predictor for FromImage {
    fn foreground(&self, s: &DomainSample) -> Result<Vec<f32>> {
        let plane = s.height() * s.width();
        Ok(s.image.data()[..plane].iter().map(|&v| (v > 0.0) as u8 as f32).collect())
    }
}

/// Position-dependent model: foreground probability depends on the pixel
/// value and on the column inside the window.
struct ColumnModel;

impl WindowModel for ColumnModel {
    fn probabilities(&self, batch: &Tensor, _: Domain) -> Result<Tensor> {
        let (b, _, h, w) = batch.dims4();
        let mut out = Tensor::zeros(&[b, 2, h, w]);
        let plane = h * w;
        for n in 0..b {
            for p in 0..plane {
                let v = batch.data()[n * 3 * plane + p];
                let fg = 1.0 / (1.0 + (-(v + 0.05 * (p % w) as f32)).exp());
                out.data_mut()[(n * 2 + 1) * plane + p] = fg;
                out.data_mut()[n * 2 * plane + p] = 1.0 - fg;
            }
        }
        Ok(out)
    }
}

fn meta() -> ReportMeta {
    ReportMeta {
        dataset: "unit".into(),
        variant: Variant::Na,
        seed: 0,
        config_hash: 0,
        threshold: 0.5,
    }
}

fn sample(image: Vec<f32>, mask: Vec<u8>, h: usize, w: usize) -> DomainSample {
    let image = Tensor::from_vec(&[3, h, w], image).unwrap();
    DomainSample::new(image, Some(mask), Domain::Target).unwrap()
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..3 * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

#[test]
fn metric_examples() {
    let gt = [1u8, 0, 1, 0];
    let comp = [0u8, 1, 0, 1];
    assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
    assert_eq!(pixel_accuracy(&comp, &gt).unwrap(), 0.0);
    assert_eq!(pixel_accuracy(&[1, 1, 1, 0], &gt).unwrap(), 0.75);
    assert_eq!(intersection_over_union(&gt, &gt).unwrap(), 1.0);
    assert_eq!(intersection_over_union(&comp, &gt).unwrap(), 0.0);

    // Two 2×2 squares on a 3×3 grid, offset by one column.
    let a = [1u8, 1, 0, 1, 1, 0, 0, 0, 0];
    let b = [0u8, 1, 1, 0, 1, 1, 0, 0, 0];
    assert!((intersection_over_union(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-12);
    assert!(pixel_accuracy(&[1], &[1, 0]).is_err());
}

#[test]
fn window_grid_arithmetic() {
    assert_eq!(window_offsets(1280, 256, 128).unwrap().len(), 9);
    assert_eq!(window_offsets(1024, 256, 128).unwrap().len(), 7);
    assert_eq!(window_offsets(300, 256, 128).unwrap(), vec![0, 44]);
    assert!(window_offsets(300, 256, 0).is_err());
    assert!(window_offsets(300, 256, 300).is_err());
}

#[test]
fn constant_classifier_yields_constant_softmax() {
    let mut net = SegmentationNetwork::new(1, 0.125);
    let w = net.params.find(SegmentationNetwork::classifier_weight_name()).unwrap();
    let b = net.params.find(SegmentationNetwork::classifier_bias_name()).unwrap();
    net.params.get_mut(w).data_mut().fill(0.0);
    net.params.get_mut(b).data_mut().copy_from_slice(&[0.3, -0.4]);
    let expect = 1.0 / (1.0 + (0.3f32 + 0.4).exp());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = Tensor::from_vec(&[3, 100, 90], random_image(100, 90, &mut rng)).unwrap();
    let fg = sliding_window_infer(&net, &image, Domain::Source, 64, 24).unwrap();
    assert_eq!(fg.len(), 100 * 90);
    assert!(fg.iter().all(|&p| (p - expect).abs() < 1e-6));
}

#[test]
fn stride_equal_to_window_matches_independent_tiling() {
    let (h, w, win) = (96, 64, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_image(h, w, &mut rng);
    let image = Tensor::from_vec(&[3, h, w], data.clone()).unwrap();
    let got = sliding_window_infer(&ColumnModel, &image, Domain::Target, win, win).unwrap();

    let mut expect = vec![0f32; h * w];
    for ty in (0..h).step_by(win) {
        for tx in (0..w).step_by(win) {
            let mut tile = vec![0f32; 3 * win * win];
            for c in 0..3 {
                for y in 0..win {
                    for x in 0..win {
                        tile[(c * win + y) * win + x] = data[(c * h + ty + y) * w + tx + x];
                    }
                }
            }
            let t = Tensor::from_vec(&[1, 3, win, win], tile).unwrap();
            let probs = ColumnModel.probabilities(&t, Domain::Target).unwrap();
            for y in 0..win {
                for x in 0..win {
                    expect[(ty + y) * w + tx + x] = probs.data()[win * win + y * win + x];
                }
            }
        }
    }
    assert_eq!(got, expect);
}

#[test]
fn oracle_and_background_predictors() {
    // Every mask has 30% foreground.
    let (h, w) = (10, 10);
    let samples: Vec<(String, DomainSample)> = (0..4)
        .map(|i| {
            let mask = (0..h * w).map(|p| ((p + 7 * i) % 10 < 3) as u8).collect();
            (format!("img{i}"), sample(vec![0.0; 3 * h * w], mask, h, w))
        })
        .collect();
    let oracle = evaluate_samples(&Oracle, &samples, &meta()).unwrap();
    assert_eq!((oracle.pixel_accuracy, oracle.iou), (1.0, 1.0));
    let bg = evaluate_samples(&Background, &samples, &meta()).unwrap();
    assert!((bg.pixel_accuracy - 0.70).abs() < 1e-12);
    assert_eq!(bg.iou, 0.0);
    assert_eq!(bg.per_image.len(), 4);
}

#[test]
fn pooled_metrics_match_brute_force_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (h, w) = (8, 8);
    let mut samples = Vec::new();
    let (mut all_pred, mut all_gt) = (Vec::new(), Vec::new());
    for i in 0..10 {
        let pred: Vec<u8> = (0..h * w).map(|_| rng.random_bool(0.4) as u8).collect();
        let gt: Vec<u8> = (0..h * w).map(|_| rng.random_bool(0.3) as u8).collect();
        let mut image = vec![-1.0f32; 3 * h * w];
        for (p, &v) in pred.iter().enumerate() {
            image[p] = if v == 1 { 1.0 } else { -1.0 };
        }
        all_pred.extend_from_slice(&pred);
        all_gt.extend_from_slice(&gt);
        samples.push((format!("{i}"), sample(image, gt, h, w)));
    }
    let report = evaluate_samples(&FromImage, &samples, &meta()).unwrap();

    let (mut inter, mut union, mut agree) = (0usize, 0usize, 0usize);
    for (p, g) in all_pred.iter().zip(&all_gt) {
        inter += (*p == 1 && *g == 1) as usize;
        union += (*p == 1 || *g == 1) as usize;
        agree += (p == g) as usize;
    }
    assert!((report.iou - inter as f64 / union as f64).abs() < 1e-12);
    assert!((report.pixel_accuracy - agree as f64 / all_gt.len() as f64).abs() < 1e-12);
    for m in &report.per_image {
        assert!((0.0..=1.0).contains(&m.iou) && (0.0..=1.0).contains(&m.acc));
    }
}

fn synthetic_test_set(dir: &std::path::Path) -> Vec<(String, DomainSample)> {
    let spec = SynthSpec {
        n_test: 6,
        ..SynthSpec::new(4, 6, 64, Style::StainB, false)
    };
    generate_synthetic_dataset(dir, &spec).unwrap();
    let manifest = load_manifest(&dir.join("manifest.csv")).unwrap();
    load_test_samples(&manifest, Domain::Target).unwrap()
}

#[test]
fn evaluation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synthetic_test_set(dir.path());
    assert_eq!(samples.len(), 6);
    let cfg = ExperimentConfig {
        crop_size: 32,
        channel_width_scale: 0.125,
        ..ExperimentConfig::default()
    };
    let net = SegmentationNetwork::new(0, 0.125);
    let a = evaluate_network(&net, &samples, &cfg, "synthetic").unwrap();
    let b = evaluate_network(&net, &samples, &cfg, "synthetic").unwrap();
    assert!(a.same_metrics(&b));
    assert_eq!(a.per_image, b.per_image);

    let path = dir.path().join("report.json");
    a.save_json(&path).unwrap();
    assert_eq!(MetricsReport::load_json(&path).unwrap(), a);
}

#[test]
fn overlays_are_counted_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synthetic_test_set(&dir.path().join("data"));
    let net = SegmentationNetwork::new(0, 0.125);
    let predictor = SlidingWindow {
        model: &net,
        window: 32,
        stride: 16,
    };
    let a = emit_overlays(&predictor, &samples, 0.5, &dir.path().join("a")).unwrap();
    let b = emit_overlays(&predictor, &samples, 0.5, &dir.path().join("b")).unwrap();
    assert_eq!(a.len(), 6);
    for (pa, pb) in a.iter().zip(&b) {
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    // The right panel is the thresholded sliding-window prediction.
    let (id, s) = &samples[0];
    let img = image::open(dir.path().join("a").join(format!("{id}.png"))).unwrap().to_rgb8();
    let pred = threshold_map(&predictor.foreground(s).unwrap(), 0.5);
    let w = s.width();
    for (p, &v) in pred.iter().enumerate() {
        let px = img.get_pixel((2 * w + p % w) as u32, (p / w) as u32);
        assert_eq!(px.0[0], v * 255);
    }
}

/// Two-sided p-value for Student's t with 4 degrees of freedom by Simpson
/// integration of the density `3/8 · (1 + t²/4)^(-5/2)`.
fn p_value_df4(t: f64) -> f64 {
    let pdf = |x: f64| 0.375 * (1.0 + x * x / 4.0).powf(-2.5);
    let (a, b, n) = (t.abs(), 2000.0, 400_000);
    let h = (b - a) / n as f64;
    let mut s = pdf(a) + pdf(b);
    for i in 1..n {
        s += pdf(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * s * h / 3.0
}

#[test]
fn paired_t_test_examples() {
    let b = [0.1, 0.2, 0.3, 0.4, 0.5];
    let a: Vec<f64> = b.iter().zip(1..=5).map(|(x, d)| x + d as f64).collect();
    let r = paired_t_test(&a, &b).unwrap();
    let t_oracle = 3.0 / (2.5f64.sqrt() / 5f64.sqrt());
    assert!((r.t - t_oracle).abs() < 1e-9);
    assert!((r.t - 4.2426).abs() < 1e-4);
    assert_eq!(r.df, 4);
    assert!((r.p - p_value_df4(t_oracle)).abs() < 1e-6, "{} vs {}", r.p, p_value_df4(t_oracle));
    assert!((r.p - 0.0132).abs() < 1e-4);

    let same = paired_t_test(&b, &b).unwrap();
    assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, Some(Degenerate::NoDifference)));
    assert!(paired_t_test(&[1.0], &[0.0]).is_err());
}

fn report_with(iou: f64, acc: f64) -> MetricsReport {
    MetricsReport {
        dataset: "d".into(),
        variant: Variant::Full,
        seed: 0,
        pixel_accuracy: acc,
        iou,
        per_image: Vec::new(),
        runtime_seconds: 0.0,
        config_hash: String::new(),
    }
}

#[test]
fn run_summaries() {
    let s = summarize_runs(&[report_with(0.6, 0.9), report_with(0.6, 0.9), report_with(0.6, 0.9)]).unwrap();
    assert!((s.iou.mean - 0.6).abs() < 1e-12 && s.iou.sd.abs() < 1e-12);
    let s = summarize_runs(&[report_with(0.1, 0.5), report_with(0.3, 0.5)]).unwrap();
    assert!((s.iou.mean - 0.2).abs() < 1e-12);
    assert!((s.iou.sd - 0.1414).abs() < 1e-4);
    assert_eq!(s.iou.to_string(), "0.2000 ± 0.1414");
    assert!(summarize_runs(&[]).is_err());
}
