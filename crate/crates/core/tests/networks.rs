use dapnet_core::data::Domain;
use dapnet_core::networks::discriminator::{patch_len, stride_plan};
use dapnet_core::networks::{Discriminator, Mode, Networks, SegmentationNetwork, Widths};
use dapnet_core::nn::pool::adaptive_avg_pool_forward;
use dapnet_core::nn::ParamSet;
use dapnet_core::Tensor;
use rand::{Rng, SeedableRng};

fn random_images(b: usize, s: usize, seed: u64) -> Tensor {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b * 3 * s * s).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(&[b, 3, s, s], data).unwrap()
}

/// Trainable scalars of a conv (no bias) followed by batch norm.
fn conv_bn(c_in: usize, c_out: usize, k: usize) -> usize {
    c_in * c_out * k * k + 2 * c_out
}

/// Parameter count derived from the layer table, independently of the
/// network builder.
fn generator_param_oracle() -> usize {
    let mut total = conv_bn(3, 64, 7) + conv_bn(64, 64, 1);
    let mut c = 64;
    for out in [64, 128, 256, 512] {
        total += conv_bn(c, out, 3) + conv_bn(out, out, 3) + 2 * conv_bn(out, out, 3);
        if c != out {
            total += conv_bn(c, out, 1);
        }
        c = out;
    }
    total += 4 * conv_bn(512, 128, 1);
    total += conv_bn(512 + 4 * 128, 512, 3);
    total += conv_bn(512 + 64, 256, 3);
    total += conv_bn(256 + 64, 128, 3);
    total += conv_bn(512 + 256 + 128, 512, 1);
    total += conv_bn(512, 128, 3);
    total + 128 * 2 + 2
}

#[test]
fn full_width_shapes_at_256() {
    let net = SegmentationNetwork::new(0, 1.0);
    let out = net.infer(&random_images(4, 256, 1), Domain::Source).unwrap();
    assert_eq!(out.p.shape(), &[4, 512, 32, 32]);
    assert_eq!(out.f.shape(), &[4, 512, 64, 64]);
    assert_eq!(out.logits.shape(), &[4, 2, 256, 256]);

    let mut d_img = Discriminator::new(0, 2, 1, 512, 1.0);
    let mut d_feat = Discriminator::new(0, 3, 2, 512, 1.0);
    assert_eq!(d_img.forward(&out.p).unwrap().shape(), &[4, 1, 1, 1]);
    assert_eq!(d_feat.forward(&out.f).unwrap().shape(), &[4, 1, 3, 3]);
}

#[test]
fn shape_contract_over_sizes_and_batches() {
    let net = SegmentationNetwork::new(3, 0.25);
    let w = net.widths();
    for s in [64, 128, 256] {
        for b in [1, 4] {
            let out = net.infer(&random_images(b, s, s as u64), Domain::Target).unwrap();
            assert_eq!(out.p.shape(), &[b, w.ppm_out, s / 8, s / 8]);
            assert_eq!(out.f.shape(), &[b, w.fused, s / 4, s / 4]);
            assert_eq!(out.logits.shape(), &[b, 2, s, s]);
        }
    }
}

#[test]
fn size_not_divisible_by_eight_is_rejected() {
    let net = SegmentationNetwork::new(0, 0.125);
    let err = net.infer(&Tensor::zeros(&[1, 3, 100, 100]), Domain::Source).unwrap_err();
    assert!(err.to_string().contains("not divisible by 8"), "{err}");
    assert!(net.infer(&Tensor::zeros(&[1, 1, 64, 64]), Domain::Source).is_err());
}

#[test]
fn discriminator_rejects_tiny_maps() {
    assert!(stride_plan(4).is_err());
    let mut d = Discriminator::new(0, 2, 1, 8, 0.125);
    assert!(d.forward(&Tensor::zeros(&[2, 8, 4, 4])).is_err());
    assert!(d.forward(&Tensor::zeros(&[2, 9, 16, 16])).is_err());
    assert_eq!(patch_len(32).unwrap(), 1);
    assert_eq!(patch_len(64).unwrap(), 3);
}

#[test]
fn discriminator_handles_desk_scale_maps() {
    let mut d = Discriminator::new(0, 2, 1, 8, 0.125);
    for len in [8, 16] {
        let out = d.forward(&Tensor::full(&[2, 8, len, len], 0.3)).unwrap();
        assert_eq!(out.shape()[..2], [2, 1]);
        assert!(out.shape()[2] >= 1 && out.shape()[3] >= 1);
    }
}

#[test]
fn initialization_is_deterministic() {
    let a = Networks::init(42, 0.25);
    let b = Networks::init(42, 0.25);
    let c = Networks::init(43, 0.25);
    assert_eq!(a.generator.params.checksum_all(), b.generator.params.checksum_all());
    assert_eq!(a.d_img.params.checksum_all(), b.d_img.params.checksum_all());
    assert_eq!(a.d_feat.params.checksum_all(), b.d_feat.params.checksum_all());
    assert_ne!(a.generator.params.checksum_all(), c.generator.params.checksum_all());
}

#[test]
fn batch_norm_starts_at_identity() {
    let net = SegmentationNetwork::new(0, 0.125);
    for e in net.params.entries() {
        if e.name.ends_with("bn.weight") {
            assert!(e.value.data().iter().all(|&v| v == 1.0), "{}", e.name);
        }
        if e.name.ends_with("bn.bias") {
            assert!(e.value.data().iter().all(|&v| v == 0.0), "{}", e.name);
        }
    }
}

#[test]
fn width_scaling_and_clamp() {
    let net = SegmentationNetwork::new(0, 0.25);
    let out = net.infer(&random_images(1, 64, 0), Domain::Source).unwrap();
    assert_eq!(out.p.shape()[1], 128);
    assert_eq!(out.f.shape()[1], 128);
    assert_eq!(out.logits.shape()[1], 2);
    let tiny = Widths::scaled(0.01);
    assert_eq!(tiny.stem, 8);
    assert_eq!(tiny.ppm_out, 8);
    assert_eq!(tiny.disc, [8; 4]);
}

#[test]
fn parameter_counts() {
    let d = Discriminator::new(0, 2, 1, 512, 1.0);
    assert_eq!(d.first_layer_params(), 512 * 64 * 4 * 4 + 64);
    assert_eq!(d.first_layer_params(), 524_352);
    assert_eq!(ParamSet::new(0).count_trainable(), 0);

    let g = SegmentationNetwork::new(0, 1.0);
    assert_eq!(g.count_params(), generator_param_oracle());
    assert_eq!(g.count_params(), 18_910_146);
}

#[test]
fn eval_forward_is_pure() {
    let mut net = SegmentationNetwork::new(5, 0.125);
    let x = random_images(2, 64, 9);
    net.forward(&x, Mode::Train, Domain::Source).unwrap();
    let before = net.params.checksum_all();
    let a = net.forward(&x, Mode::Eval, Domain::Source).unwrap();
    let b = net.forward(&x, Mode::Eval, Domain::Source).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.p, b.p);
    assert_eq!(net.params.checksum_all(), before);
}

#[test]
fn train_forward_advances_only_its_domain_statistics() {
    let mut net = SegmentationNetwork::new(5, 0.125);
    let snapshot = |n: &SegmentationNetwork, suffix: &str| -> Vec<f32> {
        n.params
            .entries()
            .iter()
            .filter(|e| e.name.ends_with(suffix))
            .flat_map(|e| e.value.data().to_vec())
            .collect()
    };
    let src0 = snapshot(&net, "running_mean");
    let tgt0 = snapshot(&net, "running_mean_target");
    net.forward(&random_images(2, 64, 1), Mode::Train, Domain::Source).unwrap();
    assert_ne!(snapshot(&net, "running_mean"), src0);
    assert_eq!(snapshot(&net, "running_mean_target"), tgt0);
}

#[test]
fn outputs_are_finite_on_random_input() {
    let mut net = SegmentationNetwork::new(11, 0.25);
    let x = random_images(2, 64, 4);
    for mode in [Mode::Train, Mode::Eval] {
        let out = net.forward(&x, mode, Domain::Target).unwrap();
        assert!(out.p.all_finite() && out.f.all_finite() && out.logits.all_finite());
    }
}

#[test]
fn pooling_a_constant_map_returns_the_constant() {
    for bins in [1, 2, 3, 6] {
        for len in [6, 8, 13, 32] {
            let x = Tensor::full(&[2, 3, len, len], 0.731);
            let pooled = adaptive_avg_pool_forward(&x, bins);
            assert_eq!(pooled.shape(), &[2, 3, bins, bins]);
            assert!(pooled.data().iter().all(|&v| (v - 0.731).abs() < 1e-6));
        }
    }
}
