use std::path::Path;

use dapnet_core::data::*;
use dapnet_core::ExperimentConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_with_gradient(h: usize, w: usize, labeled: bool) -> DomainSample {
    let raw: Vec<u8> = (0..h * w * 3).map(|i| (i % 251) as u8).collect();
    let image = normalize_image(&raw, h, w, 3).unwrap();
    let mask = labeled.then(|| (0..h * w).map(|i| (i / w + i % w).is_multiple_of(3) as u8).collect());
    DomainSample::new(image, mask, Domain::Source).unwrap()
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir)
        .into_iter()
        .map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn normalization_examples() {
    let t = normalize_image(&[255, 255, 255], 1, 1, 3).unwrap();
    assert_eq!(t.data(), &[1.0, 1.0, 1.0]);
    let t = normalize_image(&[128, 0, 128], 1, 1, 3).unwrap();
    let expect = 128.0 / 255.0 * 2.0 - 1.0;
    assert!((t.data()[0] - expect).abs() < 1e-6);
    assert!((t.data()[0] - 0.0039).abs() < 1e-4);
    assert_eq!(t.data()[1], -1.0);
    assert!(normalize_image(&[10, 20], 1, 2, 1).is_err());
}

#[test]
fn crop_examples() {
    let big = sample_with_gradient(512, 512, true);
    let (a, off_a) = random_crop_pair(&big, 256, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let (b, off_b) = random_crop_pair(&big, 256, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(off_a, off_b);
    assert_eq!(a, b);
    assert_eq!(a.mask, crop_at(&big, 256, off_a).unwrap().mask);

    let exact = sample_with_gradient(256, 256, true);
    let (c, off) = random_crop_pair(&exact, 256, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(off, (0, 0));
    assert_eq!(c, exact);

    let small = sample_with_gradient(200, 300, true);
    assert!(random_crop_pair(&small, 256, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    let padded = pad_to_min(&small, 256);
    assert_eq!((padded.height(), padded.width()), (256, 300));
    assert!(random_crop_pair(&padded, 256, &mut ChaCha8Rng::seed_from_u64(1)).is_ok());
}

#[test]
fn synthetic_corpus_is_byte_identical_across_invocations() {
    let spec = SynthSpec::new(5, 6, 64, Style::StainA, false);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic_dataset(a.path(), &spec).unwrap();
    generate_synthetic_dataset(b.path(), &spec).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 13);
    assert_eq!(ta, tb);
}

#[test]
fn paired_styles_share_masks() {
    for idx in 0..5 {
        let a = render_image(&SynthSpec::new(9, 5, 96, Style::StainA, true), idx);
        let b = render_image(&SynthSpec::new(9, 5, 96, Style::StainB, true), idx);
        assert_eq!(a.mask, b.mask);
        assert_ne!(a.rgb, b.rgb);
    }
}

#[test]
fn foreground_fraction_stays_in_range() {
    for style in [Style::StainA, Style::StainB] {
        let spec = SynthSpec::new(2024, 100, 128, style, false);
        for idx in 0..100 {
            let frac = render_image(&spec, idx).foreground_fraction();
            assert!((0.10..=0.60).contains(&frac), "{style} #{idx}: {frac}");
        }
    }
}

#[test]
fn synthetic_manifest_loads_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_test: 2,
        ..SynthSpec::new(1, 6, 64, Style::StainB, false)
    };
    generate_synthetic_dataset(dir.path(), &spec).unwrap();
    let manifest = load_manifest(&dir.path().join("manifest.csv")).unwrap();
    manifest.validate_files().unwrap();
    let counts = manifest.counts();
    assert_eq!(manifest.select(Split::Train).len(), 4);
    assert_eq!(manifest.select(Split::Test).len(), 2);
    assert!(manifest.entries.iter().all(|e| e.domain == Domain::Target));
    assert_eq!(counts, manifest.counts());

    let sample = load_sample(&manifest.entries[0]).unwrap();
    assert_eq!((sample.height(), sample.width()), (64, 64));
    assert!(sample.mask.as_ref().unwrap().iter().all(|&m| m <= 1));
}

#[test]
fn manifest_rejects_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = "image,mask,domain,split\nnope.png,nope_mask.png,source,train\n";
    let manifest = parse_manifest(text, dir.path()).unwrap();
    assert!(manifest.validate_files().is_err());
    assert!(load_manifest(&dir.path().join("absent.csv")).is_err());
}

fn corpus(n: usize, size: usize, domain: Domain, seed: u64) -> DomainCorpus {
    let style = match domain {
        Domain::Source => Style::StainA,
        Domain::Target => Style::StainB,
    };
    let spec = SynthSpec::new(seed, n, size, style, false);
    let samples = (0..n)
        .map(|i| {
            let img = render_image(&spec, i);
            let image = normalize_image(&img.rgb, size, size, 3).unwrap();
            let mask = (domain == Domain::Source).then(|| img.mask.iter().map(|&m| (m > 0) as u8).collect());
            DomainSample::new(image, mask, domain).unwrap()
        })
        .collect();
    DomainCorpus::from_samples(samples, domain, size)
}

#[test]
fn epoch_length_and_recycling() {
    assert_eq!(steps_per_epoch(85, 4, 4), 85);
    assert_eq!(steps_per_epoch(10, 1, 4), 3);

    let source = corpus(8, 64, Domain::Source, 1);
    let target = corpus(3, 64, Domain::Target, 2);
    let cfg = ExperimentConfig {
        crop_size: 32,
        crops_per_image: 2,
        batch_size: 4,
        ..ExperimentConfig::default()
    };
    let iter = paired_batch_iterator(&source, &target, &cfg, epoch_rng(0, 0)).unwrap();
    assert_eq!(iter.len(), 4);
    let batches: Vec<_> = iter.collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.len(), 4);
    for (s, t) in &batches {
        assert_eq!(s.images.shape(), &[4, 3, 32, 32]);
        assert_eq!(s.masks.as_ref().unwrap().shape(), &[4, 32, 32]);
        assert!(t.masks.is_none());
        assert_eq!((s.domain, t.domain), (Domain::Source, Domain::Target));
    }
}

#[test]
fn fixed_seed_gives_identical_batches() {
    let source = corpus(6, 64, Domain::Source, 3);
    let target = corpus(4, 64, Domain::Target, 4);
    let cfg = ExperimentConfig {
        crop_size: 32,
        crops_per_image: 2,
        ..ExperimentConfig::default()
    };
    let hashes = |epoch| -> Vec<(u64, u64)> {
        paired_batch_iterator(&source, &target, &cfg, epoch_rng(9, epoch))
            .unwrap()
            .map(|r| {
                let (s, t) = r.unwrap();
                (s.hash(), t.hash())
            })
            .collect()
    };
    assert_eq!(hashes(0), hashes(0));
    assert_ne!(hashes(0), hashes(1));
}

#[test]
fn empty_split_is_an_error() {
    let source = corpus(2, 64, Domain::Source, 3);
    let empty = DomainCorpus::from_samples(Vec::new(), Domain::Target, 64);
    let cfg = ExperimentConfig {
        crop_size: 32,
        ..ExperimentConfig::default()
    };
    assert!(paired_batch_iterator(&source, &empty, &cfg, epoch_rng(0, 0)).is_err());
    assert!(paired_batch_iterator(&empty, &source, &cfg, epoch_rng(0, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn crop_keeps_mask_aligned(h in 8usize..40, w in 8usize..40, size in 1usize..8, seed in any::<u64>()) {
        let sample = sample_with_gradient(h, w, true);
        let (crop, offset) = random_crop_pair(&sample, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let reference = crop_at(&sample, size, offset).unwrap();
        prop_assert_eq!(&crop.mask, &reference.mask);
        prop_assert_eq!(&crop.image, &reference.image);
        let (y, x) = offset;
        let full = sample.mask.as_ref().unwrap();
        for r in 0..size {
            for c in 0..size {
                prop_assert_eq!(crop.mask.as_ref().unwrap()[r * size + c], full[(y + r) * w + x + c]);
            }
        }
    }

    #[test]
    fn normalization_round_trips(raw in prop::collection::vec(any::<u8>(), 3 * 12)) {
        let t = normalize_image(&raw, 3, 4, 3).unwrap();
        prop_assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(denormalize_image(&t), raw);
    }
}
