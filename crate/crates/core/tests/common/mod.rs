#![allow(dead_code)]

use dapnet_core::data::{normalize_image, render_image, Domain, DomainBatch, DomainCorpus, DomainSample, Style, SynthSpec};
use dapnet_core::{ExperimentConfig, Variant};

/// In-memory synthetic corpus; source samples carry masks.
pub fn corpus(n: usize, size: usize, domain: Domain, seed: u64) -> DomainCorpus {
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

/// A few-second configuration: 48-pixel crops, width scale 1/8.
pub fn tiny_config(variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        variant,
        crop_size: 48,
        batch_size: 2,
        crops_per_image: 1,
        channel_width_scale: 0.125,
        total_epochs: 4,
        constant_epochs: 2,
        checkpoint_every: 2,
        seed: 3,
        ..ExperimentConfig::default()
    }
}

/// First `(source, target)` batch pair of epoch 0.
pub fn first_batches(cfg: &ExperimentConfig, source: &DomainCorpus, target: &DomainCorpus) -> (DomainBatch, DomainBatch) {
    let mut it = dapnet_core::data::paired_batch_iterator(source, target, cfg, dapnet_core::data::epoch_rng(cfg.seed, 0)).unwrap();
    it.next().unwrap().unwrap()
}
