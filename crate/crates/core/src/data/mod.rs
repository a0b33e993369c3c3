//! Two-domain corpora: manifests, decoded samples, paired crop batches and
//! the synthetic stain-shift generator.

mod batches;
mod manifest;
mod sample;
mod synth;

pub use batches::{
    epoch_rng, paired_batch_iterator, steps_per_epoch, DomainBatch, DomainCorpus,
    PairedBatchIterator,
};
pub use manifest::{
    load_manifest, parse_manifest, DatasetManifest, Domain, ManifestEntry, Split, SplitCounts,
};
pub(crate) use sample::reflect_pad_planes;
pub use sample::{
    crop_at, denormalize_image, flip_horizontal, load_sample, normalize_image, pad_to_min,
    random_crop_pair, read_mask, read_rgb, DomainSample, NORM_MEAN, NORM_STD,
};
pub use synth::{
    generate_synthetic_dataset, render_image, Style, SynthImage, SynthSpec, FOREGROUND_RANGE,
    MAX_GLANDS, MIN_GLANDS, MIN_SIZE, NOISE_SIGMA,
};
