//! Paired source/target crop batches.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Domain, Split};
use super::sample::{flip_horizontal, load_sample, pad_to_min, random_crop_pair, DomainSample};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{derive_rng, streams};
use crate::tensor::Tensor;

/// `images` is `B×3×S×S`; `masks`, when present, is `B×S×S` with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub images: Tensor,
    pub masks: Option<Tensor>,
    pub domain: Domain,
}

impl DomainBatch {
    pub fn from_samples(samples: &[DomainSample], domain: Domain, keep_masks: bool) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Precondition("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let images: Vec<Tensor> = samples
            .iter()
            .map(|s| {
                let shape = s.image.shape();
                s.image.clone().reshape(&[1, shape[0], shape[1], shape[2]])
            })
            .collect::<Result<_>>()?;
        let images = Tensor::stack(&images)?;
        let masks = if keep_masks {
            let mut data = Vec::with_capacity(samples.len() * h * w);
            for s in samples {
                let m = s.mask.as_ref().ok_or_else(|| {
                    Error::Precondition("labeled batch contains an unlabeled sample".into())
                })?;
                data.extend(m.iter().map(|&v| v as f32));
            }
            Some(Tensor::from_vec(&[samples.len(), h, w], data)?)
        } else {
            None
        };
        Ok(DomainBatch {
            images,
            masks,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Content hash over images and masks.
    pub fn hash(&self) -> u64 {
        let h = self.images.checksum();
        match &self.masks {
            Some(m) => h ^ m.checksum().rotate_left(1),
            None => h,
        }
    }
}

/// In-memory decoded training images for one domain, padded up to the crop size.
#[derive(Debug, Clone)]
pub struct DomainCorpus {
    samples: Vec<DomainSample>,
    domain: Domain,
}

impl DomainCorpus {
    pub fn from_samples(samples: Vec<DomainSample>, domain: Domain, min_size: usize) -> Self {
        let samples = samples.iter().map(|s| pad_to_min(s, min_size)).collect();
        DomainCorpus { samples, domain }
    }

    /// Decodes every `domain`/`split` entry of the manifest.
    pub fn load(manifest: &DatasetManifest, domain: Domain, split: Split, min_size: usize) -> Result<Self> {
        let entries: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| e.domain == domain && e.split == split)
            .collect();
        let samples = exec::map_slice(&entries, |e| load_sample(e))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_samples(samples, domain, min_size))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[DomainSample] {
        &self.samples
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }
}

pub fn steps_per_epoch(source_count: usize, crops_per_image: usize, batch_size: usize) -> usize {
    (source_count * crops_per_image).div_ceil(batch_size)
}

/// Data-order stream for one epoch. Resuming at `epoch` reproduces the order.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    derive_rng(seed, streams::DATA_BASE + epoch as u64)
}

/// Endless shuffled index cycle; reshuffles on every wrap.
#[derive(Debug, Clone)]
struct Cycle {
    base: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
}

impl Cycle {
    fn new(base: Vec<usize>) -> Self {
        Cycle {
            order: Vec::new(),
            pos: 0,
            base,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.clone_from(&self.base);
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Single-consumer iterator over one epoch of `(source, target)` batches.
pub struct PairedBatchIterator<'a> {
    source: &'a DomainCorpus,
    target: &'a DomainCorpus,
    batch_size: usize,
    crop_size: usize,
    flip: bool,
    rng: ChaCha8Rng,
    source_cycle: Cycle,
    target_cycle: Cycle,
    remaining: usize,
}

pub fn paired_batch_iterator<'a>(
    source: &'a DomainCorpus,
    target: &'a DomainCorpus,
    cfg: &ExperimentConfig,
    rng: ChaCha8Rng,
) -> Result<PairedBatchIterator<'a>> {
    if source.is_empty() {
        return Err(Error::Precondition("source training split is empty".into()));
    }
    if target.is_empty() {
        return Err(Error::Precondition("target training split is empty".into()));
    }
    if let Some(s) = source.samples.iter().find(|s| !s.is_labeled()) {
        return Err(Error::Precondition(format!(
            "source training sample of size {}×{} has no mask",
            s.height(),
            s.width()
        )));
    }
    let source_base = (0..source.len())
        .flat_map(|i| std::iter::repeat_n(i, cfg.crops_per_image))
        .collect();
    Ok(PairedBatchIterator {
        source,
        target,
        batch_size: cfg.batch_size,
        crop_size: cfg.crop_size,
        flip: cfg.flip_augment,
        rng,
        source_cycle: Cycle::new(source_base),
        target_cycle: Cycle::new((0..target.len()).collect()),
        remaining: steps_per_epoch(source.len(), cfg.crops_per_image, cfg.batch_size),
    })
}

impl PairedBatchIterator<'_> {
    pub fn steps_remaining(&self) -> usize {
        self.remaining
    }

    fn draw(&mut self, source: bool) -> Result<DomainBatch> {
        let mut crops = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let (corpus, idx) = if source {
                (self.source, self.source_cycle.next(&mut self.rng))
            } else {
                (self.target, self.target_cycle.next(&mut self.rng))
            };
            let (mut crop, _) = random_crop_pair(&corpus.samples[idx], self.crop_size, &mut self.rng)?;
            if self.flip && self.rng.random_bool(0.5) {
                flip_horizontal(&mut crop);
            }
            crops.push(crop);
        }
        let domain = if source { Domain::Source } else { Domain::Target };
        DomainBatch::from_samples(&crops, domain, source)
    }
}

impl Iterator for PairedBatchIterator<'_> {
    type Item = Result<(DomainBatch, DomainBatch)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.draw(true).and_then(|s| Ok((s, self.draw(false)?))))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for PairedBatchIterator<'_> {}
