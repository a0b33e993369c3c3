//! Dataset-level evaluation and report files.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{threshold_map, Confusion};
use super::window::{Predictor, SlidingWindow};
use crate::config::{ExperimentConfig, Variant};
use crate::data::{load_sample, DatasetManifest, Domain, DomainSample, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::networks::SegmentationNetwork;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub acc: f64,
    pub iou: f64,
}

/// Pooled-pixel metrics for one test set, plus per-image values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub pixel_accuracy: f64,
    pub iou: f64,
    pub per_image: Vec<ImageMetrics>,
    pub runtime_seconds: f64,
    pub config_hash: String,
}

impl MetricsReport {
    /// Equality on everything except wall-clock runtime.
    pub fn same_metrics(&self, other: &MetricsReport) -> bool {
        MetricsReport {
            runtime_seconds: 0.0,
            ..self.clone()
        } == MetricsReport {
            runtime_seconds: 0.0,
            ..other.clone()
        }
    }

    pub fn per_image_iou(&self) -> Vec<f64> {
        self.per_image.iter().map(|m| m.iou).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-image metrics as `id,acc,iou` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        for m in &self.per_image {
            w.serialize(m).map_err(|e| Error::Manifest(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Identity of a report: what was evaluated and under which run.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub config_hash: u64,
    pub threshold: f64,
}

impl ReportMeta {
    pub fn from_config(cfg: &ExperimentConfig, dataset: impl Into<String>) -> Self {
        ReportMeta {
            dataset: dataset.into(),
            variant: cfg.variant,
            seed: cfg.seed,
            config_hash: cfg.config_hash(),
            threshold: cfg.threshold,
        }
    }
}

/// Decodes the labeled test samples of `domain`.
pub fn load_test_samples(manifest: &DatasetManifest, domain: Domain) -> Result<Vec<(String, DomainSample)>> {
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.domain == domain && e.split == Split::Test)
        .collect();
    if entries.is_empty() {
        return Err(Error::Precondition(format!("no {domain} test images in manifest")));
    }
    if let Some(e) = entries.iter().find(|e| e.mask.is_none()) {
        return Err(Error::Precondition(format!(
            "test image {} has no mask",
            e.image.display()
        )));
    }
    exec::map_slice(&entries, |e| Ok((e.id(), load_sample(e)?)))
        .into_iter()
        .collect()
}

/// Evaluates `predictor` over labeled samples, pooling pixels across images.
pub fn evaluate_samples<P: Predictor>(
    predictor: &P,
    samples: &[(String, DomainSample)],
    meta: &ReportMeta,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty test split".into()));
    }
    let start = Instant::now();
    let per: Vec<Result<(String, Confusion)>> = exec::map_slice(samples, |(id, s)| {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("test image {id} has no mask")))?;
        let pred = threshold_map(&predictor.foreground(s)?, meta.threshold);
        Ok((id.clone(), Confusion::count(&pred, gt)?))
    });
    let mut pooled = Confusion::default();
    let mut per_image = Vec::with_capacity(per.len());
    for r in per {
        let (id, c) = r?;
        pooled = pooled.merge(c);
        per_image.push(ImageMetrics {
            id,
            acc: c.accuracy(),
            iou: c.iou(),
        });
    }
    Ok(MetricsReport {
        dataset: meta.dataset.clone(),
        variant: meta.variant,
        seed: meta.seed,
        pixel_accuracy: pooled.accuracy(),
        iou: pooled.iou(),
        per_image,
        runtime_seconds: start.elapsed().as_secs_f64(),
        config_hash: format!("{:016x}", meta.config_hash),
    })
}

/// Evaluates `predictor` on the test split of `domain` in `manifest`.
pub fn evaluate_dataset<P: Predictor>(
    predictor: &P,
    manifest: &DatasetManifest,
    domain: Domain,
    meta: &ReportMeta,
) -> Result<MetricsReport> {
    let samples = load_test_samples(manifest, domain)?;
    evaluate_samples(predictor, &samples, meta)
}

/// Sliding-window evaluation of a trained network with the configured window.
pub fn evaluate_network(
    net: &SegmentationNetwork,
    samples: &[(String, DomainSample)],
    cfg: &ExperimentConfig,
    dataset: &str,
) -> Result<MetricsReport> {
    let predictor = SlidingWindow {
        model: net,
        window: cfg.window(),
        stride: cfg.stride(),
    };
    evaluate_samples(&predictor, samples, &ReportMeta::from_config(cfg, dataset))
}

/// Writes a one-line summary table of several reports.
pub fn write_summary_table(reports: &[MetricsReport], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "dataset\tvariant\tseed\tacc\tiou")?;
    for r in reports {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}",
            r.dataset, r.variant, r.seed, r.pixel_accuracy, r.iou
        )?;
    }
    Ok(())
}
