//! Variant comparison under a shared seed and data order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{load_training_corpora, train_on, TrainOptions};
use crate::config::{ExperimentConfig, Variant};
use crate::data::{load_manifest, Domain, DomainCorpus, DomainSample};
use crate::error::Result;
use crate::evaluation::{evaluate_network, load_test_samples, MetricsReport};

pub const SOURCE_TEST: &str = "source_test";
pub const TARGET_TEST: &str = "target_test";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub source: MetricsReport,
    pub target: MetricsReport,
    /// One hash per epoch over every batch consumed.
    pub batch_hashes: Vec<u64>,
}

/// Labeled test samples for both domains.
pub struct TestSets {
    pub source: Vec<(String, DomainSample)>,
    pub target: Vec<(String, DomainSample)>,
}

impl TestSets {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let src = load_manifest(&cfg.source_manifest)?;
        let tgt = load_manifest(&cfg.target_manifest)?;
        Ok(TestSets {
            source: load_test_samples(&src, Domain::Source)?,
            target: load_test_samples(&tgt, Domain::Target)?,
        })
    }
}

/// Trains each of `variants` from the same seed on the same batches and
/// evaluates on both test sets. Run directories are `out_dir/<variant>`.
pub fn run_variants(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    source: &DomainCorpus,
    target: &DomainCorpus,
    tests: &TestSets,
    out_dir: &Path,
) -> Result<Vec<VariantRun>> {
    variants
        .iter()
        .map(|&variant| {
            let cfg = ExperimentConfig {
                variant,
                ..cfg.clone()
            };
            let dir = out_dir.join(variant.as_str());
            let outcome = train_on(&cfg, source, target, &dir, TrainOptions::default())?;
            let g = &outcome.state.nets.generator;
            let source_report = evaluate_network(g, &tests.source, &cfg, SOURCE_TEST)?;
            let target_report = evaluate_network(g, &tests.target, &cfg, TARGET_TEST)?;
            source_report.save_json(&dir.join("source_test.json"))?;
            target_report.save_json(&dir.join("target_test.json"))?;
            Ok(VariantRun {
                variant,
                source: source_report,
                target: target_report,
                batch_hashes: outcome.summaries.iter().map(|s| s.batch_hash).collect(),
            })
        })
        .collect()
}

/// The four-way ablation `NA`, `IA`, `FA`, `FULL` from the configured manifests.
pub fn run_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<VariantRun>> {
    let (source, target) = load_training_corpora(cfg)?;
    let tests = TestSets::load(cfg)?;
    run_variants(cfg, &Variant::ALL, &source, &target, &tests, out_dir)
}
