//! Paired t-test and repeated-run summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::report::MetricsReport;
use crate::config::Variant;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degenerate {
    /// All differences are zero: `t = 0`, `p = 1` by convention.
    NoDifference,
    /// Differences are constant and nonzero: `|t| = ∞`, `p = 0`.
    ConstantShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
    pub degenerate: Option<Degenerate>,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Stats(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                mean_diff: 0.0,
                degenerate: Some(Degenerate::NoDifference),
            }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                df,
                mean_diff: mean,
                degenerate: Some(Degenerate::ConstantShift),
            }
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Stats(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
        degenerate: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample mean and standard deviation (`n - 1` denominator).
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Stats(format!(
                "need at least 2 values for a sample SD, got {}",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(MeanSd {
            mean,
            sd: var.sqrt(),
        })
    }
}

impl std::fmt::Display for MeanSd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub variant: Variant,
    pub runs: usize,
    pub pixel_accuracy: MeanSd,
    pub iou: MeanSd,
}

/// Mean ± SD over repeated runs of one dataset/variant pair.
pub fn summarize_runs(reports: &[MetricsReport]) -> Result<RunSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Stats("no reports to summarize".into()))?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.dataset != first.dataset || r.variant != first.variant)
    {
        return Err(Error::Stats(format!(
            "cannot pool {}/{} with {}/{}",
            r.dataset, r.variant, first.dataset, first.variant
        )));
    }
    let acc: Vec<f64> = reports.iter().map(|r| r.pixel_accuracy).collect();
    let iou: Vec<f64> = reports.iter().map(|r| r.iou).collect();
    Ok(RunSummary {
        dataset: first.dataset.clone(),
        variant: first.variant,
        runs: reports.len(),
        pixel_accuracy: MeanSd::of(&acc)?,
        iou: MeanSd::of(&iou)?,
    })
}
