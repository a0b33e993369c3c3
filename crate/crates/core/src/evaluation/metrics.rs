//! Pixel accuracy and foreground IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary confusion counts over some set of pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Counts `pred` against `gt`; any nonzero value is foreground.
    pub fn count(pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// Foreground IoU; `1.0` when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }
}

pub fn pixel_accuracy(pred: &[u8], gt: &[u8]) -> Result<f64> {
    Confusion::count(pred, gt).map(|c| c.accuracy())
}

pub fn intersection_over_union(pred: &[u8], gt: &[u8]) -> Result<f64> {
    Confusion::count(pred, gt).map(|c| c.iou())
}

/// `1` where `prob > threshold`.
pub fn threshold_map(probs: &[f32], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p as f64 > threshold)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        let gt = [1, 0, 1, 0];
        assert_eq!(pixel_accuracy(&gt, &gt).unwrap(), 1.0);
        assert_eq!(pixel_accuracy(&[0, 1, 0, 1], &gt).unwrap(), 0.0);
        assert_eq!(pixel_accuracy(&[1, 1, 1, 0], &gt).unwrap(), 0.75);
        assert!(pixel_accuracy(&[1], &gt).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(intersection_over_union(&[1, 1, 0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(intersection_over_union(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(intersection_over_union(&[0, 0], &[0, 0]).unwrap(), 1.0);
        // Two 2×2 squares in a 2×3 grid offset by one column.
        let a = [1, 1, 0, 1, 1, 0];
        let b = [0, 1, 1, 0, 1, 1];
        assert!((intersection_over_union(&a, &b).unwrap() - 2.0 / 6.0).abs() < 1e-12);
    }
}
